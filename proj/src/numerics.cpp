#include "fprog/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "fprog/enhancement.hpp"
#include "fprog/errors.hpp"

namespace fprog {

PadInfo same_padding(int in_h, int in_w, int f_h, int f_w, int stride) {
    int out_h = (in_h + stride - 1) / stride;
    int out_w = (in_w + stride - 1) / stride;
    int total_h = std::max((out_h - 1) * stride + f_h - in_h, 0);
    int total_w = std::max((out_w - 1) * stride + f_w - in_w, 0);
    return {total_h / 2, total_w / 2};
}

Tensor conv_forward(const Tensor& x, const FilterBank& k, int stride, Padding padding) {
    if (x.c != k.c_in) throw ValidationError("conv: input channels do not match filter bank");
    int out_h, out_w;
    PadInfo pad{0, 0};
    if (padding == Padding::Same) {
        out_h = (x.h + stride - 1) / stride;
        out_w = (x.w + stride - 1) / stride;
        pad = same_padding(x.h, x.w, k.f_h, k.f_w, stride);
    } else {
        if (k.f_h > x.h || k.f_w > x.w)
            throw ValidationError("conv: filter exceeds input extent under valid padding");
        out_h = (x.h - k.f_h) / stride + 1;
        out_w = (x.w - k.f_w) / stride + 1;
    }
    Tensor y(out_h, out_w, k.c_out);
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox)
            for (int co = 0; co < k.c_out; ++co) {
                double acc = k.b[co];
                for (int dh = 0; dh < k.f_h; ++dh) {
                    int iy = oy * stride + dh - pad.h;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int dw = 0; dw < k.f_w; ++dw) {
                        int ix = ox * stride + dw - pad.w;
                        if (ix < 0 || ix >= x.w) continue;
                        for (int ci = 0; ci < x.c; ++ci)
                            acc += x.at(iy, ix, ci) * k.at(co, dh, dw, ci);
                    }
                }
                y.at(oy, ox, co) = acc;
            }
    return y;
}

ConvGrads conv_backward(const Tensor& x, const FilterBank& k, int stride, Padding padding,
                        const Tensor& dy) {
    PadInfo pad{0, 0};
    if (padding == Padding::Same) pad = same_padding(x.h, x.w, k.f_h, k.f_w, stride);
    ConvGrads g;
    g.dx = Tensor(x.h, x.w, x.c);
    g.dk = FilterBank(k.f_h, k.f_w, k.c_in, k.c_out);
    for (int oy = 0; oy < dy.h; ++oy)
        for (int ox = 0; ox < dy.w; ++ox)
            for (int co = 0; co < k.c_out; ++co) {
                double d = dy.at(oy, ox, co);
                if (d == 0.0) continue;
                g.dk.b[co] += d;
                for (int dh = 0; dh < k.f_h; ++dh) {
                    int iy = oy * stride + dh - pad.h;
                    if (iy < 0 || iy >= x.h) continue;
                    for (int dw = 0; dw < k.f_w; ++dw) {
                        int ix = ox * stride + dw - pad.w;
                        if (ix < 0 || ix >= x.w) continue;
                        for (int ci = 0; ci < x.c; ++ci) {
                            g.dk.at(co, dh, dw, ci) += x.at(iy, ix, ci) * d;
                            g.dx.at(iy, ix, ci) += k.at(co, dh, dw, ci) * d;
                        }
                    }
                }
            }
    return g;
}

PoolResult maxpool_forward(const Tensor& x, int f, int stride) {
    if (f > x.h || f > x.w)
        throw ValidationError("maxpool: window exceeds input extent");
    int out_h = (x.h - f) / stride + 1;
    int out_w = (x.w - f) / stride + 1;
    PoolResult r;
    r.y = Tensor(out_h, out_w, x.c);
    r.argmax.resize(r.y.size());
    std::size_t o = 0;
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox)
            for (int ch = 0; ch < x.c; ++ch, ++o) {
                double best = -std::numeric_limits<double>::infinity();
                std::int64_t best_idx = -1;
                for (int dh = 0; dh < f; ++dh)
                    for (int dw = 0; dw < f; ++dw) {
                        int iy = oy * stride + dh, ix = ox * stride + dw;
                        double v = x.at(iy, ix, ch);
                        std::int64_t idx = (std::int64_t(iy) * x.w + ix) * x.c + ch;
                        // strict > keeps the smallest index on ties
                        if (v > best) {
                            best = v;
                            best_idx = idx;
                        }
                    }
                r.y.v[o] = best;
                r.argmax[o] = best_idx;
            }
    return r;
}

Tensor maxpool_backward(const Tensor& x, const PoolResult& fw, const Tensor& dy) {
    Tensor dx(x.h, x.w, x.c);
    for (std::size_t o = 0; o < dy.size(); ++o) dx.v[fw.argmax[o]] += dy.v[o];
    return dx;
}

std::vector<double> fc_forward(const Tensor& x, const FilterBank& k) {
    std::size_t n_in = std::size_t(k.f_h) * k.f_w * k.c_in;
    if (n_in != x.size()) throw ValidationError("fc: input size does not match weights");
    std::vector<double> y(k.c_out);
    for (int u = 0; u < k.c_out; ++u) {
        double acc = k.b[u];
        const double* row = k.w.data() + std::size_t(u) * n_in;
        for (std::size_t i = 0; i < n_in; ++i) acc += x.v[i] * row[i];
        y[u] = acc;
    }
    return y;
}

void relu_inplace(Tensor& t) {
    for (double& v : t.v)
        if (v < 0.0) v = 0.0;
}

std::vector<double> softmax(const std::vector<double>& z) {
    double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

double cross_entropy(const std::vector<double>& probs, int label) {
    if (label < 0 || label >= static_cast<int>(probs.size()))
        throw ValidationError("cross_entropy: label out of range");
    return -std::log(std::max(probs[label], 1e-300));
}

void PruneTracker::observe(const Tensor& acts) {
    if (zero_counts.empty()) zero_counts.resize(acts.size(), 0);
    if (zero_counts.size() != acts.size())
        throw ValidationError("prune tracker: activation size changed between passes");
    for (std::size_t i = 0; i < acts.size(); ++i)
        if (std::abs(acts.v[i]) <= epsilon) ++zero_counts[i];
    ++passes;
}

std::vector<std::uint8_t> prune_mask(const PruneTracker& t, double count_fraction) {
    std::vector<std::uint8_t> mask(t.zero_counts.size(), 0);
    if (t.passes == 0) return mask;
    double threshold = count_fraction * static_cast<double>(t.passes);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (static_cast<double>(t.zero_counts[i]) >= threshold) mask[i] = 1;
    return mask;
}

std::vector<std::uint8_t> dropout_mask(std::size_t n, double p, RandomSource& rng) {
    if (p < 0.0 || p >= 1.0) throw ValidationError("dropout: p must lie in [0, 1)");
    std::vector<std::uint8_t> mask(n, 1);
    for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() < p) mask[i] = 0;
    return mask;
}

StepMasks draw_step_masks(const NetworkModel& model, RandomSource& rng) {
    StepMasks m;
    m.dropout.resize(model.layers.size());
    m.prune.resize(model.layers.size());
    m.dropout_p = model.hyper.dropout_p;
    if (m.dropout_p <= 0.0) return m;
    auto shapes = shape_infer(model);
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        if (model.layers[i].kind == LayerKind::FullyConnected)
            m.dropout[i] = dropout_mask(static_cast<std::size_t>(shapes[i].count()),
                                        m.dropout_p, rng);
    return m;
}

namespace {

void add_scaled_bank(FilterBank& dst, const FilterBank& src, double scale) {
    for (std::size_t i = 0; i < dst.w.size(); ++i) dst.w[i] += scale * src.w[i];
    for (std::size_t i = 0; i < dst.b.size(); ++i) dst.b[i] += scale * src.b[i];
}

double bank_max_diff(const FilterBank& a, const FilterBank& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.w.size(); ++i) m = std::max(m, std::abs(a.w[i] - b.w[i]));
    for (std::size_t i = 0; i < a.b.size(); ++i) m = std::max(m, std::abs(a.b[i] - b.b[i]));
    return m;
}

} // namespace

void ParamSet::add_scaled(const ParamSet& g, double scale) {
    for (std::size_t i = 0; i < layer.size(); ++i) add_scaled_bank(layer[i], g.layer[i], scale);
    for (std::size_t i = 0; i < branch.size(); ++i)
        for (std::size_t b = 0; b < branch[i].size(); ++b)
            for (std::size_t p = 0; p < branch[i][b].size(); ++p)
                add_scaled_bank(branch[i][b][p], g.branch[i][b][p], scale);
}

double ParamSet::max_abs_difference(const ParamSet& o) const {
    double m = 0.0;
    for (std::size_t i = 0; i < layer.size(); ++i)
        m = std::max(m, bank_max_diff(layer[i], o.layer[i]));
    for (std::size_t i = 0; i < branch.size(); ++i)
        for (std::size_t b = 0; b < branch[i].size(); ++b)
            for (std::size_t p = 0; p < branch[i][b].size(); ++p)
                m = std::max(m, bank_max_diff(branch[i][b][p], o.branch[i][b][p]));
    return m;
}

namespace {

void glorot_fill(FilterBank& k, bool spatial, RandomSource& rng) {
    double fan_in = double(k.f_h) * k.f_w * k.c_in;
    // A convolution filter re-touches f*f output positions per map; a
    // flattened (fully connected) bank feeds each unit exactly once.
    double fan_out = spatial ? double(k.f_h) * k.f_w * k.c_out : double(k.c_out);
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : k.w) v = rng.uniform(-limit, limit);
}

} // namespace

namespace {

ParamSet build_params(const NetworkModel& model, RandomSource* rng) {
    auto shapes = shape_infer(model);
    ParamSet p;
    p.layer.resize(model.layers.size());
    p.branch.resize(model.layers.size());
    Shape in;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& l = model.layers[i];
        switch (l.kind) {
            case LayerKind::Conv:
                p.layer[i] = FilterBank(l.filter_size, l.filter_size, in.c, l.out_channels);
                if (rng) glorot_fill(p.layer[i], true, *rng);
                break;
            case LayerKind::FullyConnected:
            case LayerKind::Output:
                p.layer[i] = FilterBank(in.h, in.w, in.c, l.units);
                if (rng) glorot_fill(p.layer[i], false, *rng);
                break;
            case LayerKind::InceptionModule:
                for (const auto& chain : l.branches) {
                    auto bs = branch_shapes(chain, in);
                    std::vector<FilterBank> banks;
                    Shape prev = in;
                    for (std::size_t k = 0; k < chain.size(); ++k) {
                        if (chain[k].kind == LayerKind::Conv) {
                            FilterBank bank(chain[k].filter_size, chain[k].filter_size, prev.c,
                                            chain[k].out_channels);
                            if (rng) glorot_fill(bank, true, *rng);
                            banks.push_back(std::move(bank));
                        } else {
                            banks.emplace_back(); // placeholder for MaxPool
                        }
                        prev = bs[k];
                    }
                    p.branch[i].push_back(std::move(banks));
                }
                break;
            default:
                break;
        }
        in = shapes[i];
    }
    return p;
}

} // namespace

ParamSet zero_params(const NetworkModel& model) { return build_params(model, nullptr); }

ParamSet init_params(const NetworkModel& model, std::uint64_t seed) {
    RandomSource rng(seed);
    return build_params(model, &rng);
}

// --------------------------------------------------------------------------

DenseNet::DenseNet(const NetworkModel& model, ParamSet params)
    : model_(model), shapes_(shape_infer(model)), params_(std::move(params)) {
    if (params_.layer.size() != model_.layers.size())
        throw ValidationError("parameter set does not match model layer count");
}

bool defers_division(const NetworkModel& m, std::size_t i) {
    return i + 1 < m.layers.size() && m.layers[i + 1].kind == LayerKind::EnhancementUnit;
}

void apply_layer_masks(Tensor& t, const NetworkModel& model, std::size_t i,
                       const StepMasks* masks, double& pending_scale) {
    if (!masks) return;
    if (i < masks->dropout.size() && !masks->dropout[i].empty()) {
        const auto& mask = masks->dropout[i];
        if (mask.size() != t.size())
            throw ValidationError("dropout mask size does not match layer output");
        for (std::size_t j = 0; j < t.size(); ++j)
            if (!mask[j]) t.v[j] = 0.0;
        double inv_keep = 1.0 / (1.0 - masks->dropout_p);
        if (defers_division(model, i))
            pending_scale = inv_keep;
        else
            for (double& v : t.v) v *= inv_keep;
    }
    if (i < masks->prune.size() && !masks->prune[i].empty()) {
        const auto& mask = masks->prune[i];
        if (mask.size() != t.size())
            throw ValidationError("prune mask size does not match layer output");
        for (std::size_t j = 0; j < t.size(); ++j)
            if (mask[j]) t.v[j] = 0.0;
    }
}

// Runs one layer, recording its tensors in the trace.  pending_scale carries
// a dropout division that an enhancement unit must absorb after its multiply.
namespace {

struct ForwardCtx {
    const NetworkModel& model;
    const std::vector<Shape>& shapes;
    const ParamSet& params;
    const StepMasks* masks;
};

Tensor run_layer(const ForwardCtx& ctx, DenseNet::Trace& tr, std::size_t i, Tensor in,
                 double& pending_scale) {
    const LayerSpec& l = ctx.model.layers[i];
    tr.input[i] = in;
    Tensor out;
    switch (l.kind) {
        case LayerKind::Input:
            out = std::move(in);
            tr.pre[i] = out;
            break;
        case LayerKind::Conv: {
            out = conv_forward(in, ctx.params.layer[i], l.stride, l.padding);
            tr.pre[i] = out;
            if (l.activation == Activation::ReLU) relu_inplace(out);
            break;
        }
        case LayerKind::MaxPool: {
            tr.pool[i] = maxpool_forward(in, l.filter_size, l.stride);
            out = tr.pool[i].y;
            tr.pre[i] = out;
            break;
        }
        case LayerKind::FullyConnected: {
            auto z = fc_forward(in, ctx.params.layer[i]);
            out = Tensor(1, 1, static_cast<int>(z.size()));
            out.v = std::move(z);
            tr.pre[i] = out;
            if (l.activation == Activation::ReLU) relu_inplace(out);
            break;
        }
        case LayerKind::Output: {
            auto z = fc_forward(in, ctx.params.layer[i]);
            tr.pre[i] = Tensor(1, 1, static_cast<int>(z.size()));
            tr.pre[i].v = z;
            tr.probs = softmax(z);
            out = tr.pre[i];
            out.v = tr.probs;
            break;
        }
        case LayerKind::InceptionModule:
            out = enhance::inception_forward(l, ctx.params.branch[i], in);
            tr.pre[i] = out;
            break;
        case LayerKind::EnhancementUnit: {
            CoeffGrid grid = enhance::normalize(
                enhance::coincidence_sums(in, l.mask_size, l.use_magnitude),
                enhance::NormalizeMode::Softmax);
            out = enhance::apply(in, grid);
            if (pending_scale != 1.0) {
                for (double& v : out.v) v *= pending_scale;
                pending_scale = 1.0;
            }
            tr.coeffs[i] = grid;
            tr.pre[i] = out;
            break;
        }
    }
    apply_layer_masks(out, ctx.model, i, ctx.masks, pending_scale);
    tr.post[i] = out;
    return out;
}

} // namespace

DenseNet::Trace DenseNet::forward(const Tensor& x, const StepMasks* masks) const {
    if (x.h != model_.input_shape.h || x.w != model_.input_shape.w ||
        x.c != model_.input_shape.c)
        throw ValidationError("input tensor does not match the model input shape");

    const std::size_t n = model_.layers.size();
    Trace tr;
    tr.input.resize(n);
    tr.pre.resize(n);
    tr.post.resize(n);
    tr.pool.resize(n);
    tr.coeffs.resize(n);

    int fb_l = -1, fb_k = -1;
    for (std::size_t i = 0; i < n; ++i)
        if (model_.layers[i].feedback_partner) {
            fb_l = static_cast<int>(i);
            fb_k = *model_.layers[i].feedback_partner;
        }

    ForwardCtx ctx{model_, shapes_, params_, masks};
    Tensor cur = x;
    double pending_scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<int>(i) == fb_l) {
            // Coefficient feedback between two enhancement units.  The
            // shallow unit's refined grid comes out of the feedback loop;
            // the layers behind it (including the deep unit itself) are then
            // recorded by the normal pass below.
            const LayerSpec& shallow = model_.layers[fb_l];
            const LayerSpec& deep = model_.layers[fb_k];
            const Tensor in_l = cur;
            tr.input[i] = in_l;
            const double scale = pending_scale;
            auto propagate = [&](const Tensor& t) {
                Trace scratch;
                scratch.input.resize(n);
                scratch.pre.resize(n);
                scratch.post.resize(n);
                scratch.pool.resize(n);
                scratch.coeffs.resize(n);
                Tensor c2 = t;
                if (scale != 1.0)
                    for (double& v : c2.v) v *= scale;
                double ps = 1.0;
                for (int j = fb_l + 1; j < fb_k; ++j)
                    c2 = run_layer(ctx, scratch, j, std::move(c2), ps);
                return c2;
            };
            auto fb = enhance::single_loop_feedback(
                in_l, shallow.mask_size, shallow.use_magnitude,
                model_.hyper.enhancement_iterations, deep.mask_size, deep.use_magnitude,
                propagate);
            Tensor out_l = std::move(fb.shallow_output);
            if (scale != 1.0)
                for (double& v : out_l.v) v *= scale;
            pending_scale = 1.0;
            tr.coeffs[i] = fb.shallow;
            tr.pre[i] = out_l;
            apply_layer_masks(out_l, model_, i, masks, pending_scale);
            tr.post[i] = out_l;
            cur = out_l;
            continue;
        }
        cur = run_layer(ctx, tr, i, std::move(cur), pending_scale);
    }
    return tr;
}

ParamSet DenseNet::backward(const Trace& tr, int label, const StepMasks* masks) const {
    const std::size_t n = model_.layers.size();
    for (const auto& l : model_.layers)
        if (l.kind == LayerKind::InceptionModule || l.kind == LayerKind::EnhancementUnit)
            throw ValidationError("gradients are not defined through " + to_string(l.kind) +
                                  " layers");
    if (model_.layers.back().kind != LayerKind::Output)
        throw ValidationError("backward requires an Output layer");

    ParamSet grads;
    grads.layer.resize(n);
    grads.branch.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const FilterBank& k = params_.layer[i];
        if (!k.w.empty()) grads.layer[i] = FilterBank(k.f_h, k.f_w, k.c_in, k.c_out);
    }

    // d(loss)/d(pre-activation) of the Output layer under softmax + CE.
    Tensor dpre = tr.pre[n - 1];
    for (int u = 0; u < dpre.c; ++u)
        dpre.v[u] = tr.probs[u] - (u == label ? 1.0 : 0.0);

    Tensor dpost; // gradient w.r.t. post of the layer below, filled per step
    for (std::size_t ii = n; ii-- > 1;) {
        const LayerSpec& l = model_.layers[ii];
        if (ii != n - 1) {
            // dpost -> dpre: undo masks, then the activation.
            dpre = std::move(dpost);
            if (masks) {
                if (ii < masks->prune.size() && !masks->prune[ii].empty())
                    for (std::size_t j = 0; j < dpre.size(); ++j)
                        if (masks->prune[ii][j]) dpre.v[j] = 0.0;
                if (ii < masks->dropout.size() && !masks->dropout[ii].empty()) {
                    double inv_keep = 1.0 / (1.0 - masks->dropout_p);
                    for (std::size_t j = 0; j < dpre.size(); ++j)
                        dpre.v[j] *= masks->dropout[ii][j] ? inv_keep : 0.0;
                }
            }
            if (l.activation == Activation::ReLU)
                for (std::size_t j = 0; j < dpre.size(); ++j)
                    if (tr.pre[ii].v[j] <= 0.0) dpre.v[j] = 0.0;
        }

        switch (l.kind) {
            case LayerKind::FullyConnected:
            case LayerKind::Output: {
                const FilterBank& k = params_.layer[ii];
                FilterBank& gk = grads.layer[ii];
                const Tensor& x = tr.input[ii];
                std::size_t n_in = x.size();
                dpost = Tensor(x.h, x.w, x.c);
                for (int u = 0; u < k.c_out; ++u) {
                    double d = dpre.v[u];
                    if (d == 0.0) continue;
                    gk.b[u] += d;
                    const double* row = k.w.data() + std::size_t(u) * n_in;
                    double* grow = gk.w.data() + std::size_t(u) * n_in;
                    for (std::size_t j = 0; j < n_in; ++j) {
                        grow[j] += x.v[j] * d;
                        dpost.v[j] += row[j] * d;
                    }
                }
                break;
            }
            case LayerKind::Conv: {
                ConvGrads g = conv_backward(tr.input[ii], params_.layer[ii], l.stride, l.padding,
                                            dpre);
                add_scaled_bank(grads.layer[ii], g.dk, 1.0);
                dpost = std::move(g.dx);
                break;
            }
            case LayerKind::MaxPool:
                dpost = maxpool_backward(tr.input[ii], tr.pool[ii], dpre);
                break;
            default:
                throw ValidationError("unexpected layer kind on the gradient path");
        }
    }
    return grads;
}

void DenseNet::apply_update(const ParamSet& grad_sum, double learning_rate, int sample_count) {
    if (sample_count < 1) throw ValidationError("update requires at least one sample");
    params_.add_scaled(grad_sum, -learning_rate / static_cast<double>(sample_count));
}

int argmax(const std::vector<double>& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

} // namespace fprog
