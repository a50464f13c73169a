#include "fprog/enhancement.hpp"

#include <algorithm>
#include <cmath>

#include "fprog/errors.hpp"

namespace fprog::enhance {

CoeffGrid coincidence_sums(const Tensor& acts, int m, bool use_magnitude) {
    if (m < 1) throw ValidationError("coincidence: mask size must be >= 1");
    CoeffGrid g(m, (acts.h + m - 1) / m, (acts.w + m - 1) / m);
    for (int y = 0; y < acts.h; ++y)
        for (int x = 0; x < acts.w; ++x) {
            double s = 0.0;
            for (int ch = 0; ch < acts.c; ++ch) {
                double v = acts.at(y, x, ch);
                s += use_magnitude ? std::abs(v) : v;
            }
            g.at(y / m, x / m) += s;
        }
    return g;
}

CoeffGrid normalize(CoeffGrid raw, NormalizeMode mode) {
    if (raw.v.empty()) throw ValidationError("normalize: empty coefficient grid");
    if (mode == NormalizeMode::Softmax) {
        double m = *std::max_element(raw.v.begin(), raw.v.end());
        double sum = 0.0;
        for (double& v : raw.v) {
            v = std::exp(v - m);
            sum += v;
        }
        for (double& v : raw.v) v /= sum;
    } else {
        double sum = 0.0;
        for (double v : raw.v) sum += v;
        if (!(sum > 0.0))
            throw ValidationError("normalize: linear mode requires a positive total");
        for (double& v : raw.v) v /= sum;
    }
    return raw;
}

CoeffGrid combine(const CoeffGrid& a, const CoeffGrid& b, NormalizeMode renorm) {
    if (a.m != b.m || a.rows != b.rows || a.cols != b.cols)
        throw ValidationError("combine: coefficient grids do not tile the same extent");
    CoeffGrid c = a;
    for (std::size_t i = 0; i < c.v.size(); ++i) c.v[i] *= b.v[i];
    return normalize(std::move(c), renorm);
}

Tensor apply(const Tensor& acts, const CoeffGrid& grid) {
    Tensor out = acts;
    for (int y = 0; y < acts.h; ++y)
        for (int x = 0; x < acts.w; ++x) {
            double coeff = grid.at(y / grid.m, x / grid.m);
            for (int ch = 0; ch < acts.c; ++ch) out.at(y, x, ch) = acts.at(y, x, ch) * coeff;
        }
    return out;
}

Tensor apply_sweep(const Tensor& acts, const CoeffGrid& grid, std::int64_t& pulses) {
    Tensor out = acts;
    for (int y = 0; y < acts.h; ++y)
        for (int x = 0; x < acts.w; ++x) {
            // One pulse shifts the coefficient past one storage column.
            double coeff = grid.at(y / grid.m, x / grid.m);
            for (int ch = 0; ch < acts.c; ++ch) out.at(y, x, ch) = acts.at(y, x, ch) * coeff;
            ++pulses;
        }
    return out;
}

FeedbackOutcome single_loop_feedback(const Tensor& shallow_in, int mask, bool use_magnitude,
                                     int iterations, int deep_mask, bool deep_magnitude,
                                     const std::function<Tensor(const Tensor&)>& propagate,
                                     NormalizeMode combine_renorm) {
    FeedbackOutcome out;
    CoeffGrid e = normalize(coincidence_sums(shallow_in, mask, use_magnitude),
                            NormalizeMode::Softmax);
    for (int it = 0; it < iterations; ++it) {
        Tensor deep_view = propagate(apply(shallow_in, e));
        CoeffGrid ek = normalize(coincidence_sums(deep_view, deep_mask, deep_magnitude),
                                 NormalizeMode::Softmax);
        e = combine(e, ek, combine_renorm);
        ++out.propagations;
    }
    out.shallow = e;
    out.shallow_output = apply(shallow_in, e);
    out.deep_input = propagate(out.shallow_output);
    ++out.propagations;
    out.deep = normalize(coincidence_sums(out.deep_input, deep_mask, deep_magnitude),
                         NormalizeMode::Softmax);
    out.deep_output = apply(out.deep_input, out.deep);
    return out;
}

Tensor inception_forward(const LayerSpec& module,
                         const std::vector<std::vector<FilterBank>>& banks, const Tensor& input) {
    if (module.kind != LayerKind::InceptionModule)
        throw ValidationError("inception_forward: layer is not an InceptionModule");
    std::vector<Tensor> outs;
    outs.reserve(module.branches.size());
    int total_c = 0;
    for (std::size_t b = 0; b < module.branches.size(); ++b) {
        Tensor cur = input;
        for (std::size_t k = 0; k < module.branches[b].size(); ++k) {
            const LayerSpec& bl = module.branches[b][k];
            if (bl.kind == LayerKind::Conv) {
                cur = conv_forward(cur, banks[b][k], bl.stride, bl.padding);
                if (bl.activation == Activation::ReLU) relu_inplace(cur);
            } else {
                cur = maxpool_forward(cur, bl.filter_size, bl.stride).y;
            }
        }
        total_c += cur.c;
        outs.push_back(std::move(cur));
    }
    Tensor out(outs.front().h, outs.front().w, total_c);
    int c_base = 0;
    for (const Tensor& t : outs) {
        if (t.h != out.h || t.w != out.w)
            throw ValidationError("inception_forward: branch outputs disagree spatially");
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x)
                for (int ch = 0; ch < t.c; ++ch) out.at(y, x, c_base + ch) = t.at(y, x, ch);
        c_base += t.c;
    }
    return out;
}

DemoScene two_blob_scene(int iterations) {
    DemoScene scene;

    NetworkModel& m = scene.model;
    m.name = "two_blob_demo";
    m.input_shape = {6, 6, 2};
    LayerSpec input;
    input.kind = LayerKind::Input;
    LayerSpec shallow;
    shallow.kind = LayerKind::EnhancementUnit;
    shallow.mask_size = 3;
    shallow.feedback_partner = 4;
    LayerSpec detect1;
    detect1.kind = LayerKind::Conv;
    detect1.filter_size = 1;
    detect1.out_channels = 2;
    detect1.activation = Activation::ReLU;
    LayerSpec detect2 = detect1;
    detect2.out_channels = 1;
    LayerSpec deep;
    deep.kind = LayerKind::EnhancementUnit;
    deep.mask_size = 3;
    m.layers = {input, shallow, detect1, detect2, deep};
    m.hyper.enhancement_iterations = iterations;
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        m.layers[i].name = to_string(m.layers[i].kind) + std::to_string(i);
    validate_model(m);

    // min(map0, map1) = map0 - relu(map0 - map1), built from two 1x1 stages.
    scene.params.layer.resize(m.layers.size());
    scene.params.branch.resize(m.layers.size());
    FilterBank stage1(1, 1, 2, 2);
    stage1.at(0, 0, 0, 0) = 1.0; // passes map0 through
    stage1.at(1, 0, 0, 0) = 1.0; // map0 - map1
    stage1.at(1, 0, 0, 1) = -1.0;
    FilterBank stage2(1, 1, 2, 1);
    stage2.at(0, 0, 0, 0) = 1.0;
    stage2.at(0, 0, 0, 1) = -1.0;
    scene.params.layer[2] = std::move(stage1);
    scene.params.layer[3] = std::move(stage2);

    // Equal cell energy: blob A splits 20 across both maps at one position,
    // blob B concentrates 20 in map 0.
    scene.input = Tensor(6, 6, 2);
    scene.input.at(1, 1, 0) = 10.0;
    scene.input.at(1, 1, 1) = 10.0;
    scene.input.at(4, 4, 0) = 20.0;
    return scene;
}

} // namespace fprog::enhance
