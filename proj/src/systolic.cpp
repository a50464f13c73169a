#include "fprog/systolic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <unordered_map>

#include "fprog/enhancement.hpp"
#include "fprog/errors.hpp"

namespace fprog::systolic {

char state_code(MachineState s) {
    switch (s) {
        case MachineState::Forward: return 'F';
        case MachineState::Backward: return 'B';
        case MachineState::Update: return 'U';
    }
    return '?';
}

std::int64_t stage_pulses(std::int64_t n_src, bool crossover) {
    return crossover ? (n_src + 1) / 2 : n_src;
}

namespace {

void add_stage(std::vector<StageCount>& stages, const std::string& label, std::int64_t pulses) {
    for (StageCount& s : stages)
        if (s.label == label) {
            s.pulses += pulses;
            return;
        }
    stages.push_back({label, pulses});
}

bool consumes_stream(LayerKind k) {
    return k == LayerKind::Conv || k == LayerKind::MaxPool ||
           k == LayerKind::FullyConnected || k == LayerKind::Output;
}

bool weighted_kind(LayerKind k) {
    return k == LayerKind::Conv || k == LayerKind::FullyConnected || k == LayerKind::Output;
}

} // namespace

PulseReport pulse_model(const NetworkModel& model, bool crossover) {
    auto shapes = shape_infer(model);
    const std::size_t n = model.layers.size();
    PulseReport r;

    int fb_l = -1, fb_k = -1;
    for (std::size_t i = 0; i < n; ++i)
        if (model.layers[i].feedback_partner) {
            fb_l = static_cast<int>(i);
            fb_k = *model.layers[i].feedback_partner;
        }
    const std::int64_t reruns = 1 + model.hyper.enhancement_iterations; // feedback propagations

    auto f_label = [&](std::size_t l) {
        return "F:" + model.layers[l - 1].name + "->" + model.layers[l].name;
    };

    for (std::size_t l = 1; l < n; ++l) {
        const LayerSpec& spec = model.layers[l];
        if (static_cast<int>(l) == fb_l) {
            // Feedback block: the segment between the two units re-streams
            // once per propagation, then each unit sweeps its own field.
            for (int j = fb_l + 1; j < fb_k; ++j)
                if (consumes_stream(model.layers[j].kind)) {
                    std::int64_t p = stage_pulses(shapes[j - 1].count(), crossover) * reruns;
                    r.forward += p;
                    add_stage(r.forward_stages, f_label(j), p);
                }
            std::int64_t sweep_l = std::int64_t(shapes[fb_l].h) * shapes[fb_l].w * reruns;
            std::int64_t sweep_k = std::int64_t(shapes[fb_k].h) * shapes[fb_k].w;
            r.forward += sweep_l + sweep_k;
            r.enhancement += sweep_l + sweep_k;
            add_stage(r.forward_stages, "E:" + model.layers[fb_l].name, sweep_l);
            add_stage(r.forward_stages, "E:" + model.layers[fb_k].name, sweep_k);
            l = static_cast<std::size_t>(fb_k);
            continue;
        }
        if (spec.kind == LayerKind::EnhancementUnit) {
            std::int64_t sweep = std::int64_t(shapes[l].h) * shapes[l].w;
            r.forward += sweep;
            r.enhancement += sweep;
            add_stage(r.forward_stages, "E:" + spec.name, sweep);
        } else if (consumes_stream(spec.kind)) {
            std::int64_t p = stage_pulses(shapes[l - 1].count(), crossover);
            r.forward += p;
            add_stage(r.forward_stages, f_label(l), p);
        }
    }

    bool trainable = model.layers.back().kind == LayerKind::Output;
    for (const LayerSpec& spec : model.layers)
        if (spec.kind == LayerKind::InceptionModule || spec.kind == LayerKind::EnhancementUnit)
            trainable = false;
    if (trainable) {
        for (std::size_t l = n; l-- > 1;) {
            std::int64_t p = stage_pulses(shapes[l].count(), crossover);
            r.backward += p;
            add_stage(r.backward_stages,
                      "B:" + model.layers[l].name + "->" + model.layers[l - 1].name, p);
        }
        for (std::size_t l = 1; l < n; ++l)
            if (weighted_kind(model.layers[l].kind)) {
                std::int64_t p = stage_pulses(shapes[l - 1].count(), crossover);
                r.update += p;
                add_stage(r.update_stages,
                          "U:" + model.layers[l - 1].name + "->" + model.layers[l].name, p);
            }
    }
    return r;
}

// ---------------------------------------------------------------------------

struct Engine::LayerRuntime {
    LayerKind kind = LayerKind::Input;
    std::string name;
    ConvFormDescriptor window;
    std::int64_t nodes = 0;

    struct Scope {
        std::int64_t begin = 0, end = 0, worker = -1;
    };
    std::vector<Scope> scopes; // sorted, covering [0, nodes) when present

    // Receptive field per node: (source flat node, weight index; -1 for max
    // windows), sorted by source for arrival-time lookup.
    std::vector<std::vector<std::pair<std::int32_t, std::int32_t>>> reads;

    // Transposed pairings used when this layer's loss terms circulate: for
    // each upstream node, arriving source node -> weight index (-2 marks a
    // pooling winner, weight one).
    std::vector<std::unordered_map<std::int32_t, std::int32_t>> pairs;
    std::vector<std::int64_t> expected_pairs;

    Tensor acts, pre;
    std::vector<double> delta;
    std::vector<double> delta_acc;        // filled while the layer above emits
    std::vector<std::int64_t> pool_winner; // flat source per node

    std::int32_t corrupt_dest = std::numeric_limits<std::int32_t>::min();
    std::int64_t dropped_pair_node = -1;
};

Engine::~Engine() = default;
Engine::Engine(Engine&&) noexcept = default;
Engine& Engine::operator=(Engine&&) noexcept = default;

Engine::Engine(const NetworkModel& model, const std::vector<IdentityRecord>& records,
               ParamSet params, EngineOptions opts)
    : model_(model), shapes_(shape_infer(model)), params_(std::move(params)),
      grads_(zero_params(model)), opts_(opts) {
    const std::size_t n = model_.layers.size();
    if (params_.layer.size() != n)
        throw ValidationError("engine: parameter set does not match the model");

    std::int64_t total_nodes = 0, total_edges = 0;
    layers_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (model_.layers[i].kind == LayerKind::InceptionModule)
            throw ValidationError("engine: InceptionModule is not simulated on the fabric; "
                                  "use the dense executor");
        LayerRuntime& rt = layers_[i];
        rt.kind = model_.layers[i].kind;
        rt.name = model_.layers[i].name;
        rt.nodes = shapes_[i].count();
        rt.window = lower_layer(model_, static_cast<int>(i));
        total_nodes += rt.nodes;
        if (consumes_stream(rt.kind))
            total_edges += rt.nodes * std::int64_t(rt.window.f_h) * rt.window.f_w *
                           (rt.kind == LayerKind::MaxPool ? 1 : rt.window.in_c);
    }
    if (total_nodes > opts_.node_budget || total_edges > opts_.edge_budget)
        throw ValidationError("engine: network too large for event-driven simulation; "
                              "use the closed-form pulse model");

    // Attach worker scopes from the identity records.
    for (const IdentityRecord& r : records) {
        if (r.layer_index < 0 || r.layer_index >= static_cast<int>(n))
            throw ValidationError("engine: identity record names an unknown layer");
        layers_[r.layer_index].scopes.push_back({r.node_begin, r.node_end, r.worker_id});
    }
    for (std::size_t i = 0; i < n; ++i) {
        LayerRuntime& rt = layers_[i];
        if (rt.scopes.empty()) {
            // Layers folded into neighbouring fields (zero-worker pooling,
            // enhancement, input) compute without ownership checks, but
            // weighted layers must have somewhere to keep their weights.
            if (weighted_kind(rt.kind))
                throw ValidationError("engine: layer " + std::to_string(i) +
                                      " has weights but no identity records");
            continue;
        }
        std::sort(rt.scopes.begin(), rt.scopes.end(),
                  [](const auto& a, const auto& b) { return a.begin < b.begin; });
        std::int64_t cursor = 0;
        for (const auto& s : rt.scopes) {
            if (s.begin != cursor)
                throw ValidationError("engine: identity records leave layer " +
                                      std::to_string(i) + " nodes uncovered or overlapping");
            cursor = s.end;
        }
        if (cursor != rt.nodes)
            throw ValidationError("engine: identity records do not cover layer " +
                                  std::to_string(i));
    }

    // Receptive fields and static pairings.
    for (std::size_t i = 1; i < n; ++i) {
        LayerRuntime& rt = layers_[i];
        if (!consumes_stream(rt.kind)) continue;
        const ConvFormDescriptor& d = rt.window;
        PadInfo pad{0, 0};
        if (d.padding == Padding::Same) pad = same_padding(d.in_h, d.in_w, d.f_h, d.f_w, d.stride);
        const FilterBank& bank = params_.layer[i];
        rt.reads.resize(static_cast<std::size_t>(rt.nodes));
        std::int64_t upstream = shapes_[i - 1].count();
        rt.pairs.resize(static_cast<std::size_t>(upstream));
        for (std::int64_t j = 0; j < rt.nodes; ++j) {
            int oy = static_cast<int>(j / (std::int64_t(d.out_w) * d.out_c));
            int rem = static_cast<int>(j % (std::int64_t(d.out_w) * d.out_c));
            int ox = rem / d.out_c;
            int co = rem % d.out_c;
            auto& reads = rt.reads[static_cast<std::size_t>(j)];
            for (int dh = 0; dh < d.f_h; ++dh) {
                int iy = oy * d.stride + dh - pad.h;
                if (iy < 0 || iy >= d.in_h) continue;
                for (int dw = 0; dw < d.f_w; ++dw) {
                    int ix = ox * d.stride + dw - pad.w;
                    if (ix < 0 || ix >= d.in_w) continue;
                    if (rt.kind == LayerKind::MaxPool) {
                        std::int32_t src =
                            static_cast<std::int32_t>((std::int64_t(iy) * d.in_w + ix) * d.in_c + co);
                        reads.emplace_back(src, -1);
                    } else {
                        for (int ci = 0; ci < d.in_c; ++ci) {
                            std::int32_t src = static_cast<std::int32_t>(
                                (std::int64_t(iy) * d.in_w + ix) * d.in_c + ci);
                            std::int32_t widx =
                                static_cast<std::int32_t>(bank.idx(co, dh, dw, ci));
                            reads.emplace_back(src, widx);
                        }
                    }
                }
            }
            std::sort(reads.begin(), reads.end());
            if (rt.kind != LayerKind::MaxPool)
                for (const auto& [src, widx] : reads)
                    rt.pairs[static_cast<std::size_t>(src)].emplace(static_cast<std::int32_t>(j),
                                                                    widx);
        }
        rt.expected_pairs.resize(rt.pairs.size());
        for (std::size_t s = 0; s < rt.pairs.size(); ++s)
            rt.expected_pairs[s] = static_cast<std::int64_t>(rt.pairs[s].size());
        if (rt.kind == LayerKind::MaxPool)
            rt.pool_winner.resize(static_cast<std::size_t>(rt.nodes), -1);
    }
}

const Tensor& Engine::activations(int layer) const { return layers_.at(layer).acts; }

double Engine::last_loss(int label) const { return cross_entropy(probs_, label); }

void Engine::corrupt_next_destination(int layer, std::int32_t bogus) {
    layers_.at(layer).corrupt_dest = bogus;
}

void Engine::drop_pairing_record(int layer, std::int64_t node) {
    layers_.at(layer).dropped_pair_node = node;
}

namespace {

// Ring circulation schedule shared by every transfer.  deliver(tap, src) is
// invoked for each frame passing a tap; it returns true when the tap actually
// ingested the frame.  With the crossover the two directions meet after
// ceil(n/2) pulses; without it one direction walks all n positions.
struct RingPass {
    std::int64_t n_src = 0;
    std::int64_t n_taps = 0;
    bool crossover = true;

    template <typename Deliver, typename PulseDone>
    std::int64_t run(Deliver&& deliver, PulseDone&& pulse_done) const {
        const std::int64_t pulses = stage_pulses(n_src, crossover);
        for (std::int64_t t = 1; t <= pulses; ++t) {
            std::int64_t ingests = 0;
            for (std::int64_t q = 0; q < n_taps; ++q) {
                std::int64_t pos = q % n_src;
                std::int64_t up = (pos - t + 1) % n_src;
                if (up < 0) up += n_src;
                if (deliver(q, up)) ++ingests;
                if (crossover) {
                    std::int64_t down = (pos + t) % n_src;
                    if (down != up && deliver(q, down)) ++ingests;
                }
            }
            pulse_done(t, ingests);
        }
        return pulses;
    }
};

} // namespace

// Stream layer dst-1's stored activations into layer dst.  In the forward
// state the taps build weighted sums (or running maxima); in the update state
// each delivery folds value * delta into the owner's gradient slot.
void Engine::stage_transfer(int dst_layer, MachineState state, PulseReport* report) {
    LayerRuntime& dst = layers_[dst_layer];
    LayerRuntime& src = layers_[dst_layer - 1];
    const std::int64_t n_src = src.nodes;

    std::vector<DataFrame> frames(static_cast<std::size_t>(n_src));
    for (std::int64_t s = 0; s < n_src; ++s) {
        DataFrame& f = frames[static_cast<std::size_t>(s)];
        f.tag.source_node = static_cast<std::int32_t>(s);
        f.tag.destination = -1;
        f.tag.layer = static_cast<std::int16_t>(dst_layer - 1);
        f.tag.state = state;
        f.value = src.acts.v[static_cast<std::size_t>(s)];
        if (step_masks_ && dst_layer - 1 < static_cast<int>(step_masks_->prune.size()) &&
            !step_masks_->prune[dst_layer - 1].empty() &&
            step_masks_->prune[dst_layer - 1][static_cast<std::size_t>(s)]) {
            f.tag.prune_flag = true;
            f.value = 0.0; // pruned sources contribute nothing
        }
    }
    if (state == MachineState::Forward &&
        dst.corrupt_dest != std::numeric_limits<std::int32_t>::min()) {
        frames.front().tag.destination = dst.corrupt_dest;
        dst.corrupt_dest = std::numeric_limits<std::int32_t>::min();
    }

    std::vector<double> acc;
    std::vector<double> best;
    const bool pooling = dst.kind == LayerKind::MaxPool;
    const FilterBank& bank = params_.layer[dst_layer];
    FilterBank& gbank = grads_.layer[dst_layer];
    if (pooling) {
        best.assign(static_cast<std::size_t>(dst.nodes),
                    -std::numeric_limits<double>::infinity());
        std::fill(dst.pool_winner.begin(), dst.pool_winner.end(), -1);
    } else {
        acc.resize(static_cast<std::size_t>(dst.nodes));
        for (std::int64_t j = 0; j < dst.nodes; ++j)
            acc[static_cast<std::size_t>(j)] = bank.b[static_cast<std::size_t>(j) % dst.window.out_c];
    }

    std::vector<std::int64_t> frame_ingests(static_cast<std::size_t>(n_src), 0);
    auto deliver = [&](std::int64_t tap, std::int64_t s) -> bool {
        DataFrame& f = frames[static_cast<std::size_t>(s)];
        if (f.tag.destination != -1 && f.tag.destination != tap) return false;
        const auto& reads = dst.reads[static_cast<std::size_t>(tap)];
        auto it = std::lower_bound(reads.begin(), reads.end(),
                                   std::pair<std::int32_t, std::int32_t>{
                                       static_cast<std::int32_t>(s),
                                       std::numeric_limits<std::int32_t>::min()});
        if (it == reads.end() || it->first != static_cast<std::int32_t>(s)) return false;
        f.tag.latch = true;
        ++frame_ingests[static_cast<std::size_t>(s)];
        if (state == MachineState::Forward) {
            if (pooling) {
                double& b = best[static_cast<std::size_t>(tap)];
                std::int64_t& win = dst.pool_winner[static_cast<std::size_t>(tap)];
                // ties resolve to the smallest source index regardless of
                // arrival order, matching the reference executor
                if (f.value > b || (f.value == b && s < win)) {
                    b = f.value;
                    win = s;
                }
            } else {
                acc[static_cast<std::size_t>(tap)] += f.value * bank.w[static_cast<std::size_t>(it->second)];
            }
        } else { // Update: weight owners fold in grad contributions
            gbank.w[static_cast<std::size_t>(it->second)] +=
                dst.delta[static_cast<std::size_t>(tap)] * f.value;
        }
        return true;
    };

    const std::string label = std::string(1, state_code(state)) + ":" + src.name + "->" + dst.name;
    RingPass ring{n_src, dst.nodes, opts_.crossover};
    std::int64_t pulses = ring.run(deliver, [&](std::int64_t, std::int64_t ingests) {
        ++global_pulse_;
        for (DataFrame& f : frames) f.tag.latch = false;
        if (opts_.trace)
            opts_.trace->push_back({global_pulse_, state_code(state), label, n_src, ingests});
    });

    for (std::int64_t s = 0; s < n_src; ++s) {
        DataFrame& f = frames[static_cast<std::size_t>(s)];
        f.tag.transfer_complete = true;
        if (f.tag.destination != -1 && frame_ingests[static_cast<std::size_t>(s)] == 0)
            throw SimulationFault("frame from node " + std::to_string(s) + " addressed to node " +
                                  std::to_string(f.tag.destination) +
                                  " outside any worker's scope in layer '" + dst.name + "'");
    }

    if (report) {
        if (state == MachineState::Forward) {
            report->forward += pulses;
            add_stage(report->forward_stages, label, pulses);
        } else {
            report->update += pulses;
            add_stage(report->update_stages, label, pulses);
        }
    }

    if (state != MachineState::Forward) return;

    // Node side: finish the weighted sums into stored pixel values.
    Tensor out(shapes_[dst_layer].h, shapes_[dst_layer].w, shapes_[dst_layer].c);
    if (pooling) {
        out.v = best;
        // loss routing pairs follow the winners of this pass
        for (auto& m : dst.pairs) m.clear();
        for (std::int64_t j = 0; j < dst.nodes; ++j)
            dst.pairs[static_cast<std::size_t>(dst.pool_winner[static_cast<std::size_t>(j)])]
                .emplace(static_cast<std::int32_t>(j), -2);
        dst.expected_pairs.assign(dst.pairs.size(), 0);
        for (std::size_t s = 0; s < dst.pairs.size(); ++s)
            dst.expected_pairs[s] = static_cast<std::int64_t>(dst.pairs[s].size());
        dst.pre = out;
    } else {
        out.v = acc;
        dst.pre = out;
        if (dst.kind == LayerKind::Output) {
            probs_ = softmax(out.v);
            out.v = probs_;
        } else if (model_.layers[dst_layer].activation == Activation::ReLU) {
            relu_inplace(out);
        }
    }
    apply_layer_masks(out, model_, static_cast<std::size_t>(dst_layer), step_masks_,
                      pending_scale_);
    dst.acts = std::move(out);
}

void Engine::enhancement_forward(int layer, PulseReport* report) {
    LayerRuntime& rt = layers_[layer];
    const LayerSpec& spec = model_.layers[layer];
    const Tensor& in = layers_[layer - 1].acts;
    CoeffGrid grid = enhance::normalize(
        enhance::coincidence_sums(in, spec.mask_size, spec.use_magnitude),
        enhance::NormalizeMode::Softmax);
    std::int64_t sweep = 0;
    Tensor out = enhance::apply_sweep(in, grid, sweep);
    if (pending_scale_ != 1.0) {
        for (double& v : out.v) v *= pending_scale_;
        pending_scale_ = 1.0;
    }
    apply_layer_masks(out, model_, static_cast<std::size_t>(layer), step_masks_, pending_scale_);
    rt.acts = std::move(out);
    rt.pre = rt.acts;
    const std::string label = "E:" + rt.name;
    if (report) {
        report->forward += sweep;
        report->enhancement += sweep;
        add_stage(report->forward_stages, label, sweep);
    }
    if (opts_.trace)
        for (std::int64_t p = 0; p < sweep; ++p)
            opts_.trace->push_back({++global_pulse_, 'E', label, 0, 1});
    else
        global_pulse_ += sweep;
}

void Engine::forward(const Tensor& x, const StepMasks* masks, PulseReport* report) {
    if (x.h != model_.input_shape.h || x.w != model_.input_shape.w ||
        x.c != model_.input_shape.c)
        throw ValidationError("engine: input tensor does not match the model input shape");
    const std::size_t n = model_.layers.size();
    step_masks_ = masks;
    pending_scale_ = 1.0;

    int fb_l = -1, fb_k = -1;
    for (std::size_t i = 0; i < n; ++i)
        if (model_.layers[i].feedback_partner) {
            fb_l = static_cast<int>(i);
            fb_k = *model_.layers[i].feedback_partner;
        }
    if (fb_l >= 0 && masks && fb_l < static_cast<int>(masks->prune.size()) &&
        !masks->prune[fb_l].empty())
        throw ValidationError("engine: prune masks on a feedback enhancement unit are not "
                              "supported");

    layers_[0].acts = x;
    apply_layer_masks(layers_[0].acts, model_, 0, masks, pending_scale_);
    layers_[0].pre = layers_[0].acts;

    for (std::size_t l = 1; l < n; ++l) {
        if (static_cast<int>(l) == fb_l) {
            const LayerSpec& shallow = model_.layers[fb_l];
            const LayerSpec& deep = model_.layers[fb_k];
            const Tensor in_l = layers_[fb_l - 1].acts;
            const double scale = pending_scale_;
            pending_scale_ = 1.0;
            std::int64_t sweeps_l = 0;
            auto propagate = [&](const Tensor& t) {
                pending_scale_ = 1.0; // each pass re-derives its own deferral
                Tensor scaled = t;
                if (scale != 1.0)
                    for (double& v : scaled.v) v *= scale;
                // the shallow unit's field holds the scaled product; writing
                // it out costs one pulse per pixel column
                layers_[fb_l].acts = std::move(scaled);
                sweeps_l += std::int64_t(in_l.h) * in_l.w;
                for (int j = fb_l + 1; j < fb_k; ++j)
                    stage_transfer(j, MachineState::Forward, report);
                return layers_[fb_k - 1].acts;
            };
            auto fb = enhance::single_loop_feedback(
                in_l, shallow.mask_size, shallow.use_magnitude,
                model_.hyper.enhancement_iterations, deep.mask_size, deep.use_magnitude,
                propagate);
            // The propagations above already left every intermediate layer
            // holding its final-pass values; finish the two units' fields.
            Tensor out_l = std::move(fb.shallow_output);
            if (scale != 1.0)
                for (double& v : out_l.v) v *= scale;
            layers_[fb_l].acts = out_l;
            layers_[fb_l].pre = std::move(out_l);
            Tensor out_k = std::move(fb.deep_output);
            if (pending_scale_ != 1.0) {
                // a division deferred from just before the deep unit folds in
                // after its multiply
                for (double& v : out_k.v) v *= pending_scale_;
                pending_scale_ = 1.0;
            }
            apply_layer_masks(out_k, model_, static_cast<std::size_t>(fb_k), masks,
                              pending_scale_);
            layers_[fb_k].acts = std::move(out_k);
            layers_[fb_k].pre = layers_[fb_k].acts;

            std::int64_t sweep_k = std::int64_t(shapes_[fb_k].h) * shapes_[fb_k].w;
            if (report) {
                report->forward += sweeps_l + sweep_k;
                report->enhancement += sweeps_l + sweep_k;
                add_stage(report->forward_stages, "E:" + shallow.name, sweeps_l);
                add_stage(report->forward_stages, "E:" + deep.name, sweep_k);
            }
            global_pulse_ += sweeps_l + sweep_k;
            l = static_cast<std::size_t>(fb_k);
            continue;
        }
        const LayerSpec& spec = model_.layers[l];
        if (spec.kind == LayerKind::EnhancementUnit)
            enhancement_forward(static_cast<int>(l), report);
        else
            stage_transfer(static_cast<int>(l), MachineState::Forward, report);
    }
}

void Engine::backward(int label, PulseReport* report) {
    const std::size_t n = model_.layers.size();
    if (model_.layers.back().kind != LayerKind::Output)
        throw ValidationError("engine: loss broadcast requires an Output layer");
    for (const LayerSpec& spec : model_.layers)
        if (spec.kind == LayerKind::EnhancementUnit)
            throw ValidationError("engine: gradients are not defined through EnhancementUnit "
                                  "layers");
    if (label < 0 || label >= static_cast<int>(probs_.size()))
        throw ValidationError("engine: label out of range");

    LayerRuntime& out_rt = layers_[n - 1];
    out_rt.delta.assign(static_cast<std::size_t>(out_rt.nodes), 0.0);
    for (std::int64_t u = 0; u < out_rt.nodes; ++u)
        out_rt.delta[static_cast<std::size_t>(u)] =
            probs_[static_cast<std::size_t>(u)] - (u == label ? 1.0 : 0.0);

    for (std::size_t l = n; l-- > 1;) {
        LayerRuntime& rt = layers_[l];
        if (l != n - 1) {
            // finalize this layer's loss terms from what arrived so far
            rt.delta = std::move(rt.delta_acc);
            if (step_masks_) {
                if (l < step_masks_->prune.size() && !step_masks_->prune[l].empty())
                    for (std::size_t j = 0; j < rt.delta.size(); ++j)
                        if (step_masks_->prune[l][j]) rt.delta[j] = 0.0;
                if (l < step_masks_->dropout.size() && !step_masks_->dropout[l].empty()) {
                    double inv_keep = 1.0 / (1.0 - step_masks_->dropout_p);
                    for (std::size_t j = 0; j < rt.delta.size(); ++j)
                        rt.delta[j] *= step_masks_->dropout[l][j] ? inv_keep : 0.0;
                }
            }
            if (model_.layers[l].activation == Activation::ReLU)
                for (std::size_t j = 0; j < rt.delta.size(); ++j)
                    if (rt.pre.v[j] <= 0.0) rt.delta[j] = 0.0;
        }

        // Emit this layer's loss ring; upstream taps ingest via the pairing
        // records captured on the forward pass.
        LayerRuntime& up = layers_[l - 1];
        up.delta_acc.assign(static_cast<std::size_t>(up.nodes), 0.0);
        std::vector<DataFrame> frames(static_cast<std::size_t>(rt.nodes));
        for (std::int64_t j = 0; j < rt.nodes; ++j) {
            DataFrame& f = frames[static_cast<std::size_t>(j)];
            f.tag.source_node = static_cast<std::int32_t>(j);
            f.tag.destination = -1;
            f.tag.layer = static_cast<std::int16_t>(l);
            f.tag.state = MachineState::Backward;
            f.value = rt.delta[static_cast<std::size_t>(j)];
        }

        std::vector<std::int64_t> tap_ingests(static_cast<std::size_t>(up.nodes), 0);
        const bool has_pairs = !rt.pairs.empty();
        const FilterBank& bank = params_.layer[l];
        auto deliver = [&](std::int64_t tap, std::int64_t s) -> bool {
            if (!has_pairs) return false;
            auto& pair_map = rt.pairs[static_cast<std::size_t>(tap)];
            if (rt.dropped_pair_node == tap) return false; // injected fault
            auto it = pair_map.find(static_cast<std::int32_t>(s));
            if (it == pair_map.end()) return false;
            double w = it->second == -2 ? 1.0 : bank.w[static_cast<std::size_t>(it->second)];
            up.delta_acc[static_cast<std::size_t>(tap)] +=
                w * frames[static_cast<std::size_t>(s)].value;
            ++tap_ingests[static_cast<std::size_t>(tap)];
            frames[static_cast<std::size_t>(s)].tag.latch = true;
            return true;
        };

        const std::string label_str = "B:" + rt.name + "->" + up.name;
        RingPass ring{rt.nodes, up.nodes, opts_.crossover};
        std::int64_t pulses = ring.run(deliver, [&](std::int64_t, std::int64_t ingests) {
            ++global_pulse_;
            for (DataFrame& f : frames) f.tag.latch = false;
            if (opts_.trace)
                opts_.trace->push_back({global_pulse_, 'B', label_str, rt.nodes, ingests});
        });
        for (DataFrame& f : frames) f.tag.transfer_complete = true;

        if (has_pairs)
            for (std::int64_t tap = 0; tap < up.nodes; ++tap)
                if (tap_ingests[static_cast<std::size_t>(tap)] !=
                    rt.expected_pairs[static_cast<std::size_t>(tap)])
                    throw SimulationFault(
                        "loss broadcast into '" + up.name + "' node " + std::to_string(tap) +
                        " is missing forward pairing records (" +
                        std::to_string(tap_ingests[static_cast<std::size_t>(tap)]) + " of " +
                        std::to_string(rt.expected_pairs[static_cast<std::size_t>(tap)]) +
                        " ingested)");

        if (report) {
            report->backward += pulses;
            add_stage(report->backward_stages, label_str, pulses);
        }
    }
}

void Engine::update_pass(PulseReport* report) {
    const std::size_t n = model_.layers.size();
    for (std::size_t l = 1; l < n; ++l) {
        if (!weighted_kind(model_.layers[l].kind)) continue;
        if (layers_[l].delta.empty())
            throw SimulationFault("update pass before any loss broadcast");
        stage_transfer(static_cast<int>(l), MachineState::Update, report);
        // bias slots accumulate straight off the resident loss terms
        LayerRuntime& rt = layers_[l];
        FilterBank& gbank = grads_.layer[l];
        for (std::int64_t j = 0; j < rt.nodes; ++j)
            gbank.b[static_cast<std::size_t>(j) % rt.window.out_c] +=
                rt.delta[static_cast<std::size_t>(j)];
    }
}

void Engine::apply_update(double learning_rate, int sample_count) {
    if (sample_count < 1) throw ValidationError("engine: update requires at least one sample");
    params_.add_scaled(grads_, -learning_rate / static_cast<double>(sample_count));
    grads_ = zero_params(model_);
}

// ---------------------------------------------------------------------------

TrainResult run_state_machine(const NetworkModel& model,
                              const std::vector<IdentityRecord>& records,
                              const ParamSet& initial, const std::vector<LabeledSample>& data,
                              const TrainOptions& opts) {
    if (data.empty()) throw ValidationError("training requires at least one sample");
    if (model.layers.back().kind != LayerKind::Output)
        throw ValidationError("training requires an Output layer");
    for (const LayerSpec& spec : model.layers)
        if (spec.kind == LayerKind::InceptionModule || spec.kind == LayerKind::EnhancementUnit)
            throw ValidationError("training through " + to_string(spec.kind) +
                                  " layers is not supported");

    EngineOptions eng_opts;
    eng_opts.crossover = opts.crossover;
    Engine engine(model, records, initial, eng_opts);
    DenseNet dense(model, initial);
    RandomSource mask_rng(opts.seed);

    const std::size_t n_samples = data.size();
    std::size_t batch = n_samples; // GD
    if (model.hyper.batch_mode == BatchMode::MiniBatchGD)
        batch = static_cast<std::size_t>(model.hyper.batch_size);
    else if (model.hyper.batch_mode == BatchMode::SGD)
        batch = 1;

    TrainResult result;
    bool have_reference_report = false;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::int64_t correct = 0;
        std::size_t start = 0;
        while (start < n_samples) {
            std::size_t stop = std::min(start + batch, n_samples);
            ParamSet dense_grads = zero_params(model);
            for (std::size_t s = start; s < stop; ++s) {
                StepMasks masks = draw_step_masks(model, mask_rng);
                PulseReport sample_report;
                engine.forward(data[s].x, &masks, &sample_report);
                engine.backward(data[s].label, &sample_report);
                engine.update_pass(&sample_report);
                loss_sum += engine.last_loss(data[s].label);
                if (argmax(engine.probs()) == data[s].label) ++correct;
                result.total_pulses += sample_report.forward + sample_report.backward +
                                       sample_report.update;
                if (!have_reference_report) {
                    result.per_sample = sample_report;
                    have_reference_report = true;
                } else if (!(sample_report == result.per_sample)) {
                    throw SimulationFault("pulse counts changed between samples");
                }
                if (opts.cross_check) {
                    auto tr = dense.forward(data[s].x, &masks);
                    dense_grads.add_scaled(dense.backward(tr, data[s].label, &masks), 1.0);
                }
            }
            int count = static_cast<int>(stop - start);
            engine.apply_update(model.hyper.learning_rate, count);
            if (opts.cross_check) {
                dense.apply_update(dense_grads, model.hyper.learning_rate, count);
                double gap = dense.params().max_abs_difference(engine.params());
                result.max_divergence = std::max(result.max_divergence, gap);
                if (gap > opts.check_tolerance)
                    throw SimulationFault(
                        "fabric and reference executors diverged: max weight gap " +
                        std::to_string(gap) + " exceeds " +
                        std::to_string(opts.check_tolerance));
            }
            start = stop;
        }
        result.epochs.push_back(
            {loss_sum / static_cast<double>(n_samples),
             static_cast<double>(correct) / static_cast<double>(n_samples)});
    }
    result.params = engine.params();
    return result;
}

} // namespace fprog::systolic
