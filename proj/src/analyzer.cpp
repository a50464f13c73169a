#include "fprog/analyzer.hpp"

#include "fprog/errors.hpp"
#include "fprog/util.hpp"

namespace fprog {

namespace {

std::int64_t conv_load(Shape out, int f, int c_in) {
    return out.count() * std::int64_t(f) * f * c_in;
}

std::int64_t conv_params(int f, int c_in, int c_out) {
    return (std::int64_t(f) * f * c_in + 1) * c_out;
}

std::int64_t fc_params(std::int64_t n_in, std::int64_t n_out, ParamConvention convention) {
    return convention == ParamConvention::TiedBias ? n_in * n_out + 1 : (n_in + 1) * n_out;
}

} // namespace

NetworkStats layer_stats(const NetworkModel& model, ParamConvention convention) {
    auto shapes = shape_infer(model);
    NetworkStats stats;
    Shape in_shape;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& l = model.layers[i];
        const Shape out = shapes[i];
        LayerStats s;
        s.name = l.name;
        s.kind = l.kind;
        s.out_shape = out;
        s.activations = out.count();
        switch (l.kind) {
            case LayerKind::Input:
            case LayerKind::MaxPool:
            case LayerKind::EnhancementUnit:
                break; // no weights, no multiply-accumulate work
            case LayerKind::Conv:
                s.load = conv_load(out, l.filter_size, in_shape.c);
                s.params = conv_params(l.filter_size, in_shape.c, l.out_channels);
                break;
            case LayerKind::FullyConnected:
            case LayerKind::Output:
                s.load = in_shape.count() * l.units;
                s.params = fc_params(in_shape.count(), l.units, convention);
                break;
            case LayerKind::InceptionModule: {
                for (const auto& branch : l.branches) {
                    auto bs = branch_shapes(branch, in_shape);
                    Shape prev = in_shape;
                    for (size_t k = 0; k < branch.size(); ++k) {
                        if (branch[k].kind == LayerKind::Conv) {
                            s.load += conv_load(bs[k], branch[k].filter_size, prev.c);
                            s.params += conv_params(branch[k].filter_size, prev.c,
                                                    branch[k].out_channels);
                        }
                        prev = bs[k];
                    }
                }
                break;
            }
        }
        stats.total_load += s.load;
        stats.total_params += s.params;
        stats.total_activations += s.activations;
        stats.layers.push_back(std::move(s));
        in_shape = out;
    }
    return stats;
}

namespace {

// Spatial layers count pixel columns; width-only layers (1x1xN) count the
// N values of their single column, so the ratio reads "values per worker".
std::int64_t pixel_count(Shape s) {
    return (s.h == 1 && s.w == 1) ? s.c : std::int64_t(s.h) * s.w;
}

} // namespace

AllocationPlan allocate_workers(const NetworkModel& model, std::int64_t worker_pool,
                                ParamConvention convention) {
    if (worker_pool < 1) throw ValidationError("worker pool must be >= 1");
    NetworkStats stats = layer_stats(model, convention);
    if (stats.total_load == 0)
        throw ValidationError("model has no multiply-accumulate load to allocate workers to");

    AllocationPlan plan;
    plan.worker_pool = worker_pool;
    for (const auto& s : stats.layers) {
        LayerAllocation a;
        a.name = s.name;
        a.kind = s.kind;
        a.load = s.load;
        a.node_count = s.activations;
        if (s.load > 0) {
            a.exact_share = static_cast<double>(worker_pool) * static_cast<double>(s.load) /
                            static_cast<double>(stats.total_load);
            a.workers = round_half_away(a.exact_share);
            a.nodes_per_worker = static_cast<double>(s.activations) / a.exact_share;
            a.pixels_per_worker = static_cast<double>(pixel_count(s.out_shape)) / a.exact_share;
            if (a.workers > 0)
                a.delay_proxy = static_cast<double>(s.load) / static_cast<double>(a.workers);
        }
        plan.assigned += a.workers;
        plan.layers.push_back(std::move(a));
    }
    plan.idle = plan.worker_pool - plan.assigned;
    return plan;
}

AllocationPlan allocate_one_to_one(const NetworkModel& model) {
    NetworkStats stats = layer_stats(model);
    AllocationPlan plan;
    for (const auto& s : stats.layers) {
        LayerAllocation a;
        a.name = s.name;
        a.kind = s.kind;
        a.load = s.load;
        a.node_count = s.activations;
        a.workers = s.activations;
        a.exact_share = static_cast<double>(a.workers);
        a.nodes_per_worker = 1.0;
        a.pixels_per_worker = static_cast<double>(pixel_count(s.out_shape)) / a.exact_share;
        if (a.workers > 0)
            a.delay_proxy = static_cast<double>(s.load) / static_cast<double>(a.workers);
        plan.assigned += a.workers;
        plan.layers.push_back(std::move(a));
    }
    plan.worker_pool = plan.assigned;
    plan.idle = 0;
    return plan;
}

} // namespace fprog
