#pragma once

#include <cstdint>
#include <vector>

#include "fprog/model.hpp"

namespace fprog {

// Parameter-count convention for FullyConnected / Output layers.
//   TiedBias:  n_in * n_out + 1   (one shared bias term per layer)
//   PerUnit:   (n_in + 1) * n_out (one bias per output unit)
// Conv layers always count (f*f*c_in + 1) * c_out.
enum class ParamConvention { TiedBias, PerUnit };

struct LayerStats {
    std::string name;
    LayerKind kind = LayerKind::Input;
    Shape out_shape;
    std::int64_t load = 0;        // multiply-accumulate operations per sample
    std::int64_t params = 0;      // trainable weights + biases
    std::int64_t activations = 0; // output values per sample
};

struct NetworkStats {
    std::vector<LayerStats> layers;
    std::int64_t total_load = 0;
    std::int64_t total_params = 0;
    std::int64_t total_activations = 0;
};

// Per-layer multiply-accumulate load, parameter and activation counts.
NetworkStats layer_stats(const NetworkModel& model,
                         ParamConvention convention = ParamConvention::TiedBias);

struct LayerAllocation {
    std::string name;
    LayerKind kind = LayerKind::Input;
    std::int64_t load = 0;
    double exact_share = 0.0;      // worker_pool * load / total_load
    std::int64_t workers = 0;      // exact_share rounded half away from zero
    std::int64_t node_count = 0;   // results this layer must produce per sample
    double nodes_per_worker = 0.0; // node_count / exact_share
    double pixels_per_worker = 0.0;
    // Spatial layers report pixel columns (H*W); width-only layers report
    // activations, i.e. the fraction of the single output column per worker.
    double delay_proxy = 0.0; // load / workers, 0 when workers == 0
};

struct AllocationPlan {
    std::int64_t worker_pool = 0; // requested pool size
    std::int64_t assigned = 0;    // sum of rounded per-layer workers
    std::int64_t idle = 0;        // worker_pool - assigned (rounding residue)
    std::vector<LayerAllocation> layers;
};

// Split a worker pool across layers proportionally to compute load so every
// stage finishes in roughly the same time.  Zero-load layers (Input, MaxPool,
// EnhancementUnit) receive no workers.
AllocationPlan allocate_workers(const NetworkModel& model, std::int64_t worker_pool,
                                ParamConvention convention = ParamConvention::TiedBias);

// One worker per result node on every layer, including Input (pass-through
// nodes).  This is the unfolded configuration the simulator defaults to.
AllocationPlan allocate_one_to_one(const NetworkModel& model);

} // namespace fprog
