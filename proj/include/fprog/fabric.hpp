#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fprog/analyzer.hpp"
#include "fprog/model.hpp"

namespace fprog {

// Die geometry: field_count pairs of (tensor array, pixel array).  Each pair
// contributes tensor_field_capacity multiply-accumulate elements (5x5x1 MAC
// blocks) and pixel_field_capacity storage columns.
struct Geometry {
    std::int64_t tensor_field_capacity = 0;
    std::int64_t pixel_field_capacity = 0;
    int field_count = 0;
};
Geometry parse_geometry(const std::string& json_text);
Geometry load_geometry_file(const std::string& path);

// Every placeable layer reduces to a window sliding over its input: Conv as
// itself, MaxPool as a max-reducing window, FullyConnected/Output as a single
// window spanning the whole input, Input and EnhancementUnit as per-column
// pass-throughs.  Node k of a layer is output value (y, x, c) with
// k = (y * out_w + x) * out_c + c.
struct ConvFormDescriptor {
    enum class Reduce { WeightedSum, Max, PassThrough };
    int layer_index = 0;
    Reduce reduce = Reduce::WeightedSum;
    int f_h = 1, f_w = 1, stride = 1;
    Padding padding = Padding::Valid;
    int in_h = 0, in_w = 0, in_c = 0;
    int out_h = 0, out_w = 0, out_c = 0;
    Activation activation = Activation::Identity;

    std::int64_t node_count() const { return std::int64_t(out_h) * out_w * out_c; }
    // 5x5 MAC blocks needed per (input channel, held filter) pair.
    std::int64_t blocks_per_filter() const {
        return std::int64_t((f_h + 4) / 5) * ((f_w + 4) / 5);
    }
};
ConvFormDescriptor lower_layer(const NetworkModel& model, int layer_index);

// One worker's slice of a layer and the die resources backing it.  Element
// ranges may span several consecutive fields (adjacent fields merge when a
// worker outgrows one).
struct WorkerPlacement {
    std::int64_t worker_id = 0;
    int layer_index = 0;
    std::int64_t node_begin = 0, node_end = 0; // [begin, end) flat output nodes
    std::int64_t filters_held = 0;             // distinct output maps in range
    std::int64_t tensor_elements = 0;
    int tensor_field_first = -1, tensor_field_last = -1;
    std::int64_t pixel_elements = 0; // output columns this worker writes
    int pixel_field_first = -1, pixel_field_last = -1;
};

struct LayerBinding {
    int layer_index = -1;
    std::string name;
    std::int64_t workers = 0;
    std::int64_t nodes = 0;
    std::int64_t tensor_elements = 0;
    std::int64_t pixel_elements = 0;
    // Tagged-bus links feeding this layer: one per streamed source node
    // (chain segments plus the closing crossover) plus tap and feed points
    // on every destination node.
    std::int64_t links_in = 0;
};

struct FabricLayout {
    Geometry geometry;
    std::vector<WorkerPlacement> workers;
    std::vector<LayerBinding> layers; // one entry per model layer, in order
    std::int64_t tensor_elements_total = 0;
    std::int64_t pixel_elements_total = 0;
    std::int64_t links_total = 0;
};

// Place the plan's workers onto the die, first-fit in layer order.  Layers
// with zero workers occupy nothing (their function is folded into the
// neighbouring fields).  Throws ValidationError when capacity runs out.
FabricLayout synthesize(const NetworkModel& model, const AllocationPlan& plan,
                        const Geometry& geom);

// Per-worker configuration: everything the simulator needs about one worker,
// with no references into global planner state.
struct IdentityRecord {
    std::int64_t worker_id = 0;
    int layer_index = 0;
    std::string layer_name;
    std::int64_t node_begin = 0, node_end = 0;
    std::int64_t pixel_begin = 0, pixel_end = 0; // output columns [begin, end)
    std::int64_t filters_held = 0;
    int upstream_layer = -1;
    ConvFormDescriptor window; // geometry of the upstream data each node reads
};
std::vector<IdentityRecord> assign_identities(const NetworkModel& model,
                                              const FabricLayout& layout);

// Streamed-source count entering each layer (what the link figures and the
// pulse model are built from): the full output of the previous layer.
std::int64_t stream_width(const NetworkModel& model, const std::vector<Shape>& shapes,
                          std::size_t layer_index);

} // namespace fprog
