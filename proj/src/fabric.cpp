#include "fprog/fabric.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

#include "fprog/errors.hpp"

namespace fprog {

using nlohmann::json;

Geometry parse_geometry(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("geometry JSON parse error: ") + e.what());
    }
    for (const char* field : {"tensor_field_capacity", "pixel_field_capacity", "field_count"})
        if (!j.contains(field) || !j[field].is_number_integer())
            throw ValidationError(std::string("geometry: missing integer field \"") + field +
                                  "\"");
    Geometry g;
    g.tensor_field_capacity = j["tensor_field_capacity"].get<std::int64_t>();
    g.pixel_field_capacity = j["pixel_field_capacity"].get<std::int64_t>();
    g.field_count = j["field_count"].get<int>();
    if (g.tensor_field_capacity < 1 || g.pixel_field_capacity < 1 || g.field_count < 1)
        throw ValidationError("geometry: all capacities must be >= 1");
    return g;
}

Geometry load_geometry_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open geometry file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_geometry(buf.str());
}

ConvFormDescriptor lower_layer(const NetworkModel& model, int layer_index) {
    if (layer_index < 0 || layer_index >= static_cast<int>(model.layers.size()))
        throw ValidationError("lower_layer: layer index out of range");
    auto shapes = shape_infer(model);
    const LayerSpec& l = model.layers[layer_index];
    Shape in = layer_index > 0 ? shapes[layer_index - 1] : model.input_shape;
    Shape out = shapes[layer_index];

    ConvFormDescriptor d;
    d.layer_index = layer_index;
    d.in_h = in.h;
    d.in_w = in.w;
    d.in_c = in.c;
    d.out_h = out.h;
    d.out_w = out.w;
    d.out_c = out.c;
    switch (l.kind) {
        case LayerKind::Conv:
            d.reduce = ConvFormDescriptor::Reduce::WeightedSum;
            d.f_h = d.f_w = l.filter_size;
            d.stride = l.stride;
            d.padding = l.padding;
            d.activation = l.activation;
            break;
        case LayerKind::MaxPool:
            d.reduce = ConvFormDescriptor::Reduce::Max;
            d.f_h = d.f_w = l.filter_size;
            d.stride = l.stride;
            d.padding = Padding::Valid;
            break;
        case LayerKind::FullyConnected:
        case LayerKind::Output:
            d.reduce = ConvFormDescriptor::Reduce::WeightedSum;
            d.f_h = in.h;
            d.f_w = in.w;
            d.stride = 1;
            d.padding = Padding::Valid;
            d.activation = l.activation;
            break;
        case LayerKind::Input:
        case LayerKind::EnhancementUnit:
            d.reduce = ConvFormDescriptor::Reduce::PassThrough;
            d.in_h = out.h; // pass-throughs read nothing upstream
            d.in_w = out.w;
            d.in_c = out.c;
            break;
        case LayerKind::InceptionModule:
            throw ValidationError(
                "layer " + std::to_string(layer_index) +
                ": InceptionModule has no single-window form; place its branches instead");
    }
    return d;
}

std::int64_t stream_width(const NetworkModel& model, const std::vector<Shape>& shapes,
                          std::size_t layer_index) {
    if (layer_index == 0) return 0;
    (void)model;
    return shapes[layer_index - 1].count();
}

namespace {

// Distinct output maps covered by the flat node range [b, e).
std::int64_t filters_in_range(std::int64_t b, std::int64_t e, int out_c) {
    return std::min<std::int64_t>(e - b, out_c);
}

// Cursor walking element slots across consecutive fields.
struct FieldCursor {
    std::int64_t per_field;
    int field_count;
    int field = 0;
    std::int64_t used = 0; // within the current field

    // Returns {first_field, last_field} for a span of n elements.
    std::pair<int, int> take(std::int64_t n, const char* what) {
        if (n == 0) return {-1, -1};
        int first = field;
        std::int64_t left = n;
        while (left > 0) {
            if (field >= field_count)
                throw ValidationError(std::string("geometry exhausted: no ") + what +
                                      " capacity left");
            std::int64_t room = per_field - used;
            std::int64_t grab = std::min(room, left);
            used += grab;
            left -= grab;
            if (used == per_field) {
                ++field;
                used = 0;
            }
        }
        int last = (used == 0) ? field - 1 : field;
        return {first, last};
    }
};

} // namespace

FabricLayout synthesize(const NetworkModel& model, const AllocationPlan& plan,
                        const Geometry& geom) {
    if (plan.layers.size() != model.layers.size())
        throw ValidationError("allocation plan does not match the model");
    auto shapes = shape_infer(model);

    FabricLayout out;
    out.geometry = geom;
    out.layers.resize(model.layers.size());
    FieldCursor tensor_cur{geom.tensor_field_capacity, geom.field_count};
    FieldCursor pixel_cur{geom.pixel_field_capacity, geom.field_count};

    std::int64_t next_worker_id = 0;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const LayerAllocation& alloc = plan.layers[li];
        LayerBinding& binding = out.layers[li];
        binding.layer_index = static_cast<int>(li);
        binding.name = model.layers[li].name;
        binding.nodes = shapes[li].count();
        if (model.layers[li].kind != LayerKind::EnhancementUnit &&
            model.layers[li].kind != LayerKind::Input)
            binding.links_in = stream_width(model, shapes, li) + 2 * binding.nodes;
        out.links_total += binding.links_in;
        if (alloc.workers == 0) continue;

        ConvFormDescriptor d = lower_layer(model, static_cast<int>(li));
        const std::int64_t nodes = d.node_count();
        const std::int64_t w_count = alloc.workers;
        if (w_count > nodes)
            throw ValidationError("layer " + std::to_string(li) +
                                  ": more workers than nodes to assign");
        binding.workers = w_count;

        for (std::int64_t w = 0; w < w_count; ++w) {
            WorkerPlacement p;
            p.worker_id = next_worker_id++;
            p.layer_index = static_cast<int>(li);
            p.node_begin = w * nodes / w_count;
            p.node_end = (w + 1) * nodes / w_count;
            p.filters_held = filters_in_range(p.node_begin, p.node_end, d.out_c);

            switch (d.reduce) {
                case ConvFormDescriptor::Reduce::WeightedSum:
                    p.tensor_elements = d.blocks_per_filter() * d.in_c * p.filters_held;
                    break;
                case ConvFormDescriptor::Reduce::Max:
                    // Pooling reads one input map per output map.
                    p.tensor_elements = d.blocks_per_filter() * p.filters_held;
                    break;
                case ConvFormDescriptor::Reduce::PassThrough:
                    p.tensor_elements = 0;
                    break;
            }
            // Output columns: consecutive nodes share a column until the
            // channel index wraps.
            std::int64_t first_col = p.node_begin / d.out_c;
            std::int64_t last_col = (p.node_end - 1) / d.out_c;
            p.pixel_elements = last_col - first_col + 1;
            auto [tf, tl] = tensor_cur.take(p.tensor_elements, "tensor-array");
            p.tensor_field_first = tf;
            p.tensor_field_last = tl;
            auto [pf, pl] = pixel_cur.take(p.pixel_elements, "pixel-array");
            p.pixel_field_first = pf;
            p.pixel_field_last = pl;

            binding.tensor_elements += p.tensor_elements;
            binding.pixel_elements += p.pixel_elements;
            out.workers.push_back(std::move(p));
        }
        out.tensor_elements_total += binding.tensor_elements;
        out.pixel_elements_total += binding.pixel_elements;
    }
    return out;
}

std::vector<IdentityRecord> assign_identities(const NetworkModel& model,
                                              const FabricLayout& layout) {
    std::vector<IdentityRecord> records;
    records.reserve(layout.workers.size());
    std::vector<ConvFormDescriptor> descriptors(model.layers.size());
    std::vector<bool> lowered(model.layers.size(), false);
    for (const WorkerPlacement& p : layout.workers) {
        if (!lowered[p.layer_index]) {
            descriptors[p.layer_index] = lower_layer(model, p.layer_index);
            lowered[p.layer_index] = true;
        }
        const ConvFormDescriptor& d = descriptors[p.layer_index];
        IdentityRecord r;
        r.worker_id = p.worker_id;
        r.layer_index = p.layer_index;
        r.layer_name = model.layers[p.layer_index].name;
        r.node_begin = p.node_begin;
        r.node_end = p.node_end;
        r.pixel_begin = p.node_begin / d.out_c;
        r.pixel_end = (p.node_end - 1) / d.out_c + 1;
        r.filters_held = p.filters_held;
        r.upstream_layer = p.layer_index > 0 ? p.layer_index - 1 : -1;
        r.window = d;
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace fprog
