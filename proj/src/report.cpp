#include "fprog/report.hpp"

#include "fprog/util.hpp"

namespace fprog {

namespace {

std::string layer_label(const LayerSpec& l, std::size_t index) {
    std::string s = std::to_string(index) + " " + l.name;
    if (l.kind == LayerKind::Conv)
        s += " (f=" + std::to_string(l.filter_size) + ", s=" + std::to_string(l.stride) +
             ", " + (l.padding == Padding::Same ? "same" : "valid") + ")";
    else if (l.kind == LayerKind::MaxPool)
        s += " (f=" + std::to_string(l.filter_size) + ", s=" + std::to_string(l.stride) + ")";
    else if (l.kind == LayerKind::EnhancementUnit)
        s += " (m=" + std::to_string(l.mask_size) + ")";
    return s;
}

std::string shape_label(LayerKind kind, const Shape& sh) {
    if (kind == LayerKind::FullyConnected || kind == LayerKind::Output)
        return with_commas(sh.c); // width-only layers print their unit count
    return "(" + std::to_string(sh.h) + "," + std::to_string(sh.w) + "," +
           std::to_string(sh.c) + ")";
}

std::string activation_label(const LayerSpec& l) {
    if (l.kind == LayerKind::Input || l.kind == LayerKind::MaxPool ||
        l.kind == LayerKind::EnhancementUnit)
        return "-";
    return to_string(l.activation);
}

} // namespace

std::string allocation_report(const NetworkModel& model, const AllocationPlan& plan,
                              const NetworkStats& stats, bool csv,
                              const RunManifest& manifest) {
    TextTable table({"layer", "activation_size", "act_function", "activations", "params",
                     "load", "workers", "die_area_pct", "nodes_per_worker",
                     "pixels_per_worker"});
    double total_load = static_cast<double>(stats.total_load);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerStats& ls = stats.layers[i];
        const LayerAllocation& la = plan.layers[i];
        std::vector<std::string> row;
        row.push_back(layer_label(model.layers[i], i));
        row.push_back(shape_label(ls.kind, ls.out_shape));
        row.push_back(activation_label(model.layers[i]));
        row.push_back(with_commas(ls.activations));
        row.push_back(with_commas(ls.params));
        if (la.workers > 0) {
            row.push_back(with_commas(ls.load));
            row.push_back(with_commas(la.workers));
            row.push_back(fixed(100.0 * static_cast<double>(ls.load) / total_load, 2));
            row.push_back(with_commas(round_half_away(la.nodes_per_worker)));
            row.push_back(fixed(la.pixels_per_worker, 2));
        } else {
            for (int k = 0; k < 5; ++k) row.push_back("");
        }
        table.add_row(std::move(row));
    }
    table.add_row({"total:", "", "", with_commas(stats.total_activations),
                   with_commas(stats.total_params), with_commas(stats.total_load),
                   with_commas(plan.worker_pool), "100.00", "", ""});

    std::string notes;
    notes += "# workers assigned: " + with_commas(plan.assigned) + " of " +
             with_commas(plan.worker_pool) + "; idle: " + with_commas(plan.idle) +
             " (rounding residue)\n";
    notes += "# params convention: Conv counts (f*f*c_in + 1) per filter; "
             "FullyConnected/Output count n_in*n_out + 1 (tied bias)\n";
    return manifest.comment_block() + notes + (csv ? table.csv() : table.str());
}

std::string synthesis_report(const NetworkModel& model, const FabricLayout& layout, bool csv,
                             const RunManifest& manifest) {
    TextTable table({"layer", "workers", "nodes", "tensor_elements", "pixel_elements",
                     "links_in"});
    for (const LayerBinding& b : layout.layers) {
        table.add_row({std::to_string(b.layer_index) + " " + b.name, with_commas(b.workers),
                       with_commas(b.nodes), with_commas(b.tensor_elements),
                       with_commas(b.pixel_elements), with_commas(b.links_in)});
    }
    table.add_row({"total:", with_commas(static_cast<std::int64_t>(layout.workers.size())), "",
                   with_commas(layout.tensor_elements_total),
                   with_commas(layout.pixel_elements_total), with_commas(layout.links_total)});
    std::string notes;
    notes += "# geometry: " + with_commas(layout.geometry.tensor_field_capacity) +
             " tensor elements and " + with_commas(layout.geometry.pixel_field_capacity) +
             " pixel columns per field, " + std::to_string(layout.geometry.field_count) +
             " field pairs\n";
    (void)model;
    return manifest.comment_block() + notes + (csv ? table.csv() : table.str());
}

std::string simulation_report(const systolic::PulseReport& r, bool csv,
                              const RunManifest& manifest) {
    TextTable table({"stage", "state", "pulses"});
    for (const auto& s : r.forward_stages) table.add_row({s.label, "F", with_commas(s.pulses)});
    for (const auto& s : r.backward_stages) table.add_row({s.label, "B", with_commas(s.pulses)});
    for (const auto& s : r.update_stages) table.add_row({s.label, "U", with_commas(s.pulses)});

    std::string notes;
    notes += "# pulses_F: " + with_commas(r.forward) + "\n";
    notes += "# pulses_B: " + with_commas(r.backward) + "\n";
    notes += "# pulses_U: " + with_commas(r.update) + "\n";
    if (r.enhancement > 0)
        notes += "# enhancement sweep pulses (included in F): " + with_commas(r.enhancement) +
                 "\n";
    notes += "# convention: F counts ingress transfers into consuming layers; a convention "
             "that also bills the loss-ring emission stages to the forward pass reports " +
             with_commas(r.forward + r.backward) + "\n";
    return manifest.comment_block() + notes + (csv ? table.csv() : table.str());
}

std::string perf_report(const PerfEstimate& e, bool csv, const RunManifest& manifest) {
    TextTable table({"layer", "baseline_slot", "transfer_time", "stage_time"});
    for (const LayerTiming& t : e.breakdown)
        table.add_row({t.name, fixed(t.baseline_slot, 6), fixed(t.transfer_time, 6),
                       fixed(t.stage_time, 6)});
    std::string notes;
    notes += "# samples: " + with_commas(e.samples) + "\n";
    notes += "# baseline_time: " + fixed(e.baseline_time, 6) + "\n";
    notes += "# pipelined_time: " + fixed(e.pipelined_time, 6) + "\n";
    notes += "# speedup: " + fixed(e.speedup, 4) + "\n";
    notes += "# compute_total (both executions): " + fixed(e.compute_total, 6) + "\n";
    notes += "# note: memory presets are artifact-defined calibrations chosen to land in "
             "the documented regimes; edit the params file to model other parts\n";
    return manifest.comment_block() + notes + (csv ? table.csv() : table.str());
}

std::string sweep_report(const std::vector<std::pair<double, PerfEstimate>>& rows,
                         const std::string& field, bool csv, const RunManifest& manifest) {
    TextTable table({field, "baseline_time", "pipelined_time", "speedup"});
    for (const auto& [v, e] : rows)
        table.add_row({fixed(v, 6), fixed(e.baseline_time, 6), fixed(e.pipelined_time, 6),
                       fixed(e.speedup, 4)});
    return manifest.comment_block() + (csv ? table.csv() : table.str());
}

std::string train_report(const systolic::TrainResult& result, bool csv,
                         const RunManifest& manifest) {
    TextTable table({"epoch", "mean_loss", "accuracy"});
    for (std::size_t i = 0; i < result.epochs.size(); ++i)
        table.add_row({std::to_string(i + 1), fixed(result.epochs[i].mean_loss, 6),
                       fixed(result.epochs[i].accuracy, 4)});
    std::string notes;
    const systolic::PulseReport& r = result.per_sample;
    notes += "# per-sample pulses: F=" + with_commas(r.forward) + " B=" +
             with_commas(r.backward) + " U=" + with_commas(r.update) + "\n";
    notes += "# total pulses: " + with_commas(result.total_pulses) + "\n";
    notes += "# max |w_fabric - w_dense| across updates: " +
             fixed(result.max_divergence, 15) + "\n";
    return manifest.comment_block() + notes + (csv ? table.csv() : table.str());
}

} // namespace fprog
