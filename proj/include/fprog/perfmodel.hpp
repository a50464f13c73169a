#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fprog/model.hpp"

namespace fprog {

// Latency model comparing store/fetch execution (weights and activations
// bounce through memory between layers) against the fabric, where weights
// stay resident and activations stream from field to field.
struct PerfParams {
    double dt_readmem = 0.0;  // fetch one layer's data
    double dt_writemem = 0.0; // store one layer's outputs
    double dt_procw = 0.0;    // per-worker compute time for one layer pass
    double bus_conflict_factor = 1.0; // scales both memory terms
    std::string memory_kind;          // on_die_buffer | external_dram | custom
    std::int64_t n_w = 1;     // workers per layer
    std::int64_t n_soc = 1;   // workers one die provides
    std::int64_t n_total = 1; // workers the whole network needs
    // Optional refinements, defaulted so plain params files stay simple.
    double dt_pulse = 0.0;          // wall time per systolic pulse
    bool merge_store_fetch = false; // count store(i)+fetch(i+1) as one transfer
};

PerfParams parse_perf_params(const nlohmann::json& j);
PerfParams load_perf_params_file(const std::string& path);
void validate_perf_params(const PerfParams& p);

struct LayerTiming {
    std::string name;
    double baseline_slot = 0.0;  // read + compute + write, conflicts applied
    double transfer_time = 0.0;  // fabric stage-transfer time into this layer
    double stage_time = 0.0;     // compute plus any unhidden transfer excess
};

struct PerfEstimate {
    double baseline_time = 0.0;
    double pipelined_time = 0.0;
    double speedup = 0.0;
    double compute_total = 0.0; // dt_procw summed over every layer-sample slot
    std::int64_t samples = 1;
    std::vector<LayerTiming> breakdown;
};

// Store/fetch latency for S samples: every stage pays memory delays on both
// sides of its compute, so the pipeline beat is read + compute + write.
double baseline_time(const NetworkModel& model, const PerfParams& p, std::int64_t samples);

// Fabric latency: transfers are hidden behind the receiving stage's compute
// whenever they fit (transfer <= compute); the excess, if any, stretches that
// stage.  Fill takes the sum of the stages, then one result per longest beat.
double pipelined_time(const NetworkModel& model, const PerfParams& p, std::int64_t samples);

// Ratio of the two with the per-layer breakdown attached.
PerfEstimate speedup(const NetworkModel& model, const PerfParams& p, std::int64_t samples);

// "--sweep field=from:to:step" over one numeric parameter.
struct SweepSpec {
    std::string field;
    double from = 0.0, to = 0.0, step = 0.0;
};
SweepSpec parse_sweep(const std::string& text);
std::vector<std::pair<double, PerfEstimate>> run_sweep(const NetworkModel& model,
                                                       const PerfParams& base,
                                                       std::int64_t samples,
                                                       const SweepSpec& sweep);

} // namespace fprog
