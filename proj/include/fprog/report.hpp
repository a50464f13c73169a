#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fprog/analyzer.hpp"
#include "fprog/fabric.hpp"
#include "fprog/manifest.hpp"
#include "fprog/perfmodel.hpp"
#include "fprog/systolic.hpp"

namespace fprog {

// All builders return the complete document (manifest comment block first,
// then the table and any notes); csv selects the machine-readable form.

// Worker allocation table, one row per layer plus a totals row.
std::string allocation_report(const NetworkModel& model, const AllocationPlan& plan,
                              const NetworkStats& stats, bool csv,
                              const RunManifest& manifest);

// Die placement summary, one row per layer plus capacity totals.
std::string synthesis_report(const NetworkModel& model, const FabricLayout& layout, bool csv,
                             const RunManifest& manifest);

// Per-state pulse totals and the per-stage breakdown for one sample.
std::string simulation_report(const systolic::PulseReport& r, bool csv,
                              const RunManifest& manifest);

// Latency estimate with the per-layer breakdown.
std::string perf_report(const PerfEstimate& e, bool csv, const RunManifest& manifest);

// One row per swept parameter value.
std::string sweep_report(const std::vector<std::pair<double, PerfEstimate>>& rows,
                         const std::string& field, bool csv, const RunManifest& manifest);

// Loss / accuracy per epoch plus pulse totals and the executor-agreement gap.
std::string train_report(const systolic::TrainResult& result, bool csv,
                         const RunManifest& manifest);

} // namespace fprog
