#include "fprog/perfmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fprog/errors.hpp"
#include "fprog/systolic.hpp"

namespace fprog {

namespace {

double get_time(const nlohmann::json& j, const std::string& key, double fallback,
                bool required) {
    if (!j.contains(key)) {
        if (required) throw ValidationError("perf params: missing field \"" + key + "\"");
        return fallback;
    }
    if (!j[key].is_number())
        throw ValidationError("perf params: field \"" + key + "\" must be a number");
    return j[key].get<double>();
}

std::int64_t get_count(const nlohmann::json& j, const std::string& key) {
    if (!j.contains(key)) throw ValidationError("perf params: missing field \"" + key + "\"");
    if (!j[key].is_number_integer())
        throw ValidationError("perf params: field \"" + key + "\" must be an integer");
    return j[key].get<std::int64_t>();
}

} // namespace

PerfParams parse_perf_params(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("perf params: top level must be an object");
    static const char* known[] = {"dt_readmem", "dt_writemem",        "dt_procw",
                                  "bus_conflict_factor", "memory_kind", "n_w",
                                  "n_soc",      "n_total",            "dt_pulse",
                                  "merge_store_fetch"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ValidationError("perf params: unknown field \"" + it.key() + "\"");
    }
    PerfParams p;
    p.dt_readmem = get_time(j, "dt_readmem", 0.0, true);
    p.dt_writemem = get_time(j, "dt_writemem", 0.0, true);
    p.dt_procw = get_time(j, "dt_procw", 0.0, true);
    p.bus_conflict_factor = get_time(j, "bus_conflict_factor", 1.0, false);
    if (j.contains("memory_kind")) {
        if (!j["memory_kind"].is_string())
            throw ValidationError("perf params: field \"memory_kind\" must be a string");
        p.memory_kind = j["memory_kind"].get<std::string>();
    }
    p.n_w = get_count(j, "n_w");
    p.n_soc = get_count(j, "n_soc");
    p.n_total = get_count(j, "n_total");
    p.dt_pulse = get_time(j, "dt_pulse", 0.0, false);
    if (j.contains("merge_store_fetch")) {
        if (!j["merge_store_fetch"].is_boolean())
            throw ValidationError("perf params: field \"merge_store_fetch\" must be a boolean");
        p.merge_store_fetch = j["merge_store_fetch"].get<bool>();
    }
    validate_perf_params(p);
    return p;
}

PerfParams load_perf_params_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open perf params file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("perf params file " + path + ": " + e.what());
    }
    return parse_perf_params(j);
}

void validate_perf_params(const PerfParams& p) {
    if (p.dt_readmem < 0 || p.dt_writemem < 0 || p.dt_procw < 0 || p.dt_pulse < 0)
        throw ValidationError("perf params: all times must be >= 0");
    if (p.bus_conflict_factor < 1.0)
        throw ValidationError("perf params: bus_conflict_factor must be >= 1");
    if (p.n_w < 1 || p.n_soc < 1 || p.n_total < 1)
        throw ValidationError("perf params: worker counts must be >= 1");
    if (p.n_w > p.n_soc)
        throw ValidationError("perf params: n_w (workers per layer) cannot exceed n_soc "
                              "(workers per die)");
    if (p.n_soc > p.n_total)
        throw ValidationError("perf params: n_soc cannot exceed n_total (whole-network "
                              "workers)");
}

namespace {

struct StageTimes {
    std::vector<LayerTiming> rows;
    double baseline_slot = 0.0;
    double max_stage = 0.0;
    double sum_stage = 0.0;
};

// One row per non-input layer.  All compute stages take dt_procw (the layer
// allocation is balanced for equal delay); fabric transfer time follows the
// ring schedule for the layer's input stream.
StageTimes stage_times(const NetworkModel& model, const PerfParams& p) {
    validate_model(model);
    auto shapes = shape_infer(model);
    StageTimes st;
    double mem = (p.dt_readmem + p.dt_writemem) * p.bus_conflict_factor;
    if (p.merge_store_fetch)
        mem = std::max(p.dt_readmem, p.dt_writemem) * p.bus_conflict_factor;
    st.baseline_slot = mem + p.dt_procw;
    for (std::size_t l = 1; l < model.layers.size(); ++l) {
        LayerTiming row;
        row.name = model.layers[l].name;
        row.baseline_slot = st.baseline_slot;
        std::int64_t pulses = 0;
        if (model.layers[l].kind == LayerKind::EnhancementUnit)
            pulses = std::int64_t(shapes[l].h) * shapes[l].w; // one sweep of the field
        else
            pulses = systolic::stage_pulses(shapes[l - 1].count(), true);
        row.transfer_time = static_cast<double>(pulses) * p.dt_pulse;
        row.stage_time = p.dt_procw + std::max(0.0, row.transfer_time - p.dt_procw);
        st.max_stage = std::max(st.max_stage, row.stage_time);
        st.sum_stage += row.stage_time;
        st.rows.push_back(std::move(row));
    }
    if (st.rows.empty()) throw ValidationError("perf model: the model has no compute layers");
    return st;
}

} // namespace

double baseline_time(const NetworkModel& model, const PerfParams& p, std::int64_t samples) {
    if (samples < 1) throw ValidationError("perf model: samples must be >= 1");
    StageTimes st = stage_times(model, p);
    double L = static_cast<double>(st.rows.size());
    // uniform slots: fill is L of them, then one result per slot
    return (L - 1.0 + static_cast<double>(samples)) * st.baseline_slot;
}

double pipelined_time(const NetworkModel& model, const PerfParams& p, std::int64_t samples) {
    if (samples < 1) throw ValidationError("perf model: samples must be >= 1");
    StageTimes st = stage_times(model, p);
    return st.sum_stage + static_cast<double>(samples - 1) * st.max_stage;
}

PerfEstimate speedup(const NetworkModel& model, const PerfParams& p, std::int64_t samples) {
    if (samples < 1) throw ValidationError("perf model: samples must be >= 1");
    if (p.n_total > p.n_soc)
        throw ValidationError("perf model: the network needs " + std::to_string(p.n_total) +
                              " workers but one die provides " + std::to_string(p.n_soc) +
                              "; multi-die execution requires partitioning, which is out of "
                              "scope");
    StageTimes st = stage_times(model, p);
    PerfEstimate e;
    e.samples = samples;
    e.breakdown = st.rows;
    double L = static_cast<double>(st.rows.size());
    e.baseline_time = (L - 1.0 + static_cast<double>(samples)) * st.baseline_slot;
    e.pipelined_time = st.sum_stage + static_cast<double>(samples - 1) * st.max_stage;
    e.compute_total = L * static_cast<double>(samples) * p.dt_procw;
    if (e.pipelined_time <= 0.0)
        throw ValidationError("perf model: zero pipelined time (dt_procw and transfers are "
                              "all zero)");
    e.speedup = e.baseline_time / e.pipelined_time;
    return e;
}

SweepSpec parse_sweep(const std::string& text) {
    SweepSpec s;
    auto eq = text.find('=');
    if (eq == std::string::npos)
        throw ValidationError("sweep: expected field=from:to:step, got \"" + text + "\"");
    s.field = text.substr(0, eq);
    std::string rest = text.substr(eq + 1);
    auto c1 = rest.find(':');
    auto c2 = rest.find(':', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw ValidationError("sweep: expected field=from:to:step, got \"" + text + "\"");
    try {
        s.from = std::stod(rest.substr(0, c1));
        s.to = std::stod(rest.substr(c1 + 1, c2 - c1 - 1));
        s.step = std::stod(rest.substr(c2 + 1));
    } catch (const std::exception&) {
        throw ValidationError("sweep: non-numeric bound in \"" + text + "\"");
    }
    if (s.step <= 0) throw ValidationError("sweep: step must be > 0");
    if (s.to < s.from) throw ValidationError("sweep: to must be >= from");
    return s;
}

std::vector<std::pair<double, PerfEstimate>> run_sweep(const NetworkModel& model,
                                                       const PerfParams& base,
                                                       std::int64_t samples,
                                                       const SweepSpec& sweep) {
    std::vector<std::pair<double, PerfEstimate>> out;
    for (double v = sweep.from; v <= sweep.to + 1e-12; v += sweep.step) {
        PerfParams p = base;
        if (sweep.field == "dt_readmem") p.dt_readmem = v;
        else if (sweep.field == "dt_writemem") p.dt_writemem = v;
        else if (sweep.field == "dt_procw") p.dt_procw = v;
        else if (sweep.field == "bus_conflict_factor") p.bus_conflict_factor = v;
        else if (sweep.field == "dt_pulse") p.dt_pulse = v;
        else
            throw ValidationError("sweep: unknown field \"" + sweep.field + "\"");
        validate_perf_params(p);
        out.emplace_back(v, speedup(model, p, samples));
    }
    if (out.empty()) throw ValidationError("sweep: empty range");
    return out;
}

} // namespace fprog
