#include <doctest.h>

#include <cstdlib>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fprog/errors.hpp"
#include "fprog/model.hpp"
#include "fprog/perfmodel.hpp"
#include "fprog/systolic.hpp"

using namespace fprog;
using nlohmann::json;

namespace {

std::string data_path(const char* file) {
    const char* root = std::getenv("FPROG_DATA");
    return std::string(root ? root : "data") + "/" + file;
}

// Three compute layers under the input.
NetworkModel three_stage() {
    return parse_model(R"({
      "input_shape": [1, 1, 8],
      "layers": [
        {"kind": "Input"},
        {"kind": "FullyConnected", "units": 6},
        {"kind": "FullyConnected", "units": 4},
        {"kind": "Output", "units": 2}
      ]})");
}

PerfParams unit_params() {
    json j = {{"dt_readmem", 1.0}, {"dt_writemem", 1.0}, {"dt_procw", 1.0},
              {"n_w", 4},          {"n_soc", 8},         {"n_total", 8}};
    return parse_perf_params(j);
}

} // namespace

TEST_CASE("params parsing: whitelist, required fields, validation") {
    CHECK_NOTHROW((void)unit_params());

    json j = {{"dt_readmem", 1.0}, {"dt_writemem", 1.0}, {"dt_procw", 1.0},
              {"n_w", 4},          {"n_soc", 8},         {"n_total", 8},
              {"surprise", 1}};
    CHECK_THROWS_AS((void)parse_perf_params(j), ValidationError);

    j.erase("surprise");
    j.erase("dt_procw");
    CHECK_THROWS_AS((void)parse_perf_params(j), ValidationError); // required

    j["dt_procw"] = -1.0;
    CHECK_THROWS_AS((void)parse_perf_params(j), ValidationError);

    j["dt_procw"] = 1.0;
    j["bus_conflict_factor"] = 0.5; // conflicts cannot speed memory up
    CHECK_THROWS_AS((void)parse_perf_params(j), ValidationError);

    j["bus_conflict_factor"] = 1.0;
    j["n_w"] = 16; // more per-layer workers than the die provides
    CHECK_THROWS_AS((void)parse_perf_params(j), ValidationError);

    j["n_w"] = 4;
    j["n_soc"] = 0;
    CHECK_THROWS_AS((void)parse_perf_params(j), ValidationError);

    CHECK_THROWS_AS((void)load_perf_params_file("missing.json"), ValidationError);
}

TEST_CASE("store/fetch baseline: every stage pays read + compute + write") {
    NetworkModel m = three_stage();
    PerfParams p = unit_params(); // slot = (1+1)*1 + 1 = 3

    // One sample: fill the three-stage pipeline, 3 slots. L-1+S beats.
    CHECK(baseline_time(m, p, 1) == doctest::Approx(9.0));
    CHECK(baseline_time(m, p, 10) == doctest::Approx((3 - 1 + 10) * 3.0));

    // Merging the store with the following fetch folds the two transfers.
    p.merge_store_fetch = true; // slot = max(1,1)*1 + 1 = 2
    CHECK(baseline_time(m, p, 1) == doctest::Approx(6.0));

    // Bus conflicts scale only the memory terms.
    p.merge_store_fetch = false;
    p.bus_conflict_factor = 2.0; // slot = 2*2 + 1 = 5
    CHECK(baseline_time(m, p, 1) == doctest::Approx(15.0));
}

TEST_CASE("fabric pipeline: transfers hide behind compute until they don't") {
    NetworkModel m = three_stage();
    PerfParams p = unit_params();

    // No pulse cost: every stage runs in dt_procw, fill + one beat per sample.
    CHECK(pipelined_time(m, p, 1) == doctest::Approx(3.0));
    CHECK(pipelined_time(m, p, 7) == doctest::Approx(3.0 + 6.0));

    // dt_pulse large enough that the first stage transfer exceeds compute:
    // stage pulses into FC6 = ceil(8/2) = 4, so transfer = 2.0 > dt_procw.
    p.dt_pulse = 0.5;
    double s1 = 1.0 + (0.5 * 4 - 1.0);          // 2.0: excess stretches the stage
    double s2 = 1.0 + std::max(0.0, 0.5 * 3 - 1.0); // ceil(6/2)=3 -> 1.5
    double s3 = 1.0 + std::max(0.0, 0.5 * 2 - 1.0); // ceil(4/2)=2 -> 1.0
    CHECK(pipelined_time(m, p, 1) == doctest::Approx(s1 + s2 + s3));
    // Extra samples each cost one longest-stage beat.
    CHECK(pipelined_time(m, p, 5) == doctest::Approx(s1 + s2 + s3 + 4 * s1));

    // The breakdown table mirrors the same numbers.
    PerfEstimate est = speedup(m, p, 5);
    REQUIRE(est.breakdown.size() == 3);
    CHECK(est.breakdown[0].transfer_time == doctest::Approx(2.0));
    CHECK(est.breakdown[0].stage_time == doctest::Approx(s1));
    CHECK(est.breakdown[2].stage_time == doctest::Approx(s3));
    CHECK(est.compute_total == doctest::Approx(3 * 5 * 1.0));
}

TEST_CASE("bundled memory calibrations land in their documented regimes") {
    NetworkModel vgg = load_model_file(data_path("vgg16.json"));

    PerfParams on_die = load_perf_params_file(data_path("perf_on_die_buffer.json"));
    PerfEstimate a = speedup(vgg, on_die, 10'000);
    CHECK(a.speedup == doctest::Approx(3.0)); // (r+w+p) / p with unit latencies
    CHECK(a.speedup >= 2.0);
    CHECK(a.speedup <= 5.0);

    PerfParams dram = load_perf_params_file(data_path("perf_external_dram.json"));
    PerfEstimate b = speedup(vgg, dram, 10'000);
    CHECK(b.speedup == doctest::Approx(64.0)); // (60*1.05 + 1) / 1
    CHECK(b.speedup > 50.0);

    // Identical compute is performed either way.
    CHECK(a.compute_total == doctest::Approx(b.compute_total));

    // Zero-latency memory removes the fabric's advantage entirely.
    json z = {{"dt_readmem", 0.0}, {"dt_writemem", 0.0}, {"dt_procw", 1.0},
              {"n_w", 11956},      {"n_soc", 100000},    {"n_total", 100000}};
    PerfParams zero = parse_perf_params(z);
    for (std::int64_t s : {1, 7, 1000})
        CHECK(speedup(vgg, zero, s).speedup == doctest::Approx(1.0));
}

TEST_CASE("speedup rises monotonically with memory latency") {
    NetworkModel m = three_stage();
    PerfParams base = unit_params();

    for (const char* field : {"dt_readmem", "dt_writemem", "bus_conflict_factor"}) {
        SweepSpec spec = parse_sweep(std::string(field) + "=1:10:1");
        auto points = run_sweep(m, base, 100, spec);
        REQUIRE(points.size() == 10);
        for (std::size_t i = 1; i < points.size(); ++i) {
            CAPTURE(field);
            CHECK(points[i].second.speedup >= points[i - 1].second.speedup);
        }
    }
}

TEST_CASE("sweep parsing enforces its little grammar") {
    SweepSpec s = parse_sweep("dt_readmem=0.5:2.5:0.5");
    CHECK(s.field == "dt_readmem");
    CHECK(s.from == doctest::Approx(0.5));
    CHECK(s.to == doctest::Approx(2.5));
    CHECK(s.step == doctest::Approx(0.5));

    CHECK_THROWS_AS((void)parse_sweep("dt_readmem"), ValidationError);
    CHECK_THROWS_AS((void)parse_sweep("dt_readmem=1:10"), ValidationError);
    CHECK_THROWS_AS((void)parse_sweep("dt_readmem=10:1:1"), ValidationError);
    CHECK_THROWS_AS((void)parse_sweep("dt_readmem=1:10:0"), ValidationError);
    CHECK_THROWS_AS((void)parse_sweep("dt_readmem=1:10:-2"), ValidationError);

    // Unknown fields are rejected when the sweep runs.
    NetworkModel m = three_stage();
    CHECK_THROWS_AS((void)run_sweep(m, unit_params(), 10, parse_sweep("memory_kind=1:2:1")),
                    ValidationError);
}

TEST_CASE("networks larger than one die are out of scope") {
    NetworkModel m = three_stage();
    json j = {{"dt_readmem", 1.0}, {"dt_writemem", 1.0}, {"dt_procw", 1.0},
              {"n_w", 4},          {"n_soc", 8},         {"n_total", 20}};
    PerfParams p = parse_perf_params(j);
    try {
        (void)speedup(m, p, 10);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("partition") != std::string::npos);
    }
}

TEST_CASE("a zero-time pipeline cannot be a speedup denominator") {
    NetworkModel m = three_stage();
    json j = {{"dt_readmem", 1.0}, {"dt_writemem", 1.0}, {"dt_procw", 0.0},
              {"n_w", 4},          {"n_soc", 8},         {"n_total", 8}};
    PerfParams p = parse_perf_params(j);
    CHECK_THROWS_AS((void)speedup(m, p, 10), ValidationError);
}

TEST_CASE("enhancement stages pace the pipeline by their sweep length") {
    NetworkModel m = parse_model(R"({
      "input_shape": [6, 6, 2],
      "layers": [
        {"kind": "Input"},
        {"kind": "EnhancementUnit", "mask_size": 3},
        {"kind": "FullyConnected", "units": 4}
      ]})");
    PerfParams p = unit_params();
    p.dt_pulse = 1.0;
    PerfEstimate est = speedup(m, p, 1);
    REQUIRE(est.breakdown.size() == 2);
    // The unit walks its 6x6 grid, one column per pulse.
    CHECK(est.breakdown[0].transfer_time == doctest::Approx(36.0));
    // The dense layer ingests the unit's 72 values: ceil(72/2) pulses.
    CHECK(est.breakdown[1].transfer_time == doctest::Approx(36.0));
}
