#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fprog/analyzer.hpp"
#include "fprog/enhancement.hpp"
#include "fprog/errors.hpp"
#include "fprog/fabric.hpp"
#include "fprog/idx.hpp"
#include "fprog/manifest.hpp"
#include "fprog/model.hpp"
#include "fprog/numerics.hpp"
#include "fprog/perfmodel.hpp"
#include "fprog/report.hpp"
#include "fprog/systolic.hpp"
#include "fprog/util.hpp"

namespace {

using namespace fprog;

struct GlobalOpts {
    std::uint64_t seed = 42;
    bool csv = false;
    bool lax = false;
    std::string manifest_out;
    std::string out_path;
};

// Write the report (stdout by default) and the manifest JSON when requested.
void emit(const std::string& doc, const GlobalOpts& g, const RunManifest& manifest) {
    if (!g.manifest_out.empty()) {
        std::ofstream mo(g.manifest_out);
        if (!mo) throw ValidationError("cannot write manifest file: " + g.manifest_out);
        mo << manifest.to_json().dump(2) << "\n";
    }
    if (g.out_path.empty()) {
        std::cout << doc;
        return;
    }
    std::ofstream out(g.out_path);
    if (!out) throw ValidationError("cannot write output file: " + g.out_path);
    out << doc;
    out.flush();
    if (!out) throw ValidationError("short write on output file: " + g.out_path);
}

Geometry default_geometry() {
    Geometry g;
    g.tensor_field_capacity = 16'777'216;
    g.pixel_field_capacity = 65'536;
    g.field_count = 128;
    return g;
}

std::vector<IdentityRecord> one_to_one_records(const NetworkModel& model,
                                               const Geometry& geom) {
    AllocationPlan plan = allocate_one_to_one(model);
    FabricLayout layout = synthesize(model, plan, geom);
    return assign_identities(model, layout);
}

bool gradient_defined(const NetworkModel& model) {
    if (model.layers.back().kind != LayerKind::Output) return false;
    for (const LayerSpec& l : model.layers)
        if (l.kind == LayerKind::InceptionModule || l.kind == LayerKind::EnhancementUnit)
            return false;
    return true;
}

std::string grid_table(const CoeffGrid& g, bool csv) {
    std::vector<std::string> header{"row"};
    for (int j = 0; j < g.cols; ++j) header.push_back("c" + std::to_string(j));
    TextTable t(header);
    for (int i = 0; i < g.rows; ++i) {
        std::vector<std::string> row{std::to_string(i)};
        for (int j = 0; j < g.cols; ++j) row.push_back(fixed(g.at(i, j), 6));
        t.add_row(std::move(row));
    }
    return csv ? t.csv() : t.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Behavioral compiler and pulse-level simulator for a field-programmable "
                 "DNN fabric"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "Seed for all stochastic choices")->capture_default_str();
    app.add_flag("--csv", g.csv, "Emit CSV instead of an aligned text table");
    app.add_flag("--lax", g.lax, "Accept unknown keys in model files");
    app.add_option("--manifest-out", g.manifest_out, "Write the run manifest JSON here");
    app.add_option("--out", g.out_path, "Write the report here instead of stdout");

    // analyze ---------------------------------------------------------------
    auto* analyze = app.add_subcommand("analyze", "Per-layer load and worker allocation");
    std::string an_model;
    std::int64_t an_workers = 100'000;
    bool an_one_to_one = false;
    std::string an_convention = "tied";
    analyze->add_option("--model", an_model, "Model JSON file")->required();
    analyze->add_option("--workers", an_workers, "Worker pool to split across layers")
        ->capture_default_str();
    analyze->add_flag("--one-to-one", an_one_to_one, "One worker per node instead");
    analyze->add_option("--convention", an_convention,
                        "FC parameter counting: tied | per-unit")
        ->capture_default_str();
    analyze->callback([&] {
        RunManifest m;
        m.command = "analyze";
        m.seed = g.seed;
        m.add_input(an_model);
        m.config = {{"workers", an_workers},
                    {"one_to_one", an_one_to_one},
                    {"convention", an_convention},
                    {"csv", g.csv}};
        NetworkModel model = load_model_file(an_model, g.lax);
        ParamConvention conv;
        if (an_convention == "tied") conv = ParamConvention::TiedBias;
        else if (an_convention == "per-unit") conv = ParamConvention::PerUnit;
        else throw ValidationError("unknown --convention (expected tied or per-unit)");
        NetworkStats stats = layer_stats(model, conv);
        AllocationPlan plan = an_one_to_one ? allocate_one_to_one(model)
                                            : allocate_workers(model, an_workers, conv);
        emit(allocation_report(model, plan, stats, g.csv, m), g, m);
    });

    // synth -----------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Place workers onto the die fields");
    std::string sy_model, sy_geometry;
    std::int64_t sy_workers = 100'000;
    bool sy_one_to_one = false;
    synth->add_option("--model", sy_model, "Model JSON file")->required();
    synth->add_option("--geometry", sy_geometry, "Die geometry JSON file");
    synth->add_option("--workers", sy_workers, "Worker pool for the equal-delay plan")
        ->capture_default_str();
    synth->add_flag("--one-to-one", sy_one_to_one, "One worker per node instead");
    synth->callback([&] {
        RunManifest m;
        m.command = "synth";
        m.seed = g.seed;
        m.add_input(sy_model);
        if (!sy_geometry.empty()) m.add_input(sy_geometry);
        m.config = {{"workers", sy_workers},
                    {"one_to_one", sy_one_to_one},
                    {"csv", g.csv}};
        NetworkModel model = load_model_file(sy_model, g.lax);
        Geometry geom =
            sy_geometry.empty() ? default_geometry() : load_geometry_file(sy_geometry);
        AllocationPlan plan = sy_one_to_one ? allocate_one_to_one(model)
                                            : allocate_workers(model, sy_workers);
        FabricLayout layout = synthesize(model, plan, geom);
        emit(synthesis_report(model, layout, g.csv, m), g, m);
    });

    // simulate ----------------------------------------------------------------
    auto* simulate = app.add_subcommand(
        "simulate", "Pulse counts per machine state (closed form, optionally event-driven)");
    std::string si_model, si_geometry, si_trace;
    bool si_no_crossover = false, si_engine = false;
    simulate->add_option("--model", si_model, "Model JSON file")->required();
    simulate->add_option("--geometry", si_geometry, "Die geometry JSON file (engine runs)");
    simulate->add_flag("--no-crossover", si_no_crossover,
                       "Rings without the crossover (full-length transfers)");
    simulate->add_flag("--engine", si_engine,
                       "Also run the event-driven engine on a random sample and require "
                       "identical counts");
    simulate->add_option("--trace", si_trace, "Write a per-pulse CSV trace here (engine runs)");
    simulate->callback([&] {
        RunManifest m;
        m.command = "simulate";
        m.seed = g.seed;
        m.add_input(si_model);
        if (!si_geometry.empty()) m.add_input(si_geometry);
        m.config = {{"crossover", !si_no_crossover},
                    {"engine", si_engine},
                    {"csv", g.csv}};
        NetworkModel model = load_model_file(si_model, g.lax);
        bool crossover = !si_no_crossover;
        systolic::PulseReport expected = systolic::pulse_model(model, crossover);
        if (si_engine) {
            Geometry geom =
                si_geometry.empty() ? default_geometry() : load_geometry_file(si_geometry);
            auto records = one_to_one_records(model, geom);
            std::vector<systolic::TraceRow> trace;
            systolic::EngineOptions eo;
            eo.crossover = crossover;
            if (!si_trace.empty()) eo.trace = &trace;
            systolic::Engine engine(model, records, init_params(model, g.seed), eo);
            RandomSource rng(g.seed ^ 0x9e3779b97f4a7c15ull);
            Tensor x(model.input_shape.h, model.input_shape.w, model.input_shape.c);
            for (double& v : x.v) v = rng.uniform();
            systolic::PulseReport got;
            engine.forward(x, nullptr, &got);
            if (gradient_defined(model)) {
                engine.backward(0, &got);
                engine.update_pass(&got);
                if (!(got == expected))
                    throw SimulationFault(
                        "event engine pulse counts diverge from the closed-form model");
            } else if (got.forward != expected.forward ||
                       !(got.forward_stages == expected.forward_stages)) {
                throw SimulationFault(
                    "event engine forward pulse counts diverge from the closed-form model");
            }
            if (!si_trace.empty()) {
                std::ofstream tf(si_trace);
                if (!tf) throw ValidationError("cannot write trace file: " + si_trace);
                tf << "pulse,state,stage,frames_in_flight,ingests\n";
                for (const auto& row : trace)
                    tf << row.pulse << ',' << row.state << ',' << row.stage << ','
                       << row.frames_in_flight << ',' << row.ingests << "\n";
            }
        }
        emit(simulation_report(expected, g.csv, m), g, m);
    });

    // perf --------------------------------------------------------------------
    auto* perf = app.add_subcommand("perf", "Latency model: fabric vs store/fetch execution");
    std::string pf_model, pf_params, pf_sweep;
    std::int64_t pf_samples = 1000;
    perf->add_option("--model", pf_model, "Model JSON file")->required();
    perf->add_option("--params", pf_params, "Timing parameters JSON file")->required();
    perf->add_option("--samples", pf_samples, "Pipelined batch size S")
        ->capture_default_str();
    perf->add_option("--sweep", pf_sweep, "field=from:to:step over one numeric parameter");
    perf->callback([&] {
        RunManifest m;
        m.command = "perf";
        m.seed = g.seed;
        m.add_input(pf_model);
        m.add_input(pf_params);
        m.config = {{"samples", pf_samples}, {"csv", g.csv}};
        if (!pf_sweep.empty()) m.config["sweep"] = pf_sweep;
        NetworkModel model = load_model_file(pf_model, g.lax);
        PerfParams params = load_perf_params_file(pf_params);
        if (pf_sweep.empty()) {
            emit(perf_report(speedup(model, params, pf_samples), g.csv, m), g, m);
        } else {
            SweepSpec spec = parse_sweep(pf_sweep);
            auto rows = run_sweep(model, params, pf_samples, spec);
            emit(sweep_report(rows, spec.field, g.csv, m), g, m);
        }
    });

    // enhance-demo ------------------------------------------------------------
    auto* demo = app.add_subcommand(
        "enhance-demo", "Two-blob scene: coefficient feedback separating equal-energy blobs");
    int de_iterations = 1;
    demo->add_option("--iterations", de_iterations, "Feedback loop count")
        ->capture_default_str();
    demo->callback([&] {
        RunManifest m;
        m.command = "enhance-demo";
        m.seed = g.seed;
        m.config = {{"iterations", de_iterations}, {"csv", g.csv}};
        enhance::DemoScene scene = enhance::two_blob_scene(de_iterations);
        const LayerSpec& shallow = scene.model.layers[scene.shallow_index];
        CoeffGrid standalone = enhance::normalize(
            enhance::coincidence_sums(scene.input, shallow.mask_size, shallow.use_magnitude),
            enhance::NormalizeMode::Softmax);
        DenseNet net(scene.model, scene.params);
        auto tr = net.forward(scene.input, nullptr);
        const CoeffGrid& refined = tr.coeffs[scene.shallow_index];

        std::string doc = m.comment_block();
        doc += "# two equal-energy blobs; only the cross-map coincident one survives the "
               "min() detector between the units\n";
        doc += "# shallow coefficients, standalone (no feedback):\n";
        doc += grid_table(standalone, g.csv);
        doc += "# shallow coefficients after " + std::to_string(de_iterations) +
               " feedback iteration(s):\n";
        doc += grid_table(refined, g.csv);
        doc += "# deep-unit coefficients on the final pass:\n";
        doc += grid_table(tr.coeffs[scene.deep_index], g.csv);
        emit(doc, g, m);
    });

    // train-demo ----------------------------------------------------------------
    auto* train = app.add_subcommand(
        "train-demo", "Train on a digit dataset with the event engine, cross-checked");
    std::string td_model, td_images, td_labels;
    int td_epochs = 1;
    std::int64_t td_limit = 0;
    bool td_no_cross_check = false, td_no_crossover = false;
    train->add_option("--model", td_model, "Model JSON file")->required();
    train->add_option("--images", td_images, "IDX image file")->required();
    train->add_option("--labels", td_labels, "IDX label file")->required();
    train->add_option("--epochs", td_epochs, "Training epochs (0 = evaluate only)")
        ->capture_default_str();
    train->add_option("--limit", td_limit, "Use only the first N samples (0 = all)")
        ->capture_default_str();
    train->add_flag("--no-cross-check", td_no_cross_check,
                    "Skip the dense reference comparison (faster)");
    train->add_flag("--no-crossover", td_no_crossover, "Rings without the crossover");
    train->callback([&] {
        RunManifest m;
        m.command = "train-demo";
        m.seed = g.seed;
        m.add_input(td_model);
        m.add_input(td_images);
        m.add_input(td_labels);
        m.config = {{"epochs", td_epochs},
                    {"limit", td_limit},
                    {"cross_check", !td_no_cross_check},
                    {"crossover", !td_no_crossover},
                    {"csv", g.csv}};
        NetworkModel model = load_model_file(td_model, g.lax);
        if (model.input_shape.c != 1)
            throw ValidationError("train-demo expects a single-channel input model");
        if (td_epochs < 0) throw ValidationError("--epochs must be >= 0");
        DigitDataset ds = load_digit_dataset(td_images, td_labels);
        std::int64_t n = td_limit > 0 ? std::min(td_limit, ds.count) : ds.count;
        std::vector<systolic::LabeledSample> data;
        data.reserve(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i)
            data.push_back({sample_tensor(ds, i, model.input_shape.h, model.input_shape.w),
                            ds.labels[static_cast<std::size_t>(i)]});

        systolic::TrainResult result;
        if (td_epochs == 0) {
            // evaluate the initial parameters only
            DenseNet net(model, init_params(model, g.seed));
            double loss_sum = 0.0;
            std::int64_t correct = 0;
            for (const auto& s : data) {
                auto tr = net.forward(s.x, nullptr);
                loss_sum += cross_entropy(tr.probs, s.label);
                if (argmax(tr.probs) == s.label) ++correct;
            }
            result.epochs.push_back({loss_sum / static_cast<double>(data.size()),
                                     static_cast<double>(correct) /
                                         static_cast<double>(data.size())});
            result.per_sample = systolic::pulse_model(model, !td_no_crossover);
            result.params = net.params();
        } else {
            auto records = one_to_one_records(model, default_geometry());
            systolic::TrainOptions opts;
            opts.epochs = td_epochs;
            opts.crossover = !td_no_crossover;
            opts.cross_check = !td_no_cross_check;
            opts.seed = g.seed;
            result = systolic::run_state_machine(model, records,
                                                 init_params(model, g.seed), data, opts);
        }
        emit(train_report(result, g.csv, m), g, m);
    });

    // gen-dataset -----------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-dataset", "Write a synthetic digit dataset (IDX)");
    std::string gd_images = "digits-images.idx", gd_labels = "digits-labels.idx";
    std::int64_t gd_count = 1000;
    int gd_rows = 28, gd_cols = 28;
    gen->add_option("--out-images", gd_images, "Output IDX image file")
        ->capture_default_str();
    gen->add_option("--out-labels", gd_labels, "Output IDX label file")
        ->capture_default_str();
    gen->add_option("--count", gd_count, "Number of samples")->capture_default_str();
    gen->add_option("--rows", gd_rows, "Image height")->capture_default_str();
    gen->add_option("--cols", gd_cols, "Image width")->capture_default_str();
    gen->callback([&] {
        RunManifest m;
        m.command = "gen-dataset";
        m.seed = g.seed;
        m.config = {{"count", gd_count},
                    {"rows", gd_rows},
                    {"cols", gd_cols},
                    {"images", gd_images},
                    {"labels", gd_labels}};
        DigitDataset ds = synth_digits(gd_count, gd_rows, gd_cols, g.seed);
        write_idx_images(gd_images, ds.count, ds.rows, ds.cols, ds.images);
        write_idx_labels(gd_labels, ds.labels);
        std::string doc = m.comment_block();
        doc += "# wrote " + with_commas(ds.count) + " samples\n";
        doc += "# " + gd_images + " sha256 " + sha256_file(gd_images) + "\n";
        doc += "# " + gd_labels + " sha256 " + sha256_file(gd_labels) + "\n";
        emit(doc, g, m);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const SimulationFault& e) {
        std::cerr << "simulation fault: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
