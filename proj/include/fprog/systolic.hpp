#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fprog/fabric.hpp"
#include "fprog/model.hpp"
#include "fprog/numerics.hpp"

namespace fprog::systolic {

// Machine states: F forwards activations, B broadcasts loss terms back,
// U re-streams activations so weight owners can fold in their updates.
enum class MachineState { Forward, Backward, Update };
char state_code(MachineState s);

struct Tag {
    std::int32_t source_node = -1;
    std::int32_t destination = -1; // -1 = broadcast: every tap may ingest
    std::int16_t layer = -1;       // emitting layer
    MachineState state = MachineState::Forward;
    bool prune_flag = false;
    bool latch = false;             // parked at a tap this pulse
    bool transfer_complete = false; // finished circulating
};

struct DataFrame {
    Tag tag;
    double value = 0.0;
};

struct TraceRow {
    std::int64_t pulse = 0; // global pulse index across the run
    char state = 'F';       // F, B, U or E (enhancement sweep)
    std::string stage;
    std::int64_t frames_in_flight = 0;
    std::int64_t ingests = 0;
};

struct StageCount {
    std::string label;
    std::int64_t pulses = 0;

    bool operator==(const StageCount&) const = default;
};

// Pulse counts for one full pass of each state over a single sample.
struct PulseReport {
    std::int64_t forward = 0;
    std::int64_t backward = 0;
    std::int64_t update = 0;
    std::int64_t enhancement = 0; // sweep pulses, already included in forward
    std::vector<StageCount> forward_stages, backward_stages, update_stages;

    bool operator==(const PulseReport&) const = default;
};

// Pulses for one layer's output to circulate past its consumers.  The two
// ring directions meeting at the crossover halve the count; without the
// crossover a single direction visits all n positions.
std::int64_t stage_pulses(std::int64_t n_src, bool crossover);

// Closed-form pulse counts derived from the model shapes alone.  Works at any
// scale; the event-driven engine must reproduce it exactly.
PulseReport pulse_model(const NetworkModel& model, bool crossover = true);

struct EngineOptions {
    bool crossover = true;
    std::vector<TraceRow>* trace = nullptr; // per-pulse rows, optional
    std::int64_t node_budget = 2'000'000;
    std::int64_t edge_budget = 50'000'000;
};

// Event-driven simulator.  Workers are configured purely from identity
// records; every value moves as a tagged frame through the ring schedule.
class Engine {
  public:
    Engine(const NetworkModel& model, const std::vector<IdentityRecord>& records,
           ParamSet params, EngineOptions opts = {});
    ~Engine();
    Engine(Engine&&) noexcept;
    Engine& operator=(Engine&&) noexcept;

    // One forward pass.  Activations stay resident per layer (the pixel
    // arrays) until the next pass.
    void forward(const Tensor& x, const StepMasks* masks, PulseReport* report);
    // Loss-term broadcast for the most recent forward pass.
    void backward(int label, PulseReport* report);
    // Update state: re-stream stored activations, folding weight-gradient
    // contributions into the accumulators at each owner.
    void update_pass(PulseReport* report);
    // Batch boundary: w -= learning_rate * grad / sample_count, then clear.
    void apply_update(double learning_rate, int sample_count);

    const std::vector<double>& probs() const { return probs_; }
    double last_loss(int label) const;
    const Tensor& activations(int layer) const;
    const ParamSet& params() const { return params_; }

    // Test hooks. The first corrupts one frame's destination on the next
    // transfer into `layer`; the second deletes a forward pairing record so
    // the backward broadcast comes up short.  Both must end in a fault.
    void corrupt_next_destination(int layer, std::int32_t bogus_destination);
    void drop_pairing_record(int layer, std::int64_t node);

  private:
    struct LayerRuntime;
    void stage_transfer(int dst_layer, MachineState state, PulseReport* report);
    void enhancement_forward(int layer, PulseReport* report);

    NetworkModel model_;
    std::vector<Shape> shapes_;
    ParamSet params_;
    ParamSet grads_;
    std::vector<LayerRuntime> layers_;
    std::vector<double> probs_;
    EngineOptions opts_;
    std::int64_t global_pulse_ = 0;
    const StepMasks* step_masks_ = nullptr; // masks for the step in flight
    double pending_scale_ = 1.0;            // deferred dropout division
};

struct LabeledSample {
    Tensor x;
    int label = 0;
};

struct TrainOptions {
    int epochs = 1;
    bool crossover = true;
    bool cross_check = true;       // run the dense executor in lockstep
    double check_tolerance = 1e-9; // max |w_fabric - w_dense| allowed per step
    std::uint64_t seed = 42;       // dropout mask stream
};

struct EpochStats {
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    PulseReport per_sample;        // identical for every sample (asserted)
    std::int64_t total_pulses = 0; // whole run
    double max_divergence = 0.0;   // worst fabric/dense parameter gap seen
    ParamSet params;               // trained weights, fabric copy
};

// Drive the F/B/U state machine over a dataset under the model's batch mode.
// With cross_check the dense executor runs the same steps on the same masks
// and the parameter sets are compared after every update.
TrainResult run_state_machine(const NetworkModel& model,
                              const std::vector<IdentityRecord>& records,
                              const ParamSet& initial, const std::vector<LabeledSample>& data,
                              const TrainOptions& opts);

} // namespace fprog::systolic
