#pragma once

#include <cstdint>
#include <functional>

#include "fprog/model.hpp"
#include "fprog/numerics.hpp"
#include "fprog/tensor.hpp"

namespace fprog::enhance {

enum class NormalizeMode { Softmax, Linear };

// Per-cell sums over m x m x c volumes of the activation grid, taking values
// or magnitudes.  Cells tile the grid with stride m; edge cells truncate.
CoeffGrid coincidence_sums(const Tensor& acts, int m, bool use_magnitude);

// Turn raw sums into coefficients.  Softmax (the default everywhere) yields
// a positive grid summing to one; Linear divides by the total, which must be
// positive.
CoeffGrid normalize(CoeffGrid raw, NormalizeMode mode);

// Element-wise product of two coefficient grids, renormalized.
CoeffGrid combine(const CoeffGrid& a, const CoeffGrid& b, NormalizeMode renorm);

// Scale every activation by the coefficient of the cell covering it.
Tensor apply(const Tensor& acts, const CoeffGrid& grid);

// The same multiply realized the way the storage arrays do it: one column of
// values per pulse, row-major.  Adds h*w to `pulses`; results match apply()
// bit for bit.
Tensor apply_sweep(const Tensor& acts, const CoeffGrid& grid, std::int64_t& pulses);

// Coefficient feedback between a shallow and a deep enhancement unit.  The
// shallow grid starts from the shallow activations alone; each iteration
// applies it, propagates through the intervening layers, reads the deep
// unit's grid and folds it back in (product + renormalize).  After the loop
// one more propagation fixes the deep unit's own coefficients.
struct FeedbackOutcome {
    CoeffGrid shallow;     // refined shallow coefficients
    CoeffGrid deep;        // deep coefficients on the final pass
    Tensor shallow_output; // apply(shallow_in, shallow) — final pass
    Tensor deep_input;     // activations entering the deep unit, final pass
    Tensor deep_output;    // after the deep unit's multiply
    int propagations = 0;  // iterations + 1
};
FeedbackOutcome single_loop_feedback(const Tensor& shallow_in, int mask, bool use_magnitude,
                                     int iterations, int deep_mask, bool deep_magnitude,
                                     const std::function<Tensor(const Tensor&)>& propagate,
                                     NormalizeMode combine_renorm = NormalizeMode::Linear);

// Parallel Conv/MaxPool branches over one input, channel-concatenated.
Tensor inception_forward(const LayerSpec& module,
                         const std::vector<std::vector<FilterBank>>& banks, const Tensor& input);

// Demonstration scene used by tests and the CLI demo.  Two blobs carry the
// same per-cell energy on a 6x6x2 grid: blob A lights both maps at one
// position (a cross-map coincidence), blob B puts everything into one map.
// The sums alone cannot tell them apart; the fixed 1x1 filter chain computes
// min(map0, map1), which only the coincident blob survives, so feedback pulls
// the two coefficients apart.
struct DemoScene {
    NetworkModel model; // Input, EnhancementUnit (fb), Conv, Conv, EnhancementUnit
    ParamSet params;    // fixed min-detector filters
    Tensor input;       // the two-blob grid
    int shallow_index = 1, deep_index = 4;
};
DemoScene two_blob_scene(int iterations = 1);

} // namespace fprog::enhance
