#pragma once

#include <cstdint>
#include <vector>

#include "fprog/model.hpp"
#include "fprog/tensor.hpp"
#include "fprog/util.hpp"

namespace fprog {

// Weights of one weighted layer in convolution form.  FullyConnected and
// Output layers are carried as a single "filter" spanning the whole input
// (f_h = in_h, f_w = in_w), so every layer shares one parameter layout.
struct FilterBank {
    int f_h = 0, f_w = 0, c_in = 0, c_out = 0;
    std::vector<double> w; // [c_out][f_h][f_w][c_in]
    std::vector<double> b; // [c_out]

    FilterBank() = default;
    FilterBank(int fh, int fw, int ci, int co)
        : f_h(fh), f_w(fw), c_in(ci), c_out(co),
          w(std::size_t(co) * fh * fw * ci, 0.0), b(co, 0.0) {}

    std::size_t idx(int co, int dh, int dw, int ci) const {
        return ((std::size_t(co) * f_h + dh) * f_w + dw) * c_in + ci;
    }
    double& at(int co, int dh, int dw, int ci) { return w[idx(co, dh, dw, ci)]; }
    double at(int co, int dh, int dw, int ci) const { return w[idx(co, dh, dw, ci)]; }
};

// Leading pad for "same" convolution (TensorFlow convention: total pad
// (out-1)*stride + f - in, split with the smaller half first).
struct PadInfo {
    int h = 0, w = 0;
};
PadInfo same_padding(int in_h, int in_w, int f_h, int f_w, int stride);

// Cross-correlation with bias, no activation.
Tensor conv_forward(const Tensor& x, const FilterBank& k, int stride, Padding padding);

struct ConvGrads {
    Tensor dx;
    FilterBank dk;
};
ConvGrads conv_backward(const Tensor& x, const FilterBank& k, int stride, Padding padding,
                        const Tensor& dy);

struct PoolResult {
    Tensor y;
    // Flat input index of the selected maximum per output value; ties go to
    // the smallest index so every executor picks the same winner.
    std::vector<std::int64_t> argmax;
};
PoolResult maxpool_forward(const Tensor& x, int f, int stride);
Tensor maxpool_backward(const Tensor& x, const PoolResult& fw, const Tensor& dy);

// Direct dense product over the flattened input; must agree with running the
// same bank through conv_forward at stride 1, "valid" (they share the weight
// layout, so the summation order is identical).
std::vector<double> fc_forward(const Tensor& x, const FilterBank& k);

void relu_inplace(Tensor& t);
std::vector<double> softmax(const std::vector<double>& z);
double cross_entropy(const std::vector<double>& probs, int label);

// --- pruning ------------------------------------------------------------
// Counts, per node of one layer, how many forward passes produced |a| <=
// epsilon.  A node whose count reaches count_fraction * passes is pruned.
struct PruneTracker {
    double epsilon = 0.0;
    std::int64_t passes = 0;
    std::vector<std::int64_t> zero_counts;

    explicit PruneTracker(double eps = 0.0) : epsilon(eps) {}
    void observe(const Tensor& acts);
};
std::vector<std::uint8_t> prune_mask(const PruneTracker& t, double count_fraction);

// --- inverted dropout ----------------------------------------------------
// mask[i] = 1 with probability 1-p.  Surviving values are scaled by 1/(1-p)
// at application time so inference needs no rescaling.
std::vector<std::uint8_t> dropout_mask(std::size_t n, double p, RandomSource& rng);

// Masks drawn (or imposed) for one training step, index-aligned with
// model.layers.  An empty inner vector means "no mask on that layer".
// Dropout applies to FullyConnected layers; prune masks may sit on any layer
// whose outputs stream downstream (1 = pruned, node emits zero).
struct StepMasks {
    std::vector<std::vector<std::uint8_t>> dropout;
    std::vector<std::vector<std::uint8_t>> prune;
    double dropout_p = 0.0;
};
StepMasks draw_step_masks(const NetworkModel& model, RandomSource& rng);

// True when layer i's dropout division is postponed past the following
// enhancement unit (mask, then enhancement multiply, then one division).
bool defers_division(const NetworkModel& m, std::size_t i);

// Apply layer i's masks to its freshly computed activations: dropout first
// (honouring deferral via pending_scale), then pruning.  Shared by the dense
// executor and the fabric engine so both paths zero and scale identically.
void apply_layer_masks(Tensor& t, const NetworkModel& model, std::size_t i,
                       const StepMasks* masks, double& pending_scale);

// --- parameters -----------------------------------------------------------
struct ParamSet {
    // Index-aligned with model.layers; unweighted layers hold empty banks.
    std::vector<FilterBank> layer;
    // InceptionModule weights: branch[layer_index][branch][position].
    std::vector<std::vector<std::vector<FilterBank>>> branch;

    void add_scaled(const ParamSet& g, double scale); // w += scale * g
    double max_abs_difference(const ParamSet& o) const;
};

// Banks of the right shapes, all zero.
ParamSet zero_params(const NetworkModel& model);
// Glorot-uniform weights (zero biases) drawn in a fixed order from the seed.
ParamSet init_params(const NetworkModel& model, std::uint64_t seed);

// --- dense reference executor ---------------------------------------------
// Straightforward nested-loop implementation of the whole network.  It is the
// correctness oracle the fabric simulator is checked against.
class DenseNet {
  public:
    DenseNet(const NetworkModel& model, ParamSet params);

    struct Trace {
        std::vector<Tensor> input; // per layer: what it consumed
        std::vector<Tensor> pre;   // weighted sums before activation
        std::vector<Tensor> post;  // after activation and masks
        std::vector<PoolResult> pool;      // index-aligned, unused slots empty
        std::vector<CoeffGrid> coeffs;     // enhancement coefficients per unit
        std::vector<double> probs;         // Output softmax, empty without Output
    };

    Trace forward(const Tensor& x, const StepMasks* masks = nullptr) const;

    // Gradients for one sample; requires a Conv/MaxPool/FullyConnected/Output
    // chain (no inception or enhancement layers on the gradient path).
    ParamSet backward(const Trace& trace, int label, const StepMasks* masks = nullptr) const;

    // w -= learning_rate * grad / sample_count
    void apply_update(const ParamSet& grad_sum, double learning_rate, int sample_count);

    const ParamSet& params() const { return params_; }
    const NetworkModel& model() const { return model_; }
    const std::vector<Shape>& shapes() const { return shapes_; }

  private:
    NetworkModel model_;
    std::vector<Shape> shapes_;
    ParamSet params_;
};

int argmax(const std::vector<double>& v);

} // namespace fprog
