#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fprog {

enum class LayerKind {
    Input,
    Conv,
    MaxPool,
    FullyConnected,
    Output,
    InceptionModule,
    EnhancementUnit,
};

enum class Activation { Identity, ReLU, Softmax };
enum class Padding { Same, Valid };
enum class BatchMode { GD, MiniBatchGD, SGD };

std::string to_string(LayerKind k);
std::string to_string(Activation a);
std::string to_string(Padding p);
std::string to_string(BatchMode m);

struct Shape {
    int h = 0, w = 0, c = 0;
    std::int64_t count() const {
        return std::int64_t(h) * w * c;
    }
    bool operator==(const Shape&) const = default;
};

struct LayerSpec {
    LayerKind kind = LayerKind::Input;
    std::string name; // optional label; defaults to kind+index
    int filter_size = 0;
    int stride = 1;
    Padding padding = Padding::Same;
    int out_channels = 0;
    int units = 0; // FullyConnected / Output width
    Activation activation = Activation::Identity;

    // InceptionModule: parallel branches over the same input, channel-concat.
    std::vector<std::vector<LayerSpec>> branches;

    // EnhancementUnit
    int mask_size = 1;
    bool use_magnitude = true;
    // Index of a deeper EnhancementUnit this one exchanges coefficients with.
    std::optional<int> feedback_partner;
};

struct Hyperparameters {
    double learning_rate = 0.01;
    BatchMode batch_mode = BatchMode::GD;
    int batch_size = 32; // used by MiniBatchGD only
    double dropout_p = 0.0;
    double prune_epsilon = 0.0;
    double prune_count_fraction = 1.0;
    int enhancement_iterations = 1;
};

struct NetworkModel {
    std::string name;
    Shape input_shape;
    std::vector<LayerSpec> layers; // layers[0] is always the Input layer
    Hyperparameters hyper;
};

// Parse a model description from JSON text.  Unknown keys are rejected
// unless `lax` is set; missing optional fields take documented defaults.
// Throws ValidationError with the layer index and field name on bad input.
NetworkModel parse_model(const std::string& json_text, bool lax = false);
NetworkModel load_model_file(const std::string& path, bool lax = false);

// Inverse of parse_model (round-trips through parse_model exactly).
std::string serialize_model(const NetworkModel& model);

// Output shape of every layer, index-aligned with model.layers.
// Shape rules: Conv "same" keeps ceil(n/stride); Conv "valid" and MaxPool
// use floor((n - f)/stride) + 1; FullyConnected and Output produce (1,1,units);
// InceptionModule concatenates branch channels (branch spatial dims must
// agree); EnhancementUnit preserves shape.
std::vector<Shape> shape_infer(const NetworkModel& model);

// Full structural validation (runs shape_infer, checks layer ordering,
// hyperparameter ranges and feedback links).  parse_model calls this.
void validate_model(const NetworkModel& model);

// Output shape of each layer in an inception branch, given the module input.
std::vector<Shape> branch_shapes(const std::vector<LayerSpec>& chain, Shape in);

} // namespace fprog
