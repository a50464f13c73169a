#include <doctest.h>

#include <cstdlib>
#include <string>

#include "fprog/errors.hpp"
#include "fprog/model.hpp"

using namespace fprog;

namespace {

// Smallest legal network: Input plus one weighted layer.
const char* kTinyMlp = R"({
  "input_shape": [4, 4, 1],
  "layers": [
    {"kind": "Input"},
    {"kind": "FullyConnected", "units": 3},
    {"kind": "Output", "units": 2}
  ]
})";

std::string data_path(const char* file) {
    const char* root = std::getenv("FPROG_DATA");
    return std::string(root ? root : "data") + "/" + file;
}

} // namespace

TEST_CASE("parse_model fills documented defaults") {
    NetworkModel m = parse_model(kTinyMlp);
    REQUIRE(m.layers.size() == 3);
    CHECK(m.layers[0].kind == LayerKind::Input);
    CHECK(m.layers[1].activation == Activation::ReLU);   // FC default
    CHECK(m.layers[2].activation == Activation::Softmax); // Output is fixed
    CHECK(m.layers[0].name == "Input0"); // kind + index when unnamed
    CHECK(m.hyper.learning_rate == doctest::Approx(0.01));
    CHECK(m.hyper.batch_mode == BatchMode::GD);
}

TEST_CASE("maxpool stride defaults to its window") {
    NetworkModel m = parse_model(R"({
      "input_shape": [8, 8, 2],
      "layers": [
        {"kind": "Input"},
        {"kind": "MaxPool", "filter_size": 2}
      ]})");
    CHECK(m.layers[1].stride == 2);
    CHECK(m.layers[1].padding == Padding::Valid);
}

TEST_CASE("unknown keys are rejected unless lax") {
    std::string text = R"({
      "input_shape": [4, 4, 1],
      "layers": [{"kind": "Input", "mystery": 1},
                 {"kind": "FullyConnected", "units": 3}]
    })";
    CHECK_THROWS_AS((void)parse_model(text), ValidationError);
    CHECK_NOTHROW((void)parse_model(text, /*lax=*/true));
}

TEST_CASE("parse_model rejects malformed input") {
    CHECK_THROWS_AS((void)parse_model("not json"), ValidationError);
    CHECK_THROWS_AS((void)parse_model("[]"), ValidationError);
    // Missing input_shape.
    CHECK_THROWS_AS((void)parse_model(R"({"layers": [{"kind": "Input"}]})"), ValidationError);
    // Missing layers.
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [1, 1, 1]})"), ValidationError);
    // Non-positive dimensions.
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [0, 4, 1],
                                          "layers": [{"kind": "Input"}]})"),
                    ValidationError);
    // Unknown layer kind.
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "Blorp"}]})"),
                    ValidationError);
    // Conv without filter_size.
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "Input"},
                                                     {"kind": "Conv", "out_channels": 2}]})"),
                    ValidationError);
    // Softmax on a hidden layer.
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "Input"},
                                                     {"kind": "FullyConnected", "units": 3,
                                                      "activation": "Softmax"}]})"),
                    ValidationError);
    // Bad hyperparameters.
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "Input"}],
                                          "hyperparameters": {"learning_rate": 0}})"),
                    ValidationError);
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "Input"}],
                                          "hyperparameters": {"batch_mode": "turbo"}})"),
                    ValidationError);
}

TEST_CASE("structural rules: Input first, Output last") {
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "FullyConnected", "units": 3}]})"),
                    ValidationError);
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "Input"}, {"kind": "Input"}]})"),
                    ValidationError);
    CHECK_THROWS_AS((void)parse_model(R"({"input_shape": [4, 4, 1],
                                          "layers": [{"kind": "Input"},
                                                     {"kind": "Output", "units": 2},
                                                     {"kind": "FullyConnected", "units": 3}]})"),
                    ValidationError);
}

TEST_CASE("shape_infer implements the documented shape rules") {
    NetworkModel m = parse_model(R"({
      "input_shape": [11, 11, 3],
      "layers": [
        {"kind": "Input"},
        {"kind": "Conv", "filter_size": 3, "stride": 2, "padding": "same", "out_channels": 8},
        {"kind": "Conv", "filter_size": 3, "stride": 1, "padding": "valid", "out_channels": 4},
        {"kind": "MaxPool", "filter_size": 2, "stride": 2},
        {"kind": "FullyConnected", "units": 10},
        {"kind": "Output", "units": 5}
      ]})");
    auto s = shape_infer(m);
    REQUIRE(s.size() == 6);
    CHECK(s[0] == Shape{11, 11, 3});
    CHECK(s[1] == Shape{6, 6, 8});  // same: ceil(11/2)
    CHECK(s[2] == Shape{4, 4, 4});  // valid: (6-3)/1 + 1
    CHECK(s[3] == Shape{2, 2, 4});  // floor((4-2)/2) + 1
    CHECK(s[4] == Shape{1, 1, 10});
    CHECK(s[5] == Shape{1, 1, 5});
}

TEST_CASE("shape_infer rejects a filter larger than its valid input") {
    CHECK_THROWS_AS((void)parse_model(R"({
      "input_shape": [4, 4, 1],
      "layers": [
        {"kind": "Input"},
        {"kind": "Conv", "filter_size": 5, "padding": "valid", "out_channels": 2}
      ]})"),
                    ValidationError);
}

TEST_CASE("inception branches concatenate channels; spatial dims must agree") {
    // All three branches land on 6x6: two valid 3x3 convs and a 3x3 pool at
    // stride 1 followed by a pointwise conv.
    NetworkModel m = parse_model(R"({
      "input_shape": [8, 8, 3],
      "layers": [
        {"kind": "Input"},
        {"kind": "InceptionModule", "branches": [
          [{"kind": "Conv", "filter_size": 3, "padding": "valid", "out_channels": 4}],
          [{"kind": "Conv", "filter_size": 3, "padding": "valid", "out_channels": 6}],
          [{"kind": "MaxPool", "filter_size": 3, "stride": 1},
           {"kind": "Conv", "filter_size": 1, "out_channels": 2}]
        ]}
      ]})");
    auto s = shape_infer(m);
    CHECK(s[1] == Shape{6, 6, 12}); // channel concat of 4 + 6 + 2

    auto bs = branch_shapes(m.layers[1].branches[2], Shape{8, 8, 3});
    REQUIRE(bs.size() == 2);
    CHECK(bs[0] == Shape{6, 6, 3});
    CHECK(bs[1] == Shape{6, 6, 2});

    // Mismatched branch spatial dims are rejected.
    CHECK_THROWS_AS((void)parse_model(R"({
      "input_shape": [8, 8, 3],
      "layers": [
        {"kind": "Input"},
        {"kind": "InceptionModule", "branches": [
          [{"kind": "Conv", "filter_size": 1, "out_channels": 4}],
          [{"kind": "Conv", "filter_size": 3, "padding": "valid", "out_channels": 6}]
        ]}
      ]})"),
                    ValidationError);

    // Branches may not contain FullyConnected layers.
    CHECK_THROWS_AS((void)parse_model(R"({
      "input_shape": [8, 8, 3],
      "layers": [
        {"kind": "Input"},
        {"kind": "InceptionModule", "branches": [
          [{"kind": "FullyConnected", "units": 4}]
        ]}
      ]})"),
                    ValidationError);
}

TEST_CASE("enhancement feedback links are validated end to end") {
    // A legal link: same mask size, matching spatial dims, partner deeper.
    const char* good = R"({
      "input_shape": [6, 6, 2],
      "layers": [
        {"kind": "Input"},
        {"kind": "EnhancementUnit", "mask_size": 3, "feedback_partner": 4},
        {"kind": "Conv", "filter_size": 1, "out_channels": 2},
        {"kind": "Conv", "filter_size": 1, "out_channels": 1},
        {"kind": "EnhancementUnit", "mask_size": 3}
      ]})";
    CHECK_NOTHROW((void)parse_model(good));

    auto reject = [](const char* text) {
        CHECK_THROWS_AS((void)parse_model(text), ValidationError);
    };
    // Partner must be deeper.
    reject(R"({"input_shape": [6, 6, 2],
               "layers": [{"kind": "Input"},
                          {"kind": "EnhancementUnit", "mask_size": 3, "feedback_partner": 1}]})");
    // Partner must exist.
    reject(R"({"input_shape": [6, 6, 2],
               "layers": [{"kind": "Input"},
                          {"kind": "EnhancementUnit", "mask_size": 3, "feedback_partner": 9}]})");
    // Partner must be an enhancement unit.
    reject(R"({"input_shape": [6, 6, 2],
               "layers": [{"kind": "Input"},
                          {"kind": "EnhancementUnit", "mask_size": 3, "feedback_partner": 2},
                          {"kind": "Conv", "filter_size": 1, "out_channels": 2}]})");
    // Mask sizes must match across the link.
    reject(R"({"input_shape": [6, 6, 2],
               "layers": [{"kind": "Input"},
                          {"kind": "EnhancementUnit", "mask_size": 3, "feedback_partner": 2},
                          {"kind": "EnhancementUnit", "mask_size": 5}]})");
    // Mask size must be one of the supported sizes.
    reject(R"({"input_shape": [6, 6, 2],
               "layers": [{"kind": "Input"},
                          {"kind": "EnhancementUnit", "mask_size": 4}]})");
}

TEST_CASE("serialize_model round-trips through parse_model") {
    NetworkModel m = parse_model(R"({
      "name": "round-trip",
      "input_shape": [9, 9, 2],
      "layers": [
        {"kind": "Input"},
        {"kind": "Conv", "filter_size": 3, "stride": 2, "padding": "valid", "out_channels": 5,
         "activation": "Identity"},
        {"kind": "MaxPool", "filter_size": 2},
        {"kind": "EnhancementUnit", "mask_size": 3, "use_magnitude": false},
        {"kind": "FullyConnected", "units": 7},
        {"kind": "Output", "units": 3}
      ],
      "hyperparameters": {"learning_rate": 0.2, "batch_mode": "miniBatchGD", "batch_size": 4,
                          "dropout_p": 0.25, "enhancement_iterations": 2}
    })");
    NetworkModel back = parse_model(serialize_model(m));
    REQUIRE(back.layers.size() == m.layers.size());
    CHECK(back.name == m.name);
    CHECK(back.input_shape == m.input_shape);
    for (size_t i = 0; i < m.layers.size(); ++i) {
        CHECK(back.layers[i].kind == m.layers[i].kind);
        CHECK(back.layers[i].name == m.layers[i].name);
        CHECK(back.layers[i].filter_size == m.layers[i].filter_size);
        CHECK(back.layers[i].stride == m.layers[i].stride);
        CHECK(back.layers[i].padding == m.layers[i].padding);
        CHECK(back.layers[i].out_channels == m.layers[i].out_channels);
        CHECK(back.layers[i].units == m.layers[i].units);
        CHECK(back.layers[i].activation == m.layers[i].activation);
        CHECK(back.layers[i].mask_size == m.layers[i].mask_size);
        CHECK(back.layers[i].use_magnitude == m.layers[i].use_magnitude);
        CHECK(back.layers[i].feedback_partner == m.layers[i].feedback_partner);
    }
    CHECK(back.hyper.learning_rate == m.hyper.learning_rate);
    CHECK(back.hyper.batch_mode == m.hyper.batch_mode);
    CHECK(back.hyper.batch_size == m.hyper.batch_size);
    CHECK(back.hyper.dropout_p == m.hyper.dropout_p);
    CHECK(back.hyper.enhancement_iterations == m.hyper.enhancement_iterations);

    // Serialization is stable: a second trip produces identical text.
    CHECK(serialize_model(back) == serialize_model(m));
}

TEST_CASE("the bundled sixteen-layer network loads with the expected shapes") {
    NetworkModel m = load_model_file(data_path("vgg16.json"));
    auto s = shape_infer(m);
    REQUIRE(m.layers.size() == 22);
    CHECK(s[0] == Shape{224, 224, 3});
    CHECK(s[1] == Shape{224, 224, 64});
    CHECK(s[3] == Shape{112, 112, 64});   // first pool
    CHECK(s[10] == Shape{28, 28, 256});   // third pool
    CHECK(s[18] == Shape{7, 7, 512});     // last pool
    CHECK(s[19] == Shape{1, 1, 4096});
    CHECK(s[21] == Shape{1, 1, 1000});
    CHECK(m.layers[21].kind == LayerKind::Output);
}

TEST_CASE("load_model_file reports unreadable paths") {
    CHECK_THROWS_AS((void)load_model_file("no/such/model.json"), ValidationError);
}
