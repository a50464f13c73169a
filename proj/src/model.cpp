#include "fprog/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fprog/errors.hpp"

namespace fprog {

using nlohmann::json;

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "Input";
        case LayerKind::Conv: return "Conv";
        case LayerKind::MaxPool: return "MaxPool";
        case LayerKind::FullyConnected: return "FullyConnected";
        case LayerKind::Output: return "Output";
        case LayerKind::InceptionModule: return "InceptionModule";
        case LayerKind::EnhancementUnit: return "EnhancementUnit";
    }
    return "?";
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "Identity";
        case Activation::ReLU: return "ReLU";
        case Activation::Softmax: return "Softmax";
    }
    return "?";
}

std::string to_string(Padding p) {
    return p == Padding::Same ? "same" : "valid";
}

std::string to_string(BatchMode m) {
    switch (m) {
        case BatchMode::GD: return "GD";
        case BatchMode::MiniBatchGD: return "miniBatchGD";
        case BatchMode::SGD: return "SGD";
    }
    return "?";
}

namespace {

[[noreturn]] void fail(const std::string& ctx, const std::string& msg) {
    throw ValidationError(ctx.empty() ? msg : ctx + ": " + msg);
}

LayerKind parse_kind(const std::string& s, const std::string& ctx) {
    if (s == "Input") return LayerKind::Input;
    if (s == "Conv") return LayerKind::Conv;
    if (s == "MaxPool") return LayerKind::MaxPool;
    if (s == "FullyConnected") return LayerKind::FullyConnected;
    if (s == "Output") return LayerKind::Output;
    if (s == "InceptionModule") return LayerKind::InceptionModule;
    if (s == "EnhancementUnit") return LayerKind::EnhancementUnit;
    fail(ctx, "unknown layer kind \"" + s + "\"");
}

Activation parse_activation(const std::string& s, const std::string& ctx) {
    if (s == "Identity") return Activation::Identity;
    if (s == "ReLU") return Activation::ReLU;
    if (s == "Softmax") return Activation::Softmax;
    fail(ctx, "unknown activation \"" + s + "\"");
}

Padding parse_padding(const std::string& s, const std::string& ctx) {
    if (s == "same") return Padding::Same;
    if (s == "valid") return Padding::Valid;
    fail(ctx, "field \"padding\" must be \"same\" or \"valid\"");
}

BatchMode parse_batch_mode(const std::string& s, const std::string& ctx) {
    if (s == "GD") return BatchMode::GD;
    if (s == "miniBatchGD") return BatchMode::MiniBatchGD;
    if (s == "SGD") return BatchMode::SGD;
    fail(ctx, "unknown batch_mode \"" + s + "\"");
}

int require_positive_int(const json& j, const char* field, const std::string& ctx) {
    if (!j.is_number_integer())
        fail(ctx, std::string("field \"") + field + "\" must be an integer");
    auto v = j.get<std::int64_t>();
    if (v < 1) fail(ctx, std::string("field \"") + field + "\" must be >= 1");
    return static_cast<int>(v);
}

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& ctx, bool lax) {
    if (lax) return;
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            fail(ctx, "unknown field \"" + it.key() + "\"");
}

LayerSpec parse_layer(const json& j, const std::string& ctx, bool lax, bool inside_branch);

std::vector<std::vector<LayerSpec>> parse_branches(const json& j, const std::string& ctx,
                                                   bool lax) {
    if (!j.is_array() || j.empty()) fail(ctx, "field \"branches\" must be a non-empty array");
    std::vector<std::vector<LayerSpec>> out;
    for (size_t b = 0; b < j.size(); ++b) {
        const json& branch = j[b];
        if (!branch.is_array() || branch.empty())
            fail(ctx, "branch " + std::to_string(b) + " must be a non-empty array of layers");
        std::vector<LayerSpec> chain;
        for (size_t i = 0; i < branch.size(); ++i) {
            std::string bctx = ctx + " branch " + std::to_string(b) + " layer " + std::to_string(i);
            chain.push_back(parse_layer(branch[i], bctx, lax, true));
        }
        out.push_back(std::move(chain));
    }
    return out;
}

LayerSpec parse_layer(const json& j, const std::string& ctx, bool lax, bool inside_branch) {
    if (!j.is_object()) fail(ctx, "layer must be a JSON object");
    if (!j.contains("kind")) fail(ctx, "missing field \"kind\"");
    if (!j["kind"].is_string()) fail(ctx, "field \"kind\" must be a string");

    LayerSpec spec;
    spec.kind = parse_kind(j["kind"].get<std::string>(), ctx);
    std::string kctx = ctx + " (" + to_string(spec.kind) + ")";
    if (j.contains("name")) {
        if (!j["name"].is_string()) fail(kctx, "field \"name\" must be a string");
        spec.name = j["name"].get<std::string>();
    }

    switch (spec.kind) {
        case LayerKind::Input:
            check_keys(j, {"kind", "name"}, kctx, lax);
            break;

        case LayerKind::Conv:
            check_keys(j, {"kind", "name", "filter_size", "stride", "padding", "out_channels",
                           "activation"},
                       kctx, lax);
            if (!j.contains("filter_size")) fail(kctx, "missing field \"filter_size\"");
            if (!j.contains("out_channels")) fail(kctx, "missing field \"out_channels\"");
            spec.filter_size = require_positive_int(j["filter_size"], "filter_size", kctx);
            spec.out_channels = require_positive_int(j["out_channels"], "out_channels", kctx);
            spec.stride = j.contains("stride") ? require_positive_int(j["stride"], "stride", kctx) : 1;
            spec.padding = j.contains("padding")
                               ? parse_padding(j["padding"].get<std::string>(), kctx)
                               : Padding::Same;
            spec.activation = j.contains("activation")
                                  ? parse_activation(j["activation"].get<std::string>(), kctx)
                                  : Activation::ReLU;
            if (spec.activation == Activation::Softmax)
                fail(kctx, "field \"activation\": Softmax is only valid on the Output layer");
            break;

        case LayerKind::MaxPool:
            check_keys(j, {"kind", "name", "filter_size", "stride"}, kctx, lax);
            if (!j.contains("filter_size")) fail(kctx, "missing field \"filter_size\"");
            spec.filter_size = require_positive_int(j["filter_size"], "filter_size", kctx);
            // Pooling stride defaults to the window size (non-overlapping).
            spec.stride = j.contains("stride") ? require_positive_int(j["stride"], "stride", kctx)
                                               : spec.filter_size;
            spec.padding = Padding::Valid;
            break;

        case LayerKind::FullyConnected:
            check_keys(j, {"kind", "name", "units", "activation"}, kctx, lax);
            if (!j.contains("units")) fail(kctx, "missing field \"units\"");
            spec.units = require_positive_int(j["units"], "units", kctx);
            spec.activation = j.contains("activation")
                                  ? parse_activation(j["activation"].get<std::string>(), kctx)
                                  : Activation::ReLU;
            if (spec.activation == Activation::Softmax)
                fail(kctx, "field \"activation\": Softmax is only valid on the Output layer");
            break;

        case LayerKind::Output:
            check_keys(j, {"kind", "name", "units", "activation"}, kctx, lax);
            if (!j.contains("units")) fail(kctx, "missing field \"units\"");
            spec.units = require_positive_int(j["units"], "units", kctx);
            spec.activation = Activation::Softmax;
            if (j.contains("activation") &&
                parse_activation(j["activation"].get<std::string>(), kctx) != Activation::Softmax)
                fail(kctx, "field \"activation\": Output layer is always Softmax");
            break;

        case LayerKind::InceptionModule:
            check_keys(j, {"kind", "name", "branches"}, kctx, lax);
            if (!j.contains("branches")) fail(kctx, "missing field \"branches\"");
            spec.branches = parse_branches(j["branches"], kctx, lax);
            break;

        case LayerKind::EnhancementUnit:
            check_keys(j, {"kind", "name", "mask_size", "use_magnitude", "feedback_partner"},
                       kctx, lax);
            if (!j.contains("mask_size")) fail(kctx, "missing field \"mask_size\"");
            spec.mask_size = require_positive_int(j["mask_size"], "mask_size", kctx);
            if (j.contains("use_magnitude")) {
                if (!j["use_magnitude"].is_boolean())
                    fail(kctx, "field \"use_magnitude\" must be a boolean");
                spec.use_magnitude = j["use_magnitude"].get<bool>();
            }
            if (j.contains("feedback_partner")) {
                if (!j["feedback_partner"].is_number_integer())
                    fail(kctx, "field \"feedback_partner\" must be a layer index");
                spec.feedback_partner = j["feedback_partner"].get<int>();
            }
            break;
    }

    if (inside_branch && spec.kind != LayerKind::Conv && spec.kind != LayerKind::MaxPool)
        fail(kctx, "inception branches may contain only Conv and MaxPool layers");

    return spec;
}

Hyperparameters parse_hyper(const json& j, bool lax) {
    const std::string ctx = "hyperparameters";
    if (!j.is_object()) fail(ctx, "must be a JSON object");
    check_keys(j,
               {"learning_rate", "batch_mode", "batch_size", "dropout_p", "prune_epsilon",
                "prune_count_fraction", "enhancement_iterations"},
               ctx, lax);
    Hyperparameters h;
    if (j.contains("learning_rate")) {
        if (!j["learning_rate"].is_number()) fail(ctx, "field \"learning_rate\" must be a number");
        h.learning_rate = j["learning_rate"].get<double>();
        if (!(h.learning_rate > 0.0)) fail(ctx, "field \"learning_rate\" must be > 0");
    }
    if (j.contains("batch_mode"))
        h.batch_mode = parse_batch_mode(j["batch_mode"].get<std::string>(), ctx);
    if (j.contains("batch_size")) h.batch_size = require_positive_int(j["batch_size"], "batch_size", ctx);
    if (j.contains("dropout_p")) {
        if (!j["dropout_p"].is_number()) fail(ctx, "field \"dropout_p\" must be a number");
        h.dropout_p = j["dropout_p"].get<double>();
        if (h.dropout_p < 0.0 || h.dropout_p >= 1.0)
            fail(ctx, "field \"dropout_p\" must lie in [0, 1): dropout_p = 1 leaves a keep "
                      "probability of zero");
    }
    if (j.contains("prune_epsilon")) {
        if (!j["prune_epsilon"].is_number()) fail(ctx, "field \"prune_epsilon\" must be a number");
        h.prune_epsilon = j["prune_epsilon"].get<double>();
        if (h.prune_epsilon < 0.0) fail(ctx, "field \"prune_epsilon\" must be >= 0");
    }
    if (j.contains("prune_count_fraction")) {
        if (!j["prune_count_fraction"].is_number())
            fail(ctx, "field \"prune_count_fraction\" must be a number");
        h.prune_count_fraction = j["prune_count_fraction"].get<double>();
        if (h.prune_count_fraction < 0.0 || h.prune_count_fraction > 1.0)
            fail(ctx, "field \"prune_count_fraction\" must lie in [0, 1]");
    }
    if (j.contains("enhancement_iterations")) {
        if (!j["enhancement_iterations"].is_number_integer())
            fail(ctx, "field \"enhancement_iterations\" must be an integer");
        h.enhancement_iterations = j["enhancement_iterations"].get<int>();
        if (h.enhancement_iterations < 0)
            fail(ctx, "field \"enhancement_iterations\" must be >= 0");
    }
    return h;
}

int spatial_out(int in, int f, int stride, Padding padding, const std::string& ctx) {
    if (padding == Padding::Same) return (in + stride - 1) / stride;
    if (f > in)
        fail(ctx, "incompatible shapes: filter size " + std::to_string(f) +
                      " exceeds input extent " + std::to_string(in));
    return (in - f) / stride + 1;
}

} // namespace

NetworkModel parse_model(const std::string& json_text, bool lax) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model JSON parse error: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("model file must contain a JSON object");
    check_keys(j, {"name", "input_shape", "layers", "hyperparameters"}, "model", lax);

    NetworkModel m;
    if (j.contains("name")) m.name = j["name"].get<std::string>();

    if (!j.contains("input_shape")) throw ValidationError("model: missing field \"input_shape\"");
    const json& is = j["input_shape"];
    if (!is.is_array() || is.size() != 3)
        throw ValidationError("model: field \"input_shape\" must be [height, width, channels]");
    m.input_shape.h = require_positive_int(is[0], "input_shape[0]", "model");
    m.input_shape.w = require_positive_int(is[1], "input_shape[1]", "model");
    m.input_shape.c = require_positive_int(is[2], "input_shape[2]", "model");

    if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty())
        throw ValidationError("model: field \"layers\" must be a non-empty array");
    for (size_t i = 0; i < j["layers"].size(); ++i)
        m.layers.push_back(parse_layer(j["layers"][i], "layer " + std::to_string(i), lax, false));

    if (j.contains("hyperparameters")) m.hyper = parse_hyper(j["hyperparameters"], lax);

    // Default names: kind + index, e.g. "Conv3".
    for (size_t i = 0; i < m.layers.size(); ++i)
        if (m.layers[i].name.empty())
            m.layers[i].name = to_string(m.layers[i].kind) + std::to_string(i);

    validate_model(m);
    return m;
}

NetworkModel load_model_file(const std::string& path, bool lax) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_model(buf.str(), lax);
}

namespace {

json layer_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = to_string(s.kind);
    j["name"] = s.name;
    switch (s.kind) {
        case LayerKind::Input:
            break;
        case LayerKind::Conv:
            j["filter_size"] = s.filter_size;
            j["stride"] = s.stride;
            j["padding"] = to_string(s.padding);
            j["out_channels"] = s.out_channels;
            j["activation"] = to_string(s.activation);
            break;
        case LayerKind::MaxPool:
            j["filter_size"] = s.filter_size;
            j["stride"] = s.stride;
            break;
        case LayerKind::FullyConnected:
        case LayerKind::Output:
            j["units"] = s.units;
            j["activation"] = to_string(s.activation);
            break;
        case LayerKind::InceptionModule: {
            json branches = json::array();
            for (const auto& branch : s.branches) {
                json chain = json::array();
                for (const auto& layer : branch) chain.push_back(layer_to_json(layer));
                branches.push_back(chain);
            }
            j["branches"] = branches;
            break;
        }
        case LayerKind::EnhancementUnit:
            j["mask_size"] = s.mask_size;
            j["use_magnitude"] = s.use_magnitude;
            if (s.feedback_partner) j["feedback_partner"] = *s.feedback_partner;
            break;
    }
    return j;
}

} // namespace

std::string serialize_model(const NetworkModel& m) {
    json j;
    if (!m.name.empty()) j["name"] = m.name;
    j["input_shape"] = {m.input_shape.h, m.input_shape.w, m.input_shape.c};
    json layers = json::array();
    for (const auto& layer : m.layers) layers.push_back(layer_to_json(layer));
    j["layers"] = layers;
    j["hyperparameters"] = {
        {"learning_rate", m.hyper.learning_rate},
        {"batch_mode", to_string(m.hyper.batch_mode)},
        {"batch_size", m.hyper.batch_size},
        {"dropout_p", m.hyper.dropout_p},
        {"prune_epsilon", m.hyper.prune_epsilon},
        {"prune_count_fraction", m.hyper.prune_count_fraction},
        {"enhancement_iterations", m.hyper.enhancement_iterations},
    };
    return j.dump(2) + "\n";
}

namespace {

Shape chain_shape(const std::vector<LayerSpec>& chain, Shape in, const std::string& ctx) {
    Shape s = in;
    for (size_t i = 0; i < chain.size(); ++i) {
        const LayerSpec& l = chain[i];
        std::string lctx = ctx + " layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        if (l.kind == LayerKind::Conv) {
            s = {spatial_out(s.h, l.filter_size, l.stride, l.padding, lctx),
                 spatial_out(s.w, l.filter_size, l.stride, l.padding, lctx), l.out_channels};
        } else { // MaxPool (branch contents were already restricted by the parser)
            s = {spatial_out(s.h, l.filter_size, l.stride, Padding::Valid, lctx),
                 spatial_out(s.w, l.filter_size, l.stride, Padding::Valid, lctx), s.c};
        }
    }
    return s;
}

} // namespace

std::vector<Shape> branch_shapes(const std::vector<LayerSpec>& chain, Shape in) {
    std::vector<Shape> out;
    Shape s = in;
    for (size_t i = 0; i < chain.size(); ++i) {
        const LayerSpec& l = chain[i];
        std::string ctx = "branch layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        if (l.kind == LayerKind::Conv)
            s = {spatial_out(s.h, l.filter_size, l.stride, l.padding, ctx),
                 spatial_out(s.w, l.filter_size, l.stride, l.padding, ctx), l.out_channels};
        else
            s = {spatial_out(s.h, l.filter_size, l.stride, Padding::Valid, ctx),
                 spatial_out(s.w, l.filter_size, l.stride, Padding::Valid, ctx), s.c};
        out.push_back(s);
    }
    return out;
}

std::vector<Shape> shape_infer(const NetworkModel& m) {
    std::vector<Shape> shapes;
    shapes.reserve(m.layers.size());
    Shape cur;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& l = m.layers[i];
        std::string ctx = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::Input:
                cur = m.input_shape;
                break;
            case LayerKind::Conv:
                cur = {spatial_out(cur.h, l.filter_size, l.stride, l.padding, ctx),
                       spatial_out(cur.w, l.filter_size, l.stride, l.padding, ctx),
                       l.out_channels};
                break;
            case LayerKind::MaxPool:
                cur = {spatial_out(cur.h, l.filter_size, l.stride, Padding::Valid, ctx),
                       spatial_out(cur.w, l.filter_size, l.stride, Padding::Valid, ctx), cur.c};
                break;
            case LayerKind::FullyConnected:
            case LayerKind::Output:
                cur = {1, 1, l.units};
                break;
            case LayerKind::InceptionModule: {
                int total_c = 0;
                Shape first;
                for (size_t b = 0; b < l.branches.size(); ++b) {
                    Shape bs = chain_shape(l.branches[b], cur,
                                           ctx + " branch " + std::to_string(b));
                    if (b == 0)
                        first = bs;
                    else if (bs.h != first.h || bs.w != first.w)
                        fail(ctx, "branch outputs disagree spatially: branch 0 gives " +
                                      std::to_string(first.h) + "x" + std::to_string(first.w) +
                                      ", branch " + std::to_string(b) + " gives " +
                                      std::to_string(bs.h) + "x" + std::to_string(bs.w));
                    total_c += bs.c;
                }
                cur = {first.h, first.w, total_c};
                break;
            }
            case LayerKind::EnhancementUnit:
                break; // shape preserving
        }
        shapes.push_back(cur);
    }
    return shapes;
}

void validate_model(const NetworkModel& m) {
    if (m.layers.empty()) throw ValidationError("model: \"layers\" must be non-empty");
    if (m.layers.front().kind != LayerKind::Input)
        throw ValidationError("layer 0: first layer must be Input");
    for (size_t i = 1; i < m.layers.size(); ++i)
        if (m.layers[i].kind == LayerKind::Input)
            fail("layer " + std::to_string(i), "only layer 0 may be Input");
    for (size_t i = 0; i + 1 < m.layers.size(); ++i)
        if (m.layers[i].kind == LayerKind::Output)
            fail("layer " + std::to_string(i), "Output must be the last layer");

    auto shapes = shape_infer(m); // raises on incompatible shapes

    int feedback_links = 0;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& l = m.layers[i];
        std::string ctx = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        if (l.kind == LayerKind::EnhancementUnit) {
            if (l.mask_size != 1 && l.mask_size != 3 && l.mask_size != 5 && l.mask_size != 7)
                fail(ctx, "field \"mask_size\" must be one of 1, 3, 5, 7");
            if (l.feedback_partner) {
                ++feedback_links;
                int p = *l.feedback_partner;
                if (p < 0 || p >= static_cast<int>(m.layers.size()))
                    fail(ctx, "field \"feedback_partner\" index out of range");
                if (p <= static_cast<int>(i))
                    fail(ctx, "field \"feedback_partner\" must name a deeper layer");
                const LayerSpec& partner = m.layers[p];
                if (partner.kind != LayerKind::EnhancementUnit)
                    fail(ctx, "field \"feedback_partner\" must name an EnhancementUnit");
                if (partner.feedback_partner)
                    fail(ctx, "feedback partner may not itself declare a feedback link");
                if (partner.mask_size != l.mask_size)
                    fail(ctx, "feedback link requires the same mask_size at both ends");
                if (shapes[p].h != shapes[i].h || shapes[p].w != shapes[i].w)
                    fail(ctx, "feedback link requires matching spatial dimensions at both ends");
            }
        }
    }
    if (feedback_links > 1)
        throw ValidationError("model: at most one enhancement feedback link is supported");
}

} // namespace fprog
