#include "fedadapt/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fedadapt/errors.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

using nlohmann::json;

ModelParams make_params(const std::vector<LayerSpec>& layers) {
    ModelParams p;
    std::size_t start = 0;
    for (const auto& spec : layers) {
        const std::size_t len = layer_param_count(spec);
        p.offsets.emplace_back(start, len);
        start += len;
    }
    p.flat.assign(start, 0.0f);
    return p;
}

int Model::relu_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::Relu ? 1 : 0;
    return n;
}

int Model::relu_layer_position(int relu_index) const {
    if (relu_index < 1) throw ConfigError("ReLU index must be >= 1");
    int seen = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::Relu && ++seen == relu_index) {
            return static_cast<int>(i);
        }
    }
    throw ConfigError("ReLU index " + std::to_string(relu_index) + " out of range; model has " +
                      std::to_string(relu_count()) + " ReLU layers");
}

int Model::relu_channel_count(int relu_index) const {
    const int pos = relu_layer_position(relu_index);
    std::vector<int> shape = input_shape;
    for (int i = 0; i <= pos; ++i) {
        shape = layer_output_shape(layers[static_cast<std::size_t>(i)], shape, i);
    }
    // CxHxW feature maps report C; a 1-D vector of hidden units is treated as
    // that many 1x1 channels.
    return shape[0];
}

int Model::num_classes() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        if (it->kind == LayerKind::Dense) return it->out_features;
    }
    throw ConfigError("model has no dense output layer");
}

Model make_architecture(const std::string& name, const std::vector<int>& input_shape,
                        int num_classes) {
    Model m;
    m.input_shape = input_shape;
    if (name == "small-cnn") {
        if (input_shape.size() != 3) {
            throw ConfigError("small-cnn expects a CxHxW input, got " +
                              shape_to_string(input_shape));
        }
        const int in_c = input_shape[0];
        m.layers = {
            LayerSpec::conv2d(in_c, 32, 3, 1, 1), LayerSpec::relu(),
            LayerSpec::maxpool2d(2, 2),
            LayerSpec::conv2d(32, 32, 3, 1, 1),   LayerSpec::relu(),
            LayerSpec::maxpool2d(2, 2),
            LayerSpec::conv2d(32, 32, 3, 1, 1),   LayerSpec::relu(),
            LayerSpec::conv2d(32, 64, 3, 1, 1),   LayerSpec::relu(),
            LayerSpec::global_avg_pool(),
            LayerSpec::dense(64, num_classes),
        };
    } else if (name == "mlp") {
        int in_features = 1;
        for (int d : input_shape) in_features *= d;
        m.layers = {
            LayerSpec::flatten(),
            LayerSpec::dense(in_features, 64), LayerSpec::relu(),
            LayerSpec::dense(64, 64),          LayerSpec::relu(),
            LayerSpec::dense(64, num_classes),
        };
    } else {
        throw ConfigError("unknown architecture: " + name);
    }
    // Validate shape composition once at construction.
    std::vector<int> shape = input_shape;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        shape = layer_output_shape(m.layers[i], shape, static_cast<int>(i));
    }
    m.params = make_params(m.layers);
    return m;
}

void init_params(Model& model, std::uint64_t seed) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& spec = model.layers[i];
        auto span = model.params.layer_span(i);
        if (span.empty()) continue;
        Rng rng(derive_seed(seed, kTagInit, i));
        int fan_in = 0;
        std::size_t weight_count = 0;
        if (spec.kind == LayerKind::Dense) {
            fan_in = spec.in_features;
            weight_count = static_cast<std::size_t>(spec.in_features) * spec.out_features;
        } else if (spec.kind == LayerKind::Conv2d) {
            fan_in = spec.in_channels * spec.kernel * spec.kernel;
            weight_count = static_cast<std::size_t>(spec.out_channels) * spec.in_channels *
                           spec.kernel * spec.kernel;
        }
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
        for (std::size_t j = 0; j < weight_count; ++j) span[j] = rng.uniform(-bound, bound);
        for (std::size_t j = weight_count; j < span.size(); ++j) span[j] = 0.0f;  // biases
    }
}

namespace {

json layer_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = layer_kind_name(s.kind);
    switch (s.kind) {
        case LayerKind::Dense:
            j["in_features"] = s.in_features;
            j["out_features"] = s.out_features;
            break;
        case LayerKind::Conv2d:
            j["in_channels"] = s.in_channels;
            j["out_channels"] = s.out_channels;
            j["kernel"] = s.kernel;
            j["stride"] = s.stride;
            j["padding"] = s.padding;
            break;
        case LayerKind::MaxPool2d:
            j["window"] = s.window;
            j["stride"] = s.pool_stride;
            break;
        default:
            break;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    const LayerKind kind = layer_kind_from_name(j.at("kind").get<std::string>());
    switch (kind) {
        case LayerKind::Dense:
            return LayerSpec::dense(j.at("in_features").get<int>(),
                                    j.at("out_features").get<int>());
        case LayerKind::Conv2d:
            return LayerSpec::conv2d(j.at("in_channels").get<int>(),
                                     j.at("out_channels").get<int>(), j.at("kernel").get<int>(),
                                     j.at("stride").get<int>(), j.at("padding").get<int>());
        case LayerKind::MaxPool2d:
            return LayerSpec::maxpool2d(j.at("window").get<int>(), j.at("stride").get<int>());
        case LayerKind::Relu:
            return LayerSpec::relu();
        case LayerKind::GlobalAvgPool:
            return LayerSpec::global_avg_pool();
        case LayerKind::Flatten:
            return LayerSpec::flatten();
    }
    throw FormatError("unknown layer kind in checkpoint");
}

constexpr char kCheckpointMagic[8] = {'F', 'A', 'M', 'O', 'D', 'E', 'L', '1'};

}  // namespace

void save_model(const Model& model, const std::string& path) {
    json header;
    header["input_shape"] = model.input_shape;
    json layers = json::array();
    for (const auto& l : model.layers) layers.push_back(layer_to_json(l));
    header["layers"] = layers;
    header["param_count"] = model.params.flat.size();
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(reinterpret_cast<const char*>(model.params.flat.data()),
              static_cast<std::streamsize>(model.params.flat.size() * sizeof(float)));
    if (!out) throw FormatError("failed writing checkpoint: " + path);
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw FormatError("bad checkpoint magic in " + path);
    }
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw FormatError("truncated checkpoint header in " + path);

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw FormatError("unparseable checkpoint header in " + path + ": " + e.what());
    }

    Model m;
    m.input_shape = header.at("input_shape").get<std::vector<int>>();
    for (const auto& lj : header.at("layers")) m.layers.push_back(layer_from_json(lj));
    m.params = make_params(m.layers);
    const auto expected = header.at("param_count").get<std::size_t>();
    if (expected != m.params.flat.size()) {
        throw FormatError("checkpoint parameter count mismatch in " + path);
    }
    in.read(reinterpret_cast<char*>(m.params.flat.data()),
            static_cast<std::streamsize>(m.params.flat.size() * sizeof(float)));
    if (!in) throw FormatError("truncated parameter block in " + path);
    return m;
}

}  // namespace fedadapt
