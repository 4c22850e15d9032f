#include "fedadapt/layers.hpp"

#include "fedadapt/errors.hpp"

namespace fedadapt {

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::GlobalAvgPool: return "global-avg-pool";
        case LayerKind::Flatten: return "flatten";
    }
    throw InternalError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "dense") return LayerKind::Dense;
    if (name == "conv2d") return LayerKind::Conv2d;
    if (name == "relu") return LayerKind::Relu;
    if (name == "maxpool2d") return LayerKind::MaxPool2d;
    if (name == "global-avg-pool") return LayerKind::GlobalAvgPool;
    if (name == "flatten") return LayerKind::Flatten;
    throw FormatError("unknown layer kind: " + name);
}

LayerSpec LayerSpec::dense(int in_features, int out_features) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_features = in_features;
    s.out_features = out_features;
    return s;
}

LayerSpec LayerSpec::conv2d(int in_channels, int out_channels, int kernel, int stride,
                            int padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec LayerSpec::maxpool2d(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool2d;
    s.window = window;
    s.pool_stride = stride;
    return s;
}

LayerSpec LayerSpec::global_avg_pool() {
    LayerSpec s;
    s.kind = LayerKind::GlobalAvgPool;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

std::size_t layer_param_count(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerKind::Dense:
            return static_cast<std::size_t>(spec.in_features) * spec.out_features +
                   static_cast<std::size_t>(spec.out_features);
        case LayerKind::Conv2d:
            return static_cast<std::size_t>(spec.out_channels) * spec.in_channels * spec.kernel *
                       spec.kernel +
                   static_cast<std::size_t>(spec.out_channels);
        default:
            return 0;
    }
}

namespace {

[[noreturn]] void shape_error(const LayerSpec& spec, int layer_index,
                              const std::vector<int>& input_shape, const std::string& detail) {
    throw ConfigError("layer " + std::to_string(layer_index) + " (" +
                      layer_kind_name(spec.kind) + "): input shape " +
                      shape_to_string(input_shape) + " " + detail);
}

}  // namespace

std::vector<int> layer_output_shape(const LayerSpec& spec, const std::vector<int>& in,
                                    int layer_index) {
    switch (spec.kind) {
        case LayerKind::Dense: {
            if (in.size() != 1 || in[0] != spec.in_features) {
                shape_error(spec, layer_index, in,
                            "does not match expected (" + std::to_string(spec.in_features) + ")");
            }
            return {spec.out_features};
        }
        case LayerKind::Conv2d: {
            if (in.size() != 3 || in[0] != spec.in_channels) {
                shape_error(spec, layer_index, in,
                            "does not match expected (" + std::to_string(spec.in_channels) +
                                "xHxW)");
            }
            const int oh = (in[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            const int ow = (in[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            if (oh <= 0 || ow <= 0) {
                shape_error(spec, layer_index, in, "is too small for the kernel");
            }
            return {spec.out_channels, oh, ow};
        }
        case LayerKind::Relu:
            return in;
        case LayerKind::MaxPool2d: {
            if (in.size() != 3) shape_error(spec, layer_index, in, "must be CxHxW");
            const int oh = (in[1] - spec.window) / spec.pool_stride + 1;
            const int ow = (in[2] - spec.window) / spec.pool_stride + 1;
            if (oh <= 0 || ow <= 0) {
                shape_error(spec, layer_index, in, "is too small for the pooling window");
            }
            return {in[0], oh, ow};
        }
        case LayerKind::GlobalAvgPool: {
            if (in.size() != 3) shape_error(spec, layer_index, in, "must be CxHxW");
            return {in[0]};
        }
        case LayerKind::Flatten: {
            int n = 1;
            for (int d : in) n *= d;
            return {n};
        }
    }
    throw InternalError("unknown layer kind");
}

std::string layer_to_string(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerKind::Dense:
            return "dense(" + std::to_string(spec.in_features) + "->" +
                   std::to_string(spec.out_features) + ")";
        case LayerKind::Conv2d:
            return "conv2d(" + std::to_string(spec.in_channels) + "->" +
                   std::to_string(spec.out_channels) + ", k" + std::to_string(spec.kernel) +
                   " s" + std::to_string(spec.stride) + " p" + std::to_string(spec.padding) + ")";
        case LayerKind::MaxPool2d:
            return "maxpool2d(w" + std::to_string(spec.window) + " s" +
                   std::to_string(spec.pool_stride) + ")";
        default:
            return layer_kind_name(spec.kind);
    }
}

}  // namespace fedadapt
