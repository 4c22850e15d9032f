#pragma once

#include <string>
#include <vector>

#include "fedadapt/tensor.hpp"

namespace fedadapt {

enum class LayerKind { Dense, Conv2d, Relu, MaxPool2d, GlobalAvgPool, Flatten };

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

// Declarative description of one layer. Only the fields relevant to `kind`
// are meaningful; the rest stay zero.
struct LayerSpec {
    LayerKind kind = LayerKind::Relu;

    // dense
    int in_features = 0;
    int out_features = 0;

    // conv2d
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;

    // maxpool2d
    int window = 0;
    int pool_stride = 0;

    static LayerSpec dense(int in_features, int out_features);
    static LayerSpec conv2d(int in_channels, int out_channels, int kernel,
                            int stride = 1, int padding = 0);
    static LayerSpec relu();
    static LayerSpec maxpool2d(int window, int stride);
    static LayerSpec global_avg_pool();
    static LayerSpec flatten();

    bool operator==(const LayerSpec&) const = default;
};

// Number of trainable parameters the layer contributes (weights then bias in
// the flat layout).
std::size_t layer_param_count(const LayerSpec& spec);

// Output shape for the given input shape. Throws ConfigError naming the
// layer when shapes do not compose.
std::vector<int> layer_output_shape(const LayerSpec& spec, const std::vector<int>& input_shape,
                                    int layer_index);

std::string layer_to_string(const LayerSpec& spec);

}  // namespace fedadapt
