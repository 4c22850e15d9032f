#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedadapt/layers.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

// One flat float32 vector holding every trainable parameter, plus per-layer
// (start, length) offsets. The flat vector is the unit federated averaging
// operates on.
struct ModelParams {
    std::vector<float> flat;
    std::vector<std::pair<std::size_t, std::size_t>> offsets;  // per layer

    std::span<float> layer_span(std::size_t layer) {
        const auto& [start, len] = offsets.at(layer);
        return std::span<float>(flat.data() + start, len);
    }
    std::span<const float> layer_span(std::size_t layer) const {
        const auto& [start, len] = offsets.at(layer);
        return std::span<const float>(flat.data() + start, len);
    }
};

// Offsets covering `layers` contiguously; validates the invariant that the
// offsets cover the flat vector exactly.
ModelParams make_params(const std::vector<LayerSpec>& layers);

struct Model {
    std::vector<LayerSpec> layers;
    ModelParams params;
    std::vector<int> input_shape;  // expected shape of layer 0's input

    std::size_t param_count() const { return params.flat.size(); }
    int relu_count() const;
    // Layer position (0-based) of the k-th ReLU, k being 1-based.
    int relu_layer_position(int relu_index) const;
    // Channel count of the feature map produced at the k-th ReLU.
    int relu_channel_count(int relu_index) const;
    // Number of classes = trailing dense layer's output width.
    int num_classes() const;
};

// Builds one of the two built-in architectures ("small-cnn", "mlp") for the
// given input shape and class count, with zeroed parameters.
Model make_architecture(const std::string& name, const std::vector<int>& input_shape,
                        int num_classes);

// Kaiming-uniform initialization of all weights (biases zero), seeded.
void init_params(Model& model, std::uint64_t seed);

// Checkpoint container: self-describing header (layer list, input shape) plus
// the raw float32 parameter block. save -> load -> save is byte-identical.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace fedadapt
