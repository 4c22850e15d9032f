#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "fedadapt/model.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

// Per-layer outputs of one forward pass. relu_positions[k-1] is the layer
// position of the k-th ReLU (1-based "ReLU index").
struct ForwardTrace {
    std::vector<Tensor> layer_outputs;
    std::vector<int> relu_positions;

    bool empty() const { return layer_outputs.empty(); }
    const Tensor& output_at(int layer) const { return layer_outputs.at(static_cast<std::size_t>(layer)); }
    const Tensor& relu_output(int relu_index) const;
};

enum class Capture { None, All, SingleLayer };

// Forward pass. With Capture::All the trace holds every layer output; with
// Capture::SingleLayer only `capture_layer` is retained (the rest stay empty,
// which keeps PFE's memory footprint at one feature map per sample).
std::pair<Tensor, ForwardTrace> forward(const Model& model, const Tensor& input,
                                        Capture capture = Capture::None,
                                        int capture_layer = -1);

// Convenience wrapper matching the boolean capture contract.
inline std::pair<Tensor, ForwardTrace> forward(const Model& model, const Tensor& input,
                                               bool capture) {
    return forward(model, input, capture ? Capture::All : Capture::None);
}

// Mean cross-entropy over the batch plus parameter gradients aligned with the
// model's offsets. Loss is accumulated in double; gradients are float32.
// When correct_count is given it receives the number of argmax-correct
// predictions in the batch (before the caller applies any update).
double loss_and_grad(const Model& model, const std::vector<std::pair<Tensor, int>>& batch,
                     std::vector<float>& grads_out, int* correct_count = nullptr);

// Forward-only mean cross-entropy (used for evaluation curves).
double batch_loss(const Model& model, const std::vector<std::pair<Tensor, int>>& batch);

// Cross-entropy of one logits vector against a label.
double xent_loss(const Tensor& logits, int label);

// v <- momentum * v + g; p <- p - lr * v. All three arrays must have equal
// length. float32 arithmetic, fully deterministic.
void sgd_step(std::vector<float>& params, const std::vector<float>& grads,
              std::vector<float>& velocity, float lr, float momentum);

// A differentiable scalar objective attached to one layer's output: given
// that output it returns the objective value and d(objective)/d(output).
struct LayerObjective {
    int layer_index = -1;
    std::function<std::pair<double, Tensor>(const Tensor&)> fn;
};

// d(objective)/d(input), same shape as the input. Used by the inversion
// attack; parameter gradients are not accumulated.
Tensor input_gradient(const Model& model, const Tensor& input, const LayerObjective& objective,
                      double* objective_value = nullptr);

// Argmax with ties broken toward the lowest class index.
int argmax_class(const Tensor& logits);

}  // namespace fedadapt
