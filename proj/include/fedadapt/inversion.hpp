#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/model.hpp"
#include "fedadapt/tensor.hpp"

namespace fedadapt {

// Differentiable sparsity surrogate: mean over the channel of sigmoid(-beta*a).
// Approaches the exact zero-count sparsity as beta grows (on ReLU outputs
// whose nonzero entries stay clear of zero).
double soft_sparsity(const Tensor& feature_map_channel, double beta);

// Intermediate properties an attacker may observe.
//  fm   : the full feature map
//  h_sp : per-row soft-sparsity sums across channels (H values)
//  v_sp : per-column soft-sparsity sums across channels (W values)
//  w_sp : whole-map soft-sparsity sum across channels (1 value)
enum class PropertyKind { Fm, HSp, VSp, WSp };

PropertyKind property_kind_from_name(const std::string& name);
std::string property_kind_name(PropertyKind kind);

// Computes the property vector of a captured ReLU output.
std::vector<double> property_values(const Tensor& relu_output, PropertyKind kind, double beta);

struct InversionTarget {
    PropertyKind kind = PropertyKind::Fm;
    int relu_index = 1;
    double beta = 50.0;
    std::vector<double> values;  // captured from the real input
    Tensor reference_input;      // held out; used for scoring only
};

// Captures the target property of `reference` at the given ReLU.
InversionTarget make_inversion_target(const Model& model, const Tensor& reference,
                                      PropertyKind kind, int relu_index, double beta = 50.0);

struct InversionReport {
    Tensor reconstructed;
    std::vector<double> objective_trajectory;
    double mse = 0.0;         // mean squared pixel error vs the reference
    double ssim = 0.0;        // global structural-similarity score
    bool diverged = false;    // objective went non-finite; attack failed
};

// Gradient-descent inversion: starts from seeded uniform noise, minimizes the
// squared error between the candidate's property and the target property,
// clamping to [0,1] after each step and halving the step size every 100
// steps. The objective closes over the target values only; the reference
// input is never read by the optimization.
InversionReport invert(const Model& model, const InversionTarget& target, int steps,
                       double step_size, std::uint64_t seed);

// Scoring helpers (post hoc only).
double mean_squared_error(const Tensor& a, const Tensor& b);
double structural_similarity(const Tensor& a, const Tensor& b);

// Portable grayscale dump of a (1,H,W) or (H,W) tensor in [0,1].
void save_pgm(const Tensor& image, const std::string& path);

std::string inversion_report_to_json(const InversionTarget& target, const InversionReport& report,
                                     int steps, double step_size, std::uint64_t seed);

}  // namespace fedadapt
