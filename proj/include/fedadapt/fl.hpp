#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedadapt/dataset.hpp"
#include "fedadapt/model.hpp"

namespace fedadapt {

struct FLConfig {
    int rounds = 50;
    int local_epochs = 1;
    float lr = 0.01f;
    float momentum = 0.5f;
    int batch_size = 10;
    std::uint64_t seed = 1;
    double client_fraction = 1.0;
    int checkpoint_every = 0;  // 0 = off; handled by the caller's round hook

    void validate() const;
};

struct RoundMetrics {
    int round = 0;
    std::vector<int> client_ids;        // participants, ascending
    std::vector<double> train_loss;     // running mean over the final local epoch
    std::vector<double> train_accuracy; // running mean over the final local epoch
    std::vector<int> eval_client_ids;   // every client, ascending
    std::vector<double> test_loss;
    std::vector<double> test_accuracy;
    double mean_train_loss = 0.0;
    double mean_train_accuracy = 0.0;
    double mean_test_accuracy = 0.0;
    double wall_clock_seconds = 0.0;
};

// Local SGD on the client's train split. Returns the trained parameters; the
// input model is left untouched. Velocity starts at zero; batch order is
// reshuffled per epoch from `seed`. Optionally reports the running train
// loss/accuracy over the last epoch.
ModelParams local_train(const Model& model, const ClientDataset& client, int epochs, float lr,
                        float momentum, int batch_size, std::uint64_t seed,
                        double* last_epoch_loss = nullptr, double* last_epoch_accuracy = nullptr);

// Weighted elementwise mean of parameter vectors. Weights are normalized to
// sum 1; the result is clamped into the coordinate-wise [min, max] envelope,
// and consensus inputs are returned bitwise unchanged.
ModelParams fedavg(const std::vector<ModelParams>& params_list,
                   const std::vector<double>& weights);

// Fraction of argmax-correct predictions, ties broken toward the lowest
// class index. Also exposes the mean loss when requested.
double evaluate(const Model& model, const LabeledDataset& dataset, double* mean_loss = nullptr);

using RoundHook = std::function<void(const RoundMetrics&, const Model&)>;

// Multi-round FedAvg from freshly initialized parameters.
std::pair<Model, std::vector<RoundMetrics>> run_federated_learning(
    const Federation& federation, const std::string& arch, const FLConfig& config,
    int threads = 1, const RoundHook& hook = nullptr);

// Same loop, but starting from an existing model (used by group-wise
// adaptation and by the FL phase after the initial round-0 model is built).
std::pair<Model, std::vector<RoundMetrics>> continue_federated_learning(
    const Model& start, const Federation& federation, const FLConfig& config, int threads = 1,
    const RoundHook& hook = nullptr);

}  // namespace fedadapt
