#pragma once

#include <cstdint>
#include <map>

#include "fedadapt/adaptation.hpp"
#include "fedadapt/dataset.hpp"
#include "fedadapt/model.hpp"

namespace fedadapt {

// Global-model baseline: the federated model evaluated on every client's own
// test split.
std::map<int, double> baseline_accuracy(const Model& federated_model,
                                        const Federation& federation, int threads = 1);

// Local fine-tuning baseline: retrains all parameters on one client's train
// split. Implemented as singleton-group adaptation with adaptation_rounds =
// epochs and one local epoch per round, so it is bitwise-identical to a
// singleton group in group_wise_adaptation under matched hyperparameters.
Model local_finetune(const Model& federated_model, const ClientDataset& client, int epochs,
                     float lr, float momentum, int batch_size, std::uint64_t seed);

// Fine-tunes every client and reports per-client accuracies.
std::map<int, double> finetune_all(const Model& federated_model, const Federation& federation,
                                   int epochs, float lr, float momentum, int batch_size,
                                   std::uint64_t seed, int threads = 1);

// Random selection policy: clients are shuffled into group_count groups of
// near-equal size, then adapted group-wise exactly like the sparsity-based
// policy.
PersonalizationResult random_group_adaptation(const Model& federated_model,
                                              const Federation& federation, int group_count,
                                              std::uint64_t seed, const AdaptationConfig& config,
                                              int threads = 1);

// The seeded random partition used by random_group_adaptation.
GroupAssignment random_assignment(const Federation& federation, int group_count,
                                  std::uint64_t seed);

}  // namespace fedadapt
