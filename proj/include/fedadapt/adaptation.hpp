#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/fl.hpp"
#include "fedadapt/grouping.hpp"
#include "fedadapt/model.hpp"

namespace fedadapt {

struct AdaptationConfig {
    int adaptation_rounds = 30;
    int local_epochs = 1;
    float lr = 0.01f;
    float momentum = 0.5f;
    int batch_size = 10;
    std::uint64_t seed = 1;

    void validate() const;
};

struct GroupRoundMetrics {
    int group_id = 0;
    int round = 0;
    double mean_member_train_loss = 0.0;
    double mean_member_test_accuracy = 0.0;
};

struct PersonalizationResult {
    GroupAssignment assignment;
    std::vector<Model> group_models;          // indexed by group id
    std::map<int, double> client_accuracy;    // on the client's own test split
    std::vector<GroupRoundMetrics> history;
};

// Three-step group-wise adaptation: every group starts from the same
// federated model snapshot and runs adaptation_rounds of (per-member local
// training, FedAvg over the group). Groups are fully independent.
PersonalizationResult group_wise_adaptation(const Model& federated_model,
                                            const Federation& federation,
                                            const GroupAssignment& assignment,
                                            const AdaptationConfig& config, int threads = 1);

// Configuration for the representation-extraction stage.
struct PfeConfig {
    int relu_index = 1;
    int q = 30;
    std::uint64_t seed = 1;
};

// Configuration for the similarity/grouping stage.
struct FscConfig {
    bool use_anchor = false;
    std::optional<int> expected_groups;
    std::optional<double> epsilon;
    std::uint64_t anchor_seed = 1;
};

struct PipelineResult {
    Model federated_model;
    std::vector<RoundMetrics> fl_history;
    std::vector<SparsityRepresentation> representations;
    SimilarityMatrix matrix;              // populated on the matrix path
    AnchorSimilarityVector anchor;        // populated on the anchor path
    GroupAssignment assignment;
    PersonalizationResult personalization;
};

// Full pipeline: federated learning, representation extraction for every
// client, similarity grouping, group-wise adaptation. Stage failures are
// rethrown as StageError tagged with the stage name.
PipelineResult run_pipeline(const Federation& federation, const std::string& arch,
                            const FLConfig& fl_config, const PfeConfig& pfe_config,
                            const FscConfig& fsc_config, const AdaptationConfig& adapt_config,
                            int threads = 1, const RoundHook& fl_hook = nullptr);

// The stages after FL, reusable when a federated model already exists.
PipelineResult run_pipeline_from(const Model& federated_model, const Federation& federation,
                                 const PfeConfig& pfe_config, const FscConfig& fsc_config,
                                 const AdaptationConfig& adapt_config, int threads = 1);

}  // namespace fedadapt
