#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/adaptation.hpp"
#include "fedadapt/inversion.hpp"

namespace fedadapt {

// Declarative experiment description, parsed from a JSON config file. Every
// seed must be explicit; nothing falls back to entropy.
struct ExperimentConfig {
    struct DatasetSpec {
        std::string images;
        std::string labels;
        int classes = 10;
    };
    struct FederationSpec {
        std::string kind;  // "class-imbalance" | "background-difference"
        int n_clients = 25;
        int n_types = 5;
        int classes_per_type = 2;
        int samples_per_split = 100;
        int n_domains = 4;
        int clients_per_domain = 5;
        double train_fraction = 0.8;
        std::uint64_t seed = 0;
    };
    struct BaselineSpec {
        bool fine_tune = true;
        bool random_selection = true;
        int random_group_count = 5;
        std::uint64_t random_seed = 0;
        int finetune_epochs = 0;  // 0 = matched budget (rounds * local epochs)
    };
    struct InversionSpec {
        bool enabled = false;
        std::vector<std::string> properties = {"fm", "w_sp"};
        std::vector<int> relu_indices = {1};
        int steps = 500;
        double step_size = 1.0;
        double beta = 50.0;
        std::uint64_t seed = 0;
        int client_id = 1;
        int sample_index = 0;
    };

    DatasetSpec dataset;
    FederationSpec federation;
    std::string arch = "small-cnn";
    FLConfig fl;
    PfeConfig pfe;
    FscConfig fsc;
    AdaptationConfig adaptation;
    BaselineSpec baselines;
    InversionSpec inversion;
    std::string output;
    int threads = 1;
};

// Parse + validate. Throws ConfigError (bad values, missing seeds, unknown
// keys) or FormatError (unreadable file / bad JSON).
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin);

// Stable FNV-1a hash of the canonical config (output/threads excluded), hex.
std::string config_hash(const ExperimentConfig& config);

// Builds the federation named by the config (loads the dataset file).
Federation build_federation(const ExperimentConfig& config);

// Runs the full experiment and persists every artifact under config.output.
// Returns the artifact directory. Stage failures surface as StageError with
// partial artifacts left in place.
std::string run_experiment(const ExperimentConfig& config);

// One row of the extraction-strategy sweep.
struct SweepRow {
    int relu_index = 0;
    int q = 0;
    int client_id = 0;
    double distance = 0.0;
    std::string status;  // "ok" or "skipped: <reason>"
};

// Extraction-strategy sweep: for each (relu_index, q), extract
// representations and record every client's distance to client 1. Duplicate
// indices are deduplicated; invalid combinations produce a warning row.
// Reuses <output>/federated_model.ckpt when present, else trains and saves it.
std::vector<SweepRow> sweep_extraction(const ExperimentConfig& config,
                                       std::vector<int> relu_indices, std::vector<int> q_values);

// Method-comparison table assembled from a finished artifact directory.
struct ComparisonTable {
    std::vector<std::string> methods;          // present methods, fixed order
    std::vector<std::string> absent_methods;
    std::vector<int> client_ids;
    std::map<int, int> client_type;            // ground truth when available
    std::map<std::string, std::map<int, double>> accuracy;  // method -> client -> acc
    std::map<std::string, double> mean_accuracy;
    std::map<int, std::string> winner;         // client -> method (strict max only)
};

ComparisonTable compare_methods(const std::string& artifact_dir);

// Runs the configured inversion attacks against the federated model; writes
// one JSON + PGM pair per (property, relu_index). Reuses the checkpoint like
// sweep_extraction. Returns the written report paths.
std::vector<std::string> run_inversion_analysis(const ExperimentConfig& config);

}  // namespace fedadapt
