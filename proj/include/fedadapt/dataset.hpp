#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/tensor.hpp"

namespace fedadapt {

struct LabeledDataset {
    std::vector<Tensor> inputs;
    std::vector<int> labels;
    int class_count = 0;
    std::string name;

    std::size_t size() const { return inputs.size(); }
};

// Validates the type invariants (shared input shape, labels in range).
void validate_dataset(const LabeledDataset& ds);

struct ClientDataset {
    int client_id = 0;
    LabeledDataset train;
    LabeledDataset test;
    // Ground-truth distribution id (1-based), for evaluation/scoring only.
    // The representation/grouping/adaptation path never reads it.
    int true_distribution_id = 0;
};

struct Federation {
    std::vector<ClientDataset> clients;
    int distribution_type_count = 0;

    const ClientDataset& client_by_id(int client_id) const;
};

// ---- IDX ingestion -------------------------------------------------------

// Reads an IDX image file (magic 0x00000803) and its label file (magic
// 0x00000801). Pixels are scaled to [0,1]; sample shape is (1, rows, cols).
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int class_count = 10);

// Writes the dataset back out in IDX format. Values are stored as bytes, so
// inputs must be byte-quantized (k/255); this is checked.
void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path);

// ---- Simulated federations ------------------------------------------------

// Class-imbalance federation: n_types distribution types, each owning
// classes_per_type classes disjoint from every other type; every client draws
// samples_per_split train + samples_per_split test samples (no replacement)
// from its type's classes. Client ids are 1..n_clients, type ids 1..n_types.
Federation partition_class_imbalance(const LabeledDataset& dataset, int n_clients, int n_types,
                                     int classes_per_type, int samples_per_split,
                                     std::uint64_t seed);

// Background-difference federation: every client sees all classes; each
// domain applies one fixed deterministic input transform (1: identity,
// 2: inverted intensities, 3: additive background grid, 4: 3x3 mean blur).
Federation partition_background_difference(const LabeledDataset& dataset, int n_domains,
                                            int clients_per_domain, double train_fraction,
                                            std::uint64_t seed);

// The fixed per-domain transform (domain is 1-based), exposed for tests.
Tensor apply_domain_transform(const Tensor& input, int domain);

// ---- Synthetic desk-scale dataset ------------------------------------------

struct SyntheticSpec {
    int n_samples = 6000;
    int height = 12;
    int width = 12;
    int class_count = 10;
    float noise_sigma = 0.15f;
    int jitter = 2;
};

// Deterministic 10-class oriented-bar dataset. Class k draws a bar rotated by
// k * (180/class_count) degrees through a jittered centre, plus Gaussian
// pixel noise. Values are byte-quantized so IDX round-trips are exact.
LabeledDataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// Federation manifest (client ids, sample counts, optional ground truth) as a
// JSON string.
std::string federation_manifest_json(const Federation& fed, bool include_ground_truth);

}  // namespace fedadapt
