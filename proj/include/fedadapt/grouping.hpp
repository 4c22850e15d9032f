#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/sparsity.hpp"

namespace fedadapt {

// Pairwise Euclidean distances between client representations. Row/column i
// corresponds to client_ids[i]. distance_evals counts the number of
// distance computations performed to build the structure (the efficiency
// contract: n(n-1)/2 for the full matrix, n-1 for the anchor vector).
struct SimilarityMatrix {
    int n = 0;
    std::vector<int> client_ids;
    std::vector<double> entries;  // n*n, symmetric, zero diagonal
    std::size_t distance_evals = 0;

    double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
};

struct AnchorSimilarityVector {
    int anchor_client_id = 0;
    std::vector<int> client_ids;
    std::vector<double> distances;  // distance to the anchor, self = 0
    std::size_t distance_evals = 0;
};

// client_id -> group_id. Group ids are contiguous from 0, assigned by
// ascending minimum client id; no group is empty.
struct GroupAssignment {
    std::map<int, int> groups;
    int group_count = 0;

    int group_of(int client_id) const;
    std::vector<std::vector<int>> members() const;  // per group, ascending ids
};

// Euclidean distance between two representations. Throws ComparisonError if
// the selectors differ (the vectors are not comparable).
double similarity(const SparsityRepresentation& a, const SparsityRepresentation& b);

// All pairwise distances; exactly n(n-1)/2 similarity evaluations.
SimilarityMatrix full_matrix(const std::vector<SparsityRepresentation>& reps);

// Distances to one anchor client drawn by seeded pick; exactly n-1
// similarity evaluations.
AnchorSimilarityVector anchor_vector(const std::vector<SparsityRepresentation>& reps,
                                     std::uint64_t anchor_seed);

// Partition clients by distance structure.
//  - Matrix path: single-linkage agglomerative clustering, cut at
//    expected_groups clusters, or at the largest merge-distance gap when
//    expected_groups is absent. The automatic cut must be significant (the
//    merge distance at least doubles across the gap); a smoothly growing
//    merge sequence means one distribution and collapses to a single group.
//  - Anchor path: sort anchor distances and split at gaps, either the
//    expected_groups-1 largest ones or every gap > epsilon (default epsilon:
//    half the largest gap). Equal distances always share a group.
// When every distance is within 1e-9 the result is a single group.
GroupAssignment group_clients(const SimilarityMatrix& matrix,
                              std::optional<int> expected_groups = std::nullopt,
                              std::optional<double> epsilon = std::nullopt);
GroupAssignment group_clients(const AnchorSimilarityVector& anchor,
                              std::optional<int> expected_groups = std::nullopt,
                              std::optional<double> epsilon = std::nullopt);

// Fraction of clients whose group's majority ground-truth distribution
// matches their own (majority vote per group; used for evaluation only).
double cluster_purity(const GroupAssignment& assignment,
                      const std::map<int, int>& true_distribution_ids);

std::string similarity_matrix_to_json(const SimilarityMatrix& m);
std::string anchor_vector_to_json(const AnchorSimilarityVector& v);
std::string assignment_to_json(const GroupAssignment& a);

}  // namespace fedadapt
