#include "fedadapt/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "fedadapt/errors.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

using nlohmann::json;

namespace {
constexpr double kZeroGap = 1e-9;  // distances closer than this are "equal"
}

int GroupAssignment::group_of(int client_id) const {
    const auto it = groups.find(client_id);
    if (it == groups.end()) {
        throw InternalError("no group for client " + std::to_string(client_id));
    }
    return it->second;
}

std::vector<std::vector<int>> GroupAssignment::members() const {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(group_count));
    for (const auto& [client, group] : groups) {
        out.at(static_cast<std::size_t>(group)).push_back(client);
    }
    return out;  // std::map iteration keeps ids ascending
}

double similarity(const SparsityRepresentation& a, const SparsityRepresentation& b) {
    if (!(a.selector == b.selector)) {
        throw ComparisonError("representations of clients " + std::to_string(a.client_id) +
                              " and " + std::to_string(b.client_id) +
                              " use different channel selectors");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        const double d = static_cast<double>(a.values[k]) - static_cast<double>(b.values[k]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

namespace {

// Representations sorted by client id so results never depend on caller order.
std::vector<const SparsityRepresentation*> sorted_reps(
    const std::vector<SparsityRepresentation>& reps) {
    std::vector<const SparsityRepresentation*> ptrs;
    ptrs.reserve(reps.size());
    for (const auto& r : reps) ptrs.push_back(&r);
    std::sort(ptrs.begin(), ptrs.end(),
              [](const SparsityRepresentation* a, const SparsityRepresentation* b) {
                  return a->client_id < b->client_id;
              });
    return ptrs;
}

}  // namespace

SimilarityMatrix full_matrix(const std::vector<SparsityRepresentation>& reps) {
    if (reps.size() < 2) throw ConfigError("full_matrix needs at least 2 representations");
    const auto ptrs = sorted_reps(reps);
    SimilarityMatrix m;
    m.n = static_cast<int>(ptrs.size());
    m.entries.assign(static_cast<std::size_t>(m.n) * m.n, 0.0);
    for (const auto* r : ptrs) m.client_ids.push_back(r->client_id);
    for (int i = 0; i < m.n; ++i) {
        for (int j = i + 1; j < m.n; ++j) {
            const double d = similarity(*ptrs[static_cast<std::size_t>(i)],
                                        *ptrs[static_cast<std::size_t>(j)]);
            ++m.distance_evals;
            m.entries[static_cast<std::size_t>(i) * m.n + j] = d;
            m.entries[static_cast<std::size_t>(j) * m.n + i] = d;
        }
    }
    return m;
}

AnchorSimilarityVector anchor_vector(const std::vector<SparsityRepresentation>& reps,
                                     std::uint64_t anchor_seed) {
    if (reps.size() < 2) throw ConfigError("anchor_vector needs at least 2 representations");
    const auto ptrs = sorted_reps(reps);
    Rng rng(derive_seed(anchor_seed, kTagAnchor));
    const auto z = static_cast<std::size_t>(rng.next_below(ptrs.size()));

    AnchorSimilarityVector v;
    v.anchor_client_id = ptrs[z]->client_id;
    v.distances.resize(ptrs.size(), 0.0);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        v.client_ids.push_back(ptrs[i]->client_id);
        if (i == z) continue;
        v.distances[i] = similarity(*ptrs[z], *ptrs[i]);
        ++v.distance_evals;
    }
    return v;
}

namespace {

// Relabel group ids so they are contiguous from 0 in order of each group's
// minimum client id.
GroupAssignment canonical_assignment(const std::vector<int>& client_ids,
                                     const std::vector<int>& raw_group_of) {
    const int n = static_cast<int>(client_ids.size());
    std::map<int, int> min_client;  // raw group -> min client id
    for (int i = 0; i < n; ++i) {
        const int g = raw_group_of[static_cast<std::size_t>(i)];
        const int c = client_ids[static_cast<std::size_t>(i)];
        auto it = min_client.find(g);
        if (it == min_client.end() || c < it->second) min_client[g] = c;
    }
    std::vector<std::pair<int, int>> order;  // (min client id, raw group)
    for (const auto& [g, c] : min_client) order.emplace_back(c, g);
    std::sort(order.begin(), order.end());
    std::map<int, int> relabel;
    for (std::size_t k = 0; k < order.size(); ++k) relabel[order[k].second] = static_cast<int>(k);

    GroupAssignment a;
    a.group_count = static_cast<int>(order.size());
    for (int i = 0; i < n; ++i) {
        a.groups[client_ids[static_cast<std::size_t>(i)]] =
            relabel[raw_group_of[static_cast<std::size_t>(i)]];
    }
    return a;
}

}  // namespace

GroupAssignment group_clients(const SimilarityMatrix& matrix, std::optional<int> expected_groups,
                              std::optional<double> epsilon) {
    const int n = matrix.n;
    if (n < 1) throw ConfigError("group_clients: empty matrix");
    if (expected_groups && (*expected_groups < 1 || *expected_groups > n)) {
        throw ConfigError("expected_groups must be in [1, n]");
    }

    // Naive single-linkage agglomeration, recording the full merge sequence.
    // dist[a][b] is the current cluster-to-cluster single-link distance; a
    // merge keeps the lower cluster index alive. Ties merge the pair with the
    // smallest minimum client ids, so the dendrogram is deterministic.
    std::vector<std::vector<double>> dist(static_cast<std::size_t>(n),
                                          std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = matrix.at(i, j);
        }
    }
    std::vector<bool> alive(static_cast<std::size_t>(n), true);
    std::vector<int> min_client(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        min_client[static_cast<std::size_t>(i)] = matrix.client_ids[static_cast<std::size_t>(i)];
    }

    std::vector<double> merge_distances;
    std::vector<std::pair<int, int>> merge_pairs;
    for (int step = 0; step + 1 < n; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<int, int> arg{-1, -1};
        int best_lo = 0, best_hi = 0;
        for (int a = 0; a < n; ++a) {
            if (!alive[static_cast<std::size_t>(a)]) continue;
            for (int b = a + 1; b < n; ++b) {
                if (!alive[static_cast<std::size_t>(b)]) continue;
                const double d = dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                const int lo = std::min(min_client[static_cast<std::size_t>(a)],
                                        min_client[static_cast<std::size_t>(b)]);
                const int hi = std::max(min_client[static_cast<std::size_t>(a)],
                                        min_client[static_cast<std::size_t>(b)]);
                const bool better =
                    d < best || (d == best && (lo < best_lo || (lo == best_lo && hi < best_hi)));
                if (arg.first < 0 || better) {
                    best = d;
                    arg = {a, b};
                    best_lo = lo;
                    best_hi = hi;
                }
            }
        }
        merge_distances.push_back(best);
        merge_pairs.push_back(arg);
        const auto [a, b] = arg;
        for (int c = 0; c < n; ++c) {
            if (!alive[static_cast<std::size_t>(c)] || c == a || c == b) continue;
            const double nd =
                std::min(dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)],
                         dist[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)]);
            dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)] = nd;
            dist[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)] = nd;
        }
        alive[static_cast<std::size_t>(b)] = false;
        min_client[static_cast<std::size_t>(a)] = best_lo;
    }

    // Decide how many merges to keep.
    std::size_t cut_after;
    if (expected_groups) {
        cut_after = static_cast<std::size_t>(n - *expected_groups);
        // Equal distances stay together: extend the cut while the next merge
        // sits at exactly the same distance as the last one performed.
        while (cut_after > 0 && cut_after < merge_distances.size() &&
               merge_distances[cut_after] == merge_distances[cut_after - 1]) {
            ++cut_after;
        }
    } else if (epsilon) {
        cut_after = 0;
        while (cut_after < merge_distances.size() && merge_distances[cut_after] <= *epsilon) {
            ++cut_after;
        }
    } else {
        // Cut at the largest gap between consecutive merge distances. The cut
        // must be significant: the merge after the gap has to at least double
        // the merge scale before it, otherwise the sequence is just a smoothly
        // growing blob (one distribution) and everyone shares one group.
        double max_gap = 0.0;
        std::size_t best_t = 0;
        for (std::size_t t = 0; t + 1 < merge_distances.size(); ++t) {
            const double gap = merge_distances[t + 1] - merge_distances[t];
            if (gap > max_gap) {
                max_gap = gap;
                best_t = t;
            }
        }
        cut_after = merge_distances.size();
        if (max_gap > kZeroGap &&
            merge_distances[best_t + 1] > 2.0 * merge_distances[best_t]) {
            cut_after = best_t + 1;
        }
    }

    // Union the kept merges to resolve final membership.
    std::vector<int> parent(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
    auto find = [&](int x) {
        while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
        return x;
    };
    for (std::size_t t = 0; t < cut_after; ++t) {
        parent[static_cast<std::size_t>(find(merge_pairs[t].second))] = find(merge_pairs[t].first);
    }
    std::vector<int> raw(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) raw[static_cast<std::size_t>(i)] = find(i);
    return canonical_assignment(matrix.client_ids, raw);
}

GroupAssignment group_clients(const AnchorSimilarityVector& anchor,
                              std::optional<int> expected_groups, std::optional<double> epsilon) {
    const int n = static_cast<int>(anchor.client_ids.size());
    if (n < 1) throw ConfigError("group_clients: empty anchor vector");
    if (expected_groups && (*expected_groups < 1 || *expected_groups > n)) {
        throw ConfigError("expected_groups must be in [1, n]");
    }

    std::vector<std::pair<double, int>> sorted;  // (distance, client id)
    for (int i = 0; i < n; ++i) {
        sorted.emplace_back(anchor.distances[static_cast<std::size_t>(i)],
                            anchor.client_ids[static_cast<std::size_t>(i)]);
    }
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> gaps(sorted.size() > 0 ? sorted.size() - 1 : 0, 0.0);
    double max_gap = 0.0;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        gaps[i] = sorted[i + 1].first - sorted[i].first;
        max_gap = std::max(max_gap, gaps[i]);
    }

    std::vector<bool> split_after(gaps.size(), false);
    if (expected_groups) {
        // Take the expected_groups-1 largest strictly positive gaps; on ties
        // prefer the gap closer to the anchor. Fewer positive gaps than
        // requested yields fewer groups (equal distances stay together).
        std::vector<std::size_t> order(gaps.size());
        for (std::size_t i = 0; i < gaps.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (gaps[a] != gaps[b]) return gaps[a] > gaps[b];
            return a < b;
        });
        int wanted = *expected_groups - 1;
        for (std::size_t k = 0; k < order.size() && wanted > 0; ++k) {
            if (gaps[order[k]] <= kZeroGap) break;
            split_after[order[k]] = true;
            --wanted;
        }
    } else {
        if (max_gap > kZeroGap) {
            const double eps = epsilon ? *epsilon : max_gap / 2.0;
            for (std::size_t i = 0; i < gaps.size(); ++i) split_after[i] = gaps[i] > eps;
        }
        // else: no detectable gap; everyone shares one group.
    }

    std::vector<int> client_ids;
    std::vector<int> raw;
    int group = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        client_ids.push_back(sorted[i].second);
        raw.push_back(group);
        if (i < split_after.size() && split_after[i]) ++group;
    }
    return canonical_assignment(client_ids, raw);
}

double cluster_purity(const GroupAssignment& assignment,
                      const std::map<int, int>& true_distribution_ids) {
    if (assignment.groups.empty()) throw ConfigError("cluster_purity: empty assignment");
    int matched = 0;
    for (const auto& group : assignment.members()) {
        std::map<int, int> counts;
        for (int client : group) ++counts[true_distribution_ids.at(client)];
        int majority = 0;
        for (const auto& [t, c] : counts) majority = std::max(majority, c);
        matched += majority;
    }
    return static_cast<double>(matched) / static_cast<double>(assignment.groups.size());
}

std::string similarity_matrix_to_json(const SimilarityMatrix& m) {
    json j;
    j["mode"] = "full";
    j["client_ids"] = m.client_ids;
    j["distance_evals"] = m.distance_evals;
    json rows = json::array();
    for (int i = 0; i < m.n; ++i) {
        json row = json::array();
        for (int k = 0; k < m.n; ++k) row.push_back(m.at(i, k));
        rows.push_back(row);
    }
    j["matrix"] = rows;
    return j.dump(2);
}

std::string anchor_vector_to_json(const AnchorSimilarityVector& v) {
    json j;
    j["mode"] = "anchor";
    j["anchor_client_id"] = v.anchor_client_id;
    j["client_ids"] = v.client_ids;
    j["distances"] = v.distances;
    j["distance_evals"] = v.distance_evals;
    return j.dump(2);
}

std::string assignment_to_json(const GroupAssignment& a) {
    json j;
    j["group_count"] = a.group_count;
    json g = json::object();
    for (const auto& [client, group] : a.groups) g[std::to_string(client)] = group;
    j["groups"] = g;
    return j.dump(2);
}

}  // namespace fedadapt
