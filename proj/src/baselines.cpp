#include "fedadapt/baselines.hpp"

#include <algorithm>

#include "fedadapt/errors.hpp"
#include "fedadapt/fl.hpp"
#include "fedadapt/parallel.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

std::map<int, double> baseline_accuracy(const Model& federated_model,
                                        const Federation& federation, int threads) {
    std::vector<const ClientDataset*> clients;
    for (const auto& c : federation.clients) clients.push_back(&c);
    std::sort(clients.begin(), clients.end(),
              [](const ClientDataset* a, const ClientDataset* b) {
                  return a->client_id < b->client_id;
              });
    std::vector<double> accs(clients.size(), 0.0);
    parallel_for(static_cast<int>(clients.size()), threads, [&](int i) {
        accs[static_cast<std::size_t>(i)] =
            evaluate(federated_model, clients[static_cast<std::size_t>(i)]->test);
    });
    std::map<int, double> out;
    for (std::size_t i = 0; i < clients.size(); ++i) out[clients[i]->client_id] = accs[i];
    return out;
}

Model local_finetune(const Model& federated_model, const ClientDataset& client, int epochs,
                     float lr, float momentum, int batch_size, std::uint64_t seed) {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    Model out = federated_model;
    if (epochs == 0) return out;

    Federation single;
    single.distribution_type_count = 1;
    single.clients.push_back(client);
    GroupAssignment assignment;
    assignment.group_count = 1;
    assignment.groups[client.client_id] = 0;

    AdaptationConfig cfg;
    cfg.adaptation_rounds = epochs;
    cfg.local_epochs = 1;
    cfg.lr = lr;
    cfg.momentum = momentum;
    cfg.batch_size = batch_size;
    cfg.seed = seed;
    auto result = group_wise_adaptation(federated_model, single, assignment, cfg, 1);
    return std::move(result.group_models[0]);
}

std::map<int, double> finetune_all(const Model& federated_model, const Federation& federation,
                                   int epochs, float lr, float momentum, int batch_size,
                                   std::uint64_t seed, int threads) {
    std::vector<const ClientDataset*> clients;
    for (const auto& c : federation.clients) clients.push_back(&c);
    std::sort(clients.begin(), clients.end(),
              [](const ClientDataset* a, const ClientDataset* b) {
                  return a->client_id < b->client_id;
              });
    std::vector<double> accs(clients.size(), 0.0);
    parallel_for(static_cast<int>(clients.size()), threads, [&](int i) {
        const auto* c = clients[static_cast<std::size_t>(i)];
        const Model tuned =
            local_finetune(federated_model, *c, epochs, lr, momentum, batch_size, seed);
        accs[static_cast<std::size_t>(i)] = evaluate(tuned, c->test);
    });
    std::map<int, double> out;
    for (std::size_t i = 0; i < clients.size(); ++i) out[clients[i]->client_id] = accs[i];
    return out;
}

GroupAssignment random_assignment(const Federation& federation, int group_count,
                                  std::uint64_t seed) {
    const int n = static_cast<int>(federation.clients.size());
    if (group_count < 1 || group_count > n) {
        throw ConfigError("group_count must be in [1, n]");
    }
    std::vector<int> ids;
    for (const auto& c : federation.clients) ids.push_back(c.client_id);
    std::sort(ids.begin(), ids.end());
    const auto order = shuffled_indices(n, derive_seed(seed, kTagRandomGroup));

    // Near-equal sizes: the first (n % group_count) groups get one extra.
    std::vector<int> raw(static_cast<std::size_t>(n), 0);
    const int base = n / group_count;
    const int extra = n % group_count;
    int pos = 0;
    for (int g = 0; g < group_count; ++g) {
        const int size = base + (g < extra ? 1 : 0);
        for (int k = 0; k < size; ++k, ++pos) {
            raw[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = g;
        }
    }
    GroupAssignment a;
    std::map<int, int> min_client;
    for (int i = 0; i < n; ++i) {
        const int g = raw[static_cast<std::size_t>(i)];
        auto it = min_client.find(g);
        if (it == min_client.end() || ids[static_cast<std::size_t>(i)] < it->second) {
            min_client[g] = ids[static_cast<std::size_t>(i)];
        }
    }
    std::vector<std::pair<int, int>> relabel_order;
    for (const auto& [g, c] : min_client) relabel_order.emplace_back(c, g);
    std::sort(relabel_order.begin(), relabel_order.end());
    std::map<int, int> relabel;
    for (std::size_t k = 0; k < relabel_order.size(); ++k) {
        relabel[relabel_order[k].second] = static_cast<int>(k);
    }
    a.group_count = static_cast<int>(relabel_order.size());
    for (int i = 0; i < n; ++i) {
        a.groups[ids[static_cast<std::size_t>(i)]] = relabel[raw[static_cast<std::size_t>(i)]];
    }
    return a;
}

PersonalizationResult random_group_adaptation(const Model& federated_model,
                                              const Federation& federation, int group_count,
                                              std::uint64_t seed, const AdaptationConfig& config,
                                              int threads) {
    const GroupAssignment assignment = random_assignment(federation, group_count, seed);
    return group_wise_adaptation(federated_model, federation, assignment, config, threads);
}

}  // namespace fedadapt
