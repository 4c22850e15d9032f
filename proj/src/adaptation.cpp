#include "fedadapt/adaptation.hpp"

#include <algorithm>

#include "fedadapt/errors.hpp"
#include "fedadapt/nn.hpp"
#include "fedadapt/parallel.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

void AdaptationConfig::validate() const {
    if (adaptation_rounds < 1) throw ConfigError("adaptation_rounds must be >= 1");
    if (!(lr > 0.0f)) throw ConfigError("lr must be positive");
    if (momentum < 0.0f || momentum >= 1.0f) throw ConfigError("momentum must be in [0,1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

PersonalizationResult group_wise_adaptation(const Model& federated_model,
                                            const Federation& federation,
                                            const GroupAssignment& assignment,
                                            const AdaptationConfig& config, int threads) {
    config.validate();
    for (const auto& client : federation.clients) {
        if (assignment.groups.find(client.client_id) == assignment.groups.end()) {
            throw ConfigError("assignment does not cover client " +
                              std::to_string(client.client_id));
        }
    }

    PersonalizationResult result;
    result.assignment = assignment;
    result.group_models.assign(static_cast<std::size_t>(assignment.group_count), federated_model);

    const auto groups = assignment.members();
    // Each group adapts independently from the same federated snapshot. The
    // loop reuses the FL round machinery by viewing the group as a small
    // federation with full participation.
    for (int g = 0; g < assignment.group_count; ++g) {
        Federation group_fed;
        group_fed.distribution_type_count = federation.distribution_type_count;
        for (int client_id : groups[static_cast<std::size_t>(g)]) {
            group_fed.clients.push_back(federation.client_by_id(client_id));
        }
        FLConfig fl;
        fl.rounds = config.adaptation_rounds;
        fl.local_epochs = config.local_epochs;
        fl.lr = config.lr;
        fl.momentum = config.momentum;
        fl.batch_size = config.batch_size;
        fl.seed = config.seed;
        fl.client_fraction = 1.0;
        auto [adapted, rounds] = continue_federated_learning(
            result.group_models[static_cast<std::size_t>(g)], group_fed, fl, threads);
        result.group_models[static_cast<std::size_t>(g)] = std::move(adapted);
        for (const auto& rm : rounds) {
            GroupRoundMetrics gm;
            gm.group_id = g;
            gm.round = rm.round;
            gm.mean_member_train_loss = rm.mean_train_loss;
            gm.mean_member_test_accuracy = rm.mean_test_accuracy;
            result.history.push_back(gm);
        }
    }

    // Per-client accuracy of the group's adapted model on the client's own
    // test split.
    std::vector<const ClientDataset*> clients;
    for (const auto& c : federation.clients) clients.push_back(&c);
    std::sort(clients.begin(), clients.end(),
              [](const ClientDataset* a, const ClientDataset* b) {
                  return a->client_id < b->client_id;
              });
    std::vector<double> accs(clients.size(), 0.0);
    parallel_for(static_cast<int>(clients.size()), threads, [&](int i) {
        const auto* c = clients[static_cast<std::size_t>(i)];
        const int g = result.assignment.group_of(c->client_id);
        accs[static_cast<std::size_t>(i)] =
            evaluate(result.group_models[static_cast<std::size_t>(g)], c->test);
    });
    for (std::size_t i = 0; i < clients.size(); ++i) {
        result.client_accuracy[clients[i]->client_id] = accs[i];
    }
    return result;
}

PipelineResult run_pipeline_from(const Model& federated_model, const Federation& federation,
                                 const PfeConfig& pfe_config, const FscConfig& fsc_config,
                                 const AdaptationConfig& adapt_config, int threads) {
    PipelineResult out;
    out.federated_model = federated_model;

    try {
        const ChannelSelector selector = select_channels(
            federated_model, pfe_config.relu_index, pfe_config.q, pfe_config.seed);
        out.representations.resize(federation.clients.size());
        std::vector<const ClientDataset*> clients;
        for (const auto& c : federation.clients) clients.push_back(&c);
        std::sort(clients.begin(), clients.end(),
                  [](const ClientDataset* a, const ClientDataset* b) {
                      return a->client_id < b->client_id;
                  });
        parallel_for(static_cast<int>(clients.size()), threads, [&](int i) {
            out.representations[static_cast<std::size_t>(i)] = client_representation(
                federated_model, *clients[static_cast<std::size_t>(i)], selector);
        });
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("pfe", e.what());
    }

    try {
        if (fsc_config.use_anchor) {
            out.anchor = anchor_vector(out.representations, fsc_config.anchor_seed);
            out.assignment =
                group_clients(out.anchor, fsc_config.expected_groups, fsc_config.epsilon);
        } else {
            out.matrix = full_matrix(out.representations);
            out.assignment =
                group_clients(out.matrix, fsc_config.expected_groups, fsc_config.epsilon);
        }
    } catch (const std::exception& e) {
        throw StageError("fsc", e.what());
    }

    try {
        out.personalization = group_wise_adaptation(federated_model, federation, out.assignment,
                                                    adapt_config, threads);
    } catch (const std::exception& e) {
        throw StageError("csm", e.what());
    }
    return out;
}

PipelineResult run_pipeline(const Federation& federation, const std::string& arch,
                            const FLConfig& fl_config, const PfeConfig& pfe_config,
                            const FscConfig& fsc_config, const AdaptationConfig& adapt_config,
                            int threads, const RoundHook& fl_hook) {
    Model federated;
    std::vector<RoundMetrics> history;
    try {
        std::tie(federated, history) =
            run_federated_learning(federation, arch, fl_config, threads, fl_hook);
    } catch (const std::exception& e) {
        throw StageError("fl", e.what());
    }
    PipelineResult out =
        run_pipeline_from(federated, federation, pfe_config, fsc_config, adapt_config, threads);
    out.fl_history = std::move(history);
    return out;
}

}  // namespace fedadapt
