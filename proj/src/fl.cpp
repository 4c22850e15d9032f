#include "fedadapt/fl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "fedadapt/errors.hpp"
#include "fedadapt/nn.hpp"
#include "fedadapt/parallel.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

void FLConfig::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (!(lr > 0.0f)) throw ConfigError("lr must be positive");
    if (momentum < 0.0f || momentum >= 1.0f) throw ConfigError("momentum must be in [0,1)");
    if (local_epochs < 0) throw ConfigError("local_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (client_fraction <= 0.0 || client_fraction > 1.0) {
        throw ConfigError("client_fraction must be in (0,1]");
    }
}

ModelParams local_train(const Model& model, const ClientDataset& client, int epochs, float lr,
                        float momentum, int batch_size, std::uint64_t seed,
                        double* last_epoch_loss, double* last_epoch_accuracy) {
    if (client.train.size() == 0) {
        throw DataError("client " + std::to_string(client.client_id) + " has no training data");
    }
    Model local = model;  // private copy; the shared model stays untouched
    std::vector<float> velocity(local.params.flat.size(), 0.0f);
    std::vector<float> grads;
    const int n = static_cast<int>(client.train.size());

    double epoch_loss = 0.0;
    double epoch_correct = 0.0;
    for (int e = 0; e < epochs; ++e) {
        const auto order = shuffled_indices(n, derive_seed(seed, kTagShuffle,
                                                           static_cast<std::uint64_t>(e)));
        epoch_loss = 0.0;
        epoch_correct = 0.0;
        int seen = 0;
        for (int start = 0; start < n; start += batch_size) {
            const int end = std::min(n, start + batch_size);
            std::vector<std::pair<Tensor, int>> batch;
            batch.reserve(static_cast<std::size_t>(end - start));
            for (int i = start; i < end; ++i) {
                const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
                batch.emplace_back(client.train.inputs[idx], client.train.labels[idx]);
            }
            int correct = 0;
            const double loss = loss_and_grad(local, batch, grads, &correct);
            sgd_step(local.params.flat, grads, velocity, lr, momentum);
            epoch_loss += loss * (end - start);
            epoch_correct += correct;
            seen = end;
        }
        epoch_loss /= std::max(1, seen);
        epoch_correct /= std::max(1, seen);
    }
    if (last_epoch_loss) *last_epoch_loss = epochs > 0 ? epoch_loss : 0.0;
    if (last_epoch_accuracy) *last_epoch_accuracy = epochs > 0 ? epoch_correct : 0.0;
    return std::move(local.params);
}

ModelParams fedavg(const std::vector<ModelParams>& params_list,
                   const std::vector<double>& weights) {
    if (params_list.empty()) throw ConfigError("fedavg: no inputs");
    if (params_list.size() != weights.size()) {
        throw InternalError("fedavg: weights count does not match params count");
    }
    const std::size_t len = params_list[0].flat.size();
    for (const auto& p : params_list) {
        if (p.flat.size() != len) throw InternalError("fedavg: parameter length mismatch");
    }
    double weight_sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ConfigError("fedavg: negative weight");
        weight_sum += w;
    }
    if (weight_sum <= 0.0) throw ConfigError("fedavg: weights sum to zero");

    ModelParams out = params_list[0];
    if (params_list.size() == 1) return out;

    std::vector<double> norm(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) norm[i] = weights[i] / weight_sum;

    for (std::size_t j = 0; j < len; ++j) {
        const float base = params_list[0].flat[j];
        double acc = 0.0;
        float lo = base, hi = base;
        for (std::size_t i = 1; i < params_list.size(); ++i) {
            const float v = params_list[i].flat[j];
            acc += norm[i] * (static_cast<double>(v) - static_cast<double>(base));
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const float avg = static_cast<float>(static_cast<double>(base) + acc);
        out.flat[j] = std::clamp(avg, lo, hi);
    }
    return out;
}

double evaluate(const Model& model, const LabeledDataset& dataset, double* mean_loss) {
    if (dataset.size() == 0) throw DataError("evaluate: empty dataset");
    int correct = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto [logits, trace] = forward(model, dataset.inputs[i], Capture::None);
        if (argmax_class(logits) == dataset.labels[i]) ++correct;
        if (mean_loss) loss_sum += xent_loss(logits, dataset.labels[i]);
    }
    if (mean_loss) *mean_loss = loss_sum / static_cast<double>(dataset.size());
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

namespace {

std::vector<int> sample_participants(const Federation& fed, double fraction, std::uint64_t seed,
                                     int round) {
    const int n = static_cast<int>(fed.clients.size());
    const int k = std::max(1, static_cast<int>(std::ceil(fraction * n)));
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (const auto& c : fed.clients) ids.push_back(c.client_id);
    std::sort(ids.begin(), ids.end());
    if (k >= n) return ids;
    const auto order =
        shuffled_indices(n, derive_seed(seed, kTagClientSample, static_cast<std::uint64_t>(round)));
    std::vector<int> picked;
    picked.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) picked.push_back(ids[static_cast<std::size_t>(order[i])]);
    std::sort(picked.begin(), picked.end());
    return picked;
}

}  // namespace

std::pair<Model, std::vector<RoundMetrics>> continue_federated_learning(
    const Model& start, const Federation& federation, const FLConfig& config, int threads,
    const RoundHook& hook) {
    config.validate();
    if (federation.clients.empty()) throw DataError("federation has no clients");

    Model global = start;
    std::vector<RoundMetrics> history;
    history.reserve(static_cast<std::size_t>(config.rounds));

    for (int round = 0; round < config.rounds; ++round) {
        const auto t0 = std::chrono::steady_clock::now();
        RoundMetrics rm;
        rm.round = round;
        rm.client_ids = sample_participants(federation, config.client_fraction, config.seed, round);

        const int k = static_cast<int>(rm.client_ids.size());
        std::vector<ModelParams> locals(static_cast<std::size_t>(k));
        std::vector<double> weights(static_cast<std::size_t>(k));
        rm.train_loss.assign(static_cast<std::size_t>(k), 0.0);
        rm.train_accuracy.assign(static_cast<std::size_t>(k), 0.0);

        parallel_for(k, threads, [&](int i) {
            const auto& client = federation.client_by_id(rm.client_ids[static_cast<std::size_t>(i)]);
            locals[static_cast<std::size_t>(i)] = local_train(
                global, client, config.local_epochs, config.lr, config.momentum,
                config.batch_size,
                derive_seed(config.seed, kTagLocalTrain, static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(client.client_id)),
                &rm.train_loss[static_cast<std::size_t>(i)],
                &rm.train_accuracy[static_cast<std::size_t>(i)]);
            weights[static_cast<std::size_t>(i)] = static_cast<double>(client.train.size());
        });

        global.params = fedavg(locals, weights);

        // Evaluate the new global model on every client's test split.
        const int n = static_cast<int>(federation.clients.size());
        rm.eval_client_ids.resize(static_cast<std::size_t>(n));
        rm.test_loss.assign(static_cast<std::size_t>(n), 0.0);
        rm.test_accuracy.assign(static_cast<std::size_t>(n), 0.0);
        std::vector<const ClientDataset*> by_id;
        for (const auto& c : federation.clients) by_id.push_back(&c);
        std::sort(by_id.begin(), by_id.end(),
                  [](const ClientDataset* a, const ClientDataset* b) {
                      return a->client_id < b->client_id;
                  });
        parallel_for(n, threads, [&](int i) {
            rm.eval_client_ids[static_cast<std::size_t>(i)] = by_id[static_cast<std::size_t>(i)]->client_id;
            rm.test_accuracy[static_cast<std::size_t>(i)] =
                evaluate(global, by_id[static_cast<std::size_t>(i)]->test,
                         &rm.test_loss[static_cast<std::size_t>(i)]);
        });

        for (int i = 0; i < k; ++i) {
            rm.mean_train_loss += rm.train_loss[static_cast<std::size_t>(i)];
            rm.mean_train_accuracy += rm.train_accuracy[static_cast<std::size_t>(i)];
        }
        rm.mean_train_loss /= std::max(1, k);
        rm.mean_train_accuracy /= std::max(1, k);
        for (int i = 0; i < n; ++i) rm.mean_test_accuracy += rm.test_accuracy[static_cast<std::size_t>(i)];
        rm.mean_test_accuracy /= std::max(1, n);
        rm.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (hook) hook(rm, global);
        history.push_back(std::move(rm));
    }
    return {std::move(global), std::move(history)};
}

std::pair<Model, std::vector<RoundMetrics>> run_federated_learning(
    const Federation& federation, const std::string& arch, const FLConfig& config, int threads,
    const RoundHook& hook) {
    if (federation.clients.empty()) throw DataError("federation has no clients");
    const auto& shape = federation.clients[0].train.inputs.at(0).shape;
    const int classes = federation.clients[0].train.class_count;
    Model global = make_architecture(arch, shape, classes);
    init_params(global, derive_seed(config.seed, kTagInit));
    return continue_federated_learning(global, federation, config, threads, hook);
}

}  // namespace fedadapt
