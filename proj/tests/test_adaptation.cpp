#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "fedadapt/adaptation.hpp"
#include "fedadapt/baselines.hpp"
#include "fedadapt/dataset.hpp"
#include "fedadapt/errors.hpp"
#include "fedadapt/rng.hpp"

using namespace fedadapt;

namespace {

// Small class-imbalance federation over a fast synthetic dataset.
Federation small_federation(int n_clients, int n_types, int samples, std::uint64_t seed,
                            float noise = 0.15f) {
    SyntheticSpec spec;
    spec.n_samples = n_clients * samples * 2 + 2000;
    spec.noise_sigma = noise;
    const auto ds = make_synthetic_dataset(spec, seed);
    return partition_class_imbalance(ds, n_clients, n_types, 2, samples, seed);
}

Model quick_model(const Federation& fed, std::uint64_t seed) {
    Model m = make_architecture("mlp", fed.clients[0].train.inputs[0].shape,
                                fed.clients[0].train.class_count);
    init_params(m, seed);
    return m;
}

GroupAssignment one_group(const Federation& fed) {
    GroupAssignment a;
    a.group_count = 1;
    for (const auto& c : fed.clients) a.groups[c.client_id] = 0;
    return a;
}

}  // namespace

TEST_CASE("singleton-group adaptation is bitwise equal to local fine-tuning") {
    const auto fed = small_federation(4, 2, 20, 3);
    const Model mf = quick_model(fed, 7);

    GroupAssignment singletons;
    singletons.group_count = static_cast<int>(fed.clients.size());
    int g = 0;
    for (const auto& c : fed.clients) singletons.groups[c.client_id] = g++;

    AdaptationConfig cfg;
    cfg.adaptation_rounds = 3;
    cfg.local_epochs = 1;
    cfg.seed = 11;
    cfg.batch_size = 5;
    const auto result = group_wise_adaptation(mf, fed, singletons, cfg, 1);

    for (const auto& c : fed.clients) {
        const Model tuned = local_finetune(mf, c, 3, cfg.lr, cfg.momentum, cfg.batch_size, 11);
        const int group = result.assignment.group_of(c.client_id);
        CHECK(tuned.params.flat ==
              result.group_models[static_cast<std::size_t>(group)].params.flat);
    }
}

TEST_CASE("all clients in one group equals continued federated learning") {
    const auto fed = small_federation(5, 1, 16, 5);
    const Model mf = quick_model(fed, 9);

    AdaptationConfig cfg;
    cfg.adaptation_rounds = 4;
    cfg.seed = 21;
    cfg.batch_size = 4;
    const auto adapted = group_wise_adaptation(mf, fed, one_group(fed), cfg, 1);

    FLConfig fl;
    fl.rounds = cfg.adaptation_rounds;
    fl.local_epochs = cfg.local_epochs;
    fl.lr = cfg.lr;
    fl.momentum = cfg.momentum;
    fl.batch_size = cfg.batch_size;
    fl.seed = cfg.seed;
    fl.client_fraction = 1.0;
    auto [continued, hist] = continue_federated_learning(mf, fed, fl, 1);

    CHECK(adapted.group_models[0].params.flat == continued.params.flat);
}

TEST_CASE("group adaptation is isolated from other groups' data") {
    auto fed = small_federation(6, 3, 16, 8);
    const Model mf = quick_model(fed, 13);

    GroupAssignment pairs;
    pairs.group_count = 3;
    for (const auto& c : fed.clients) pairs.groups[c.client_id] = (c.client_id - 1) / 2;

    AdaptationConfig cfg;
    cfg.adaptation_rounds = 2;
    cfg.seed = 31;
    cfg.batch_size = 4;
    const auto before = group_wise_adaptation(mf, fed, pairs, cfg, 1);

    // Scramble the data of groups 1 and 2 (swap train sets between their
    // members); group 0's adapted parameters must not change at all.
    std::swap(fed.clients[2].train, fed.clients[4].train);
    std::swap(fed.clients[3].train, fed.clients[5].train);
    const auto after = group_wise_adaptation(mf, fed, pairs, cfg, 1);

    CHECK(before.group_models[0].params.flat == after.group_models[0].params.flat);
    CHECK(before.group_models[1].params.flat != after.group_models[1].params.flat);
}

TEST_CASE("every adaptation round keeps parameters in the members' envelope") {
    // One round of two-member adaptation: the aggregate must lie coordinate-
    // wise inside the two locally trained parameter vectors.
    const auto fed = small_federation(2, 1, 12, 2);
    const Model mf = quick_model(fed, 3);

    AdaptationConfig cfg;
    cfg.adaptation_rounds = 1;
    cfg.seed = 5;
    cfg.batch_size = 4;
    const auto result = group_wise_adaptation(mf, fed, one_group(fed), cfg, 1);

    const auto p1 = local_train(mf, fed.clients[0], 1, cfg.lr, cfg.momentum, cfg.batch_size,
                                derive_seed(cfg.seed, kTagLocalTrain, 0, 1));
    const auto p2 = local_train(mf, fed.clients[1], 1, cfg.lr, cfg.momentum, cfg.batch_size,
                                derive_seed(cfg.seed, kTagLocalTrain, 0, 2));
    const auto& out = result.group_models[0].params.flat;
    for (std::size_t j = 0; j < out.size(); ++j) {
        CHECK(out[j] >= std::min(p1.flat[j], p2.flat[j]));
        CHECK(out[j] <= std::max(p1.flat[j], p2.flat[j]));
    }
}

TEST_CASE("assignment must cover the whole federation") {
    const auto fed = small_federation(4, 2, 10, 4);
    const Model mf = quick_model(fed, 2);
    GroupAssignment partial;
    partial.group_count = 1;
    partial.groups[fed.clients[0].client_id] = 0;
    AdaptationConfig cfg;
    cfg.adaptation_rounds = 1;
    cfg.seed = 1;
    CHECK_THROWS_AS(group_wise_adaptation(mf, fed, partial, cfg, 1), ConfigError);
}

TEST_CASE("per-client accuracies are reported against the client's own test split") {
    const auto fed = small_federation(4, 2, 14, 6);
    const Model mf = quick_model(fed, 4);
    AdaptationConfig cfg;
    cfg.adaptation_rounds = 1;
    cfg.seed = 2;
    cfg.batch_size = 7;
    const auto result = group_wise_adaptation(mf, fed, one_group(fed), cfg, 1);
    REQUIRE(result.client_accuracy.size() == fed.clients.size());
    for (const auto& c : fed.clients) {
        const double expected = evaluate(result.group_models[0], c.test);
        CHECK(result.client_accuracy.at(c.client_id) == expected);
    }
}

TEST_CASE("pipeline is deterministic end to end") {
    const auto fed = small_federation(6, 3, 12, 9);
    FLConfig fl;
    fl.rounds = 2;
    fl.seed = 7;
    fl.batch_size = 4;
    PfeConfig pfe;
    pfe.relu_index = 1;
    pfe.q = 8;
    pfe.seed = 3;
    FscConfig fsc;
    fsc.expected_groups = 3;
    AdaptationConfig ad;
    ad.adaptation_rounds = 2;
    ad.seed = 5;
    ad.batch_size = 4;

    const auto a = run_pipeline(fed, "mlp", fl, pfe, fsc, ad, 1);
    const auto b = run_pipeline(fed, "mlp", fl, pfe, fsc, ad, 1);
    CHECK(a.federated_model.params.flat == b.federated_model.params.flat);
    CHECK(a.assignment.groups == b.assignment.groups);
    REQUIRE(a.representations.size() == b.representations.size());
    for (std::size_t i = 0; i < a.representations.size(); ++i) {
        CHECK(a.representations[i].values == b.representations[i].values);
    }
    for (const auto& [client, acc] : a.personalization.client_accuracy) {
        CHECK(acc == b.personalization.client_accuracy.at(client));
    }
}

TEST_CASE("single-type federation collapses the pipeline to extended FL") {
    const auto fed = small_federation(4, 1, 12, 10);
    FLConfig fl;
    fl.rounds = 2;
    fl.seed = 3;
    fl.batch_size = 4;
    PfeConfig pfe;
    pfe.relu_index = 1;
    pfe.q = 8;
    pfe.seed = 1;
    FscConfig fsc;  // no expected_groups: the gap heuristic decides
    AdaptationConfig ad;
    ad.adaptation_rounds = 2;
    ad.seed = 9;
    ad.batch_size = 4;

    const auto result = run_pipeline(fed, "mlp", fl, pfe, fsc, ad, 1);
    CHECK(result.assignment.group_count == 1);

    FLConfig extend;
    extend.rounds = ad.adaptation_rounds;
    extend.local_epochs = ad.local_epochs;
    extend.lr = ad.lr;
    extend.momentum = ad.momentum;
    extend.batch_size = ad.batch_size;
    extend.seed = ad.seed;
    auto [continued, hist] = continue_federated_learning(result.federated_model, fed, extend, 1);
    CHECK(result.personalization.group_models[0].params.flat == continued.params.flat);
}

TEST_CASE("stage errors carry the stage name") {
    const auto fed = small_federation(4, 2, 10, 11);
    FLConfig fl;
    fl.rounds = 1;
    fl.seed = 1;
    PfeConfig pfe;
    pfe.relu_index = 9;  // mlp has 2 ReLUs
    pfe.q = 4;
    pfe.seed = 1;
    FscConfig fsc;
    AdaptationConfig ad;
    ad.adaptation_rounds = 1;
    ad.seed = 1;
    try {
        run_pipeline(fed, "mlp", fl, pfe, fsc, ad, 1);
        CHECK(false);
    } catch (const StageError& e) {
        CHECK(e.stage() == "pfe");
    }
}

TEST_CASE("random assignment is seeded, near-equal, and canonical") {
    const auto fed = small_federation(10, 5, 8, 12);
    const auto a = random_assignment(fed, 3, 77);
    const auto b = random_assignment(fed, 3, 77);
    CHECK(a.groups == b.groups);
    const auto c = random_assignment(fed, 3, 78);
    CHECK(a.groups != c.groups);

    const auto members = a.members();
    REQUIRE(members.size() == 3);
    std::vector<std::size_t> sizes;
    for (const auto& g : members) sizes.push_back(g.size());
    CHECK(*std::max_element(sizes.begin(), sizes.end()) -
              *std::min_element(sizes.begin(), sizes.end()) <=
          1);
}

TEST_CASE("random grouping degenerates to fine-tuning and to extended FL") {
    const auto fed = small_federation(4, 2, 10, 13);
    const Model mf = quick_model(fed, 21);
    AdaptationConfig cfg;
    cfg.adaptation_rounds = 2;
    cfg.seed = 4;
    cfg.batch_size = 5;

    SUBCASE("group_count = n is per-client fine-tuning") {
        const auto result = random_group_adaptation(mf, fed, 4, 9, cfg, 1);
        CHECK(result.assignment.group_count == 4);
        for (const auto& c : fed.clients) {
            const Model tuned =
                local_finetune(mf, c, 2, cfg.lr, cfg.momentum, cfg.batch_size, cfg.seed);
            const int g = result.assignment.group_of(c.client_id);
            CHECK(result.group_models[static_cast<std::size_t>(g)].params.flat ==
                  tuned.params.flat);
        }
    }

    SUBCASE("group_count = 1 is extended FL") {
        const auto result = random_group_adaptation(mf, fed, 1, 9, cfg, 1);
        FLConfig fl;
        fl.rounds = cfg.adaptation_rounds;
        fl.local_epochs = cfg.local_epochs;
        fl.lr = cfg.lr;
        fl.momentum = cfg.momentum;
        fl.batch_size = cfg.batch_size;
        fl.seed = cfg.seed;
        auto [continued, hist] = continue_federated_learning(mf, fed, fl, 1);
        CHECK(result.group_models[0].params.flat == continued.params.flat);
    }
}

TEST_CASE("finetune with zero epochs returns the federated model unchanged") {
    const auto fed = small_federation(2, 1, 8, 14);
    const Model mf = quick_model(fed, 33);
    const Model out = local_finetune(mf, fed.clients[0], 0, 0.01f, 0.5f, 4, 1);
    CHECK(out.params.flat == mf.params.flat);
}
