#include "fedadapt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedadapt/baselines.hpp"
#include "fedadapt/errors.hpp"
#include "fedadapt/nn.hpp"
#include "fedadapt/parallel.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string fmt_percent(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return buf;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + key + "' in config section " + section);
        }
    }
}

std::uint64_t require_seed(const json& j, const std::string& section) {
    if (!j.contains("seed")) {
        throw ConfigError("config section " + section + " must declare an explicit seed");
    }
    return j.at("seed").get<std::uint64_t>();
}

const std::vector<std::string> kMethodNames = {
    "federated_learning", "fine_tune", "random_selection", "sparsity_based_selection"};

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(origin + ": invalid JSON: " + e.what());
    }

    ExperimentConfig c;
    check_keys(j,
               {"dataset", "federation", "arch", "fl", "pfe", "fsc", "adaptation", "baselines",
                "inversion", "output", "threads"},
               "(top level)");
    try {
        const json& ds = j.at("dataset");
        check_keys(ds, {"images", "labels", "classes"}, "dataset");
        c.dataset.images = ds.at("images").get<std::string>();
        c.dataset.labels = ds.at("labels").get<std::string>();
        c.dataset.classes = ds.value("classes", 10);

        const json& fed = j.at("federation");
        check_keys(fed,
                   {"kind", "n_clients", "n_types", "classes_per_type", "samples_per_split",
                    "n_domains", "clients_per_domain", "train_fraction", "seed"},
                   "federation");
        c.federation.kind = fed.at("kind").get<std::string>();
        c.federation.seed = require_seed(fed, "federation");
        if (c.federation.kind == "class-imbalance") {
            c.federation.n_clients = fed.value("n_clients", 25);
            c.federation.n_types = fed.value("n_types", 5);
            c.federation.classes_per_type = fed.value("classes_per_type", 2);
            c.federation.samples_per_split = fed.value("samples_per_split", 100);
        } else if (c.federation.kind == "background-difference") {
            c.federation.n_domains = fed.value("n_domains", 4);
            c.federation.clients_per_domain = fed.value("clients_per_domain", 5);
            c.federation.train_fraction = fed.value("train_fraction", 0.8);
        } else {
            throw ConfigError("federation.kind must be class-imbalance or background-difference");
        }

        c.arch = j.value("arch", std::string("small-cnn"));

        const json& fl = j.at("fl");
        check_keys(fl,
                   {"rounds", "local_epochs", "lr", "momentum", "batch_size", "seed",
                    "client_fraction", "checkpoint_every"},
                   "fl");
        c.fl.rounds = fl.value("rounds", 50);
        c.fl.local_epochs = fl.value("local_epochs", 1);
        c.fl.lr = fl.value("lr", 0.01f);
        c.fl.momentum = fl.value("momentum", 0.5f);
        c.fl.batch_size = fl.value("batch_size", 10);
        c.fl.client_fraction = fl.value("client_fraction", 1.0);
        c.fl.checkpoint_every = fl.value("checkpoint_every", 0);
        c.fl.seed = require_seed(fl, "fl");

        const json& pfe = j.at("pfe");
        check_keys(pfe, {"relu_index", "q", "seed"}, "pfe");
        c.pfe.relu_index = pfe.value("relu_index", 1);
        c.pfe.q = pfe.value("q", 30);
        c.pfe.seed = require_seed(pfe, "pfe");

        const json& fsc = j.at("fsc");
        check_keys(fsc, {"mode", "expected_groups", "epsilon", "anchor_seed"}, "fsc");
        const std::string mode = fsc.value("mode", std::string("full"));
        if (mode == "anchor") {
            c.fsc.use_anchor = true;
        } else if (mode == "full") {
            c.fsc.use_anchor = false;
        } else {
            throw ConfigError("fsc.mode must be 'full' or 'anchor'");
        }
        if (fsc.contains("expected_groups") && !fsc.at("expected_groups").is_null()) {
            c.fsc.expected_groups = fsc.at("expected_groups").get<int>();
        }
        if (fsc.contains("epsilon") && !fsc.at("epsilon").is_null()) {
            c.fsc.epsilon = fsc.at("epsilon").get<double>();
        }
        if (!fsc.contains("anchor_seed")) {
            throw ConfigError("config section fsc must declare an explicit anchor_seed");
        }
        c.fsc.anchor_seed = fsc.at("anchor_seed").get<std::uint64_t>();

        const json& ad = j.at("adaptation");
        check_keys(ad, {"rounds", "local_epochs", "lr", "momentum", "batch_size", "seed"},
                   "adaptation");
        c.adaptation.adaptation_rounds = ad.value("rounds", 30);
        c.adaptation.local_epochs = ad.value("local_epochs", 1);
        c.adaptation.lr = ad.value("lr", 0.01f);
        c.adaptation.momentum = ad.value("momentum", 0.5f);
        c.adaptation.batch_size = ad.value("batch_size", 10);
        c.adaptation.seed = require_seed(ad, "adaptation");

        if (j.contains("baselines")) {
            const json& b = j.at("baselines");
            check_keys(b,
                       {"fine_tune", "random_selection", "random_group_count", "random_seed",
                        "finetune_epochs"},
                       "baselines");
            c.baselines.fine_tune = b.value("fine_tune", true);
            c.baselines.random_selection = b.value("random_selection", true);
            c.baselines.random_group_count = b.value("random_group_count", 5);
            c.baselines.finetune_epochs = b.value("finetune_epochs", 0);
            if (c.baselines.random_selection) {
                if (!b.contains("random_seed")) {
                    throw ConfigError("baselines.random_seed must be explicit when "
                                      "random_selection is enabled");
                }
                c.baselines.random_seed = b.at("random_seed").get<std::uint64_t>();
            }
        }

        if (j.contains("inversion")) {
            const json& inv = j.at("inversion");
            check_keys(inv,
                       {"enabled", "properties", "relu_indices", "steps", "step_size", "beta",
                        "seed", "client_id", "sample_index"},
                       "inversion");
            c.inversion.enabled = inv.value("enabled", false);
            if (inv.contains("properties")) {
                c.inversion.properties = inv.at("properties").get<std::vector<std::string>>();
            }
            if (inv.contains("relu_indices")) {
                c.inversion.relu_indices = inv.at("relu_indices").get<std::vector<int>>();
            }
            c.inversion.steps = inv.value("steps", 500);
            c.inversion.step_size = inv.value("step_size", 1.0);
            c.inversion.beta = inv.value("beta", 50.0);
            c.inversion.client_id = inv.value("client_id", 1);
            c.inversion.sample_index = inv.value("sample_index", 0);
            if (c.inversion.enabled) c.inversion.seed = require_seed(inv, "inversion");
        }

        c.output = j.at("output").get<std::string>();
        c.threads = j.value("threads", 1);
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": " + e.what());
    }

    // Value checks that do not need the dataset.
    c.fl.validate();
    c.adaptation.validate();
    if (c.pfe.q < 1) throw ConfigError("pfe.q must be >= 1");
    if (c.pfe.relu_index < 1) throw ConfigError("pfe.relu_index must be >= 1");
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    for (const auto& p : c.inversion.properties) property_kind_from_name(p);
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file does not exist: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig c = config_from_json_text(ss.str(), path);
    if (!fs::exists(c.dataset.images)) {
        throw ConfigError("dataset image file does not exist: " + c.dataset.images);
    }
    if (!fs::exists(c.dataset.labels)) {
        throw ConfigError("dataset label file does not exist: " + c.dataset.labels);
    }
    return c;
}

namespace {

json canonical_config_json(const ExperimentConfig& c) {
    json j;
    j["dataset"] = {{"images", c.dataset.images},
                    {"labels", c.dataset.labels},
                    {"classes", c.dataset.classes}};
    json fed = {{"kind", c.federation.kind}, {"seed", c.federation.seed}};
    if (c.federation.kind == "class-imbalance") {
        fed["n_clients"] = c.federation.n_clients;
        fed["n_types"] = c.federation.n_types;
        fed["classes_per_type"] = c.federation.classes_per_type;
        fed["samples_per_split"] = c.federation.samples_per_split;
    } else {
        fed["n_domains"] = c.federation.n_domains;
        fed["clients_per_domain"] = c.federation.clients_per_domain;
        fed["train_fraction"] = c.federation.train_fraction;
    }
    j["federation"] = fed;
    j["arch"] = c.arch;
    j["fl"] = {{"rounds", c.fl.rounds},
               {"local_epochs", c.fl.local_epochs},
               {"lr", c.fl.lr},
               {"momentum", c.fl.momentum},
               {"batch_size", c.fl.batch_size},
               {"seed", c.fl.seed},
               {"client_fraction", c.fl.client_fraction},
               {"checkpoint_every", c.fl.checkpoint_every}};
    j["pfe"] = {{"relu_index", c.pfe.relu_index}, {"q", c.pfe.q}, {"seed", c.pfe.seed}};
    json fsc = {{"mode", c.fsc.use_anchor ? "anchor" : "full"},
                {"anchor_seed", c.fsc.anchor_seed}};
    fsc["expected_groups"] = c.fsc.expected_groups ? json(*c.fsc.expected_groups) : json();
    fsc["epsilon"] = c.fsc.epsilon ? json(*c.fsc.epsilon) : json();
    j["fsc"] = fsc;
    j["adaptation"] = {{"rounds", c.adaptation.adaptation_rounds},
                       {"local_epochs", c.adaptation.local_epochs},
                       {"lr", c.adaptation.lr},
                       {"momentum", c.adaptation.momentum},
                       {"batch_size", c.adaptation.batch_size},
                       {"seed", c.adaptation.seed}};
    j["baselines"] = {{"fine_tune", c.baselines.fine_tune},
                      {"random_selection", c.baselines.random_selection},
                      {"random_group_count", c.baselines.random_group_count},
                      {"random_seed", c.baselines.random_seed},
                      {"finetune_epochs", c.baselines.finetune_epochs}};
    j["inversion"] = {{"enabled", c.inversion.enabled},
                      {"properties", c.inversion.properties},
                      {"relu_indices", c.inversion.relu_indices},
                      {"steps", c.inversion.steps},
                      {"step_size", c.inversion.step_size},
                      {"beta", c.inversion.beta},
                      {"seed", c.inversion.seed},
                      {"client_id", c.inversion.client_id},
                      {"sample_index", c.inversion.sample_index}};
    return j;
}

}  // namespace

std::string config_hash(const ExperimentConfig& config) {
    const std::string canon = canonical_config_json(config).dump();
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Federation build_federation(const ExperimentConfig& config) {
    const LabeledDataset base =
        load_idx(config.dataset.images, config.dataset.labels, config.dataset.classes);
    if (config.federation.kind == "class-imbalance") {
        return partition_class_imbalance(base, config.federation.n_clients,
                                         config.federation.n_types,
                                         config.federation.classes_per_type,
                                         config.federation.samples_per_split,
                                         config.federation.seed);
    }
    return partition_background_difference(base, config.federation.n_domains,
                                           config.federation.clients_per_domain,
                                           config.federation.train_fraction,
                                           config.federation.seed);
}

namespace {

class ArtifactWriter {
public:
    ArtifactWriter(fs::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {
        fs::create_directories(dir_);
    }

    const fs::path& dir() const { return dir_; }
    const std::string& hash() const { return hash_; }

    std::string declare(const std::string& name) {
        artifacts_.push_back(name);
        return (dir_ / name).string();
    }

    void write_json(const std::string& name, json j) {
        j["config_hash"] = hash_;
        std::ofstream out(declare(name), std::ios::trunc);
        out << j.dump(2) << "\n";
    }

    void write_accuracy_csv(const std::string& method, const std::map<int, double>& acc,
                            const std::map<int, int>& group_of) {
        std::ofstream out(declare("accuracy_" + method + ".csv"), std::ios::trunc);
        out << "client_id,group_id,accuracy,config_hash\n";
        for (const auto& [client, a] : acc) {
            const auto it = group_of.find(client);
            out << client << "," << (it == group_of.end() ? -1 : it->second) << "," << fmt_g(a)
                << "," << hash_ << "\n";
        }
    }

    const std::vector<std::string>& artifacts() const { return artifacts_; }

private:
    fs::path dir_;
    std::string hash_;
    std::vector<std::string> artifacts_;
};

struct StageTimer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

}  // namespace

std::string run_experiment(const ExperimentConfig& config) {
    const std::string hash = config_hash(config);
    ArtifactWriter w(config.output, hash);
    json timing;
    StageTimer total_timer;

    // ---- data ----------------------------------------------------------
    Federation federation;
    try {
        StageTimer t;
        federation = build_federation(config);
        {
            std::ofstream out(w.declare("federation.json"), std::ios::trunc);
            json j = json::parse(federation_manifest_json(federation, true));
            j["config_hash"] = hash;
            out << j.dump(2) << "\n";
        }
        timing["data_seconds"] = t.elapsed();
    } catch (const std::exception& e) {
        throw StageError("data", e.what());
    }

    // ---- federated learning ---------------------------------------------
    Model federated;
    std::vector<RoundMetrics> fl_history;
    try {
        StageTimer t;
        std::ofstream history(w.declare("fl_history.csv"), std::ios::trunc);
        history << "round,client_id,split,loss,accuracy,config_hash\n";
        RoundHook hook = [&](const RoundMetrics& rm, const Model& global) {
            for (std::size_t i = 0; i < rm.client_ids.size(); ++i) {
                history << rm.round << "," << rm.client_ids[i] << ",train,"
                        << fmt_g(rm.train_loss[i]) << "," << fmt_g(rm.train_accuracy[i]) << ","
                        << hash << "\n";
            }
            for (std::size_t i = 0; i < rm.eval_client_ids.size(); ++i) {
                history << rm.round << "," << rm.eval_client_ids[i] << ",test,"
                        << fmt_g(rm.test_loss[i]) << "," << fmt_g(rm.test_accuracy[i]) << ","
                        << hash << "\n";
            }
            if (config.fl.checkpoint_every > 0 &&
                (rm.round + 1) % config.fl.checkpoint_every == 0) {
                save_model(global, w.declare("round_" + std::to_string(rm.round) + ".ckpt"));
            }
        };
        std::tie(federated, fl_history) =
            run_federated_learning(federation, config.arch, config.fl, config.threads, hook);
        save_model(federated, w.declare("federated_model.ckpt"));

        json summary;
        summary["rounds"] = config.fl.rounds;
        summary["final_mean_test_accuracy"] = fl_history.back().mean_test_accuracy;
        summary["final_mean_train_loss"] = fl_history.back().mean_train_loss;
        json curve = json::array();
        for (const auto& rm : fl_history) curve.push_back(rm.mean_test_accuracy);
        summary["mean_test_accuracy_per_round"] = curve;
        timing["fl_seconds"] = t.elapsed();
        summary["timing"] = timing;
        w.write_json("fl_summary.json", summary);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("fl", e.what());
    }

    // ---- representation extraction + grouping + adaptation ---------------
    PipelineResult pipe;
    try {
        StageTimer t;
        pipe = run_pipeline_from(federated, federation, config.pfe, config.fsc, config.adaptation,
                                 config.threads);
        timing["pfa_seconds"] = t.elapsed();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("pfa", e.what());
    }

    {
        json reps = json::array();
        for (const auto& r : pipe.representations) reps.push_back(json::parse(representation_to_json(r)));
        json j;
        j["representations"] = reps;
        w.write_json("representations.json", j);

        std::ofstream sim(w.declare("similarity.json"), std::ios::trunc);
        json sj = json::parse(config.fsc.use_anchor ? anchor_vector_to_json(pipe.anchor)
                                                    : similarity_matrix_to_json(pipe.matrix));
        sj["config_hash"] = hash;
        sim << sj.dump(2) << "\n";

        // Heat-map rows (client pair distances) for plot-ready export.
        std::ofstream heat(w.declare("similarity_pairs.csv"), std::ios::trunc);
        heat << "client_i,client_j,distance,config_hash\n";
        if (config.fsc.use_anchor) {
            for (std::size_t i = 0; i < pipe.anchor.client_ids.size(); ++i) {
                heat << pipe.anchor.anchor_client_id << "," << pipe.anchor.client_ids[i] << ","
                     << fmt_g(pipe.anchor.distances[i]) << "," << hash << "\n";
            }
        } else {
            for (int i = 0; i < pipe.matrix.n; ++i) {
                for (int k = i + 1; k < pipe.matrix.n; ++k) {
                    heat << pipe.matrix.client_ids[static_cast<std::size_t>(i)] << ","
                         << pipe.matrix.client_ids[static_cast<std::size_t>(k)] << ","
                         << fmt_g(pipe.matrix.at(i, k)) << "," << hash << "\n";
                }
            }
        }

        json gj = json::parse(assignment_to_json(pipe.assignment));
        std::map<int, int> truth;
        for (const auto& c : federation.clients) truth[c.client_id] = c.true_distribution_id;
        gj["purity_vs_ground_truth"] = cluster_purity(pipe.assignment, truth);
        w.write_json("groups.json", gj);

        for (int g = 0; g < pipe.assignment.group_count; ++g) {
            save_model(pipe.personalization.group_models[static_cast<std::size_t>(g)],
                       w.declare("group_" + std::to_string(g) + ".ckpt"));
        }
    }

    // ---- per-method accuracy tables ---------------------------------------
    std::map<int, double> baseline;
    try {
        StageTimer t;
        baseline = baseline_accuracy(federated, federation, config.threads);
        w.write_accuracy_csv("federated_learning", baseline, {});
        timing["baseline_seconds"] = t.elapsed();
    } catch (const std::exception& e) {
        throw StageError("baseline", e.what());
    }

    {
        std::map<int, int> groups(pipe.assignment.groups.begin(), pipe.assignment.groups.end());
        w.write_accuracy_csv("sparsity_based_selection", pipe.personalization.client_accuracy,
                             groups);
        // The adaptation interface file: baseline vs adapted per client.
        std::ofstream out(w.declare("personalization.csv"), std::ios::trunc);
        out << "client_id,group_id,baseline_acc,adapted_acc,config_hash\n";
        for (const auto& [client, acc] : pipe.personalization.client_accuracy) {
            out << client << "," << pipe.assignment.group_of(client) << ","
                << fmt_g(baseline.at(client)) << "," << fmt_g(acc) << "," << hash << "\n";
        }
    }

    const int matched_epochs = config.baselines.finetune_epochs > 0
                                   ? config.baselines.finetune_epochs
                                   : config.adaptation.adaptation_rounds *
                                         config.adaptation.local_epochs;
    if (config.baselines.fine_tune) {
        try {
            StageTimer t;
            const auto acc = finetune_all(federated, federation, matched_epochs,
                                          config.adaptation.lr, config.adaptation.momentum,
                                          config.adaptation.batch_size, config.adaptation.seed,
                                          config.threads);
            w.write_accuracy_csv("fine_tune", acc, {});
            timing["finetune_seconds"] = t.elapsed();
        } catch (const std::exception& e) {
            throw StageError("fine-tune", e.what());
        }
    }

    if (config.baselines.random_selection) {
        try {
            StageTimer t;
            const auto result = random_group_adaptation(
                federated, federation, config.baselines.random_group_count,
                config.baselines.random_seed, config.adaptation, config.threads);
            std::map<int, int> groups(result.assignment.groups.begin(),
                                      result.assignment.groups.end());
            w.write_accuracy_csv("random_selection", result.client_accuracy, groups);
            timing["random_selection_seconds"] = t.elapsed();
        } catch (const std::exception& e) {
            throw StageError("random-selection", e.what());
        }
    }

    // ---- upload-cost accounting -------------------------------------------
    {
        const ChannelSelector configured = select_channels(
            federated, config.pfe.relu_index, config.pfe.q, config.pfe.seed);
        json j;
        j["q"] = config.pfe.q;
        j["bytes"] = upload_cost(configured);
        json table = json::object();
        for (int q : {10, 30, 50}) {
            ChannelSelector sel;
            sel.channel_ids.assign(static_cast<std::size_t>(q), 0);
            for (int i = 0; i < q; ++i) sel.channel_ids[static_cast<std::size_t>(i)] = i;
            table[std::to_string(q)] = upload_cost(sel);
        }
        j["bytes_by_q"] = table;
        j["model_params"] = federated.param_count();
        j["model_bytes"] = federated.param_count() * 4;
        j["representation_to_model_ratio"] =
            static_cast<double>(upload_cost(configured)) /
            static_cast<double>(federated.param_count() * 4);
        w.write_json("upload_cost.json", j);
    }

    // ---- optional inversion analysis ---------------------------------------
    if (config.inversion.enabled) {
        try {
            StageTimer t;
            w.declare("inversion_reference.pgm");
            for (const auto& prop : config.inversion.properties) {
                for (int relu : config.inversion.relu_indices) {
                    const std::string stem = "inversion_" + prop + "_relu" + std::to_string(relu);
                    w.declare(stem + ".json");
                    w.declare(stem + ".pgm");
                }
            }
            run_inversion_analysis(config);
            timing["inversion_seconds"] = t.elapsed();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("inversion", e.what());
        }
    }

    // ---- manifest + comparison ---------------------------------------------
    // The manifest is written twice: compare_methods needs it to validate the
    // config hash, and its own outputs must still be declared.
    auto write_manifest = [&](bool with_comparison) {
        json manifest;
        manifest["seeds"] = {{"federation", config.federation.seed},
                             {"fl", config.fl.seed},
                             {"pfe", config.pfe.seed},
                             {"fsc_anchor", config.fsc.anchor_seed},
                             {"adaptation", config.adaptation.seed},
                             {"baseline_random", config.baselines.random_seed},
                             {"inversion", config.inversion.seed}};
        manifest["config"] = canonical_config_json(config);
        manifest["finetune_epochs_effective"] = matched_epochs;
        json arts = json::array();
        for (const auto& a : w.artifacts()) arts.push_back(a);
        if (with_comparison) {
            arts.push_back("comparison.csv");
            arts.push_back("comparison_summary.json");
            arts.push_back("manifest.json");
        }
        manifest["artifacts"] = arts;
        timing["total_seconds"] = total_timer.elapsed();
        manifest["timing"] = timing;
        json out = manifest;
        out["config_hash"] = hash;
        std::ofstream f(fs::path(config.output) / "manifest.json", std::ios::trunc);
        f << out.dump(2) << "\n";
    };

    write_manifest(false);
    try {
        compare_methods(config.output);
    } catch (const std::exception& e) {
        throw StageError("compare", e.what());
    }
    write_manifest(true);
    return config.output;
}

namespace {

// Loads the federated model from the artifact dir, or trains + saves it.
Model checkpoint_or_train(const ExperimentConfig& config, const Federation& federation) {
    const fs::path ckpt = fs::path(config.output) / "federated_model.ckpt";
    if (fs::exists(ckpt)) return load_model(ckpt.string());
    auto [model, history] =
        run_federated_learning(federation, config.arch, config.fl, config.threads);
    fs::create_directories(config.output);
    save_model(model, ckpt.string());
    return model;
}

}  // namespace

std::vector<SweepRow> sweep_extraction(const ExperimentConfig& config,
                                       std::vector<int> relu_indices, std::vector<int> q_values) {
    std::sort(relu_indices.begin(), relu_indices.end());
    relu_indices.erase(std::unique(relu_indices.begin(), relu_indices.end()), relu_indices.end());
    std::sort(q_values.begin(), q_values.end());
    q_values.erase(std::unique(q_values.begin(), q_values.end()), q_values.end());

    const Federation federation = build_federation(config);
    const Model model = checkpoint_or_train(config, federation);
    const std::string hash = config_hash(config);

    std::vector<SweepRow> rows;
    for (int relu : relu_indices) {
        for (int q : q_values) {
            SweepRow bad;
            bad.relu_index = relu;
            bad.q = q;
            if (relu < 1 || relu > model.relu_count()) {
                bad.status = "skipped: model has " + std::to_string(model.relu_count()) +
                             " ReLU layers";
                rows.push_back(bad);
                continue;
            }
            if (q < 1 || q > model.relu_channel_count(relu)) {
                bad.status = "skipped: ReLU " + std::to_string(relu) + " has " +
                             std::to_string(model.relu_channel_count(relu)) + " channels";
                rows.push_back(bad);
                continue;
            }
            const ChannelSelector sel = select_channels(model, relu, q, config.pfe.seed);
            std::vector<SparsityRepresentation> reps(federation.clients.size());
            std::vector<const ClientDataset*> clients;
            for (const auto& c : federation.clients) clients.push_back(&c);
            std::sort(clients.begin(), clients.end(),
                      [](const ClientDataset* a, const ClientDataset* b) {
                          return a->client_id < b->client_id;
                      });
            parallel_for(static_cast<int>(clients.size()), config.threads, [&](int i) {
                reps[static_cast<std::size_t>(i)] =
                    client_representation(model, *clients[static_cast<std::size_t>(i)], sel);
            });
            // Client 1 is the fixed base of the sweep.
            const SparsityRepresentation* base = nullptr;
            for (const auto& r : reps) {
                if (r.client_id == 1) base = &r;
            }
            if (!base) throw ConfigError("sweep needs a client with id 1 as the base");
            for (const auto& r : reps) {
                SweepRow row;
                row.relu_index = relu;
                row.q = q;
                row.client_id = r.client_id;
                row.distance = similarity(*base, r);
                row.status = "ok";
                rows.push_back(row);
            }
        }
    }

    fs::create_directories(config.output);
    std::ofstream out(fs::path(config.output) / "sweep.csv", std::ios::trunc);
    out << "relu_index,q,client_id,distance,status,config_hash\n";
    for (const auto& r : rows) {
        out << r.relu_index << "," << r.q << ",";
        if (r.status == "ok") {
            out << r.client_id << "," << fmt_g(r.distance);
        } else {
            out << ",";
        }
        out << "," << r.status << "," << hash << "\n";
    }
    return rows;
}

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open CSV: " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

ComparisonTable compare_methods(const std::string& artifact_dir) {
    const fs::path dir(artifact_dir);
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw ConfigError("no manifest.json in " + artifact_dir +
                          "; run the experiment first");
    }
    json manifest;
    {
        std::ifstream in(manifest_path);
        in >> manifest;
    }
    const std::string hash = manifest.at("config_hash").get<std::string>();

    ComparisonTable table;
    {
        std::ifstream in(dir / "federation.json");
        if (in) {
            json fed;
            in >> fed;
            for (const auto& c : fed.at("clients")) {
                if (c.contains("true_distribution_id")) {
                    table.client_type[c.at("client_id").get<int>()] =
                        c.at("true_distribution_id").get<int>();
                }
            }
        }
    }

    for (const auto& method : kMethodNames) {
        const fs::path file = dir / ("accuracy_" + method + ".csv");
        if (!fs::exists(file)) {
            table.absent_methods.push_back(method);
            continue;
        }
        const auto rows = read_csv(file);
        if (rows.empty() || rows[0] != std::vector<std::string>{"client_id", "group_id",
                                                                "accuracy", "config_hash"}) {
            throw FormatError(file.string() + ": unexpected header");
        }
        std::map<int, double> acc;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() != 4) throw FormatError(file.string() + ": malformed row");
            if (rows[i][3] != hash) {
                throw ConfigError(file.string() +
                                  " was produced by a different config (hash mismatch); "
                                  "refusing to mix artifacts");
            }
            acc[std::stoi(rows[i][0])] = std::stod(rows[i][2]);
        }
        table.methods.push_back(method);
        table.accuracy[method] = std::move(acc);
    }
    if (table.methods.empty()) {
        throw ConfigError("no per-method accuracy files found in " + artifact_dir);
    }

    for (const auto& [client, acc] : table.accuracy.at(table.methods.front())) {
        (void)acc;
        table.client_ids.push_back(client);
    }
    std::sort(table.client_ids.begin(), table.client_ids.end());

    for (const auto& method : table.methods) {
        double sum = 0.0;
        for (int c : table.client_ids) sum += table.accuracy.at(method).at(c);
        table.mean_accuracy[method] = sum / static_cast<double>(table.client_ids.size());
    }

    for (int c : table.client_ids) {
        std::string best;
        double best_acc = -1.0;
        bool tie = false;
        for (const auto& method : table.methods) {
            const double a = table.accuracy.at(method).at(c);
            if (a > best_acc) {
                best_acc = a;
                best = method;
                tie = false;
            } else if (a == best_acc) {
                tie = true;
            }
        }
        if (!tie) table.winner[c] = best;
    }

    // comparison.csv: per-client rows then per-type means and the average row.
    std::ofstream out(dir / "comparison.csv", std::ios::trunc);
    out << "row,type";
    for (const auto& m : table.methods) out << "," << m;
    out << ",winner,config_hash\n";
    for (int c : table.client_ids) {
        out << "client" << c << ",";
        if (table.client_type.count(c)) out << table.client_type.at(c);
        for (const auto& m : table.methods) out << "," << fmt_percent(table.accuracy.at(m).at(c));
        out << "," << (table.winner.count(c) ? table.winner.at(c) : "") << "," << hash << "\n";
    }
    if (!table.client_type.empty()) {
        std::set<int> types;
        for (const auto& [c, t] : table.client_type) types.insert(t);
        for (int t : types) {
            out << "type" << t << "_mean," << t;
            std::string best;
            double best_acc = -1.0;
            bool tie = false;
            for (const auto& m : table.methods) {
                double sum = 0.0;
                int count = 0;
                for (int c : table.client_ids) {
                    if (table.client_type.count(c) && table.client_type.at(c) == t) {
                        sum += table.accuracy.at(m).at(c);
                        ++count;
                    }
                }
                const double mean = count ? sum / count : 0.0;
                out << "," << fmt_percent(mean);
                if (mean > best_acc) {
                    best_acc = mean;
                    best = m;
                    tie = false;
                } else if (mean == best_acc) {
                    tie = true;
                }
            }
            out << "," << (tie ? "" : best) << "," << hash << "\n";
        }
    }
    {
        out << "mean,";
        std::string best;
        double best_acc = -1.0;
        bool tie = false;
        for (const auto& m : table.methods) {
            const double mean = table.mean_accuracy.at(m);
            out << "," << fmt_percent(mean);
            if (mean > best_acc) {
                best_acc = mean;
                best = m;
                tie = false;
            } else if (mean == best_acc) {
                tie = true;
            }
        }
        out << "," << (tie ? "" : best) << "," << hash << "\n";
    }

    json summary;
    summary["config_hash"] = hash;
    summary["methods"] = table.methods;
    summary["absent_methods"] = table.absent_methods;
    json means = json::object();
    for (const auto& [m, v] : table.mean_accuracy) means[m] = v;
    summary["mean_accuracy"] = means;
    json wins = json::object();
    for (const auto& m : table.methods) wins[m] = 0;
    for (const auto& [c, m] : table.winner) wins[m] = wins[m].get<int>() + 1;
    summary["winner_counts"] = wins;
    std::ofstream sj(dir / "comparison_summary.json", std::ios::trunc);
    sj << summary.dump(2) << "\n";

    return table;
}

std::vector<std::string> run_inversion_analysis(const ExperimentConfig& config) {
    const Federation federation = build_federation(config);
    const Model model = checkpoint_or_train(config, federation);
    const std::string hash = config_hash(config);
    const auto& spec = config.inversion;

    const ClientDataset& client = federation.client_by_id(spec.client_id);
    if (spec.sample_index < 0 ||
        spec.sample_index >= static_cast<int>(client.train.size())) {
        throw ConfigError("inversion.sample_index out of range for client " +
                          std::to_string(spec.client_id));
    }
    const Tensor& reference = client.train.inputs[static_cast<std::size_t>(spec.sample_index)];

    fs::create_directories(config.output);
    save_pgm(reference, (fs::path(config.output) / "inversion_reference.pgm").string());

    std::vector<std::string> written;
    for (const auto& prop_name : spec.properties) {
        const PropertyKind kind = property_kind_from_name(prop_name);
        for (int relu : spec.relu_indices) {
            const InversionTarget target =
                make_inversion_target(model, reference, kind, relu, spec.beta);
            const InversionReport report =
                invert(model, target, spec.steps, spec.step_size, spec.seed);
            const std::string stem = "inversion_" + prop_name + "_relu" + std::to_string(relu);
            json j = json::parse(
                inversion_report_to_json(target, report, spec.steps, spec.step_size, spec.seed));
            j["config_hash"] = hash;
            j["client_id"] = spec.client_id;
            j["sample_index"] = spec.sample_index;
            const fs::path jpath = fs::path(config.output) / (stem + ".json");
            std::ofstream out(jpath, std::ios::trunc);
            out << j.dump(2) << "\n";
            save_pgm(report.reconstructed, (fs::path(config.output) / (stem + ".pgm")).string());
            written.push_back(jpath.string());
        }
    }
    return written;
}

}  // namespace fedadapt
