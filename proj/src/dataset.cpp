#include "fedadapt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "fedadapt/errors.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

using nlohmann::json;

void validate_dataset(const LabeledDataset& ds) {
    if (ds.inputs.size() != ds.labels.size()) {
        throw DataError("dataset " + ds.name + ": input/label count mismatch");
    }
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
        if (ds.inputs[i].shape != ds.inputs[0].shape) {
            throw DataError("dataset " + ds.name + ": sample " + std::to_string(i) +
                            " has a different shape");
        }
        if (ds.labels[i] < 0 || ds.labels[i] >= ds.class_count) {
            throw DataError("dataset " + ds.name + ": label " + std::to_string(ds.labels[i]) +
                            " out of range");
        }
    }
}

const ClientDataset& Federation::client_by_id(int client_id) const {
    for (const auto& c : clients) {
        if (c.client_id == client_id) return c;
    }
    throw DataError("no client with id " + std::to_string(client_id));
}

// ---- IDX -------------------------------------------------------------------

namespace {

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) {
        throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int class_count) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("cannot open IDX image file: " + images_path);
    if (const auto magic = read_be_u32(img, images_path, 0); magic != kIdxImagesMagic) {
        throw FormatError(images_path + ": bad magic number at byte offset 0 (got " +
                          std::to_string(magic) + ")");
    }
    const std::uint32_t n_images = read_be_u32(img, images_path, 4);
    const std::uint32_t rows = read_be_u32(img, images_path, 8);
    const std::uint32_t cols = read_be_u32(img, images_path, 12);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("cannot open IDX label file: " + labels_path);
    if (const auto magic = read_be_u32(lab, labels_path, 0); magic != kIdxLabelsMagic) {
        throw FormatError(labels_path + ": bad magic number at byte offset 0 (got " +
                          std::to_string(magic) + ")");
    }
    const std::uint32_t n_labels = read_be_u32(lab, labels_path, 4);
    if (n_labels == 0) throw FormatError(labels_path + ": empty label file");
    if (n_images != n_labels) {
        throw FormatError("image/label count mismatch: " + images_path + " has " +
                          std::to_string(n_images) + ", " + labels_path + " has " +
                          std::to_string(n_labels));
    }

    LabeledDataset ds;
    ds.class_count = class_count;
    ds.name = images_path;
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
        if (!img) {
            throw FormatError(images_path + ": truncated at byte offset " +
                              std::to_string(16 + static_cast<std::size_t>(i) * pixels));
        }
        Tensor t({1, static_cast<int>(rows), static_cast<int>(cols)});
        for (std::size_t p = 0; p < pixels; ++p) {
            t.values[p] = static_cast<float>(buf[p]) / 255.0f;
        }
        ds.inputs.push_back(std::move(t));

        char lb;
        lab.read(&lb, 1);
        if (!lab) {
            throw FormatError(labels_path + ": truncated at byte offset " +
                              std::to_string(8 + i));
        }
        ds.labels.push_back(static_cast<int>(static_cast<unsigned char>(lb)));
    }
    validate_dataset(ds);
    return ds;
}

void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    if (ds.inputs.empty()) throw DataError("save_idx: empty dataset");
    const auto& shape = ds.inputs[0].shape;
    if (shape.size() != 3 || shape[0] != 1) {
        throw DataError("save_idx: expected (1, rows, cols) samples, got " +
                        shape_to_string(shape));
    }
    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    if (!img) throw FormatError("cannot open for writing: " + images_path);
    write_be_u32(img, kIdxImagesMagic);
    write_be_u32(img, static_cast<std::uint32_t>(ds.inputs.size()));
    write_be_u32(img, static_cast<std::uint32_t>(shape[1]));
    write_be_u32(img, static_cast<std::uint32_t>(shape[2]));
    for (const auto& t : ds.inputs) {
        for (float v : t.values) {
            const float scaled = v * 255.0f;
            const auto byte = static_cast<unsigned char>(std::lround(scaled));
            if (std::fabs(scaled - std::lround(scaled)) > 1e-4f) {
                throw DataError("save_idx: values are not byte-quantized");
            }
            img.put(static_cast<char>(byte));
        }
    }
    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    if (!lab) throw FormatError("cannot open for writing: " + labels_path);
    write_be_u32(lab, kIdxLabelsMagic);
    write_be_u32(lab, static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
}

// ---- Simulated federations ---------------------------------------------------

Federation partition_class_imbalance(const LabeledDataset& dataset, int n_clients, int n_types,
                                     int classes_per_type, int samples_per_split,
                                     std::uint64_t seed) {
    if (n_types * classes_per_type > dataset.class_count) {
        throw ConfigError("class-imbalance partition needs n_types*classes_per_type <= " +
                          std::to_string(dataset.class_count));
    }
    if (n_clients % n_types != 0) {
        throw ConfigError("n_clients must be divisible by n_types");
    }
    const int clients_per_type = n_clients / n_types;

    // Disjoint class sets per type, drawn by seeded shuffle of all classes.
    Rng class_rng(derive_seed(seed, kTagPartition, 1));
    const std::vector<int> class_order = shuffled_indices(dataset.class_count, class_rng);

    // Per-class sample pools, each shuffled independently.
    std::vector<std::vector<int>> pools(static_cast<std::size_t>(dataset.class_count));
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        pools[static_cast<std::size_t>(dataset.labels[i])].push_back(static_cast<int>(i));
    }
    for (int c = 0; c < dataset.class_count; ++c) {
        Rng pool_rng(derive_seed(seed, kTagPartition, 2, static_cast<std::uint64_t>(c)));
        const auto order = shuffled_indices(static_cast<int>(pools[c].size()), pool_rng);
        std::vector<int> shuffled(pools[c].size());
        for (std::size_t k = 0; k < order.size(); ++k) shuffled[k] = pools[c][order[k]];
        pools[static_cast<std::size_t>(c)] = std::move(shuffled);
    }
    std::vector<std::size_t> cursor(static_cast<std::size_t>(dataset.class_count), 0);

    Federation fed;
    fed.distribution_type_count = n_types;
    int client_id = 1;
    for (int t = 0; t < n_types; ++t) {
        std::vector<int> type_classes(class_order.begin() + t * classes_per_type,
                                      class_order.begin() + (t + 1) * classes_per_type);
        std::sort(type_classes.begin(), type_classes.end());
        for (int k = 0; k < clients_per_type; ++k, ++client_id) {
            ClientDataset cd;
            cd.client_id = client_id;
            cd.true_distribution_id = t + 1;
            cd.train.class_count = cd.test.class_count = dataset.class_count;
            cd.train.name = "client" + std::to_string(client_id) + "-train";
            cd.test.name = "client" + std::to_string(client_id) + "-test";
            // Interleave classes so each split holds a near-even class mix.
            for (int split = 0; split < 2; ++split) {
                LabeledDataset& dst = split == 0 ? cd.train : cd.test;
                for (int s = 0; s < samples_per_split; ++s) {
                    const int cls = type_classes[static_cast<std::size_t>(s) % type_classes.size()];
                    auto& cur = cursor[static_cast<std::size_t>(cls)];
                    if (cur >= pools[static_cast<std::size_t>(cls)].size()) {
                        throw DataError("insufficient samples in class " + std::to_string(cls) +
                                        " for the requested partition");
                    }
                    const int idx = pools[static_cast<std::size_t>(cls)][cur++];
                    dst.inputs.push_back(dataset.inputs[static_cast<std::size_t>(idx)]);
                    dst.labels.push_back(cls);
                }
            }
            fed.clients.push_back(std::move(cd));
        }
    }
    return fed;
}

Tensor apply_domain_transform(const Tensor& input, int domain) {
    switch (domain) {
        case 1:
            return input;
        case 2: {  // inverted intensities
            Tensor out(input.shape);
            for (std::size_t i = 0; i < input.values.size(); ++i) {
                out.values[i] = 1.0f - input.values[i];
            }
            return out;
        }
        case 3: {  // additive fixed-pattern background grid
            Tensor out = input;
            const int h = input.shape[1], w = input.shape[2];
            for (int c = 0; c < input.shape[0]; ++c) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        if (y % 4 == 0 || x % 4 == 0) {
                            out.at3(c, y, x) = std::min(1.0f, out.at3(c, y, x) + 0.5f);
                        }
                    }
                }
            }
            return out;
        }
        case 4: {  // blur approximation: 3x3 mean filter over the valid window
            Tensor out(input.shape);
            const int h = input.shape[1], w = input.shape[2];
            for (int c = 0; c < input.shape[0]; ++c) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        float acc = 0.0f;
                        int count = 0;
                        for (int dy = -1; dy <= 1; ++dy) {
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int yy = y + dy, xx = x + dx;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                                acc += input.at3(c, yy, xx);
                                ++count;
                            }
                        }
                        out.at3(c, y, x) = acc / static_cast<float>(count);
                    }
                }
            }
            return out;
        }
        default:
            throw ConfigError("no built-in domain transform with id " + std::to_string(domain));
    }
}

Federation partition_background_difference(const LabeledDataset& dataset, int n_domains,
                                           int clients_per_domain, double train_fraction,
                                           std::uint64_t seed) {
    if (n_domains < 1 || n_domains > 4) {
        throw ConfigError("background-difference partition supports 1..4 domains, got " +
                          std::to_string(n_domains));
    }
    if (train_fraction <= 0.0 || train_fraction >= 1.0) {
        throw ConfigError("train_fraction must be in (0,1)");
    }
    const int n_clients = n_domains * clients_per_domain;
    const int per_client = static_cast<int>(dataset.size()) / n_clients;
    if (per_client < 2) throw DataError("dataset too small for the requested partition");

    Rng rng(derive_seed(seed, kTagPartition, 3));
    const std::vector<int> order = shuffled_indices(static_cast<int>(dataset.size()), rng);

    Federation fed;
    fed.distribution_type_count = n_domains;
    int cursor = 0;
    int client_id = 1;
    for (int d = 1; d <= n_domains; ++d) {
        for (int k = 0; k < clients_per_domain; ++k, ++client_id) {
            ClientDataset cd;
            cd.client_id = client_id;
            cd.true_distribution_id = d;
            cd.train.class_count = cd.test.class_count = dataset.class_count;
            cd.train.name = "client" + std::to_string(client_id) + "-train";
            cd.test.name = "client" + std::to_string(client_id) + "-test";
            const int n_train = static_cast<int>(std::lround(per_client * train_fraction));
            for (int s = 0; s < per_client; ++s) {
                const int idx = order[static_cast<std::size_t>(cursor++)];
                LabeledDataset& dst = s < n_train ? cd.train : cd.test;
                dst.inputs.push_back(
                    apply_domain_transform(dataset.inputs[static_cast<std::size_t>(idx)], d));
                dst.labels.push_back(dataset.labels[static_cast<std::size_t>(idx)]);
            }
            if (cd.test.inputs.empty()) throw DataError("empty test split; lower train_fraction");
            fed.clients.push_back(std::move(cd));
        }
    }
    return fed;
}

// ---- Synthetic dataset -------------------------------------------------------

namespace {

float quantize_byte(float v) {
    const float clamped = std::clamp(v, 0.0f, 1.0f);
    return static_cast<float>(std::lround(clamped * 255.0f)) / 255.0f;
}

}  // namespace

LabeledDataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
    LabeledDataset ds;
    ds.class_count = spec.class_count;
    ds.name = "synthetic-bars";
    const float pi = 3.14159265358979323846f;
    for (int i = 0; i < spec.n_samples; ++i) {
        const int cls = i % spec.class_count;
        Rng rng(derive_seed(seed, kTagSynthData, static_cast<std::uint64_t>(i)));
        const float angle = static_cast<float>(cls) * pi / static_cast<float>(spec.class_count);
        const float nx = -std::sin(angle), ny = std::cos(angle);
        const float cy = (spec.height - 1) * 0.5f +
                         static_cast<float>(static_cast<int>(rng.next_below(
                             static_cast<std::uint64_t>(2 * spec.jitter + 1))) -
                             spec.jitter);
        const float cx = (spec.width - 1) * 0.5f +
                         static_cast<float>(static_cast<int>(rng.next_below(
                             static_cast<std::uint64_t>(2 * spec.jitter + 1))) -
                             spec.jitter);
        Tensor t({1, spec.height, spec.width});
        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                // Distance from the pixel to the class's bar line.
                const float d = (static_cast<float>(y) - cy) * ny +
                                (static_cast<float>(x) - cx) * nx;
                const float bar = 0.9f * std::exp(-(d * d) / (2.0f * 0.6f * 0.6f));
                const float noisy = bar + spec.noise_sigma * rng.next_gaussian();
                t.at3(0, y, x) = quantize_byte(noisy);
            }
        }
        ds.inputs.push_back(std::move(t));
        ds.labels.push_back(cls);
    }
    return ds;
}

std::string federation_manifest_json(const Federation& fed, bool include_ground_truth) {
    json j;
    j["distribution_type_count"] = fed.distribution_type_count;
    json clients = json::array();
    for (const auto& c : fed.clients) {
        json cj;
        cj["client_id"] = c.client_id;
        cj["train_samples"] = c.train.size();
        cj["test_samples"] = c.test.size();
        if (include_ground_truth) cj["true_distribution_id"] = c.true_distribution_id;
        clients.push_back(cj);
    }
    j["clients"] = clients;
    return j.dump(2);
}

}  // namespace fedadapt
