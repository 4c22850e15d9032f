#include "fedadapt/sparsity.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "fedadapt/errors.hpp"
#include "fedadapt/nn.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

double channel_sparsity(const Tensor& feature_map_channel) {
    if (feature_map_channel.empty()) throw ConfigError("channel_sparsity: empty channel");
    std::size_t zeros = 0;
    for (float v : feature_map_channel.values) {
        if (v < 0.0f) {
            throw ConfigError("channel_sparsity: negative entry; input is not a ReLU output");
        }
        if (v == 0.0f) ++zeros;
    }
    return static_cast<double>(zeros) / static_cast<double>(feature_map_channel.numel());
}

Tensor extract_channel(const Tensor& feature_map, int channel) {
    if (feature_map.shape.size() == 3) {
        const int h = feature_map.shape[1], w = feature_map.shape[2];
        Tensor out({h, w});
        const std::size_t base = static_cast<std::size_t>(channel) * h * w;
        std::copy_n(feature_map.values.begin() + static_cast<std::ptrdiff_t>(base),
                    static_cast<std::size_t>(h) * w, out.values.begin());
        return out;
    }
    if (feature_map.shape.size() == 1) {
        // Dense-layer ReLU: each hidden unit is a 1x1 channel.
        Tensor out({1, 1});
        out.values[0] = feature_map.values.at(static_cast<std::size_t>(channel));
        return out;
    }
    throw ConfigError("extract_channel: unsupported feature map rank " +
                      std::to_string(feature_map.shape.size()));
}

ChannelSelector select_channels(const Model& model, int relu_index, int q, std::uint64_t seed) {
    const int channels = model.relu_channel_count(relu_index);
    if (q < 1 || q > channels) {
        throw ConfigError("cannot select " + std::to_string(q) + " channels at ReLU " +
                          std::to_string(relu_index) + " which has " + std::to_string(channels));
    }
    ChannelSelector sel;
    sel.relu_index = relu_index;
    sel.seed = seed;
    if (q == channels) {
        sel.channel_ids.resize(static_cast<std::size_t>(q));
        for (int i = 0; i < q; ++i) sel.channel_ids[static_cast<std::size_t>(i)] = i;
        return sel;
    }
    const auto order = shuffled_indices(
        channels, derive_seed(seed, kTagChannelSelect, static_cast<std::uint64_t>(relu_index)));
    sel.channel_ids.assign(order.begin(), order.begin() + q);
    return sel;
}

SparsityRepresentation client_representation(const Model& model, const ClientDataset& client,
                                             const ChannelSelector& selector) {
    if (client.train.size() == 0) {
        throw DataError("client " + std::to_string(client.client_id) + " has no training data");
    }
    const int layer_pos = model.relu_layer_position(selector.relu_index);
    const int channels = model.relu_channel_count(selector.relu_index);
    for (int c : selector.channel_ids) {
        if (c < 0 || c >= channels) {
            throw ConfigError("selector channel " + std::to_string(c) + " out of range at ReLU " +
                              std::to_string(selector.relu_index));
        }
    }

    std::vector<double> sums(selector.channel_ids.size(), 0.0);
    for (const auto& input : client.train.inputs) {
        auto [logits, trace] = forward(model, input, Capture::SingleLayer, layer_pos);
        (void)logits;
        const Tensor& fmap = trace.output_at(layer_pos);
        for (std::size_t k = 0; k < selector.channel_ids.size(); ++k) {
            sums[k] += channel_sparsity(extract_channel(fmap, selector.channel_ids[k]));
        }
    }

    SparsityRepresentation rep;
    rep.client_id = client.client_id;
    rep.selector = selector;
    rep.values.resize(selector.channel_ids.size());
    const double n = static_cast<double>(client.train.size());
    for (std::size_t k = 0; k < sums.size(); ++k) {
        rep.values[k] = static_cast<float>(sums[k] / n);
    }
    return rep;
}

std::size_t upload_cost(const ChannelSelector& selector) {
    return static_cast<std::size_t>(selector.q()) * 4;
}

std::string representation_to_json(const SparsityRepresentation& rep) {
    nlohmann::json j;
    j["client_id"] = rep.client_id;
    j["relu_index"] = rep.selector.relu_index;
    j["channel_ids"] = rep.selector.channel_ids;
    j["values"] = rep.values;
    return j.dump();
}

}  // namespace fedadapt
