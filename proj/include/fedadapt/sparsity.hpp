#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/dataset.hpp"
#include "fedadapt/model.hpp"

namespace fedadapt {

// Which channels of which ReLU feature map feed the representation.
struct ChannelSelector {
    int relu_index = 1;             // 1-based
    std::vector<int> channel_ids;   // distinct, ascending not required
    std::uint64_t seed = 0;

    int q() const { return static_cast<int>(channel_ids.size()); }
    bool operator==(const ChannelSelector&) const = default;
};

// The privacy-preserving per-client payload: q per-channel average
// sparsities in [0,1]. This is the only client-side artifact the server-side
// modules ever see; raw inputs and feature maps stay on the client.
struct SparsityRepresentation {
    int client_id = 0;
    ChannelSelector selector;
    std::vector<float> values;  // length q, each in [0,1]
};

// Fraction of exact zeros in one H x W ReLU output channel. Entries must be
// non-negative (anything else is not a ReLU output and trips a contract
// error).
double channel_sparsity(const Tensor& feature_map_channel);

// Draws q distinct channel indices at the given ReLU by seeded shuffle.
// When q equals the channel count the selector lists all channels ascending.
ChannelSelector select_channels(const Model& model, int relu_index, int q, std::uint64_t seed);

// Mean of channel_sparsity over every training sample of the client, per
// selected channel. Only the forward trace at the selector's ReLU is read.
SparsityRepresentation client_representation(const Model& model, const ClientDataset& client,
                                             const ChannelSelector& selector);

// Upload payload size in bytes: q 32-bit values.
std::size_t upload_cost(const ChannelSelector& selector);

// JSON export of the per-client upload record.
std::string representation_to_json(const SparsityRepresentation& rep);

// Extracts one channel of a CxHxW feature map as an HxW tensor. A 1-D vector
// of hidden units is treated as that many 1x1 channels.
Tensor extract_channel(const Tensor& feature_map, int channel);

}  // namespace fedadapt
