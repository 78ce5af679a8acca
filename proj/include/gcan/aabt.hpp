#pragma once

// Atlas-Aware Bidirectional Transformer.
//
// Forward (encode): the (N, N) input is cut into one row slab per atlas
// network, each slab is split column-wise into patches of width p_w whose
// height equals the network's region count, patches are projected to tokens
// with per-network weights, and each network's token sequence runs through its
// own stack of transformer blocks. Attention never crosses networks.
//
// Backward (decode): per-network tokens are projected back to (n_i, p_w)
// patches, reassembled into the slab, padding is dropped, slabs are stacked in
// atlas order, and a small convolutional head produces the FC output.

#include <span>
#include <variant>
#include <vector>

#include "gcan/autodiff.hpp"
#include "gcan/fc.hpp"
#include "gcan/nn.hpp"

namespace gcan::aabt {

using ad::Tensor;

struct AabtConfig {
    int depth = 3;
    int embed_dim = 128;
    int num_heads = 8;
    int patch_width = 16;
    double mlp_ratio = 4.0;
    AtlasPtr atlas;

    void validate() const;
    int regions() const { return atlas->total_regions(); }
    // ceil(N / p_w)
    int tokens_per_network() const;
    int padded_width() const { return tokens_per_network() * patch_width; }
};

// Rows of one network against all N columns, zero-padded to N_padded.
struct NetworkSlab {
    int network_index = 0;
    Tensor values;  // [n_i, N_padded]
};

// Encoded tokens for every network plus what is needed to invert them.
struct FeatureMap {
    std::vector<Tensor> tokens;  // per network, [ceil(N/p_w), embed_dim]
    int regions = 0;
    int patch_width = 0;
    AtlasPtr atlas;

    int total_tokens() const;
    // All networks' tokens stacked in atlas order.
    Tensor concatenated() const;
};

struct PatchEmbedding {
    nn::Linear proj;  // n_i * p_w -> embed_dim
    Tensor position;  // [tokens, embed_dim]

    void collect(nn::ParamList& out, const std::string& prefix) const;
};

struct InversePatchEmbedding {
    nn::Linear proj;  // embed_dim -> n_i * p_w

    void collect(nn::ParamList& out, const std::string& prefix) const;
};

// conv3x3(1->8) -> GELU -> conv3x3(8->1). When constrained: tanh, then
// (M + M^T)/2 and a unit diagonal, so the output is always a valid FC matrix.
struct DecodeHead {
    nn::Conv2d conv1;
    nn::Conv2d conv2;
    bool constrained = true;

    DecodeHead() = default;
    DecodeHead(bool constrained, nn::Rng& rng);

    void collect(nn::ParamList& out, const std::string& prefix) const;
};

std::vector<NetworkSlab> segment(const Tensor& input, const AtlasPartition& atlas, int patch_width);
Tensor patch_embed(const NetworkSlab& slab, const AabtConfig& config, const PatchEmbedding& params);
Tensor encode_tokens(const Tensor& tokens, std::span<const nn::TransformerBlock> blocks);
// Returns the (n_i, N) slab with padding columns dropped.
Tensor inverse_patch_embed(const Tensor& tokens, int rows, const AabtConfig& config, const InversePatchEmbedding& params);
Tensor decode_head(const Tensor& raw, const DecodeHead& head);

class AabtEncoder {
public:
    AabtEncoder() = default;
    AabtEncoder(AabtConfig config, nn::Rng& rng);

    FeatureMap encode(const Tensor& input) const;

    const AabtConfig& config() const { return config_; }
    std::vector<PatchEmbedding>& embeddings() { return embeds_; }
    const std::vector<PatchEmbedding>& embeddings() const { return embeds_; }
    void collect(nn::ParamList& out, const std::string& prefix = "") const;

private:
    AabtConfig config_;
    std::vector<PatchEmbedding> embeds_;
    std::vector<std::vector<nn::TransformerBlock>> blocks_;
};

// Mirror of the encoder: `config.depth` transformer blocks per network on the
// incoming tokens, then inverse patch embedding, concatenation and the head.
class AabtDecoder {
public:
    AabtDecoder() = default;
    AabtDecoder(AabtConfig config, bool constrained_head, nn::Rng& rng);

    Tensor decode(const FeatureMap& features) const;
    // Everything but the convolutional head: the stacked (N, N) slabs.
    Tensor decode_raw(const FeatureMap& features) const;

    const AabtConfig& config() const { return config_; }
    std::vector<InversePatchEmbedding>& inverse() { return inverse_; }
    DecodeHead& head() { return head_; }
    const DecodeHead& head() const { return head_; }
    void collect(nn::ParamList& out, const std::string& prefix = "") const;

private:
    AabtConfig config_;
    std::vector<std::vector<nn::TransformerBlock>> blocks_;
    std::vector<InversePatchEmbedding> inverse_;
    DecodeHead head_;
};

enum class Mode { ToFeature, ToFc };

// One AABT: encoder blocks, then inverse patch embedding straight into the
// decode head.
class Aabt {
public:
    Aabt() = default;
    Aabt(AabtConfig config, bool constrained_head, nn::Rng& rng);

    FeatureMap to_feature(const Tensor& input) const { return encoder_.encode(input); }
    Tensor decode(const FeatureMap& features) const { return decoder_.decode(features); }
    Tensor to_fc(const Tensor& input) const { return decode(to_feature(input)); }
    std::variant<FeatureMap, Tensor> forward(const Tensor& input, Mode mode) const;

    AabtEncoder& encoder() { return encoder_; }
    AabtDecoder& decoder() { return decoder_; }
    const AabtConfig& config() const { return encoder_.config(); }
    void collect(nn::ParamList& out, const std::string& prefix = "") const;

private:
    AabtEncoder encoder_;
    AabtDecoder decoder_;
};

}  // namespace gcan::aabt
