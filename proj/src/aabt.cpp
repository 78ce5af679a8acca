#include "gcan/aabt.hpp"

#include "gcan/error.hpp"

namespace gcan::aabt {

namespace {

std::string net_prefix(const std::string& prefix, int i) { return nn::join(prefix, "net" + std::to_string(i)); }

std::vector<std::vector<nn::TransformerBlock>> make_blocks(const AabtConfig& c, nn::Rng& rng) {
    std::vector<std::vector<nn::TransformerBlock>> blocks(static_cast<std::size_t>(c.atlas->network_count()));
    for (auto& stack : blocks)
        for (int d = 0; d < c.depth; ++d) stack.emplace_back(c.embed_dim, c.num_heads, c.mlp_ratio, rng);
    return blocks;
}

void collect_blocks(const std::vector<nn::TransformerBlock>& stack, nn::ParamList& out, const std::string& prefix) {
    for (std::size_t d = 0; d < stack.size(); ++d) stack[d].collect(out, nn::join(prefix, "block" + std::to_string(d)));
}

}  // namespace

void AabtConfig::validate() const {
    if (!atlas) throw ParameterError("AABT config needs an atlas");
    if (depth < 0) throw ParameterError("AABT depth must be non-negative");
    if (embed_dim <= 0 || num_heads <= 0) throw ParameterError("AABT embed_dim and num_heads must be positive");
    if (embed_dim % num_heads != 0)
        throw ParameterError("AABT embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                             std::to_string(num_heads) + " heads");
    if (patch_width < 1) throw ParameterError("AABT patch width must be at least 1");
    if (!(mlp_ratio > 0.0)) throw ParameterError("AABT mlp_ratio must be positive");
}

int AabtConfig::tokens_per_network() const { return (regions() + patch_width - 1) / patch_width; }

int FeatureMap::total_tokens() const {
    int n = 0;
    for (const auto& t : tokens) n += t.dim(0);
    return n;
}

Tensor FeatureMap::concatenated() const { return ad::concat_rows(tokens); }

void PatchEmbedding::collect(nn::ParamList& out, const std::string& prefix) const {
    proj.collect(out, nn::join(prefix, "proj"));
    out.push_back({nn::join(prefix, "pos"), position});
}

void InversePatchEmbedding::collect(nn::ParamList& out, const std::string& prefix) const {
    proj.collect(out, nn::join(prefix, "proj"));
}

DecodeHead::DecodeHead(bool constrained_, nn::Rng& rng)
    : conv1(1, 8, 3, 1, 1, true, rng), conv2(8, 1, 3, 1, 1, true, rng), constrained(constrained_) {}

void DecodeHead::collect(nn::ParamList& out, const std::string& prefix) const {
    conv1.collect(out, nn::join(prefix, "conv1"));
    conv2.collect(out, nn::join(prefix, "conv2"));
}

std::vector<NetworkSlab> segment(const Tensor& input, const AtlasPartition& atlas, int patch_width) {
    const int n = atlas.total_regions();
    if (input.rank() != 2 || input.dim(0) != n || input.dim(1) != n)
        throw ShapeError("segment: input " + ad::shape_string(input.shape()) + " does not match atlas of " +
                         std::to_string(n) + " regions");
    if (patch_width < 1) throw ParameterError("segment: patch width must be at least 1");
    const int padded = (n + patch_width - 1) / patch_width * patch_width;
    std::vector<NetworkSlab> slabs;
    slabs.reserve(static_cast<std::size_t>(atlas.network_count()));
    for (int i = 0; i < atlas.network_count(); ++i) {
        const int r0 = atlas.offset(i);
        const Tensor rows = ad::slice_rows(input, r0, r0 + atlas.region_count(i));
        slabs.push_back({i, ad::pad_cols(rows, padded)});
    }
    return slabs;
}

Tensor patch_embed(const NetworkSlab& slab, const AabtConfig& config, const PatchEmbedding& params) {
    if (slab.values.dim(1) % config.patch_width != 0)
        throw ShapeError("patch_embed: slab width " + std::to_string(slab.values.dim(1)) + " not divisible by " +
                         std::to_string(config.patch_width));
    const Tensor patches = ad::to_patches(slab.values, config.patch_width);
    if (patches.dim(1) != params.proj.in_features())
        throw ShapeError("patch_embed: patch size " + std::to_string(patches.dim(1)) + " does not match projection input " +
                         std::to_string(params.proj.in_features()));
    return ad::add(params.proj.forward(patches), params.position);
}

Tensor encode_tokens(const Tensor& tokens, std::span<const nn::TransformerBlock> blocks) {
    Tensor x = tokens;
    for (const auto& b : blocks) x = b.forward(x);
    return x;
}

Tensor inverse_patch_embed(const Tensor& tokens, int rows, const AabtConfig& config, const InversePatchEmbedding& params) {
    if (tokens.dim(0) != config.tokens_per_network())
        throw ShapeError("inverse_patch_embed: expected " + std::to_string(config.tokens_per_network()) + " tokens, got " +
                         std::to_string(tokens.dim(0)));
    const Tensor patches = params.proj.forward(tokens);
    const Tensor slab = ad::from_patches(patches, rows, config.patch_width);
    if (slab.dim(1) == config.regions()) return slab;
    return ad::slice_cols(slab, 0, config.regions());
}

Tensor decode_head(const Tensor& raw, const DecodeHead& head) {
    if (raw.rank() != 2 || raw.dim(0) != raw.dim(1)) throw ShapeError("decode_head: input must be square");
    const int n = raw.dim(0);
    const Tensor image = ad::reshape(raw, {1, n, n});
    const Tensor hidden = ad::gelu(head.conv1.forward(image));
    const Tensor out = ad::reshape(head.conv2.forward(hidden), {n, n});
    if (!head.constrained) return out;
    return ad::set_diagonal(ad::symmetrize(ad::tanh(out)), 1.0);
}

// ---- encoder ---------------------------------------------------------------

AabtEncoder::AabtEncoder(AabtConfig config, nn::Rng& rng) : config_(std::move(config)) {
    config_.validate();
    const int tokens = config_.tokens_per_network();
    for (int i = 0; i < config_.atlas->network_count(); ++i) {
        PatchEmbedding e;
        e.proj = nn::Linear(config_.atlas->region_count(i) * config_.patch_width, config_.embed_dim, rng);
        e.position = nn::normal_param({tokens, config_.embed_dim}, 0.02, rng);
        embeds_.push_back(std::move(e));
    }
    blocks_ = make_blocks(config_, rng);
}

FeatureMap AabtEncoder::encode(const Tensor& input) const {
    FeatureMap fm;
    fm.regions = config_.regions();
    fm.patch_width = config_.patch_width;
    fm.atlas = config_.atlas;
    for (const NetworkSlab& slab : segment(input, *config_.atlas, config_.patch_width)) {
        const auto i = static_cast<std::size_t>(slab.network_index);
        fm.tokens.push_back(encode_tokens(patch_embed(slab, config_, embeds_[i]), blocks_[i]));
    }
    return fm;
}

void AabtEncoder::collect(nn::ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < embeds_.size(); ++i) {
        const std::string p = net_prefix(prefix, static_cast<int>(i));
        embeds_[i].collect(out, nn::join(p, "patch"));
        collect_blocks(blocks_[i], out, p);
    }
}

// ---- decoder ---------------------------------------------------------------

AabtDecoder::AabtDecoder(AabtConfig config, bool constrained_head, nn::Rng& rng) : config_(std::move(config)) {
    config_.validate();
    blocks_ = make_blocks(config_, rng);
    for (int i = 0; i < config_.atlas->network_count(); ++i)
        inverse_.push_back({nn::Linear(config_.embed_dim, config_.atlas->region_count(i) * config_.patch_width, rng)});
    head_ = DecodeHead(constrained_head, rng);
}

Tensor AabtDecoder::decode_raw(const FeatureMap& features) const {
    const auto networks = static_cast<std::size_t>(config_.atlas->network_count());
    if (features.tokens.size() != networks)
        throw ShapeError("decode: feature map has " + std::to_string(features.tokens.size()) + " networks, expected " +
                         std::to_string(networks));
    std::vector<Tensor> slabs;
    slabs.reserve(networks);
    for (std::size_t i = 0; i < networks; ++i) {
        const Tensor tokens = encode_tokens(features.tokens[i], blocks_[i]);
        slabs.push_back(inverse_patch_embed(tokens, config_.atlas->region_count(static_cast<int>(i)), config_, inverse_[i]));
    }
    return ad::concat_rows(slabs);
}

Tensor AabtDecoder::decode(const FeatureMap& features) const { return decode_head(decode_raw(features), head_); }

void AabtDecoder::collect(nn::ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < inverse_.size(); ++i) {
        const std::string p = net_prefix(prefix, static_cast<int>(i));
        collect_blocks(blocks_[i], out, nn::join(p, "dec"));
        inverse_[i].collect(out, nn::join(p, "inverse"));
    }
    head_.collect(out, nn::join(prefix, "head"));
}

// ---- full AABT -------------------------------------------------------------

Aabt::Aabt(AabtConfig config, bool constrained_head, nn::Rng& rng) : encoder_(config, rng) {
    AabtConfig mirror = config;
    mirror.depth = 0;
    decoder_ = AabtDecoder(mirror, constrained_head, rng);
}

std::variant<FeatureMap, Tensor> Aabt::forward(const Tensor& input, Mode mode) const {
    if (mode == Mode::ToFeature) return to_feature(input);
    return to_fc(input);
}

void Aabt::collect(nn::ParamList& out, const std::string& prefix) const {
    encoder_.collect(out, prefix);
    decoder_.collect(out, prefix);
}

}  // namespace gcan::aabt
