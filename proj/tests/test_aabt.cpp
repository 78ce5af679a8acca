#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gcan/aabt.hpp"
#include "gcan/error.hpp"
#include "support/gradcheck.hpp"

using namespace gcan;
using namespace gcan::aabt;
using ad::Tensor;

namespace {

Tensor random_square(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n) * n);
    for (double& x : v) x = d(rng);
    return Tensor::constant({n, n}, std::move(v));
}

AtlasPtr toy_atlas() { return make_atlas(AtlasPartition({{"N1", 3}, {"N2", 5}})); }

AabtConfig toy_config(int depth) {
    AabtConfig c;
    c.atlas = toy_atlas();
    c.depth = depth;
    c.embed_dim = 8;
    c.num_heads = 2;
    c.patch_width = 4;
    c.mlp_ratio = 2.0;
    return c;
}

void fill(Tensor t, double v) {
    auto w = t.mutable_values();
    std::fill(w.begin(), w.end(), v);
}

void zero_params(const nn::ParamList& params) {
    for (const auto& p : params) fill(p.tensor, 0.0);
}

// Solves A X = B for square A (Gauss-Jordan with partial pivoting), row-major.
std::vector<double> solve(std::vector<double> a, std::vector<double> b, int n, int rhs) {
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
        for (int k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
        for (int k = 0; k < rhs; ++k) std::swap(b[c * rhs + k], b[piv * rhs + k]);
        const double d = a[c * n + c];
        for (int k = 0; k < n; ++k) a[c * n + k] /= d;
        for (int k = 0; k < rhs; ++k) b[c * rhs + k] /= d;
        for (int r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r * n + c];
            for (int k = 0; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
            for (int k = 0; k < rhs; ++k) b[r * rhs + k] -= f * b[c * rhs + k];
        }
    }
    return b;
}

}  // namespace

TEST_CASE("segment on the default atlas") {
    const auto atlas = AtlasPartition::default_partition();
    std::mt19937_64 rng(1);
    const Tensor input = random_square(160, rng);
    const auto slabs = segment(input, atlas, 16);
    REQUIRE(slabs.size() == 6);
    const int rows[] = {18, 32, 34, 22, 21, 33};
    int total = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(slabs[i].network_index == static_cast<int>(i));
        CHECK(slabs[i].values.shape() == ad::Shape{rows[i], 160});
        total += rows[i];
    }
    CHECK(total == 160);
    std::vector<Tensor> parts;
    for (const auto& s : slabs) parts.push_back(s.values);
    const Tensor stacked = ad::concat_rows(parts);
    CHECK(std::equal(stacked.values().begin(), stacked.values().end(), input.values().begin()));
    CHECK_THROWS_AS(segment(random_square(12, rng), atlas, 16), ShapeError);
}

TEST_CASE("segment pads columns when N is not a multiple of the patch width") {
    const AtlasPartition atlas({{"ONLY", 10}});
    std::mt19937_64 rng(2);
    const Tensor input = random_square(10, rng);
    const auto slabs = segment(input, atlas, 16);
    REQUIRE(slabs.size() == 1);
    REQUIRE(slabs[0].values.shape() == ad::Shape{10, 16});
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 16; ++c) {
            const double v = slabs[0].values.values()[static_cast<std::size_t>(r) * 16 + c];
            if (c >= 10)
                CHECK(v == 0.0);
            else
                CHECK(v == input.values()[static_cast<std::size_t>(r) * 10 + c]);
        }
}

TEST_CASE("patch_embed token counts, linearity and locality") {
    AabtConfig cfg;
    cfg.atlas = make_atlas(AtlasPartition::default_partition());
    cfg.embed_dim = 32;
    cfg.num_heads = 4;
    cfg.depth = 1;
    nn::Rng rng(3);
    AabtEncoder enc(cfg, rng);
    std::mt19937_64 r(4);
    const auto slabs = segment(random_square(160, r), *cfg.atlas, 16);
    const Tensor tokens = patch_embed(slabs[0], cfg, enc.embeddings()[0]);
    CHECK(tokens.shape() == ad::Shape{10, 32});

    // Two slabs that differ only inside patch 3.
    std::vector<double> a(slabs[0].values.values().begin(), slabs[0].values.values().end());
    std::vector<double> b = a;
    for (int row = 0; row < 18; ++row) b[static_cast<std::size_t>(row) * 160 + 3 * 16 + 5] += 0.7;
    const Tensor ta = patch_embed({0, Tensor::constant({18, 160}, a)}, cfg, enc.embeddings()[0]);
    const Tensor tb = patch_embed({0, Tensor::constant({18, 160}, b)}, cfg, enc.embeddings()[0]);
    for (int t = 0; t < 10; ++t) {
        bool same = true;
        for (int d = 0; d < 32; ++d)
            same = same && ta.values()[static_cast<std::size_t>(t) * 32 + d] == tb.values()[static_cast<std::size_t>(t) * 32 + d];
        CHECK(same == (t != 3));
    }

    nn::ParamList params;
    enc.embeddings()[0].collect(params, "e");
    zero_params(params);
    const Tensor z = patch_embed({0, Tensor::zeros({18, 160})}, cfg, enc.embeddings()[0]);
    CHECK(std::all_of(z.values().begin(), z.values().end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("encode_tokens: empty stack is the identity and attention is permutation equivariant") {
    nn::Rng rng(5);
    std::vector<nn::TransformerBlock> blocks;
    blocks.emplace_back(8, 2, 2.0, rng);
    blocks.emplace_back(8, 2, 2.0, rng);
    std::mt19937_64 r(6);
    std::uniform_real_distribution<double> d(-1, 1);
    std::vector<double> v(5 * 8);
    for (double& x : v) x = d(r);
    const Tensor x = Tensor::constant({5, 8}, v);
    const Tensor same = encode_tokens(x, {});
    CHECK(std::equal(same.values().begin(), same.values().end(), x.values().begin()));

    const int perm[] = {3, 0, 4, 1, 2};
    std::vector<double> pv(v.size());
    for (int t = 0; t < 5; ++t) std::copy_n(v.begin() + perm[t] * 8, 8, pv.begin() + t * 8);
    const Tensor y = encode_tokens(x, blocks);
    const Tensor yp = encode_tokens(Tensor::constant({5, 8}, pv), blocks);
    for (int t = 0; t < 5; ++t)
        for (int k = 0; k < 8; ++k)
            CHECK(yp.values()[static_cast<std::size_t>(t) * 8 + k] ==
                  doctest::Approx(y.values()[static_cast<std::size_t>(perm[t]) * 8 + k]).epsilon(1e-12));
}

TEST_CASE("encode_tokens on a single token matches a hand-computed block") {
    // One token, dim 2, one head. All linear weights 0.1, biases 0.05,
    // layer-norm identity affine, MLP hidden width 2.
    nn::Rng rng(7);
    std::vector<nn::TransformerBlock> blocks;
    blocks.emplace_back(2, 1, 1.0, rng);
    nn::ParamList params;
    blocks[0].collect(params, "");
    for (const auto& p : params) {
        if (p.name.find("gamma") != std::string::npos)
            fill(p.tensor, 1.0);
        else if (p.name.find("beta") != std::string::npos)
            fill(p.tensor, 0.0);
        else if (p.name.find("bias") != std::string::npos)
            fill(p.tensor, 0.05);
        else
            fill(p.tensor, 0.1);
    }
    const double x0 = 0.3, x1 = -0.5;
    const Tensor out = encode_tokens(Tensor::constant({1, 2}, {x0, x1}), blocks);

    auto ln = [](double a, double b) {
        const double m = 0.5 * (a + b);
        const double var = 0.5 * ((a - m) * (a - m) + (b - m) * (b - m));
        const double s = std::sqrt(var + 1e-5);
        return std::pair{(a - m) / s, (b - m) / s};
    };
    auto lin = [](double a, double b) { return 0.1 * a + 0.1 * b + 0.05; };
    // Softmax over one key is 1, so attention returns the value projection.
    auto [n0, n1] = ln(x0, x1);
    const double v = lin(n0, n1);
    const double attn = lin(v, v);
    const double h0 = x0 + attn, h1 = x1 + attn;
    auto [m0, m1] = ln(h0, h1);
    auto gelu = [](double z) { return 0.5 * z * (1 + std::tanh(0.7978845608028654 * (z + 0.044715 * z * z * z))); };
    const double hidden = gelu(lin(m0, m1));
    const double mlp = lin(hidden, hidden);
    CHECK(out.values()[0] == doctest::Approx(h0 + mlp).epsilon(1e-12));
    CHECK(out.values()[1] == doctest::Approx(h1 + mlp).epsilon(1e-12));
    CHECK(std::isfinite(out.values()[0]));
}

TEST_CASE("inverse_patch_embed inverts a full-rank patch projection") {
    AabtConfig cfg = toy_config(0);
    cfg.embed_dim = 24;
    cfg.num_heads = 1;
    nn::Rng rng(8);
    AabtEncoder enc(cfg, rng);
    AabtDecoder dec(cfg, true, rng);
    std::mt19937_64 r(9);
    const Tensor input = random_square(8, r);
    const auto slabs = segment(input, *cfg.atlas, cfg.patch_width);
    for (int net = 0; net < 2; ++net) {
        auto& e = enc.embeddings()[static_cast<std::size_t>(net)];
        auto& inv = dec.inverse()[static_cast<std::size_t>(net)];
        fill(e.position, 0.0);
        fill(e.proj.bias, 0.0);
        fill(inv.proj.bias, 0.0);
        // Pseudo-inverse of W (flat x embed): pinv = W^T (W W^T)^{-1}.
        const int flat = e.proj.in_features(), dim = e.proj.out_features();
        const auto w = e.proj.weight.values();
        std::vector<double> wwt(static_cast<std::size_t>(flat) * flat, 0.0);
        for (int i = 0; i < flat; ++i)
            for (int j = 0; j < flat; ++j)
                for (int k = 0; k < dim; ++k) wwt[i * flat + j] += w[i * dim + k] * w[j * dim + k];
        std::vector<double> eye(static_cast<std::size_t>(flat) * flat, 0.0);
        for (int i = 0; i < flat; ++i) eye[i * flat + i] = 1.0;
        const auto inv_wwt = solve(wwt, eye, flat, flat);
        auto pinv = inv.proj.weight.mutable_values();  // dim x flat
        for (int k = 0; k < dim; ++k)
            for (int j = 0; j < flat; ++j) {
                double s = 0.0;
                for (int i = 0; i < flat; ++i) s += w[i * dim + k] * inv_wwt[i * flat + j];
                pinv[k * flat + j] = s;
            }
        const Tensor tokens = patch_embed(slabs[static_cast<std::size_t>(net)], cfg, e);
        const Tensor back = inverse_patch_embed(tokens, cfg.atlas->region_count(net), cfg, inv);
        REQUIRE(back.shape() == ad::Shape{cfg.atlas->region_count(net), 8});
        const Tensor expected = ad::slice_rows(input, cfg.atlas->offset(net), cfg.atlas->offset(net) + cfg.atlas->region_count(net));
        for (std::size_t i = 0; i < back.numel(); ++i) CHECK(std::abs(back.values()[i] - expected.values()[i]) < 1e-5);
    }
}

TEST_CASE("inverse_patch_embed shapes and zero path") {
    AabtConfig cfg;
    cfg.atlas = make_atlas(AtlasPartition::default_partition());
    cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.depth = 0;
    nn::Rng rng(10);
    AabtDecoder dec(cfg, true, rng);
    const Tensor tokens = Tensor::zeros({10, 16});
    const Tensor slab = inverse_patch_embed(tokens, 32, cfg, dec.inverse()[1]);
    CHECK(slab.shape() == ad::Shape{32, 160});
    CHECK(std::all_of(slab.values().begin(), slab.values().end(), [](double v) { return v == 0.0; }));
    CHECK_THROWS_AS(inverse_patch_embed(Tensor::zeros({9, 16}), 32, cfg, dec.inverse()[1]), ShapeError);
}

TEST_CASE("decode_head always yields a valid FC matrix") {
    nn::Rng rng(11);
    DecodeHead head(true, rng);
    std::mt19937_64 r(12);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor out = decode_head(ad::scale(random_square(9, r), 5.0), head);
        const Matrix m = out.to_matrix();
        for (std::size_t i = 0; i < 9; ++i) {
            CHECK(m(i, i) == 1.0);
            for (std::size_t j = 0; j < 9; ++j) {
                CHECK(m(i, j) == m(j, i));
                CHECK(std::abs(m(i, j)) <= 1.0);
            }
        }
    }
    nn::ParamList params;
    head.collect(params, "head");
    zero_params(params);
    const Matrix z = decode_head(Tensor::zeros({6, 6}), head).to_matrix();
    CHECK(z == Matrix::identity(6));
}

TEST_CASE("decode_head output depends only on entries within Chebyshev distance 2") {
    nn::Rng rng(13);
    DecodeHead head(true, rng);
    std::mt19937_64 r(14);
    const int n = 12;
    const Tensor base = random_square(n, r);
    const Matrix y0 = decode_head(base, head).to_matrix();
    std::vector<double> v(base.values().begin(), base.values().end());
    const int pi = 9, pj = 10;
    v[static_cast<std::size_t>(pi) * n + pj] += 0.8;
    const Matrix y1 = decode_head(Tensor::constant({n, n}, v), head).to_matrix();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const bool near = (std::max(std::abs(i - pi), std::abs(j - pj)) <= 2) ||
                              (std::max(std::abs(j - pi), std::abs(i - pj)) <= 2);
            if (!near) CHECK(y0(i, j) == y1(i, j));
        }
    CHECK(y0(2, 2) == y1(2, 2));
    CHECK(y0(pi, pj) != y1(pi, pj));
}

TEST_CASE("aabt forward modes agree and produce FC-shaped output") {
    AabtConfig cfg = toy_config(2);
    nn::Rng rng(15);
    Aabt model(cfg, true, rng);
    std::mt19937_64 r(16);
    const Tensor input = random_square(8, r);
    const Tensor fc = model.to_fc(input);
    CHECK(fc.shape() == ad::Shape{8, 8});
    const FeatureMap fm = model.to_feature(input);
    CHECK(fm.tokens.size() == 2);
    CHECK(fm.total_tokens() == 2 * 2);
    const Tensor again = model.decode(fm);
    CHECK(std::equal(fc.values().begin(), fc.values().end(), again.values().begin()));
    const auto via_variant = std::get<Tensor>(model.forward(input, Mode::ToFc));
    CHECK(std::equal(fc.values().begin(), fc.values().end(), via_variant.values().begin()));
    CHECK(std::holds_alternative<FeatureMap>(model.forward(input, Mode::ToFeature)));
}

TEST_CASE("depth-0 AABT with identity embed/inverse pairs reduces to the decode head") {
    AabtConfig cfg = toy_config(0);
    cfg.atlas = make_atlas(AtlasPartition({{"N1", 4}, {"N2", 4}}));
    cfg.embed_dim = 16;  // = n_i * p_w
    cfg.num_heads = 1;
    nn::Rng rng(17);
    Aabt model(cfg, true, rng);
    for (int net = 0; net < 2; ++net) {
        auto& e = model.encoder().embeddings()[static_cast<std::size_t>(net)];
        auto& inv = model.decoder().inverse()[static_cast<std::size_t>(net)];
        fill(e.position, 0.0);
        fill(e.proj.bias, 0.0);
        fill(inv.proj.bias, 0.0);
        fill(e.proj.weight, 0.0);
        fill(inv.proj.weight, 0.0);
        for (int k = 0; k < 16; ++k) {
            e.proj.weight.mutable_values()[static_cast<std::size_t>(k) * 16 + k] = 1.0;
            inv.proj.weight.mutable_values()[static_cast<std::size_t>(k) * 16 + k] = 1.0;
        }
    }
    std::mt19937_64 r(18);
    const Tensor input = random_square(8, r);
    const Tensor a = model.to_fc(input);
    const Tensor b = decode_head(input, model.decoder().head());
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-13));
}

TEST_CASE("aabt to_fc gradients match central finite differences") {
    AabtConfig cfg = toy_config(2);
    nn::Rng rng(19);
    Aabt model(cfg, true, rng);
    std::mt19937_64 r(20);
    const Tensor input = random_square(8, r);
    nn::ParamList params;
    model.collect(params);
    const auto report = testing::check_gradients([&] { return ad::sum(model.to_fc(input)); }, params, 40, 21);
    for (const auto& s : report.samples) {
        INFO(s.name << "[" << s.index << "] analytic=" << s.analytic << " numeric=" << s.numeric);
        CHECK(s.rel_error < 1e-4);
    }
}

TEST_CASE("parameter names follow the network/block layout") {
    AabtConfig cfg = toy_config(1);
    nn::Rng rng(22);
    Aabt model(cfg, true, rng);
    nn::ParamList params;
    model.collect(params);
    auto has = [&](const std::string& n) {
        return std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.name == n; });
    };
    CHECK(has("net1.block0.attn.q.weight"));
    CHECK(has("net0.patch.pos"));
    CHECK(has("net1.inverse.proj.weight"));
    CHECK(has("head.conv2.bias"));
}
