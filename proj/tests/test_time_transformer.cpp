#include "test_util.hpp"

#include "ttae/supervised.hpp"
#include "ttae/time_transformer.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>

using namespace ttae;
using namespace ttae::testing;

namespace {

TimeTransformerConfig small_config(std::int64_t c, std::int64_t heads = 2, std::int64_t head_size = 3) {
    TimeTransformerConfig cfg;
    cfg.channels = c;
    cfg.num_heads = heads;
    cfg.head_size = head_size;
    return cfg;
}

/// Single-head, c = 1 cross attention with scalar projections and output weight wo.
CrossAttentionParams scalar_fusion(double eq, double ek, double ev, double dq, double dk, double dv, double wo) {
    auto make = [&](double q, double k, double v) {
        AttentionParams p;
        p.num_heads = 1;
        p.head_size = 1;
        p.query = {Tensor({1, 1}, {static_cast<Real>(q)}), std::nullopt};
        p.key = {Tensor({1, 1}, {static_cast<Real>(k)}), std::nullopt};
        p.value = {Tensor({1, 1}, {static_cast<Real>(v)}), std::nullopt};
        p.output = {Tensor({1, 1}, {static_cast<Real>(wo)}), std::nullopt};
        return p;
    };
    return {make(eq, ek, ev), make(dq, dk, dv)};
}

/// out_i = q_i + wo * sum_k softmax_k(s * (q_i Wq)(kv_k Wk)) * (kv_k Wv), t = 2, c = 1.
std::array<double, 2> fusion_oracle(const std::array<double, 2>& q, const std::array<double, 2>& kv, double wq,
                                    double wk, double wv, double wo, double s) {
    std::array<double, 2> out{};
    for (int i = 0; i < 2; ++i) {
        const double s0 = s * (q[i] * wq) * (kv[0] * wk);
        const double s1 = s * (q[i] * wq) * (kv[1] * wk);
        const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
        out[static_cast<std::size_t>(i)] = q[i] + wo * (a0 * kv[0] * wv + (1 - a0) * kv[1] * wv);
    }
    return out;
}

}  // namespace

TEST(Affinity, ZeroQueryProjectionIsUniform) {
    Rng rng(1);
    AttentionParams p = init_attention(rng, 3, 2, 4, false);
    p.query.weight = Tensor::zeros(p.query.weight.shape());
    const Tensor a = affinity(uniform(rng, {2, 6, 3}), uniform(rng, {2, 6, 3}), p, 0.5f);
    for (std::int64_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], 1.0 / 6, 1e-6);
}

TEST(Affinity, SingleKeyIsOne) {
    Rng rng(2);
    const AttentionParams p = init_attention(rng, 3, 2, 4, false);
    const Tensor a = affinity(uniform(rng, {2, 1, 3}), uniform(rng, {2, 1, 3}), p, 0.5f);
    for (std::int64_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], 1);
}

TEST(Affinity, UnrolledTwoStepOracle) {
    const CrossAttentionParams p = scalar_fusion(0.7, -1.3, 0.4, 0.9, 0.2, -0.6, 1.0);
    const Tensor l({1, 2, 1}, {0.25f, -0.8f});
    const Tensor g({1, 2, 1}, {1.1f, 0.35f});
    const Tensor a = affinity(l, g, p.to_local, 1.0f);
    for (int i = 0; i < 2; ++i) {
        const double s0 = (at(l, i) * 0.7) * (at(g, 0) * -1.3);
        const double s1 = (at(l, i) * 0.7) * (at(g, 1) * -1.3);
        EXPECT_NEAR(at(a, i * 2), std::exp(s0) / (std::exp(s0) + std::exp(s1)), 1e-6);
        EXPECT_NEAR(at(a, i * 2 + 1), std::exp(s1) / (std::exp(s0) + std::exp(s1)), 1e-6);
    }
}

TEST(Fusion, LocalMatchesComposedOracle) {
    const double wo = 1.0;
    const CrossAttentionParams p = scalar_fusion(0.7, -1.3, 0.4, 0.9, 0.2, -0.6, wo);
    const std::array<double, 2> l{0.25, -0.8}, g{1.1, 0.35};
    const Tensor y = fuse_local(Tensor({1, 2, 1}, {0.25f, -0.8f}), Tensor({1, 2, 1}, {1.1f, 0.35f}), p, 1.0f);
    const auto expected = fusion_oracle(l, g, 0.7, -1.3, 0.4, wo, 1.0);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(at(y, i), expected[static_cast<std::size_t>(i)], 1e-6);
}

TEST(Fusion, GlobalMatchesComposedOracle) {
    const double wo = 1.0;
    const CrossAttentionParams p = scalar_fusion(0.7, -1.3, 0.4, 0.9, 0.2, -0.6, wo);
    const std::array<double, 2> l{0.25, -0.8}, g{1.1, 0.35};
    const Tensor y = fuse_global(Tensor({1, 2, 1}, {1.1f, 0.35f}), Tensor({1, 2, 1}, {0.25f, -0.8f}), p, 1.0f);
    const auto expected = fusion_oracle(g, l, 0.9, 0.2, -0.6, wo, 1.0);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(at(y, i), expected[static_cast<std::size_t>(i)], 1e-6);
}

TEST(Fusion, OutputProjectionAndScaleEnterLinearly) {
    const CrossAttentionParams p = scalar_fusion(0.7, -1.3, 0.4, 0.9, 0.2, -0.6, -0.45);
    const std::array<double, 2> l{0.25, -0.8}, g{1.1, 0.35};
    const Tensor y = fuse_local(Tensor({1, 2, 1}, {0.25f, -0.8f}), Tensor({1, 2, 1}, {1.1f, 0.35f}), p, 0.5f);
    const auto expected = fusion_oracle(l, g, 0.7, -1.3, 0.4, -0.45, 0.5);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(at(y, i), expected[static_cast<std::size_t>(i)], 1e-6);
}

TEST(Fusion, ZeroValueProjectionIsExactIdentity) {
    Rng rng(3);
    const TimeTransformerConfig cfg = small_config(4);
    CrossAttentionParams p = init_cross_attention(rng, cfg);
    p.to_local.output.weight = uniform(rng, p.to_local.output.weight.shape());
    p.to_global.output.weight = uniform(rng, p.to_global.output.weight.shape());
    p.to_local.value.weight = Tensor::zeros(p.to_local.value.weight.shape());
    p.to_global.value.weight = Tensor::zeros(p.to_global.value.weight.shape());
    const Tensor l = uniform(rng, {2, 5, 4});
    const Tensor g = uniform(rng, {2, 5, 4});
    EXPECT_TRUE(bit_equal(fuse_local(l, g, p, cfg.fusion_scale()), l));
    EXPECT_TRUE(bit_equal(fuse_global(g, l, p, cfg.fusion_scale()), g));
}

TEST(Fusion, ZeroGlobalBranchLeavesLocalUnchanged) {
    Rng rng(4);
    const TimeTransformerConfig cfg = small_config(4);
    CrossAttentionParams p = init_cross_attention(rng, cfg);
    p.to_local.output.weight = uniform(rng, p.to_local.output.weight.shape());
    const Tensor l = uniform(rng, {2, 5, 4});
    EXPECT_TRUE(bit_equal(fuse_local(l, Tensor::zeros({2, 5, 4}), p, cfg.fusion_scale()), l));
}

TEST(Fusion, FreshInitializationIsIdentity) {
    Rng rng(5);
    const TimeTransformerConfig cfg = small_config(3);
    const CrossAttentionParams p = init_cross_attention(rng, cfg);
    const Tensor l = uniform(rng, {1, 4, 3});
    EXPECT_TRUE(bit_equal(fuse_local(l, uniform(rng, {1, 4, 3}), p, cfg.fusion_scale()), l));
}

TEST(Fusion, DirectionsAgreeUnderParameterSwap) {
    Rng rng(6);
    const TimeTransformerConfig cfg = small_config(3);
    CrossAttentionParams p = init_cross_attention(rng, cfg);
    p.to_local.output.weight = uniform(rng, p.to_local.output.weight.shape());
    p.to_global = p.to_local;
    const Tensor x = uniform(rng, {2, 4, 3});
    EXPECT_TRUE(bit_equal(fuse_local(x, x, p, cfg.fusion_scale()), fuse_global(x, x, p, cfg.fusion_scale())));
}

TEST(Fusion, AffinityRowsAreDistributionsInEveryBlock) {
    Rng rng(7);
    const TimeTransformerConfig cfg = small_config(3);
    const RefinerParams r = init_refiner(rng, cfg);
    BranchState state{uniform(rng, {2, 6, 3}), uniform(rng, {2, 6, 3})};
    for (const auto& block : r.blocks) {
        for (const Tensor& a : {affinity(state.local, state.global, block.fusion.to_local, cfg.fusion_scale()),
                                affinity(state.global, state.local, block.fusion.to_global, cfg.fusion_scale())}) {
            for (std::int64_t row = 0; row < a.size() / 6; ++row) {
                double s = 0;
                for (int k = 0; k < 6; ++k) {
                    EXPECT_GE(a[row * 6 + k], 0);
                    s += a[row * 6 + k];
                }
                EXPECT_NEAR(s, 1, 1e-6);
            }
        }
        state = block_forward(state, block, cfg);
    }
}

TEST(Block, DilationsAreOneThenFour) {
    Rng rng(8);
    TimeTransformerConfig cfg = small_config(2);
    cfg.num_blocks = 3;
    const RefinerParams r = init_refiner(rng, cfg);
    EXPECT_EQ(r.blocks[0].tcn.conv.dilation, 1);
    EXPECT_EQ(r.blocks[1].tcn.conv.dilation, 4);
    EXPECT_EQ(r.blocks[2].tcn.conv.dilation, 16);
    for (const auto& b : r.blocks) {
        EXPECT_TRUE(b.tcn.conv.causal);
        EXPECT_EQ(b.tcn.conv.kernel_size, 4);
    }
}

TEST(Block, PreservesShape) {
    Rng rng(9);
    const TimeTransformerConfig cfg = small_config(5);
    const TimeTransformerBlockParams b = init_block(rng, cfg, 0);
    const BranchState out = block_forward({uniform(rng, {3, 8, 5}), uniform(rng, {3, 8, 5})}, b, cfg);
    EXPECT_EQ(out.local.shape(), (Shape{3, 8, 5}));
    EXPECT_EQ(out.global.shape(), (Shape{3, 8, 5}));
}

TEST(Block, ZeroFusionValuesLeaveIndependentBranches) {
    Rng rng(10);
    for (bool residual : {true, false}) {
        TimeTransformerConfig cfg = small_config(3);
        cfg.sublayer_residual = residual;
        TimeTransformerBlockParams b = init_block(rng, cfg, 1);
        b.fusion.to_local.output.weight = uniform(rng, b.fusion.to_local.output.weight.shape());
        b.fusion.to_global.output.weight = uniform(rng, b.fusion.to_global.output.weight.shape());
        b.fusion.to_local.value.weight = Tensor::zeros(b.fusion.to_local.value.weight.shape());
        b.fusion.to_global.value.weight = Tensor::zeros(b.fusion.to_global.value.weight.shape());
        const Tensor l = uniform(rng, {2, 6, 3});
        const Tensor g = uniform(rng, {2, 6, 3});
        const BranchState out = block_forward({l, g}, b, cfg);
        EXPECT_TRUE(bit_equal(out.local, tcn_layer_forward(l, b.tcn, cfg)));
        EXPECT_TRUE(bit_equal(out.global, transformer_block_forward(g, b.trans, cfg)));
    }
}

TEST(Block, LiteralPostNormSublayers) {
    Rng rng(11);
    TimeTransformerConfig cfg = small_config(3);
    cfg.sublayer_residual = false;
    const TimeTransformerBlockParams b = init_block(rng, cfg, 0);
    const Tensor x = uniform(rng, {2, 5, 3});
    EXPECT_TRUE(bit_equal(tcn_layer_forward(x, b.tcn, cfg), layer_norm_forward(conv1d_forward(x, b.tcn.conv), b.tcn.norm)));
    const Tensor h = layer_norm_forward(add(x, mhsa_forward(x, b.trans.attention)), b.trans.attention_norm);
    const Tensor expected = layer_norm_forward(add(h, ffn_forward(h, b.trans.ffn)), b.trans.ffn_norm);
    EXPECT_TRUE(bit_equal(transformer_block_forward(x, b.trans, cfg), expected));
}

TEST(Stack, OneBlockMatchesComposedSublayers) {
    Rng rng(12);
    TimeTransformerConfig cfg = small_config(3);
    cfg.num_blocks = 1;
    RefinerParams r = init_refiner(rng, cfg);
    auto& f = r.blocks[0].fusion;
    f.to_local.output.weight = uniform(rng, f.to_local.output.weight.shape());
    f.to_global.output.weight = uniform(rng, f.to_global.output.weight.shape());
    const Tensor x = uniform(rng, {2, 6, 3});
    const Tensor l = tcn_layer_forward(x, r.blocks[0].tcn, cfg);
    const Tensor g = transformer_block_forward(x, r.blocks[0].trans, cfg);
    const Real s = cfg.fusion_scale();
    const Tensor expected = dense_forward(concat({fuse_local(l, g, f, s), fuse_global(g, l, f, s)}, 2), r.head);
    EXPECT_TRUE(bit_equal(stack_forward(x, r, cfg), expected));
}

TEST(Stack, AblationVariantsMatchReferenceCompositions) {
    Rng rng(13);
    TimeTransformerConfig base = small_config(3);
    const Tensor x = uniform(rng, {2, 8, 3});
    for (auto variant : {DecoderVariant::TcnOnly, DecoderVariant::TransOnly, DecoderVariant::Sequential,
                         DecoderVariant::DeconvOnly}) {
        TimeTransformerConfig cfg = base;
        cfg.variant = variant;
        const RefinerParams r = init_refiner(rng, cfg);
        Tensor ref = x;
        if (variant == DecoderVariant::TcnOnly || variant == DecoderVariant::Sequential) {
            for (const auto& b : r.blocks) ref = tcn_layer_forward(ref, b.tcn, cfg);
        }
        if (variant == DecoderVariant::TransOnly || variant == DecoderVariant::Sequential) {
            for (const auto& b : r.blocks) ref = transformer_block_forward(ref, b.trans, cfg);
        }
        if (variant != DecoderVariant::DeconvOnly) ref = dense_forward(ref, r.head);
        EXPECT_TRUE(bit_equal(stack_forward(x, r, cfg), ref)) << to_string(variant);
    }
}

TEST(Stack, PreservesShapeForAnyBlockCount) {
    Rng rng(14);
    for (std::int64_t blocks : {1, 2, 3}) {
        TimeTransformerConfig cfg = small_config(2);
        cfg.num_blocks = blocks;
        const RefinerParams r = init_refiner(rng, cfg);
        EXPECT_EQ(stack_forward(uniform(rng, {2, 9, 2}), r, cfg).shape(), (Shape{2, 9, 2}));
    }
}

TEST(Stack, SineSimConfigurationRunsForwardAndBackward) {
    Rng rng(15);
    TimeTransformerConfig cfg;
    cfg.channels = 5;
    cfg.num_blocks = 2;
    cfg.num_heads = 3;
    cfg.head_size = 64;
    const RefinerParams r = init_refiner(rng, cfg);
    const Tensor x = uniform(rng, {4, 24, 5}, 0, 1);
    Tape tape;
    RefinerParams bound = r;
    bound.for_each_param("refiner", cfg.variant, [&](const std::string& name, Tensor& t) { t = tape.watch(t, name); });
    const Tensor y = stack_forward(x, bound, cfg);
    EXPECT_EQ(y.shape(), x.shape());
    const Gradients g = tape.backward(reduce_mean(square(y)));
    std::size_t count = 0;
    for (const auto& [name, grad] : g) {
        for (std::int64_t i = 0; i < grad.size(); ++i) ASSERT_TRUE(std::isfinite(grad[i])) << name;
        ++count;
    }
    EXPECT_GT(count, 30u);
}

TEST(Stack, Deterministic) {
    auto run = [] {
        Rng rng(16);
        const TimeTransformerConfig cfg = small_config(3);
        const RefinerParams r = init_refiner(rng, cfg);
        return stack_forward(uniform(rng, {2, 8, 3}), r, cfg);
    };
    EXPECT_TRUE(bit_equal(run(), run()));
}

TEST(Stack, RejectsMismatchedChannels) {
    Rng rng(17);
    const TimeTransformerConfig cfg = small_config(3);
    const RefinerParams r = init_refiner(rng, cfg);
    EXPECT_THROW(stack_forward(uniform(rng, {2, 8, 4}), r, cfg), Error);
    EXPECT_THROW(fuse_local(uniform(rng, {1, 3, 3}), uniform(rng, {1, 4, 3}), r.blocks[0].fusion, 1.0f), Error);
}

TEST(DecoderVariant, NamesRoundTrip) {
    for (auto v : {DecoderVariant::Full, DecoderVariant::DeconvOnly, DecoderVariant::TcnOnly, DecoderVariant::TransOnly,
                   DecoderVariant::Sequential}) {
        EXPECT_EQ(parse_decoder_variant(to_string(v)), v);
    }
    EXPECT_THROW(parse_decoder_variant("tcn+trans"), Error);
}
