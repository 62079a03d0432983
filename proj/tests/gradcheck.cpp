// Finite-difference gradient checks, built against the double-precision library.
#include "test_util.hpp"

#include "ttae/aae.hpp"
#include "ttae/layers.hpp"
#include "ttae/time_transformer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ttae;
using namespace ttae::testing;

static_assert(sizeof(Real) == 8, "gradient checks need the double-precision build");

namespace {

constexpr int kTrials = 50;

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng.uniform(0, 1) * static_cast<double>(hi - lo + 1)) % (hi - lo + 1);
}

Shape random_shape(Rng& rng) {
    const std::int64_t rank = pick(rng, 1, 3);
    const std::int64_t caps[] = {4, 8, 8};
    Shape s;
    for (std::int64_t i = 0; i < rank; ++i) s.push_back(pick(rng, 1, caps[3 - rank + i]));
    return s;
}

/// Uniform values with magnitude in [0.1, 1], away from the kinks of relu, abs and clamp.
Tensor away_from_zero(Rng& rng, const Shape& shape) {
    Tensor t = uniform(rng, shape, 0.1, 1.0);
    Tensor sign = uniform(rng, shape, -1.0, 1.0);
    for (std::int64_t i = 0; i < t.size(); ++i)
        if (sign[i] < 0) t.mutable_data()[static_cast<std::size_t>(i)] *= -1;
    return t;
}

/// reduce_sum(out * w) with w fixed per check, so every output entry carries gradient.
struct Projector {
    Rng rng;
    Tensor w;
    bool ready = false;
    explicit Projector(std::uint64_t seed) : rng(seed) {}
    Tensor operator()(const Tensor& out) {
        if (!ready) {
            w = rng.uniform_tensor(out.shape(), -1.0, 1.0);
            ready = true;
        }
        return reduce_sum(mul(out, w));
    }
};

using Op = std::function<Tensor(const std::vector<Tensor>&)>;

void check_op(const std::string& name, const std::vector<Tensor>& inputs, const Op& op, std::uint64_t seed) {
    Projector project(seed);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < inputs.size(); ++i) names.push_back(name + ".in" + std::to_string(i));
    const GradReport r = check_gradients(inputs, names, [&](const std::vector<Tensor>& v) { return project(op(v)); });
    EXPECT_TRUE(r.ok()) << name << " worst " << r.worst_entry << " ratio " << r.worst_ratio;
}

template <class F>
void each_trial(const std::string& name, F&& body) {
    Rng rng(std::hash<std::string>{}(name));
    for (int trial = 0; trial < kTrials; ++trial) body(rng, static_cast<std::uint64_t>(trial));
}

template <class P>
void check_layer(const std::string& name, const P& params, const std::vector<Tensor>& inputs,
                 const std::function<Tensor(const P&, const std::vector<Tensor>&)>& forward) {
    const GradReport r = check_param_gradients<P>(params, name, inputs, forward);
    EXPECT_TRUE(r.ok()) << name << " worst " << r.worst_entry << " ratio " << r.worst_ratio;
    EXPECT_GT(r.entries, 0);
}

}  // namespace

// ---------------------------------------------------------------- elementwise ops

TEST(OpGradients, Binary) {
    const std::vector<std::pair<std::string, Op>> ops = {
        {"add", [](const auto& v) { return add(v[0], v[1]); }},
        {"sub", [](const auto& v) { return sub(v[0], v[1]); }},
        {"mul", [](const auto& v) { return mul(v[0], v[1]); }},
        {"div", [](const auto& v) { return div(v[0], v[1]); }},
    };
    for (const auto& [name, op] : ops) {
        each_trial(name, [&](Rng& rng, std::uint64_t t) {
            const Shape s = random_shape(rng);
            check_op(name, {uniform(rng, s), away_from_zero(rng, s)}, op, t);
        });
    }
}

TEST(OpGradients, Broadcasting) {
    each_trial("broadcast", [&](Rng& rng, std::uint64_t t) {
        const Shape s = {pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 8)};
        const Tensor row = uniform(rng, {s[2]});
        check_op("add_row", {uniform(rng, s), row}, [](const auto& v) { return add(v[0], v[1]); }, t);
        check_op("mul_row", {uniform(rng, s), row}, [](const auto& v) { return mul(v[0], v[1]); }, t);
        check_op("broadcast_to", {row}, [s](const auto& v) { return broadcast_to(v[0], s); }, t);
    });
}

TEST(OpGradients, Unary) {
    const std::vector<std::pair<std::string, Op>> ops = {
        {"scale", [](const auto& v) { return scale(v[0], Real(-1.7)); }},
        {"add_scalar", [](const auto& v) { return add_scalar(v[0], Real(0.3)); }},
        {"neg", [](const auto& v) { return neg(v[0]); }},
        {"relu", [](const auto& v) { return relu(v[0]); }},
        {"sigmoid", [](const auto& v) { return sigmoid(v[0]); }},
        {"tanh", [](const auto& v) { return tanh(v[0]); }},
        {"exp", [](const auto& v) { return exp(v[0]); }},
        {"abs", [](const auto& v) { return abs(v[0]); }},
        {"square", [](const auto& v) { return square(v[0]); }},
        {"clamp", [](const auto& v) { return clamp(v[0], Real(-0.5), Real(0.55)); }},
    };
    for (const auto& [name, op] : ops) {
        each_trial(name, [&](Rng& rng, std::uint64_t t) {
            Tensor x = away_from_zero(rng, random_shape(rng));
            // Keep clamp inputs clear of both bounds.
            if (name == "clamp")
                for (auto& e : x.mutable_data())
                    if (std::abs(e + 0.5) < 0.05 || std::abs(e - 0.55) < 0.05) e = Real(0.2);
            check_op(name, {x}, op, t);
        });
    }
    for (const std::string name : {"log", "sqrt"}) {
        each_trial(name, [&](Rng& rng, std::uint64_t t) {
            const Tensor x = uniform(rng, random_shape(rng), 0.2, 2.0);
            check_op(name, {x}, name == "log" ? Op([](const auto& v) { return log(v[0]); })
                                              : Op([](const auto& v) { return sqrt(v[0]); }), t);
        });
    }
}

// ---------------------------------------------------------------- shape ops and reductions

TEST(OpGradients, ShapeOps) {
    each_trial("shape", [&](Rng& rng, std::uint64_t t) {
        const Shape s = {pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 8)};
        const Tensor x = uniform(rng, s);
        check_op("reshape", {x}, [s](const auto& v) { return reshape(v[0], {s[0] * s[1], s[2]}); }, t);
        check_op("permute", {x}, [](const auto& v) { return permute(v[0], {2, 0, 1}); }, t);
        check_op("transpose", {x}, [](const auto& v) { return transpose(v[0]); }, t);
        const int axis = static_cast<int>(pick(rng, 0, 2));
        Shape s2 = s;
        s2[static_cast<std::size_t>(axis)] = pick(rng, 1, 3);
        check_op("concat", {x, uniform(rng, s2)}, [axis](const auto& v) { return concat({v[0], v[1]}, axis); }, t);
        const std::int64_t len = pick(rng, 1, s[static_cast<std::size_t>(axis)]);
        const std::int64_t start = pick(rng, 0, s[static_cast<std::size_t>(axis)] - len);
        check_op("slice", {x}, [=](const auto& v) { return slice(v[0], axis, start, len); }, t);
    });
}

TEST(OpGradients, Reductions) {
    each_trial("reduce", [&](Rng& rng, std::uint64_t t) {
        const Shape s = {pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 2, 8)};
        const Tensor x = uniform(rng, s);
        const int axis = static_cast<int>(pick(rng, 0, 2));
        const bool keep = rng.uniform(0, 1) < 0.5;
        check_op("reduce_sum", {x}, [](const auto& v) { return reduce_sum(v[0]); }, t);
        check_op("reduce_mean", {x}, [](const auto& v) { return reduce_mean(v[0]); }, t);
        check_op("reduce_sum_axis", {x}, [=](const auto& v) { return reduce_sum(v[0], axis, keep); }, t);
        check_op("reduce_mean_axis", {x}, [=](const auto& v) { return reduce_mean(v[0], axis, keep); }, t);
        check_op("softmax", {uniform(rng, s, -3, 3)}, [=](const auto& v) { return softmax(v[0], axis); }, t);
    });
}

TEST(OpGradients, Matmul) {
    each_trial("matmul", [&](Rng& rng, std::uint64_t t) {
        const std::int64_t b = pick(rng, 1, 4), m = pick(rng, 1, 8), k = pick(rng, 1, 8), n = pick(rng, 1, 8);
        check_op("matmul_2d", {uniform(rng, {m, k}), uniform(rng, {k, n})}, [](const auto& v) { return matmul(v[0], v[1]); }, t);
        check_op("matmul_shared", {uniform(rng, {b, m, k}), uniform(rng, {k, n})},
                 [](const auto& v) { return matmul(v[0], v[1]); }, t);
        check_op("matmul_batched", {uniform(rng, {b, m, k}), uniform(rng, {b, k, n})},
                 [](const auto& v) { return matmul(v[0], v[1]); }, t);
    });
}

// ---------------------------------------------------------------- fused kernels

TEST(OpGradients, Convolutions) {
    each_trial("conv", [&](Rng& rng, std::uint64_t t) {
        const std::int64_t n = pick(rng, 1, 2), len = pick(rng, 2, 8), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
        const std::int64_t k = pick(rng, 1, 4), stride = pick(rng, 1, 2), dilation = pick(rng, 1, 3);
        Conv1dGeometry g;
        g.stride = stride;
        g.dilation = dilation;
        g.pad_left = pick(rng, 0, (k - 1) * dilation);
        const std::int64_t padded = len + (k - 1) * dilation;
        g.out_length = std::max<std::int64_t>(1, (padded - (k - 1) * dilation - 1) / stride + 1);
        check_op("conv1d", {uniform(rng, {n, len, cin}), uniform(rng, {k, cin, cout}), uniform(rng, {cout})},
                 [g](const auto& v) { return conv1d(v[0], v[1], v[2], g); }, t);
        const std::int64_t full = (len - 1) * stride + k;
        const std::int64_t crop = pick(rng, 0, full - 1);
        const std::int64_t out = pick(rng, 1, full - crop);
        check_op("conv_transpose1d", {uniform(rng, {n, len, cin}), uniform(rng, {k, cin, cout}), uniform(rng, {cout})},
                 [=](const auto& v) { return conv_transpose1d(v[0], v[1], v[2], stride, crop, out); }, t);
    });
}

TEST(OpGradients, LayerNormAttentionLstm) {
    each_trial("fused", [&](Rng& rng, std::uint64_t t) {
        const std::int64_t n = pick(rng, 1, 2), len = pick(rng, 1, 6), c = pick(rng, 2, 6);
        check_op("layer_norm", {uniform(rng, {n, len, c}), uniform(rng, {c}), uniform(rng, {c})},
                 [](const auto& v) { return layer_norm(v[0], v[1], v[2], Real(1e-6)); }, t);
        const std::int64_t heads = pick(rng, 1, 2), d = pick(rng, 1, 3), tk = pick(rng, 1, 6);
        check_op("multi_head_attention",
                 {uniform(rng, {n, len, heads * d}), uniform(rng, {n, tk, heads * d}), uniform(rng, {n, tk, heads * d})},
                 [=](const auto& v) { return multi_head_attention(v[0], v[1], v[2], heads, Real(0.7)); }, t);
        const std::int64_t in = pick(rng, 1, 3), h = pick(rng, 1, 3);
        check_op("lstm", {uniform(rng, {n, len, in}), uniform(rng, {in, 4 * h}), uniform(rng, {h, 4 * h}), uniform(rng, {4 * h})},
                 [](const auto& v) { return lstm(v[0], v[1], v[2], v[3]); }, t);
    });
}

TEST(OpGradients, MeanSigmoidExampleAtCoarseStep) {
    Rng rng(72);
    const Tensor w = uniform(rng, {4, 4});
    const Tensor x = uniform(rng, {4, 1});
    const GradReport r = check_gradients({w}, {"w"}, [&](const auto& v) { return reduce_mean(sigmoid(matmul(v[0], x))); },
                                         1e-3);
    EXPECT_TRUE(r.ok()) << r.worst_entry;
}

// ---------------------------------------------------------------- layers

TEST(LayerGradients, DenseAndConvolutions) {
    Rng rng(1);
    const Tensor x = uniform(rng, {2, 8, 3});
    check_layer<DenseParams>("dense", init_dense(rng, 3, 4), {x},
                             [](const DenseParams& p, const auto& v) { return dense_forward(v[0], p, Activation::Sigmoid); });
    for (auto [k, s, d, causal] : std::vector<std::tuple<int, int, int, bool>>{{4, 1, 1, true}, {4, 1, 4, true}, {4, 2, 1, false}, {3, 1, 1, false}}) {
        check_layer<Conv1dParams>("conv1d", init_conv1d(rng, 3, 2, k, s, d, causal), {x},
                                  [](const Conv1dParams& p, const auto& v) { return conv1d_forward(v[0], p); });
    }
    check_layer<TConv1dParams>("tconv1d", init_tconv1d(rng, 3, 2, 4, 2), {x},
                               [](const TConv1dParams& p, const auto& v) { return tconv1d_forward(v[0], p, Activation::Relu); });
}

TEST(LayerGradients, NormAttentionFeedForward) {
    Rng rng(2);
    const Tensor x = uniform(rng, {2, 5, 4});
    LayerNormParams ln = init_layer_norm(4);
    ln.gain = uniform(rng, {4});
    ln.bias = uniform(rng, {4});
    check_layer<LayerNormParams>("layer_norm", ln, {x},
                                 [](const LayerNormParams& p, const auto& v) { return layer_norm_forward(v[0], p); });
    check_layer<AttentionParams>("mhsa", init_attention(rng, 4, 2, 3), {x},
                                 [](const AttentionParams& p, const auto& v) { return mhsa_forward(v[0], p); });
    const Tensor other = uniform(rng, {2, 3, 4});
    check_layer<AttentionParams>("cross", init_attention(rng, 4, 1, 2), {x, other},
                                 [](const AttentionParams& p, const auto& v) { return attention_forward(v[0], v[1], p, Real(0.5)); });
    check_layer<FfnParams>("ffn", init_ffn(rng, 4, 6), {x},
                           [](const FfnParams& p, const auto& v) { return ffn_forward(v[0], p); });
}

TEST(LayerGradients, RecurrentAndMlp) {
    Rng rng(3);
    const Tensor x = uniform(rng, {2, 5, 3});
    check_layer<RecurrentParams>("recurrent", init_recurrent(rng, 3, 4, 2), {x}, [](const RecurrentParams& p, const auto& v) {
        const RecurrentOutput o = recurrent_forward(v[0], p);
        return concat({dense_forward(o.final_state, p.head), reduce_mean(o.sequence, 1)}, 1);
    });
    check_layer<MlpParams>("mlp", init_mlp(rng, 15, 6, 1), {x},
                           [](const MlpParams& p, const auto& v) { return mlp_forward(v[0], p); });
}

// ---------------------------------------------------------------- time-transformer

namespace {

TimeTransformerConfig stack_config(DecoderVariant variant) {
    TimeTransformerConfig cfg;
    cfg.channels = 2;
    cfg.num_blocks = 2;
    cfg.num_heads = 1;
    cfg.head_size = 4;
    cfg.variant = variant;
    return cfg;
}

/// Fresh fusion output projections are zero; randomize them so the cross branches carry gradient.
RefinerParams live_refiner(Rng& rng, const TimeTransformerConfig& cfg) {
    RefinerParams r = init_refiner(rng, cfg);
    for (auto& b : r.blocks) {
        for (AttentionParams* a : {&b.fusion.to_local, &b.fusion.to_global})
            a->output.weight = uniform(rng, a->output.weight.shape(), -0.5, 0.5);
    }
    return r;
}

struct VariantRefiner {
    RefinerParams params;
    DecoderVariant variant;
    void for_each_param(const std::string& prefix, const ParamVisitor& visit) { params.for_each_param(prefix, variant, visit); }
};

}  // namespace

TEST(LayerGradients, FusionAndBranches) {
    Rng rng(4);
    const TimeTransformerConfig cfg = stack_config(DecoderVariant::Full);
    const RefinerParams r = live_refiner(rng, cfg);
    const Tensor l = uniform(rng, {2, 8, 2}), g = uniform(rng, {2, 8, 2});
    check_layer<CrossAttentionParams>("fusion", r.blocks[0].fusion, {l, g}, [&](const CrossAttentionParams& p, const auto& v) {
        return concat({fuse_local(v[0], v[1], p, cfg.fusion_scale()), fuse_global(v[1], v[0], p, cfg.fusion_scale())}, 2);
    });
    check_layer<TcnLayerParams>("tcn", r.blocks[1].tcn, {l},
                                [&](const TcnLayerParams& p, const auto& v) { return tcn_layer_forward(v[0], p, cfg); });
    check_layer<TransformerBlockParams>("trans", r.blocks[0].trans, {g},
                                        [&](const TransformerBlockParams& p, const auto& v) {
                                            return transformer_block_forward(v[0], p, cfg);
                                        });
}

TEST(StackGradients, TwoBlockStackEveryVariant) {
    for (DecoderVariant v : {DecoderVariant::Full, DecoderVariant::TcnOnly, DecoderVariant::TransOnly, DecoderVariant::Sequential}) {
        Rng rng(5);
        TimeTransformerConfig cfg = stack_config(v);
        const VariantRefiner r{live_refiner(rng, cfg), v};
        const Tensor x = uniform(rng, {2, 8, 2});
        check_layer<VariantRefiner>("stack_" + to_string(v), r, {x}, [cfg](const VariantRefiner& p, const auto& in) {
            return stack_forward(in[0], p.params, cfg);
        });
    }
    Rng rng(6);
    TimeTransformerConfig literal = stack_config(DecoderVariant::Full);
    literal.sublayer_residual = false;
    literal.scaling = AttentionScaling::Channels;
    const VariantRefiner r{live_refiner(rng, literal), DecoderVariant::Full};
    check_layer<VariantRefiner>("stack_literal", r, {uniform(rng, {2, 8, 2})}, [literal](const VariantRefiner& p, const auto& in) {
        return stack_forward(in[0], p.params, literal);
    });
}

namespace {

struct Parts {
    ModelBundle bundle;
    void for_each_param(const std::string&, const ParamVisitor& visit) { bundle.for_each_param(kAllParts, visit); }
};

}  // namespace

TEST(StackGradients, AutoencoderEndToEnd) {
    ModelConfig cfg;
    cfg.length = 8;
    cfg.channels = 2;
    cfg.latent_dim = 3;
    cfg.num_heads = 1;
    cfg.head_size = 2;
    cfg.seed_channels = 3;
    cfg.disc_hidden = 3;
    cfg.encoder_filters = {3, 4};
    cfg.decoder_filters = {3, 3};
    Parts p{ModelBundle::initialize(cfg)};
    Rng rng(7);
    for (auto& b : p.bundle.decoder.refiner.blocks)
        for (AttentionParams* a : {&b.fusion.to_local, &b.fusion.to_global})
            a->output.weight = uniform(rng, a->output.weight.shape(), -0.5, 0.5);
    check_layer<Parts>("aae", p, {uniform(rng, {2, 8, 2}, 0, 1)}, [](const Parts& m, const auto& v) {
        const Tensor z = encode(m.bundle, v[0]);
        return concat({reshape(decode(m.bundle, z), {2, 16}), discriminate(m.bundle, z)}, 1);
    });
}
