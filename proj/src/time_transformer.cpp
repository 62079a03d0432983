#include "ttae/time_transformer.hpp"

#include <cmath>

namespace ttae {

std::string to_string(DecoderVariant v) {
    switch (v) {
        case DecoderVariant::Full: return "full";
        case DecoderVariant::DeconvOnly: return "deconv_only";
        case DecoderVariant::TcnOnly: return "tcn_only";
        case DecoderVariant::TransOnly: return "trans_only";
        case DecoderVariant::Sequential: return "sequential";
    }
    return "full";
}

DecoderVariant parse_decoder_variant(const std::string& name) {
    for (auto v : {DecoderVariant::Full, DecoderVariant::DeconvOnly, DecoderVariant::TcnOnly, DecoderVariant::TransOnly,
                   DecoderVariant::Sequential}) {
        if (to_string(v) == name) return v;
    }
    throw Error("unknown decoder variant '" + name + "' (expected full, deconv_only, tcn_only, trans_only, sequential)");
}

Real TimeTransformerConfig::fusion_scale() const {
    const auto denom = scaling == AttentionScaling::PerHead ? head_size : channels;
    return Real(1) / std::sqrt(static_cast<Real>(denom));
}

std::int64_t TimeTransformerConfig::block_dilation(std::int64_t block) {
    std::int64_t d = 1;
    for (std::int64_t i = 0; i < block; ++i) d *= 4;
    return d;
}

void CrossAttentionParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    to_local.for_each_param(prefix + ".to_local", visit);
    to_global.for_each_param(prefix + ".to_global", visit);
}

void TcnLayerParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    conv.for_each_param(prefix + ".conv", visit);
    norm.for_each_param(prefix + ".norm", visit);
}

void TransformerBlockParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    attention.for_each_param(prefix + ".attention", visit);
    attention_norm.for_each_param(prefix + ".attention_norm", visit);
    ffn.for_each_param(prefix + ".ffn", visit);
    ffn_norm.for_each_param(prefix + ".ffn_norm", visit);
}

void RefinerParams::for_each_param(const std::string& prefix, DecoderVariant variant, const ParamVisitor& visit) {
    if (variant == DecoderVariant::DeconvOnly) return;
    const bool tcn = variant != DecoderVariant::TransOnly;
    const bool trans = variant != DecoderVariant::TcnOnly;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string bp = prefix + ".block" + std::to_string(i);
        if (tcn) blocks[i].tcn.for_each_param(bp + ".tcn", visit);
        if (trans) blocks[i].trans.for_each_param(bp + ".trans", visit);
        if (variant == DecoderVariant::Full) blocks[i].fusion.for_each_param(bp + ".fusion", visit);
    }
    head.for_each_param(prefix + ".head", visit);
}

CrossAttentionParams init_cross_attention(Rng& rng, const TimeTransformerConfig& cfg) {
    CrossAttentionParams p;
    // Bias-free projections; zero output projections start each fusion as the identity.
    p.to_local = init_attention(rng, cfg.channels, cfg.num_heads, cfg.head_size, false, true);
    p.to_global = init_attention(rng, cfg.channels, cfg.num_heads, cfg.head_size, false, true);
    return p;
}

TimeTransformerBlockParams init_block(Rng& rng, const TimeTransformerConfig& cfg, std::int64_t block_index) {
    const std::int64_t c = cfg.channels;
    TimeTransformerBlockParams p;
    p.tcn.conv = init_conv1d(rng, c, c, cfg.kernel_size, 1, TimeTransformerConfig::block_dilation(block_index), true);
    p.tcn.norm = init_layer_norm(c);
    p.trans.attention = init_attention(rng, c, cfg.num_heads, cfg.head_size);
    p.trans.attention_norm = init_layer_norm(c);
    p.trans.ffn = init_ffn(rng, c, 4 * c);
    p.trans.ffn_norm = init_layer_norm(c);
    p.fusion = init_cross_attention(rng, cfg);
    return p;
}

RefinerParams init_refiner(Rng& rng, const TimeTransformerConfig& cfg) {
    if (cfg.num_blocks < 1) throw Error("init_refiner: at least one block is required");
    RefinerParams p;
    for (std::int64_t i = 0; i < cfg.num_blocks; ++i) p.blocks.push_back(init_block(rng, cfg, i));
    const std::int64_t head_in = cfg.variant == DecoderVariant::Full ? 2 * cfg.channels : cfg.channels;
    p.head = init_dense(rng, head_in, cfg.channels);
    return p;
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || a.shape() != b.shape()) {
        throw Error(std::string(op) + ": branch shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

}  // namespace

Tensor affinity(const Tensor& queries_from, const Tensor& keys_from, const AttentionParams& p, Real score_scale) {
    require_same_shape("affinity", queries_from, keys_from);
    return attention_weights(queries_from, keys_from, p, score_scale);
}

Tensor fuse_local(const Tensor& local, const Tensor& global, const CrossAttentionParams& p, Real score_scale) {
    require_same_shape("fuse_local", local, global);
    return add(local, attention_forward(local, global, p.to_local, score_scale));
}

Tensor fuse_global(const Tensor& global, const Tensor& local, const CrossAttentionParams& p, Real score_scale) {
    require_same_shape("fuse_global", global, local);
    return add(global, attention_forward(global, local, p.to_global, score_scale));
}

Tensor tcn_layer_forward(const Tensor& x, const TcnLayerParams& p, const TimeTransformerConfig& cfg) {
    const Tensor y = layer_norm_forward(conv1d_forward(x, p.conv), p.norm);
    return cfg.sublayer_residual ? add(x, y) : y;
}

Tensor transformer_block_forward(const Tensor& x, const TransformerBlockParams& p, const TimeTransformerConfig& cfg) {
    if (cfg.sublayer_residual) {
        const Tensor h = add(x, layer_norm_forward(mhsa_forward(x, p.attention), p.attention_norm));
        return add(h, layer_norm_forward(ffn_forward(h, p.ffn), p.ffn_norm));
    }
    const Tensor h = layer_norm_forward(add(x, mhsa_forward(x, p.attention)), p.attention_norm);
    return layer_norm_forward(add(h, ffn_forward(h, p.ffn)), p.ffn_norm);
}

BranchState block_forward(const BranchState& state, const TimeTransformerBlockParams& p,
                          const TimeTransformerConfig& cfg) {
    require_same_shape("block", state.local, state.global);
    const Tensor local = tcn_layer_forward(state.local, p.tcn, cfg);
    const Tensor global = transformer_block_forward(state.global, p.trans, cfg);
    const Real s = cfg.fusion_scale();
    return {fuse_local(local, global, p.fusion, s), fuse_global(global, local, p.fusion, s)};
}

Tensor stack_forward(const Tensor& prototype, const RefinerParams& p, const TimeTransformerConfig& cfg) {
    if (prototype.rank() != 3 || prototype.dim(2) != cfg.channels) {
        throw Error("stack: expected prototype [n, t, " + std::to_string(cfg.channels) + "], got " +
                    to_string(prototype.shape()));
    }
    if (cfg.variant == DecoderVariant::DeconvOnly) return prototype;
    if (p.blocks.empty()) throw Error("stack: no blocks");

    switch (cfg.variant) {
        case DecoderVariant::Full: {
            BranchState state{prototype, prototype};
            for (const auto& block : p.blocks) state = block_forward(state, block, cfg);
            return dense_forward(concat({state.local, state.global}, 2), p.head);
        }
        case DecoderVariant::TcnOnly: {
            Tensor x = prototype;
            for (const auto& block : p.blocks) x = tcn_layer_forward(x, block.tcn, cfg);
            return dense_forward(x, p.head);
        }
        case DecoderVariant::TransOnly: {
            Tensor x = prototype;
            for (const auto& block : p.blocks) x = transformer_block_forward(x, block.trans, cfg);
            return dense_forward(x, p.head);
        }
        case DecoderVariant::Sequential: {
            Tensor x = prototype;
            for (const auto& block : p.blocks) x = tcn_layer_forward(x, block.tcn, cfg);
            for (const auto& block : p.blocks) x = transformer_block_forward(x, block.trans, cfg);
            return dense_forward(x, p.head);
        }
        case DecoderVariant::DeconvOnly: break;
    }
    return prototype;
}

}  // namespace ttae
