#pragma once

#include "ttae/layers.hpp"

#include <string>
#include <vector>

namespace ttae {

/// Decoder refinement applied to the de-convolutional prototype.
enum class DecoderVariant { Full, DeconvOnly, TcnOnly, TransOnly, Sequential };

std::string to_string(DecoderVariant v);
DecoderVariant parse_decoder_variant(const std::string& name);

enum class AttentionScaling {
    PerHead,   // 1/sqrt(head_size)
    Channels,  // 1/sqrt(c), as in the single-head formulation
};

struct TimeTransformerConfig {
    std::int64_t channels = 1;
    std::int64_t num_blocks = 2;
    std::int64_t num_heads = 3;
    std::int64_t head_size = 64;
    std::int64_t kernel_size = 4;
    AttentionScaling scaling = AttentionScaling::PerHead;
    /// When set, each post-normalized sublayer keeps a skip path: y = x + LN(f(x)).
    /// When clear, the literal form is used: TCN y = LN(conv(x)), Transformer y = LN(x + f(x)).
    bool sublayer_residual = true;
    DecoderVariant variant = DecoderVariant::Full;

    Real fusion_scale() const;
    /// Dilation of block i: 1, 4, 16, ...
    static std::int64_t block_dilation(std::int64_t block);
};

/// Both directions of the bidirectional cross attention.
/// to_local holds W_eq/W_ek/W_ev (queries from the TCN branch);
/// to_global holds W_dq/W_dk/W_dv (queries from the Transformer branch).
struct CrossAttentionParams {
    AttentionParams to_local;
    AttentionParams to_global;

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

struct TcnLayerParams {
    Conv1dParams conv;
    LayerNormParams norm;

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

struct TransformerBlockParams {
    MhsaParams attention;
    LayerNormParams attention_norm;
    FfnParams ffn;
    LayerNormParams ffn_norm;

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

struct TimeTransformerBlockParams {
    TcnLayerParams tcn;
    TransformerBlockParams trans;
    CrossAttentionParams fusion;
};

struct BranchState {
    Tensor local;   // TCN branch [n, t, c]
    Tensor global;  // Transformer branch [n, t, c]
};

/// Refinement network parameters. Which members are populated depends on the variant:
/// Full uses every block member; TcnOnly only tcn; TransOnly only trans; Sequential
/// uses tcn of every block followed by trans of every block.
struct RefinerParams {
    std::vector<TimeTransformerBlockParams> blocks;
    DenseParams head;  // [2c, c] for Full, [c, c] otherwise

    void for_each_param(const std::string& prefix, DecoderVariant variant, const ParamVisitor& visit);
};

CrossAttentionParams init_cross_attention(Rng& rng, const TimeTransformerConfig& cfg);
TimeTransformerBlockParams init_block(Rng& rng, const TimeTransformerConfig& cfg, std::int64_t block_index);
RefinerParams init_refiner(Rng& rng, const TimeTransformerConfig& cfg);

/// Per-head affinity [n, heads, t, t]; rows sum to one over the key axis.
Tensor affinity(const Tensor& queries_from, const Tensor& keys_from, const AttentionParams& p, Real score_scale);

/// L_{i+1} = L~ + OutProj(A_{G~->L~} (G~ W_ev)).
Tensor fuse_local(const Tensor& local, const Tensor& global, const CrossAttentionParams& p, Real score_scale);
/// G_{i+1} = G~ + OutProj(A_{L~->G~} (L~ W_dv)).
Tensor fuse_global(const Tensor& global, const Tensor& local, const CrossAttentionParams& p, Real score_scale);

/// One dilated causal convolution with post layer normalization.
Tensor tcn_layer_forward(const Tensor& x, const TcnLayerParams& p, const TimeTransformerConfig& cfg);
/// Self-attention and feed-forward sublayers, each post-normalized.
Tensor transformer_block_forward(const Tensor& x, const TransformerBlockParams& p, const TimeTransformerConfig& cfg);

/// Parallel TCN layer and Transformer block followed by bidirectional fusion.
BranchState block_forward(const BranchState& state, const TimeTransformerBlockParams& p,
                          const TimeTransformerConfig& cfg);

/// Refines a prototype [n, t, c] according to cfg.variant. DeconvOnly returns the input.
Tensor stack_forward(const Tensor& prototype, const RefinerParams& p, const TimeTransformerConfig& cfg);

}  // namespace ttae
