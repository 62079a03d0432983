#pragma once

#include "ttae/random.hpp"
#include "ttae/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace ttae {

/// Callback used to enumerate trainable tensors by hierarchical name.
using ParamVisitor = std::function<void(const std::string& name, Tensor& value)>;

enum class Activation { None, Relu, Sigmoid };

Tensor activate(const Tensor& x, Activation act);

// ---------------------------------------------------------------- dense

struct DenseParams {
    Tensor weight;  // [d_in, d_out]
    std::optional<Tensor> bias;

    std::int64_t in_features() const { return weight.dim(0); }
    std::int64_t out_features() const { return weight.dim(1); }
    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

DenseParams init_dense(Rng& rng, std::int64_t in, std::int64_t out, bool with_bias = true);
Tensor dense_forward(const Tensor& x, const DenseParams& p, Activation act = Activation::None);

// ---------------------------------------------------------------- convolution

struct Conv1dParams {
    std::int64_t filters = 1;
    std::int64_t kernel_size = 1;
    std::int64_t stride = 1;
    std::int64_t dilation = 1;
    bool causal = false;
    Tensor weight;  // [kernel_size, in_channels, filters]
    Tensor bias;    // [filters]

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

Conv1dParams init_conv1d(Rng& rng, std::int64_t in_channels, std::int64_t filters, std::int64_t kernel_size,
                         std::int64_t stride = 1, std::int64_t dilation = 1, bool causal = false);

/// Output length ceil(t / stride). Causal convolutions pad (kernel-1)*dilation on the
/// left only; otherwise the padding is split as evenly as possible ("same").
Tensor conv1d_forward(const Tensor& x, const Conv1dParams& p, Activation act = Activation::None);

struct TConv1dParams {
    std::int64_t filters = 1;
    std::int64_t kernel_size = 1;
    std::int64_t stride = 1;
    Tensor weight;  // [kernel_size, in_channels, filters]
    Tensor bias;    // [filters]

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

TConv1dParams init_tconv1d(Rng& rng, std::int64_t in_channels, std::int64_t filters, std::int64_t kernel_size,
                           std::int64_t stride);

/// Output length exactly t * stride; kernel overshoot is cropped from both ends.
Tensor tconv1d_forward(const Tensor& x, const TConv1dParams& p, Activation act = Activation::None);

// ---------------------------------------------------------------- normalization

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
    Real epsilon = Real(1e-6);

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

LayerNormParams init_layer_norm(std::int64_t channels);
Tensor layer_norm_forward(const Tensor& x, const LayerNormParams& p);

// ---------------------------------------------------------------- attention

/// Projections for multi-head attention. Queries come from one sequence, keys and
/// values from another (the same one for self-attention).
struct AttentionParams {
    std::int64_t num_heads = 1;
    std::int64_t head_size = 1;
    DenseParams query;   // [c, heads*head_size]
    DenseParams key;     // [c, heads*head_size]
    DenseParams value;   // [c, heads*head_size]
    DenseParams output;  // [heads*head_size, c]

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};
using MhsaParams = AttentionParams;

AttentionParams init_attention(Rng& rng, std::int64_t channels, std::int64_t num_heads, std::int64_t head_size,
                               bool with_bias = true, bool zero_output = false);

/// Softmax-normalized scores [n, heads, t_query, t_key].
Tensor attention_weights(const Tensor& queries_from, const Tensor& keys_from, const AttentionParams& p, Real score_scale);

/// Heads concatenated and output-projected: [n, t_query, c].
Tensor attention_forward(const Tensor& queries_from, const Tensor& kv_from, const AttentionParams& p, Real score_scale,
                         Tensor* weights_out = nullptr);

/// Unmasked scaled dot-product self-attention with per-head scale 1/sqrt(head_size).
Tensor mhsa_forward(const Tensor& x, const MhsaParams& p, Tensor* weights_out = nullptr);

// ---------------------------------------------------------------- feed-forward

/// Two kernel-size-1 convolutions with relu between them.
struct FfnParams {
    Conv1dParams inner;
    Conv1dParams outer;

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

FfnParams init_ffn(Rng& rng, std::int64_t channels, std::int64_t inner_channels);
Tensor ffn_forward(const Tensor& x, const FfnParams& p);

// ---------------------------------------------------------------- recurrent

/// Standard LSTM cell; gate blocks ordered input, forget, candidate, output.
struct LstmCellParams {
    Tensor input_weight;      // [in, 4h]
    Tensor recurrent_weight;  // [h, 4h]
    Tensor bias;              // [4h]

    std::int64_t hidden() const { return recurrent_weight.dim(0); }
    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

struct RecurrentParams {
    std::int64_t hidden = 64;
    LstmCellParams layer1;
    LstmCellParams layer2;
    DenseParams head;

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

RecurrentParams init_recurrent(Rng& rng, std::int64_t in_channels, std::int64_t hidden, std::int64_t outputs);

struct RecurrentOutput {
    Tensor final_state;  // [n, h]
    Tensor sequence;     // [n, t, h]
};

/// Two stacked LSTM layers, left to right, from zero initial state. The head is not applied.
RecurrentOutput recurrent_forward(const Tensor& x, const RecurrentParams& p);

// ---------------------------------------------------------------- mlp

struct MlpParams {
    DenseParams hidden1;
    DenseParams hidden2;
    DenseParams out;

    void for_each_param(const std::string& prefix, const ParamVisitor& visit);
};

MlpParams init_mlp(Rng& rng, std::int64_t in_features, std::int64_t hidden, std::int64_t outputs);

/// Flattens all but the first axis, two relu hidden layers, linear logits.
Tensor mlp_forward(const Tensor& x, const MlpParams& p);

}  // namespace ttae
