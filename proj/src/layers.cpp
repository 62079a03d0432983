#include "ttae/layers.hpp"

#include <cmath>

namespace ttae {

namespace {

Tensor glorot(Rng& rng, Shape shape, std::int64_t fan_in, std::int64_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return rng.uniform_tensor(std::move(shape), -limit, limit);
}

void require_last_axis(const char* op, const Tensor& x, std::int64_t expected) {
    if (x.rank() < 1 || x.dim(-1) != expected) {
        throw Error(std::string(op) + ": expected last axis of size " + std::to_string(expected) + ", got shape " +
                    to_string(x.shape()));
    }
}

void require_rank3(const char* op, const Tensor& x) {
    if (x.rank() != 3) throw Error(std::string(op) + ": expected [n, t, c] input, got shape " + to_string(x.shape()));
}

}  // namespace

Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::Relu: return relu(x);
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::None: break;
    }
    return x;
}

// ---------------------------------------------------------------- dense

void DenseParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    visit(prefix + ".weight", weight);
    if (bias) visit(prefix + ".bias", *bias);
}

DenseParams init_dense(Rng& rng, std::int64_t in, std::int64_t out, bool with_bias) {
    DenseParams p;
    p.weight = glorot(rng, {in, out}, in, out);
    if (with_bias) p.bias = Tensor::zeros({out});
    return p;
}

Tensor dense_forward(const Tensor& x, const DenseParams& p, Activation act) {
    require_last_axis("dense", x, p.in_features());
    Tensor y = matmul(x, p.weight);
    if (p.bias) y = add(y, *p.bias);
    return activate(y, act);
}

// ---------------------------------------------------------------- convolution

void Conv1dParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    visit(prefix + ".weight", weight);
    visit(prefix + ".bias", bias);
}

Conv1dParams init_conv1d(Rng& rng, std::int64_t in_channels, std::int64_t filters, std::int64_t kernel_size,
                         std::int64_t stride, std::int64_t dilation, bool causal) {
    if (kernel_size < 1 || stride < 1 || dilation < 1) throw Error("init_conv1d: kernel, stride and dilation must be >= 1");
    Conv1dParams p;
    p.filters = filters;
    p.kernel_size = kernel_size;
    p.stride = stride;
    p.dilation = dilation;
    p.causal = causal;
    p.weight = glorot(rng, {kernel_size, in_channels, filters}, kernel_size * in_channels, kernel_size * filters);
    p.bias = Tensor::zeros({filters});
    return p;
}

Tensor conv1d_forward(const Tensor& x, const Conv1dParams& p, Activation act) {
    require_rank3("conv1d", x);
    const std::int64_t t = x.dim(1);
    if (t < 1) throw Error("conv1d: empty time axis");
    Conv1dGeometry g;
    g.stride = p.stride;
    g.dilation = p.dilation;
    g.out_length = (t + p.stride - 1) / p.stride;
    const std::int64_t span = (p.kernel_size - 1) * p.dilation;
    if (p.causal) {
        g.pad_left = span;
    } else {
        const std::int64_t total = std::max<std::int64_t>((g.out_length - 1) * p.stride + span + 1 - t, 0);
        g.pad_left = total / 2;
    }
    return activate(conv1d(x, p.weight, p.bias, g), act);
}

void TConv1dParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    visit(prefix + ".weight", weight);
    visit(prefix + ".bias", bias);
}

TConv1dParams init_tconv1d(Rng& rng, std::int64_t in_channels, std::int64_t filters, std::int64_t kernel_size,
                           std::int64_t stride) {
    if (kernel_size < 1 || stride < 1) throw Error("init_tconv1d: kernel and stride must be >= 1");
    TConv1dParams p;
    p.filters = filters;
    p.kernel_size = kernel_size;
    p.stride = stride;
    p.weight = glorot(rng, {kernel_size, in_channels, filters}, kernel_size * in_channels, kernel_size * filters);
    p.bias = Tensor::zeros({filters});
    return p;
}

Tensor tconv1d_forward(const Tensor& x, const TConv1dParams& p, Activation act) {
    require_rank3("tconv1d", x);
    const std::int64_t t = x.dim(1);
    const std::int64_t crop_left = std::max<std::int64_t>(p.kernel_size - p.stride, 0) / 2;
    return activate(conv_transpose1d(x, p.weight, p.bias, p.stride, crop_left, t * p.stride), act);
}

// ---------------------------------------------------------------- normalization

void LayerNormParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    visit(prefix + ".gain", gain);
    visit(prefix + ".bias", bias);
}

LayerNormParams init_layer_norm(std::int64_t channels) {
    LayerNormParams p;
    p.gain = Tensor::full({channels}, Real(1));
    p.bias = Tensor::zeros({channels});
    return p;
}

Tensor layer_norm_forward(const Tensor& x, const LayerNormParams& p) { return layer_norm(x, p.gain, p.bias, p.epsilon); }

// ---------------------------------------------------------------- attention

void AttentionParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    query.for_each_param(prefix + ".query", visit);
    key.for_each_param(prefix + ".key", visit);
    value.for_each_param(prefix + ".value", visit);
    output.for_each_param(prefix + ".output", visit);
}

AttentionParams init_attention(Rng& rng, std::int64_t channels, std::int64_t num_heads, std::int64_t head_size,
                               bool with_bias, bool zero_output) {
    if (num_heads < 1 || head_size < 1) throw Error("init_attention: heads and head size must be >= 1");
    AttentionParams p;
    p.num_heads = num_heads;
    p.head_size = head_size;
    const std::int64_t inner = num_heads * head_size;
    p.query = init_dense(rng, channels, inner, with_bias);
    p.key = init_dense(rng, channels, inner, with_bias);
    p.value = init_dense(rng, channels, inner, with_bias);
    p.output = init_dense(rng, inner, channels, with_bias);
    if (zero_output) p.output.weight = Tensor::zeros({inner, channels});
    return p;
}

namespace {

// [n, t, h*d] -> [n, h, t, d]
Tensor split_heads(const Tensor& x, std::int64_t heads, std::int64_t head_size) {
    return permute(reshape(x, {x.dim(0), x.dim(1), heads, head_size}), {0, 2, 1, 3});
}

void check_attention_inputs(const Tensor& q, const Tensor& kv, const AttentionParams& p) {
    require_rank3("attention", q);
    require_rank3("attention", kv);
    if (q.dim(0) != kv.dim(0)) throw Error("attention: batch mismatch " + to_string(q.shape()) + " vs " + to_string(kv.shape()));
    if (q.dim(1) < 1 || kv.dim(1) < 1) throw Error("attention: empty time axis");
    require_last_axis("attention", q, p.query.in_features());
    require_last_axis("attention", kv, p.key.in_features());
    if (p.query.out_features() != p.num_heads * p.head_size || p.key.out_features() != p.num_heads * p.head_size ||
        p.value.out_features() != p.num_heads * p.head_size || p.output.in_features() != p.num_heads * p.head_size) {
        throw Error("attention: projection widths inconsistent with heads*head_size");
    }
}

}  // namespace

Tensor attention_weights(const Tensor& queries_from, const Tensor& keys_from, const AttentionParams& p, Real score_scale) {
    check_attention_inputs(queries_from, keys_from, p);
    const Tensor q = split_heads(dense_forward(queries_from, p.query), p.num_heads, p.head_size);
    const Tensor k = permute(reshape(dense_forward(keys_from, p.key),
                                     {keys_from.dim(0), keys_from.dim(1), p.num_heads, p.head_size}),
                             {0, 2, 3, 1});
    return softmax(scale(matmul(q, k), score_scale), -1);
}

Tensor attention_forward(const Tensor& queries_from, const Tensor& kv_from, const AttentionParams& p, Real score_scale,
                         Tensor* weights_out) {
    check_attention_inputs(queries_from, kv_from, p);
    const Tensor heads = multi_head_attention(dense_forward(queries_from, p.query), dense_forward(kv_from, p.key),
                                              dense_forward(kv_from, p.value), p.num_heads, score_scale, weights_out);
    return dense_forward(heads, p.output);
}

Tensor mhsa_forward(const Tensor& x, const MhsaParams& p, Tensor* weights_out) {
    return attention_forward(x, x, p, Real(1) / std::sqrt(static_cast<Real>(p.head_size)), weights_out);
}

// ---------------------------------------------------------------- feed-forward

void FfnParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    inner.for_each_param(prefix + ".inner", visit);
    outer.for_each_param(prefix + ".outer", visit);
}

FfnParams init_ffn(Rng& rng, std::int64_t channels, std::int64_t inner_channels) {
    FfnParams p;
    p.inner = init_conv1d(rng, channels, inner_channels, 1);
    p.outer = init_conv1d(rng, inner_channels, channels, 1);
    return p;
}

Tensor ffn_forward(const Tensor& x, const FfnParams& p) {
    return conv1d_forward(conv1d_forward(x, p.inner, Activation::Relu), p.outer);
}

// ---------------------------------------------------------------- recurrent

void LstmCellParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    visit(prefix + ".input_weight", input_weight);
    visit(prefix + ".recurrent_weight", recurrent_weight);
    visit(prefix + ".bias", bias);
}

void RecurrentParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    layer1.for_each_param(prefix + ".layer1", visit);
    layer2.for_each_param(prefix + ".layer2", visit);
    head.for_each_param(prefix + ".head", visit);
}

namespace {

LstmCellParams init_lstm_cell(Rng& rng, std::int64_t in, std::int64_t hidden) {
    LstmCellParams p;
    p.input_weight = glorot(rng, {in, 4 * hidden}, in, 4 * hidden);
    p.recurrent_weight = glorot(rng, {hidden, 4 * hidden}, hidden, 4 * hidden);
    std::vector<Real> b(static_cast<std::size_t>(4 * hidden), Real(0));
    for (std::int64_t j = hidden; j < 2 * hidden; ++j) b[static_cast<std::size_t>(j)] = Real(1);  // forget gate
    p.bias = Tensor({4 * hidden}, std::move(b));
    return p;
}

Tensor lstm_layer(const Tensor& x, const LstmCellParams& p) {
    require_last_axis("lstm", x, p.input_weight.dim(0));
    return lstm(x, p.input_weight, p.recurrent_weight, p.bias);
}

}  // namespace

RecurrentParams init_recurrent(Rng& rng, std::int64_t in_channels, std::int64_t hidden, std::int64_t outputs) {
    RecurrentParams p;
    p.hidden = hidden;
    p.layer1 = init_lstm_cell(rng, in_channels, hidden);
    p.layer2 = init_lstm_cell(rng, hidden, hidden);
    p.head = init_dense(rng, hidden, outputs);
    return p;
}

RecurrentOutput recurrent_forward(const Tensor& x, const RecurrentParams& p) {
    require_rank3("recurrent", x);
    if (x.dim(1) < 1) throw Error("recurrent: empty sequence");
    RecurrentOutput out;
    out.sequence = lstm_layer(lstm_layer(x, p.layer1), p.layer2);
    out.final_state = reshape(slice(out.sequence, 1, x.dim(1) - 1, 1), {x.dim(0), p.layer2.hidden()});
    return out;
}

// ---------------------------------------------------------------- mlp

void MlpParams::for_each_param(const std::string& prefix, const ParamVisitor& visit) {
    hidden1.for_each_param(prefix + ".hidden1", visit);
    hidden2.for_each_param(prefix + ".hidden2", visit);
    out.for_each_param(prefix + ".out", visit);
}

MlpParams init_mlp(Rng& rng, std::int64_t in_features, std::int64_t hidden, std::int64_t outputs) {
    MlpParams p;
    p.hidden1 = init_dense(rng, in_features, hidden);
    p.hidden2 = init_dense(rng, hidden, hidden);
    p.out = init_dense(rng, hidden, outputs);
    return p;
}

Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
    if (x.rank() < 1) throw Error("mlp: scalar input");
    const Tensor flat = reshape(x, {x.dim(0), x.size() / std::max<std::int64_t>(x.dim(0), 1)});
    require_last_axis("mlp", flat, p.hidden1.in_features());
    const Tensor h1 = dense_forward(flat, p.hidden1, Activation::Relu);
    const Tensor h2 = dense_forward(h1, p.hidden2, Activation::Relu);
    return dense_forward(h2, p.out);
}

}  // namespace ttae
