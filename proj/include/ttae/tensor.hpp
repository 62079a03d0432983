#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ttae {

#ifdef TTAE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::int64_t>;

/// Tensor storage. Every buffer starts on a SIMD boundary so vectorized kernels split
/// their work the same way, and sum in the same order, on every run.
using Buffer = std::vector<Real, Eigen::aligned_allocator<Real>>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TapeState;
}

/**
 * Dense row-major tensor.
 *
 * Tensors are values with shared, immutable storage: every op allocates a new
 * buffer, and mutable_data() copies on write when the buffer is shared. A
 * tensor produced while recording carries a handle into its Tape.
 */
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<Real> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, Real value);
    static Tensor scalar(Real value);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    /// Size of one axis; negative axes count from the back.
    std::int64_t dim(int axis) const;
    std::int64_t size() const { return static_cast<std::int64_t>(data_->size()); }

    std::span<const Real> data() const { return {data_->data(), data_->size()}; }
    std::span<Real> mutable_data();
    std::vector<Real> to_vector() const { return {data_->begin(), data_->end()}; }
    Real item() const;
    Real operator[](std::int64_t flat_index) const { return (*data_)[static_cast<std::size_t>(flat_index)]; }

    bool requires_grad() const { return node_ >= 0; }
    int node_id() const { return node_; }
    /// Same values, no tape history.
    Tensor detach() const;

    bool same_values(const Tensor& other) const;

private:
    Shape shape_;
    std::shared_ptr<Buffer> data_;
    std::shared_ptr<detail::TapeState> tape_;
    int node_ = -1;

    friend class Tape;
    friend struct OpRecorder;
};

/// Leaf gradients keyed by the id given to Tape::watch.
using Gradients = std::map<std::string, Tensor>;

/**
 * Records operations on tensors that descend from watched leaves and replays
 * them in reverse to produce gradients. A tape can be consumed exactly once.
 */
class Tape {
public:
    Tape();

    Tensor watch(const Tensor& value, const std::string& id);
    Gradients backward(const Tensor& loss);

    std::size_t size() const;
    bool consumed() const;

private:
    std::shared_ptr<detail::TapeState> state_;
};

// ---- elementwise (numpy-style broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor clamp(const Tensor& x, Real lo, Real hi);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

// ---- reductions ----
Tensor reduce_sum(const Tensor& x);
Tensor reduce_sum(const Tensor& x, int axis, bool keepdim = false);
Tensor reduce_mean(const Tensor& x);
Tensor reduce_mean(const Tensor& x, int axis, bool keepdim = false);
Tensor softmax(const Tensor& x, int axis = -1);

/**
 * Matrix product over the last two axes.
 * a: [..., m, k]; b: [k, n] (shared) or [..., k, n] with identical batch axes.
 */
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- fused layer kernels ----
struct Conv1dGeometry {
    std::int64_t stride = 1;
    std::int64_t dilation = 1;
    std::int64_t pad_left = 0;
    std::int64_t out_length = 0;
};

/// x [n, t, cin], weight [k, cin, cout], bias [cout] -> [n, out_length, cout].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv1dGeometry& geom);

/// x [n, t, cin], weight [k, cin, cout], bias [cout] -> [n, out_length, cout].
/// Output position p holds full-length position p + crop_left.
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride,
                        std::int64_t crop_left, std::int64_t out_length);

/// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real epsilon);

/**
 * Multi-head scaled dot-product attention on head-interleaved projections.
 * q [n, tq, h*d], k and v [n, tk, h*d] -> [n, tq, h*d]. When weights_out is
 * given it receives the detached attention weights [n, h, tq, tk].
 */
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t num_heads, Real score_scale,
                            Tensor* weights_out = nullptr);

/**
 * Single LSTM layer over a whole sequence from zero initial state.
 * x [n, t, in], input_weight [in, 4h], recurrent_weight [h, 4h], bias [4h] -> hidden states [n, t, h].
 * Gate blocks are ordered input, forget, candidate, output.
 */
Tensor lstm(const Tensor& x, const Tensor& input_weight, const Tensor& recurrent_weight, const Tensor& bias);

/// Rows of the leading axis in the given order. Not recorded on any tape.
Tensor take_rows(const Tensor& x, std::span<const std::int64_t> rows);

}  // namespace ttae
