#include "ttae/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ttae {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

class GradSink;
using BackwardFn = std::function<void(std::span<const Real>, GradSink&)>;

struct Node {
    std::string op;
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;
    std::string leaf_id;
    bool leaf = false;
};

struct TapeState {
    std::vector<Node> nodes;
    std::map<std::string, int> leaves;
    bool consumed = false;
};

class GradSink {
public:
    GradSink(TapeState& tape, std::vector<Buffer>& grads, const Node& node)
        : tape_(tape), grads_(grads), node_(node) {}

    bool wants(std::size_t input) const { return node_.inputs[input] >= 0; }

    std::span<Real> at(std::size_t input) {
        const int id = node_.inputs[input];
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(static_cast<std::size_t>(numel(tape_.nodes[static_cast<std::size_t>(id)].shape)), Real(0));
        return {g.data(), g.size()};
    }

private:
    TapeState& tape_;
    std::vector<Buffer>& grads_;
    const Node& node_;
};

}  // namespace detail

using detail::BackwardFn;
using detail::GradSink;

namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const MatR>;
using MMap = Eigen::Map<MatR>;

CMap cmap(const Real* p, std::int64_t rows, std::int64_t cols) { return CMap(p, rows, cols); }
MMap mmap(Real* p, std::int64_t rows, std::int64_t cols) { return MMap(p, rows, cols); }

int normalize_axis(int axis, int rank, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw Error(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                    std::to_string(rank));
    }
    return a;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw Error(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

}  // namespace

struct OpRecorder {
    static Tensor make(const char* op, Shape shape, Buffer data,
                       std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
        return make(op, std::move(shape), std::move(data), std::vector<const Tensor*>(inputs), std::move(fn));
    }

    static Tensor make(const char* op, Shape shape, Buffer data, const std::vector<const Tensor*>& inputs,
                       BackwardFn fn) {
        for (Real v : data) {
            if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite output");
        }
        Tensor out;
        out.shape_ = std::move(shape);
        out.data_ = std::make_shared<Buffer>(std::move(data));

        std::shared_ptr<detail::TapeState> tape;
        for (const Tensor* in : inputs) {
            if (in->node_ < 0) continue;
            if (tape && tape != in->tape_) throw Error(std::string(op) + ": inputs recorded on different tapes");
            tape = in->tape_;
        }
        if (!tape) return out;
        if (tape->consumed) throw Error(std::string(op) + ": recording on a consumed tape");

        detail::Node node;
        node.op = op;
        node.shape = out.shape_;
        for (const Tensor* in : inputs) node.inputs.push_back(in->node_ >= 0 ? in->node_ : -1);
        node.backward = std::move(fn);
        tape->nodes.push_back(std::move(node));
        out.tape_ = std::move(tape);
        out.node_ = static_cast<int>(out.tape_->nodes.size()) - 1;
        return out;
    }
};

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : shape_{}, data_(std::make_shared<Buffer>(1, Real(0))) {}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d < 0) throw Error("Tensor: negative dimension in shape " + to_string(shape_));
    }
    if (numel(shape_) != static_cast<std::int64_t>(data.size())) {
        throw Error("Tensor: shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                    " values but data has " + std::to_string(data.size()));
    }
    for (Real v : data) {
        if (!std::isfinite(v)) throw Error("Tensor: non-finite value in data");
    }
    data_ = std::make_shared<Buffer>(data.begin(), data.end());
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), Real(0)); }

Tensor Tensor::full(Shape shape, Real value) {
    const auto n = static_cast<std::size_t>(numel(shape));
    return OpRecorder::make("full", std::move(shape), Buffer(n, value), {}, nullptr);
}

Tensor Tensor::scalar(Real value) { return Tensor({}, {value}); }

std::int64_t Tensor::dim(int axis) const {
    return shape_[static_cast<std::size_t>(normalize_axis(axis, rank(), "dim"))];
}

std::span<Real> Tensor::mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<Buffer>(*data_);
    return {data_->data(), data_->size()};
}

Real Tensor::item() const {
    if (size() != 1) throw Error("item: tensor of shape " + to_string(shape_) + " is not a scalar");
    return (*data_)[0];
}

Tensor Tensor::detach() const {
    Tensor out;
    out.shape_ = shape_;
    out.data_ = data_;
    return out;
}

bool Tensor::same_values(const Tensor& other) const {
    return shape_ == other.shape_ && *data_ == *other.data_;
}

// ---------------------------------------------------------------- Tape

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tensor Tape::watch(const Tensor& value, const std::string& id) {
    if (state_->consumed) throw Error("watch: tape already consumed");
    if (state_->leaves.count(id)) throw Error("watch: id '" + id + "' already watched on this tape");
    detail::Node node;
    node.op = "leaf";
    node.shape = value.shape();
    node.leaf = true;
    node.leaf_id = id;
    state_->nodes.push_back(std::move(node));
    const int node_id = static_cast<int>(state_->nodes.size()) - 1;
    state_->leaves[id] = node_id;

    Tensor out = value.detach();
    out.tape_ = state_;
    out.node_ = node_id;
    return out;
}

Gradients Tape::backward(const Tensor& loss) {
    auto& st = *state_;
    if (st.consumed) throw Error("backward: tape already consumed");
    if (loss.size() != 1) throw Error("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    if (loss.node_ < 0 || loss.tape_ != state_) throw Error("backward: loss was not recorded on this tape");

    std::vector<Buffer> grads(st.nodes.size());
    grads[static_cast<std::size_t>(loss.node_)] = {Real(1)};
    for (int i = loss.node_; i >= 0; --i) {
        auto& node = st.nodes[static_cast<std::size_t>(i)];
        auto& g = grads[static_cast<std::size_t>(i)];
        if (node.leaf || g.empty()) continue;
        GradSink sink(st, grads, node);
        node.backward(std::span<const Real>(g.data(), g.size()), sink);
        Buffer().swap(g);
    }

    Gradients out;
    for (const auto& [id, node_id] : st.leaves) {
        const auto& node = st.nodes[static_cast<std::size_t>(node_id)];
        auto& g = grads[static_cast<std::size_t>(node_id)];
        if (g.empty()) g.assign(static_cast<std::size_t>(numel(node.shape)), Real(0));
        out.emplace(id, OpRecorder::make("gradient", node.shape, std::move(g), {}, nullptr));
    }
    st.consumed = true;
    for (auto& node : st.nodes) node.backward = nullptr;
    return out;
}

std::size_t Tape::size() const { return state_->nodes.size(); }
bool Tape::consumed() const { return state_->consumed; }

// ---------------------------------------------------------------- broadcasting

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) shape_error(op, a, b);
        out[i] = da == 1 ? db : da;
    }
    return out;
}

// Maps a flat output index to the flat index of a broadcast input.
class BroadcastIndex {
public:
    BroadcastIndex(const Shape& in, const Shape& out) {
        n_in_ = numel(in);
        if (in == out) {
            kind_ = Kind::Same;
            return;
        }
        if (n_in_ == 1) {
            kind_ = Kind::Scalar;
            return;
        }
        // Strip leading ones and test whether `in` is a suffix of `out`.
        std::size_t lead = 0;
        while (lead < in.size() && in[lead] == 1) ++lead;
        const std::size_t tail = in.size() - lead;
        if (tail <= out.size() && std::equal(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end(),
                                             out.end() - static_cast<std::ptrdiff_t>(tail))) {
            kind_ = Kind::Suffix;
            return;
        }
        kind_ = Kind::General;
        const std::size_t r = out.size();
        std::vector<std::int64_t> in_strides(r, 0);
        std::int64_t stride = 1;
        for (std::size_t k = 0; k < in.size(); ++k) {
            const std::size_t ia = in.size() - 1 - k;
            const std::size_t oa = r - 1 - k;
            in_strides[oa] = in[ia] == 1 ? 0 : stride;
            stride *= in[ia];
        }
        const std::int64_t n_out = numel(out);
        offsets_.resize(static_cast<std::size_t>(n_out));
        std::vector<std::int64_t> idx(r, 0);
        std::int64_t off = 0;
        for (std::int64_t i = 0; i < n_out; ++i) {
            offsets_[static_cast<std::size_t>(i)] = off;
            for (std::size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                off += in_strides[ax];
                if (idx[ax] < out[ax]) break;
                off -= in_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }

    std::int64_t operator()(std::int64_t i) const {
        switch (kind_) {
            case Kind::Same: return i;
            case Kind::Scalar: return 0;
            case Kind::Suffix: return i % n_in_;
            case Kind::General: break;
        }
        return offsets_[static_cast<std::size_t>(i)];
    }

private:
    enum class Kind { Same, Scalar, Suffix, General };
    Kind kind_ = Kind::Same;
    std::int64_t n_in_ = 1;
    std::vector<std::int64_t> offsets_;
};

// f(x, y) -> value; da(x, y, out) -> d out / d x; db likewise for y.
template <class F, class DA, class DB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
    auto ia = std::make_shared<BroadcastIndex>(a.shape(), out_shape);
    auto ib = std::make_shared<BroadcastIndex>(b.shape(), out_shape);
    const std::int64_t n = numel(out_shape);
    Buffer out(static_cast<std::size_t>(n));
    const auto av = a.data();
    const auto bv = b.data();
    for (std::int64_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = f(av[static_cast<std::size_t>((*ia)(i))], bv[static_cast<std::size_t>((*ib)(i))]);
    }
    Tensor ka = a.detach();
    Tensor kb = b.detach();
    return OpRecorder::make(op, out_shape, std::move(out), {&a, &b},
                            [ka, kb, ia, ib, n, da, db](std::span<const Real> g, GradSink& sink) {
                                const auto av = ka.data();
                                const auto bv = kb.data();
                                if (sink.wants(0)) {
                                    auto ga = sink.at(0);
                                    for (std::int64_t i = 0; i < n; ++i) {
                                        const auto ja = static_cast<std::size_t>((*ia)(i));
                                        const auto jb = static_cast<std::size_t>((*ib)(i));
                                        ga[ja] += g[static_cast<std::size_t>(i)] * da(av[ja], bv[jb]);
                                    }
                                }
                                if (sink.wants(1)) {
                                    auto gb = sink.at(1);
                                    for (std::int64_t i = 0; i < n; ++i) {
                                        const auto ja = static_cast<std::size_t>((*ia)(i));
                                        const auto jb = static_cast<std::size_t>((*ib)(i));
                                        gb[jb] += g[static_cast<std::size_t>(i)] * db(av[ja], bv[jb]);
                                    }
                                }
                            });
}

// f(x) -> y; df(x, y) -> dy/dx.
template <class F, class DF>
Tensor unary_op(const char* op, const Tensor& x, F f, DF df) {
    const auto xv = x.data();
    Buffer out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    Tensor kx = x.detach();
    auto ky = std::make_shared<Buffer>(out);
    return OpRecorder::make(op, x.shape(), std::move(out), {&x}, [kx, ky, df](std::span<const Real> g, GradSink& sink) {
        auto gx = sink.at(0);
        const auto xv = kx.data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], (*ky)[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
        [](Real x, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y) { return Real(1) / y; },
        [](Real x, Real y) { return -x / (y * y); });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    if (broadcast_shape(x.shape(), shape, "broadcast") != shape) shape_error("broadcast", x.shape(), shape);
    auto idx = std::make_shared<BroadcastIndex>(x.shape(), shape);
    const std::int64_t n = numel(shape);
    Buffer out(static_cast<std::size_t>(n));
    const auto xv = x.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>((*idx)(i))];
    return OpRecorder::make("broadcast", shape, std::move(out), {&x}, [idx, n](std::span<const Real> g, GradSink& sink) {
        auto gx = sink.at(0);
        for (std::int64_t i = 0; i < n; ++i) gx[static_cast<std::size_t>((*idx)(i))] += g[static_cast<std::size_t>(i)];
    });
}

Tensor scale(const Tensor& x, Real factor) {
    return unary_op(
        "scale", x, [factor](Real v) { return v * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& x, Real value) {
    return unary_op(
        "add_scalar", x, [value](Real v) { return v + value; }, [](Real, Real) { return Real(1); });
}

Tensor neg(const Tensor& x) { return scale(x, Real(-1)); }

Tensor relu(const Tensor& x) {
    return unary_op(
        "relu", x, [](Real v) { return v > 0 ? v : Real(0); }, [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        "sigmoid", x,
        [](Real v) {
            if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
            const Real e = std::exp(v);
            return e / (Real(1) + e);
        },
        [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        "tanh", x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        "exp", x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(
        "log", x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary_op(
        "sqrt", x, [](Real v) { return std::sqrt(v); }, [](Real, Real y) { return Real(0.5) / y; });
}

Tensor abs(const Tensor& x) {
    return unary_op(
        "abs", x, [](Real v) { return std::abs(v); },
        [](Real v, Real) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

Tensor square(const Tensor& x) {
    return unary_op(
        "square", x, [](Real v) { return v * v; }, [](Real v, Real) { return Real(2) * v; });
}

Tensor clamp(const Tensor& x, Real lo, Real hi) {
    return unary_op(
        "clamp", x, [lo, hi](Real v) { return std::clamp(v, lo, hi); },
        [lo, hi](Real v, Real) { return (v >= lo && v <= hi) ? Real(1) : Real(0); });
}

// ---------------------------------------------------------------- shape ops

Tensor reshape(const Tensor& x, Shape shape) {
    std::int64_t known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw Error("reshape: more than one inferred axis in " + to_string(shape));
            infer = static_cast<int>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || x.size() % known != 0) shape_error("reshape", x.shape(), shape);
        shape[static_cast<std::size_t>(infer)] = x.size() / known;
    }
    if (numel(shape) != x.size()) shape_error("reshape", x.shape(), shape);
    return OpRecorder::make("reshape", std::move(shape), Buffer(x.data().begin(), x.data().end()), {&x},
                            [](std::span<const Real> g, GradSink& sink) {
                                auto gx = sink.at(0);
                                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                            });
}

namespace {

// For each flat output index of the permuted tensor, the flat source index.
std::vector<std::int64_t> permute_sources(const Shape& in, const std::vector<int>& axes, Shape& out_shape) {
    const std::size_t r = in.size();
    std::vector<std::int64_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
    out_shape.assign(r, 0);
    std::vector<std::int64_t> strides(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in[static_cast<std::size_t>(axes[i])];
        strides[i] = in_strides[static_cast<std::size_t>(axes[i])];
    }
    const std::int64_t n = numel(in);
    std::vector<std::int64_t> src(static_cast<std::size_t>(n));
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        src[static_cast<std::size_t>(i)] = off;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            off += strides[ax];
            if (idx[ax] < out_shape[ax]) break;
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    return src;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    if (static_cast<int>(axes.size()) != x.rank()) throw Error("permute: axis list does not match rank");
    std::vector<bool> seen(axes.size(), false);
    for (int a : axes) {
        if (a < 0 || a >= x.rank() || seen[static_cast<std::size_t>(a)]) throw Error("permute: invalid axis list");
        seen[static_cast<std::size_t>(a)] = true;
    }
    Shape out_shape;
    auto src = std::make_shared<std::vector<std::int64_t>>(permute_sources(x.shape(), axes, out_shape));
    const auto xv = x.data();
    Buffer out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[static_cast<std::size_t>((*src)[i])];
    return OpRecorder::make("permute", out_shape, std::move(out), {&x}, [src](std::span<const Real> g, GradSink& sink) {
        auto gx = sink.at(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[static_cast<std::size_t>((*src)[i])] += g[i];
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() < 2) throw Error("transpose: rank must be at least 2, got " + to_string(x.shape()));
    std::vector<int> axes(static_cast<std::size_t>(x.rank()));
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, axes);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw Error("concat: no inputs");
    const int rank = parts.front().rank();
    const int ax = normalize_axis(axis, rank, "concat");
    Shape out_shape = parts.front().shape();
    out_shape[static_cast<std::size_t>(ax)] = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) shape_error("concat", parts.front().shape(), p.shape());
        for (int i = 0; i < rank; ++i) {
            if (i != ax && p.shape()[static_cast<std::size_t>(i)] != parts.front().shape()[static_cast<std::size_t>(i)])
                shape_error("concat", parts.front().shape(), p.shape());
        }
        out_shape[static_cast<std::size_t>(ax)] += p.shape()[static_cast<std::size_t>(ax)];
    }
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < rank; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
    const std::int64_t total = out_shape[static_cast<std::size_t>(ax)];

    std::vector<std::int64_t> lens;
    Buffer out(static_cast<std::size_t>(numel(out_shape)));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p.shape()[static_cast<std::size_t>(ax)];
        lens.push_back(len);
        const auto pv = p.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(pv.begin() + o * len * inner, len * inner, out.begin() + (o * total + offset) * inner);
        }
        offset += len;
    }
    std::vector<const Tensor*> inputs;
    for (const auto& p : parts) inputs.push_back(&p);
    return OpRecorder::make("concat", out_shape, std::move(out), inputs,
                            [lens, outer, inner, total](std::span<const Real> g, GradSink& sink) {
                                std::int64_t offset = 0;
                                for (std::size_t k = 0; k < lens.size(); ++k) {
                                    const std::int64_t len = lens[k];
                                    if (sink.wants(k)) {
                                        auto gp = sink.at(k);
                                        for (std::int64_t o = 0; o < outer; ++o) {
                                            for (std::int64_t j = 0; j < len * inner; ++j) {
                                                gp[static_cast<std::size_t>(o * len * inner + j)] +=
                                                    g[static_cast<std::size_t>((o * total + offset) * inner + j)];
                                            }
                                        }
                                    }
                                    offset += len;
                                }
                            });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
    const int ax = normalize_axis(axis, x.rank(), "slice");
    const std::int64_t total = x.shape()[static_cast<std::size_t>(ax)];
    if (start < 0 || length < 0 || start + length > total) {
        throw Error("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") out of bounds for axis of size " + std::to_string(total) + " in shape " + to_string(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(ax)] = length;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
    Buffer out(static_cast<std::size_t>(numel(out_shape)));
    const auto xv = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(xv.begin() + (o * total + start) * inner, length * inner, out.begin() + o * length * inner);
    }
    return OpRecorder::make("slice", out_shape, std::move(out), {&x},
                            [outer, inner, total, start, length](std::span<const Real> g, GradSink& sink) {
                                auto gx = sink.at(0);
                                for (std::int64_t o = 0; o < outer; ++o) {
                                    for (std::int64_t j = 0; j < length * inner; ++j) {
                                        gx[static_cast<std::size_t>((o * total + start) * inner + j)] +=
                                            g[static_cast<std::size_t>(o * length * inner + j)];
                                    }
                                }
                            });
}

// ---------------------------------------------------------------- reductions

Tensor reduce_sum(const Tensor& x) {
    double s = 0;
    for (Real v : x.data()) s += v;
    return OpRecorder::make("reduce_sum", {}, {static_cast<Real>(s)}, {&x}, [](std::span<const Real> g, GradSink& sink) {
        auto gx = sink.at(0);
        for (auto& v : gx) v += g[0];
    });
}

Tensor reduce_sum(const Tensor& x, int axis, bool keepdim) {
    const int ax = normalize_axis(axis, x.rank(), "reduce_sum");
    std::int64_t outer = 1, inner = 1;
    const std::int64_t len = x.shape()[static_cast<std::size_t>(ax)];
    for (int i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
    Shape out_shape = x.shape();
    if (keepdim)
        out_shape[static_cast<std::size_t>(ax)] = 1;
    else
        out_shape.erase(out_shape.begin() + ax);
    Buffer out(static_cast<std::size_t>(outer * inner), Real(0));
    const auto xv = x.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t l = 0; l < len; ++l)
            for (std::int64_t i = 0; i < inner; ++i)
                out[static_cast<std::size_t>(o * inner + i)] += xv[static_cast<std::size_t>((o * len + l) * inner + i)];
    return OpRecorder::make("reduce_sum", out_shape, std::move(out), {&x},
                            [outer, inner, len](std::span<const Real> g, GradSink& sink) {
                                auto gx = sink.at(0);
                                for (std::int64_t o = 0; o < outer; ++o)
                                    for (std::int64_t l = 0; l < len; ++l)
                                        for (std::int64_t i = 0; i < inner; ++i)
                                            gx[static_cast<std::size_t>((o * len + l) * inner + i)] +=
                                                g[static_cast<std::size_t>(o * inner + i)];
                            });
}

Tensor reduce_mean(const Tensor& x) {
    if (x.size() == 0) throw Error("reduce_mean: empty tensor");
    return scale(reduce_sum(x), Real(1) / static_cast<Real>(x.size()));
}

Tensor reduce_mean(const Tensor& x, int axis, bool keepdim) {
    const std::int64_t len = x.dim(axis);
    if (len == 0) throw Error("reduce_mean: empty axis");
    return scale(reduce_sum(x, axis, keepdim), Real(1) / static_cast<Real>(len));
}

Tensor softmax(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, x.rank(), "softmax");
    std::int64_t outer = 1, inner = 1;
    const std::int64_t len = x.shape()[static_cast<std::size_t>(ax)];
    for (int i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
    const auto xv = x.data();
    Buffer out(xv.size());
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            auto at = [&](std::int64_t l) { return static_cast<std::size_t>((o * len + l) * inner + i); };
            Real mx = xv[at(0)];
            for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, xv[at(l)]);
            Real sum = 0;
            for (std::int64_t l = 0; l < len; ++l) {
                out[at(l)] = std::exp(xv[at(l)] - mx);
                sum += out[at(l)];
            }
            for (std::int64_t l = 0; l < len; ++l) out[at(l)] /= sum;
        }
    }
    auto y = std::make_shared<Buffer>(out);
    return OpRecorder::make("softmax", x.shape(), std::move(out), {&x},
                            [y, outer, inner, len](std::span<const Real> g, GradSink& sink) {
                                auto gx = sink.at(0);
                                for (std::int64_t o = 0; o < outer; ++o) {
                                    for (std::int64_t i = 0; i < inner; ++i) {
                                        auto at = [&](std::int64_t l) {
                                            return static_cast<std::size_t>((o * len + l) * inner + i);
                                        };
                                        Real dot = 0;
                                        for (std::int64_t l = 0; l < len; ++l) dot += g[at(l)] * (*y)[at(l)];
                                        for (std::int64_t l = 0; l < len; ++l)
                                            gx[at(l)] += (*y)[at(l)] * (g[at(l)] - dot);
                                    }
                                }
                            });
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
    const std::int64_t m = a.dim(-2);
    const std::int64_t k = a.dim(-1);
    if (b.dim(-2) != k) shape_error("matmul", a.shape(), b.shape());
    const std::int64_t n = b.dim(-1);
    Shape out_shape = a.shape();
    out_shape.back() = n;

    if (b.rank() == 2) {
        const std::int64_t rows = a.size() / k;
        Buffer out(static_cast<std::size_t>(rows * n));
        mmap(out.data(), rows, n).noalias() = cmap(a.data().data(), rows, k) * cmap(b.data().data(), k, n);
        Tensor ka = a.detach(), kb = b.detach();
        return OpRecorder::make("matmul", out_shape, std::move(out), {&a, &b},
                                [ka, kb, rows, k, n](std::span<const Real> g, GradSink& sink) {
                                    const auto G = cmap(g.data(), rows, n);
                                    if (sink.wants(0)) {
                                        mmap(sink.at(0).data(), rows, k).noalias() +=
                                            G * cmap(kb.data().data(), k, n).transpose();
                                    }
                                    if (sink.wants(1)) {
                                        mmap(sink.at(1).data(), k, n).noalias() +=
                                            cmap(ka.data().data(), rows, k).transpose() * G;
                                    }
                                });
    }

    if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
        shape_error("matmul", a.shape(), b.shape());
    }
    const std::int64_t batch = a.size() / (m * k);
    Buffer out(static_cast<std::size_t>(batch * m * n));
    for (std::int64_t bi = 0; bi < batch; ++bi) {
        mmap(out.data() + bi * m * n, m, n).noalias() =
            cmap(a.data().data() + bi * m * k, m, k) * cmap(b.data().data() + bi * k * n, k, n);
    }
    Tensor ka = a.detach(), kb = b.detach();
    return OpRecorder::make("matmul", out_shape, std::move(out), {&a, &b},
                            [ka, kb, batch, m, k, n](std::span<const Real> g, GradSink& sink) {
                                const bool wa = sink.wants(0), wb = sink.wants(1);
                                Real* ga = wa ? sink.at(0).data() : nullptr;
                                Real* gb = wb ? sink.at(1).data() : nullptr;
                                for (std::int64_t bi = 0; bi < batch; ++bi) {
                                    const auto G = cmap(g.data() + bi * m * n, m, n);
                                    if (wa) {
                                        mmap(ga + bi * m * k, m, k).noalias() +=
                                            G * cmap(kb.data().data() + bi * k * n, k, n).transpose();
                                    }
                                    if (wb) {
                                        mmap(gb + bi * k * n, k, n).noalias() +=
                                            cmap(ka.data().data() + bi * m * k, m, k).transpose() * G;
                                    }
                                }
                            });
}

// ---------------------------------------------------------------- fused kernels

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv1dGeometry& geom) {
    if (x.rank() != 3 || weight.rank() != 3 || weight.dim(1) != x.dim(2)) shape_error("conv1d", x.shape(), weight.shape());
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(2)) shape_error("conv1d", weight.shape(), bias.shape());
    if (x.dim(1) < 1) throw Error("conv1d: empty time axis in input " + to_string(x.shape()));
    if (geom.stride < 1 || geom.dilation < 1 || geom.out_length < 1) throw Error("conv1d: invalid geometry");
    const std::int64_t n = x.dim(0), t = x.dim(1), cin = x.dim(2);
    const std::int64_t k = weight.dim(0), cout = weight.dim(2);
    const std::int64_t tout = geom.out_length, s = geom.stride, d = geom.dilation, pl = geom.pad_left;
    const std::int64_t rows = n * tout, width = k * cin;

    auto cols = std::make_shared<Buffer>(static_cast<std::size_t>(rows * width), Real(0));
    const auto xv = x.data();
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < tout; ++i)
            for (std::int64_t j = 0; j < k; ++j) {
                const std::int64_t src = i * s + j * d - pl;
                if (src < 0 || src >= t) continue;
                std::copy_n(xv.begin() + (b * t + src) * cin, cin,
                            cols->begin() + (b * tout + i) * width + j * cin);
            }
    Buffer out(static_cast<std::size_t>(rows * cout));
    auto O = mmap(out.data(), rows, cout);
    O.noalias() = cmap(cols->data(), rows, width) * cmap(weight.data().data(), width, cout);
    O.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.data().data(), cout);

    Tensor kw = weight.detach();
    return OpRecorder::make(
        "conv1d", {n, tout, cout}, std::move(out), {&x, &weight, &bias},
        [cols, kw, n, t, cin, k, cout, tout, s, d, pl, rows, width](std::span<const Real> g, GradSink& sink) {
            const auto G = cmap(g.data(), rows, cout);
            if (sink.wants(1)) mmap(sink.at(1).data(), width, cout).noalias() += cmap(cols->data(), rows, width).transpose() * G;
            if (sink.wants(2)) {
                Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(sink.at(2).data(), cout) += G.colwise().sum();
            }
            if (sink.wants(0)) {
                MatR gcols = G * cmap(kw.data().data(), width, cout).transpose();
                auto gx = sink.at(0);
                for (std::int64_t b = 0; b < n; ++b)
                    for (std::int64_t i = 0; i < tout; ++i)
                        for (std::int64_t j = 0; j < k; ++j) {
                            const std::int64_t src = i * s + j * d - pl;
                            if (src < 0 || src >= t) continue;
                            const Real* gc = gcols.data() + (b * tout + i) * width + j * cin;
                            Real* dst = gx.data() + (b * t + src) * cin;
                            for (std::int64_t c = 0; c < cin; ++c) dst[c] += gc[c];
                        }
            }
        });
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride,
                        std::int64_t crop_left, std::int64_t out_length) {
    if (x.rank() != 3 || weight.rank() != 3 || weight.dim(1) != x.dim(2))
        shape_error("conv_transpose1d", x.shape(), weight.shape());
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(2)) shape_error("conv_transpose1d", weight.shape(), bias.shape());
    if (stride < 1 || out_length < 1) throw Error("conv_transpose1d: invalid geometry");
    const std::int64_t n = x.dim(0), t = x.dim(1), cin = x.dim(2);
    const std::int64_t k = weight.dim(0), cout = weight.dim(2);
    const std::int64_t width = k * cout;

    // [k, cin, cout] -> [cin, k * cout]
    auto wp = std::make_shared<Buffer>(static_cast<std::size_t>(cin * width));
    const auto wv = weight.data();
    for (std::int64_t j = 0; j < k; ++j)
        for (std::int64_t c = 0; c < cin; ++c)
            std::copy_n(wv.begin() + (j * cin + c) * cout, cout, wp->begin() + c * width + j * cout);

    MatR contrib = cmap(x.data().data(), n * t, cin) * cmap(wp->data(), cin, width);
    Buffer out(static_cast<std::size_t>(n * out_length * cout));
    const auto bv = bias.data();
    for (std::int64_t r = 0; r < n * out_length; ++r) std::copy_n(bv.begin(), cout, out.begin() + r * cout);
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < k; ++j) {
                const std::int64_t p = i * stride + j - crop_left;
                if (p < 0 || p >= out_length) continue;
                const Real* src = contrib.data() + (b * t + i) * width + j * cout;
                Real* dst = out.data() + (b * out_length + p) * cout;
                for (std::int64_t o = 0; o < cout; ++o) dst[o] += src[o];
            }

    Tensor kx = x.detach();
    return OpRecorder::make(
        "conv_transpose1d", {n, out_length, cout}, std::move(out), {&x, &weight, &bias},
        [kx, wp, n, t, cin, k, cout, width, stride, crop_left, out_length](std::span<const Real> g, GradSink& sink) {
            MatR gcontrib = MatR::Zero(n * t, width);
            for (std::int64_t b = 0; b < n; ++b)
                for (std::int64_t i = 0; i < t; ++i)
                    for (std::int64_t j = 0; j < k; ++j) {
                        const std::int64_t p = i * stride + j - crop_left;
                        if (p < 0 || p >= out_length) continue;
                        std::copy_n(g.data() + (b * out_length + p) * cout, cout,
                                    gcontrib.data() + (b * t + i) * width + j * cout);
                    }
            if (sink.wants(0)) {
                mmap(sink.at(0).data(), n * t, cin).noalias() += gcontrib * cmap(wp->data(), cin, width).transpose();
            }
            if (sink.wants(1)) {
                MatR gwp = cmap(kx.data().data(), n * t, cin).transpose() * gcontrib;
                auto gw = sink.at(1);
                for (std::int64_t j = 0; j < k; ++j)
                    for (std::int64_t c = 0; c < cin; ++c)
                        for (std::int64_t o = 0; o < cout; ++o)
                            gw[static_cast<std::size_t>((j * cin + c) * cout + o)] += gwp(c, j * cout + o);
            }
            if (sink.wants(2)) {
                auto gb = sink.at(2);
                for (std::int64_t r = 0; r < n * out_length; ++r)
                    for (std::int64_t o = 0; o < cout; ++o) gb[static_cast<std::size_t>(o)] += g[static_cast<std::size_t>(r * cout + o)];
            }
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real epsilon) {
    if (x.rank() < 1) throw Error("layer_norm: scalar input");
    const std::int64_t c = x.dim(-1);
    if (c < 1) throw Error("layer_norm: empty channel axis");
    if (gain.rank() != 1 || gain.dim(0) != c) shape_error("layer_norm", x.shape(), gain.shape());
    if (bias.rank() != 1 || bias.dim(0) != c) shape_error("layer_norm", x.shape(), bias.shape());
    const std::int64_t rows = x.size() / c;
    auto xhat = std::make_shared<Buffer>(static_cast<std::size_t>(x.size()));
    auto inv = std::make_shared<Buffer>(static_cast<std::size_t>(rows));
    Buffer out(static_cast<std::size_t>(x.size()));
    const auto xv = x.data();
    const auto gv = gain.data();
    const auto bv = bias.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* row = xv.data() + r * c;
        double mean = 0;
        for (std::int64_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0;
        for (std::int64_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(c);
        const Real is = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
        (*inv)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < c; ++j) {
            const auto idx = static_cast<std::size_t>(r * c + j);
            (*xhat)[idx] = static_cast<Real>(row[j] - mean) * is;
            out[idx] = (*xhat)[idx] * gv[static_cast<std::size_t>(j)] + bv[static_cast<std::size_t>(j)];
        }
    }
    Tensor kg = gain.detach();
    return OpRecorder::make("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                            [xhat, inv, kg, rows, c](std::span<const Real> g, GradSink& sink) {
                                const auto gv = kg.data();
                                if (sink.wants(0)) {
                                    auto gx = sink.at(0);
                                    for (std::int64_t r = 0; r < rows; ++r) {
                                        double m1 = 0, m2 = 0;
                                        for (std::int64_t j = 0; j < c; ++j) {
                                            const auto idx = static_cast<std::size_t>(r * c + j);
                                            const double gh = g[idx] * gv[static_cast<std::size_t>(j)];
                                            m1 += gh;
                                            m2 += gh * (*xhat)[idx];
                                        }
                                        m1 /= static_cast<double>(c);
                                        m2 /= static_cast<double>(c);
                                        const Real is = (*inv)[static_cast<std::size_t>(r)];
                                        for (std::int64_t j = 0; j < c; ++j) {
                                            const auto idx = static_cast<std::size_t>(r * c + j);
                                            const double gh = g[idx] * gv[static_cast<std::size_t>(j)];
                                            gx[idx] += static_cast<Real>(is * (gh - m1 - (*xhat)[idx] * m2));
                                        }
                                    }
                                }
                                if (sink.wants(1)) {
                                    auto gg = sink.at(1);
                                    for (std::int64_t r = 0; r < rows; ++r)
                                        for (std::int64_t j = 0; j < c; ++j)
                                            gg[static_cast<std::size_t>(j)] +=
                                                g[static_cast<std::size_t>(r * c + j)] * (*xhat)[static_cast<std::size_t>(r * c + j)];
                                }
                                if (sink.wants(2)) {
                                    auto gb = sink.at(2);
                                    for (std::int64_t r = 0; r < rows; ++r)
                                        for (std::int64_t j = 0; j < c; ++j)
                                            gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(r * c + j)];
                                }
                            });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t num_heads, Real score_scale,
                            Tensor* weights_out) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || k.shape() != v.shape() || q.dim(0) != k.dim(0) ||
        q.dim(2) != k.dim(2)) {
        shape_error("multi_head_attention", q.shape(), k.shape());
    }
    const std::int64_t n = q.dim(0), tq = q.dim(1), tk = k.dim(1), width = q.dim(2);
    if (num_heads < 1 || width % num_heads != 0) throw Error("multi_head_attention: width not divisible by heads");
    if (tq < 1 || tk < 1) throw Error("multi_head_attention: empty time axis");
    const std::int64_t d = width / num_heads;
    using Strided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;
    using MStrided = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
    const Eigen::OuterStride<> os(width);
    auto head = [&](const Real* base, std::int64_t b, std::int64_t h, std::int64_t t) {
        return Strided(base + b * t * width + h * d, t, d, os);
    };

    const std::int64_t plane = tq * tk;
    auto probs = std::make_shared<Buffer>(static_cast<std::size_t>(n * num_heads * plane));
    Buffer out(static_cast<std::size_t>(n * tq * width));
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t h = 0; h < num_heads; ++h) {
            auto P = mmap(probs->data() + (b * num_heads + h) * plane, tq, tk);
            P.noalias() = head(q.data().data(), b, h, tq) * head(k.data().data(), b, h, tk).transpose();
            P *= score_scale;
            for (std::int64_t i = 0; i < tq; ++i) {
                auto row = P.row(i);
                row = (row.array() - row.maxCoeff()).exp();
                row /= row.sum();
            }
            MStrided(out.data() + b * tq * width + h * d, tq, d, os).noalias() = P * head(v.data().data(), b, h, tk);
        }
    if (weights_out) *weights_out = OpRecorder::make("attention_weights", {n, num_heads, tq, tk}, *probs, {}, nullptr);

    Tensor kq = q.detach(), kk = k.detach(), kv = v.detach();
    return OpRecorder::make(
        "multi_head_attention", q.shape(), std::move(out), {&q, &k, &v},
        [kq, kk, kv, probs, n, tq, tk, width, d, num_heads, plane, score_scale](std::span<const Real> g, GradSink& sink) {
            const Eigen::OuterStride<> os(width);
            const bool wq = sink.wants(0), wk = sink.wants(1), wv = sink.wants(2);
            Real* gq = wq ? sink.at(0).data() : nullptr;
            Real* gk = wk ? sink.at(1).data() : nullptr;
            Real* gv = wv ? sink.at(2).data() : nullptr;
            MatR dp(tq, tk);
            for (std::int64_t b = 0; b < n; ++b)
                for (std::int64_t h = 0; h < num_heads; ++h) {
                    const auto P = cmap(probs->data() + (b * num_heads + h) * plane, tq, tk);
                    const std::int64_t oq = b * tq * width + h * d, ok = b * tk * width + h * d;
                    const Strided G(g.data() + oq, tq, d, os);
                    if (wv) MStrided(gv + ok, tk, d, os).noalias() += P.transpose() * G;
                    if (!wq && !wk) continue;
                    dp.noalias() = G * Strided(kv.data().data() + ok, tk, d, os).transpose();
                    for (std::int64_t i = 0; i < tq; ++i) {
                        const Real dot = dp.row(i).dot(P.row(i));
                        dp.row(i) = (P.row(i).array() * (dp.row(i).array() - dot) * score_scale).matrix();
                    }
                    if (wq) MStrided(gq + oq, tq, d, os).noalias() += dp * Strided(kk.data().data() + ok, tk, d, os);
                    if (wk) MStrided(gk + ok, tk, d, os).noalias() += dp.transpose() * Strided(kq.data().data() + oq, tq, d, os);
                }
        });
}

Tensor lstm(const Tensor& x, const Tensor& input_weight, const Tensor& recurrent_weight, const Tensor& bias) {
    if (x.rank() != 3 || input_weight.rank() != 2 || input_weight.dim(0) != x.dim(2)) {
        shape_error("lstm", x.shape(), input_weight.shape());
    }
    const std::int64_t n = x.dim(0), t = x.dim(1), in = x.dim(2);
    if (recurrent_weight.rank() != 2 || recurrent_weight.dim(1) != 4 * recurrent_weight.dim(0) ||
        input_weight.dim(1) != recurrent_weight.dim(1)) {
        shape_error("lstm", input_weight.shape(), recurrent_weight.shape());
    }
    const std::int64_t h = recurrent_weight.dim(0), h4 = 4 * h;
    if (bias.rank() != 1 || bias.dim(0) != h4) shape_error("lstm", recurrent_weight.shape(), bias.shape());
    if (t < 1) throw Error("lstm: empty sequence");
    using Row = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>;
    using Strided = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
    using CStrided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;

    // Time-major caches: activated gates [t, n, 4h], cell states and their tanh [t, n, h].
    auto gates = std::make_shared<MatR>(t * n, h4);
    auto cells = std::make_shared<MatR>(t * n, h);
    auto cell_tanh = std::make_shared<MatR>(t * n, h);
    Buffer out(static_cast<std::size_t>(n * t * h));
    const auto R = cmap(recurrent_weight.data().data(), h, h4);
    const auto W = cmap(input_weight.data().data(), in, h4);
    const Row b(bias.data().data(), h4);
    MatR z(n, h4);
    for (std::int64_t s = 0; s < t; ++s) {
        z.noalias() = CStrided(x.data().data() + s * in, n, in, Eigen::OuterStride<>(t * in)) * W;
        z.rowwise() += b;
        if (s > 0) z.noalias() += CStrided(out.data() + (s - 1) * h, n, h, Eigen::OuterStride<>(t * h)) * R;
        auto a = gates->middleRows(s * n, n);
        a.leftCols(2 * h) = (Real(1) / (Real(1) + (-z.leftCols(2 * h).array()).exp())).matrix();
        a.middleCols(2 * h, h) = z.middleCols(2 * h, h).array().tanh().matrix();
        a.rightCols(h) = (Real(1) / (Real(1) + (-z.rightCols(h).array()).exp())).matrix();
        auto c = cells->middleRows(s * n, n);
        c = (a.middleCols(0, h).array() * a.middleCols(2 * h, h).array()).matrix();
        if (s > 0) c.array() += a.middleCols(h, h).array() * cells->middleRows((s - 1) * n, n).array();
        cell_tanh->middleRows(s * n, n) = c.array().tanh().matrix();
        Strided(out.data() + s * h, n, h, Eigen::OuterStride<>(t * h)) =
            (a.rightCols(h).array() * cell_tanh->middleRows(s * n, n).array()).matrix();
    }

    auto hidden = std::make_shared<Buffer>(out);
    Tensor kx = x.detach(), kw = input_weight.detach(), kr = recurrent_weight.detach();
    return OpRecorder::make(
        "lstm", {n, t, h}, std::move(out), {&x, &input_weight, &recurrent_weight, &bias},
        [kx, kw, kr, gates, cells, cell_tanh, hidden, n, t, in, h, h4](std::span<const Real> g, GradSink& sink) {
            const auto R = cmap(kr.data().data(), h, h4);
            MatR dz_all(t * n, h4);  // time-major pre-activation gradients
            MatR dh_next = MatR::Zero(n, h), dc_next = MatR::Zero(n, h), dh(n, h), dc(n, h);
            for (std::int64_t s = t - 1; s >= 0; --s) {
                dh = CStrided(g.data() + s * h, n, h, Eigen::OuterStride<>(t * h)) + dh_next;
                const auto a = gates->middleRows(s * n, n);
                const auto ig = a.middleCols(0, h).array(), fg = a.middleCols(h, h).array();
                const auto cg = a.middleCols(2 * h, h).array(), og = a.rightCols(h).array();
                const auto tc = cell_tanh->middleRows(s * n, n).array();
                dc = (dh.array() * og * (Real(1) - tc * tc) + dc_next.array()).matrix();
                auto dz = dz_all.middleRows(s * n, n);
                dz.middleCols(0, h) = (dc.array() * cg * ig * (Real(1) - ig)).matrix();
                if (s > 0) {
                    dz.middleCols(h, h) =
                        (dc.array() * cells->middleRows((s - 1) * n, n).array() * fg * (Real(1) - fg)).matrix();
                } else {
                    dz.middleCols(h, h).setZero();
                }
                dz.middleCols(2 * h, h) = (dc.array() * ig * (Real(1) - cg * cg)).matrix();
                dz.rightCols(h) = (dh.array() * tc * og * (Real(1) - og)).matrix();
                dc_next = (dc.array() * fg).matrix();
                dh_next.noalias() = dz * R.transpose();
            }
            if (sink.wants(0) || sink.wants(1)) {
                for (std::int64_t s = 0; s < t; ++s) {
                    const auto dz = dz_all.middleRows(s * n, n);
                    const CStrided xs(kx.data().data() + s * in, n, in, Eigen::OuterStride<>(t * in));
                    if (sink.wants(0)) {
                        Strided(sink.at(0).data() + s * in, n, in, Eigen::OuterStride<>(t * in)).noalias() +=
                            dz * cmap(kw.data().data(), in, h4).transpose();
                    }
                    if (sink.wants(1)) mmap(sink.at(1).data(), in, h4).noalias() += xs.transpose() * dz;
                }
            }
            if (sink.wants(2)) {
                auto gr = mmap(sink.at(2).data(), h, h4);
                for (std::int64_t s = 1; s < t; ++s) {
                    gr.noalias() += CStrided(hidden->data() + (s - 1) * h, n, h, Eigen::OuterStride<>(t * h)).transpose() *
                                    dz_all.middleRows(s * n, n);
                }
            }
            if (sink.wants(3)) {
                Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(sink.at(3).data(), h4) += dz_all.colwise().sum();
            }
        });
}

Tensor take_rows(const Tensor& x, std::span<const std::int64_t> rows) {
    if (x.rank() < 1) throw Error("take_rows: scalar input");
    const std::int64_t n = x.dim(0);
    const std::int64_t stride = n == 0 ? 0 : x.size() / n;
    Shape shape = x.shape();
    shape[0] = static_cast<std::int64_t>(rows.size());
    Buffer out(static_cast<std::size_t>(numel(shape)));
    const auto xv = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= n) throw Error("take_rows: row index " + std::to_string(rows[i]) + " out of range");
        std::copy_n(xv.begin() + rows[i] * stride, stride, out.begin() + static_cast<std::int64_t>(i) * stride);
    }
    return OpRecorder::make("take_rows", std::move(shape), std::move(out), {}, nullptr);
}

}  // namespace ttae
