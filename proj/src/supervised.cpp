#include "ttae/supervised.hpp"

namespace ttae {

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) {
        throw Error("bce_with_logits: shape mismatch " + to_string(logits.shape()) + " vs " + to_string(targets.shape()));
    }
    // max(z, 0) - z*y + log(1 + exp(-|z|))
    const Tensor soft = add(relu(logits), log(add_scalar(exp(neg(abs(logits))), Real(1))));
    return reduce_mean(sub(soft, mul(logits, targets)));
}

Tensor mean_absolute_error(const Tensor& prediction, const Tensor& target) {
    if (prediction.shape() != target.shape()) {
        throw Error("mean_absolute_error: shape mismatch " + to_string(prediction.shape()) + " vs " +
                    to_string(target.shape()));
    }
    return reduce_mean(abs(sub(prediction, target)));
}

MinibatchSampler::MinibatchSampler(std::int64_t n, std::int64_t batch_size, Rng& rng)
    : order_(static_cast<std::size_t>(n)), batch_size_(std::min(batch_size, n)), cursor_(order_.size()), rng_(rng) {
    if (n < 1 || batch_size < 1) throw Error("MinibatchSampler: n and batch_size must be >= 1");
    std::iota(order_.begin(), order_.end(), 0);
}

std::vector<std::int64_t> MinibatchSampler::next() {
    if (cursor_ + static_cast<std::size_t>(batch_size_) > order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_.engine());
        cursor_ = 0;
    }
    std::vector<std::int64_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                  order_.begin() + static_cast<std::ptrdiff_t>(cursor_) + batch_size_);
    cursor_ += static_cast<std::size_t>(batch_size_);
    return out;
}

}  // namespace ttae
