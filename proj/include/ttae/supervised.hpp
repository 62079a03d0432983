#pragma once

#include "ttae/layers.hpp"
#include "ttae/optim.hpp"
#include "ttae/random.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ttae {

/// Copy of `params` whose tensors are watched on `tape` under their hierarchical names.
template <class P>
P bind_params(const P& params, Tape& tape, const std::string& prefix) {
    P bound = params;
    bound.for_each_param(prefix, [&](const std::string& name, Tensor& t) { t = tape.watch(t, name); });
    return bound;
}

template <class P>
std::vector<NamedParam> collect_params(P& params, const std::string& prefix) {
    std::vector<NamedParam> out;
    params.for_each_param(prefix, [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
    return out;
}

/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets, computed stably.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
Tensor mean_absolute_error(const Tensor& prediction, const Tensor& target);

/// Indices drawn in reshuffled passes over [0, n).
class MinibatchSampler {
public:
    MinibatchSampler(std::int64_t n, std::int64_t batch_size, Rng& rng);
    std::vector<std::int64_t> next();

private:
    std::vector<std::int64_t> order_;
    std::int64_t batch_size_;
    std::size_t cursor_;
    Rng& rng_;
};

/// Fixed Adam budget for the small post-hoc models.
struct FitBudget {
    std::int64_t steps = 500;
    std::int64_t batch_size = 64;
    double lr = 1e-3;
};

/// Runs `budget.steps` Adam updates; `loss(bound_params, batch_indices)` builds the scalar loss.
template <class P, class LossFn>
void fit_params(P& params, const std::string& prefix, std::int64_t n, const FitBudget& budget, Rng& rng, LossFn&& loss) {
    if (n < 1) throw Error("fit_params: no training samples");
    MinibatchSampler sampler(n, budget.batch_size, rng);
    AdamState state;
    const auto named = collect_params(params, prefix);
    for (std::int64_t step = 0; step < budget.steps; ++step) {
        const auto idx = sampler.next();
        Tape tape;
        Gradients grads;
        {
            const P bound = bind_params(params, tape, prefix);
            grads = tape.backward(loss(bound, std::span<const std::int64_t>(idx)));
        }
        adam_step(named, grads, state, static_cast<Real>(budget.lr));
    }
}

}  // namespace ttae
