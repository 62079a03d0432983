#include "ttae/optim.hpp"

#include <algorithm>
#include <cmath>

namespace ttae {

void adam_step(const std::vector<NamedParam>& params, const Gradients& grads, AdamState& state, Real lr) {
    if (!(lr > 0)) throw Error("adam_step: learning rate must be positive");
    for (const auto& p : params) {
        auto it = grads.find(p.name);
        if (it != grads.end() && it->second.shape() != p.value->shape()) {
            throw Error("adam_step: gradient for '" + p.name + "' has shape " + to_string(it->second.shape()) +
                        " but parameter has shape " + to_string(p.value->shape()));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const Real bc1 = static_cast<Real>(1.0 - std::pow(static_cast<double>(state.beta1), t));
    const Real bc2 = static_cast<Real>(1.0 - std::pow(static_cast<double>(state.beta2), t));

    for (const auto& p : params) {
        const auto n = static_cast<std::size_t>(p.value->size());
        auto& m = state.first_moment[p.name];
        auto& v = state.second_moment[p.name];
        if (m.empty()) {
            m.assign(n, Real(0));
            v.assign(n, Real(0));
        }
        if (m.size() != n) throw Error("adam_step: moment size mismatch for '" + p.name + "'");
        auto it = grads.find(p.name);
        const Real* g = it == grads.end() ? nullptr : it->second.data().data();
        auto w = p.value->mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            const Real gi = g ? g[i] : Real(0);
            m[i] = state.beta1 * m[i] + (1 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1 - state.beta2) * gi * gi;
            const Real mhat = m[i] / bc1;
            const Real vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

void LrSchedule::validate() const {
    if (!(initial_lr > end_lr && end_lr > 0)) throw Error("LrSchedule: require initial_lr > end_lr > 0");
    if (!(power > 0)) throw Error("LrSchedule: power must be positive");
    if (decay_steps < 1) throw Error("LrSchedule: decay_steps must be at least 1");
}

double poly_decay_lr(std::int64_t step, const LrSchedule& sched) {
    const double s = static_cast<double>(std::clamp<std::int64_t>(step, 0, sched.decay_steps));
    const double frac = 1.0 - s / static_cast<double>(sched.decay_steps);
    return (sched.initial_lr - sched.end_lr) * std::pow(frac, sched.power) + sched.end_lr;
}

}  // namespace ttae
