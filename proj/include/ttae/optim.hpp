#pragma once

#include "ttae/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ttae {

/// A trainable tensor addressed by a stable name.
struct NamedParam {
    std::string name;
    Tensor* value;
};

struct AdamState {
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real epsilon = Real(1e-8);
    std::int64_t step = 0;
    std::map<std::string, std::vector<Real>> first_moment;
    std::map<std::string, std::vector<Real>> second_moment;
};

/// One bias-corrected Adam update of every parameter in `params`.
/// Parameters without an entry in `grads` are treated as having zero gradient.
void adam_step(const std::vector<NamedParam>& params, const Gradients& grads, AdamState& state, Real lr);

struct LrSchedule {
    double initial_lr = 0.005;
    double end_lr = 0.0001;
    double power = 0.5;
    std::int64_t decay_steps = 1;

    void validate() const;
};

/// Polynomial decay from initial_lr to end_lr over decay_steps, flat afterwards.
double poly_decay_lr(std::int64_t step, const LrSchedule& sched);

}  // namespace ttae
