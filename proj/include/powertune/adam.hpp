#pragma once

#include <cmath>

#include "powertune/params.hpp"

namespace powertune {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n, double learning_rate = 3e-4)
        : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

inline void adam_step(AdamState& state, ParamVector& params, const std::vector<double>& grad) {
    if (grad.size() != params.size() || state.m.size() != params.size())
        throw RejectedInput("adam_step: length mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params.values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

}  // namespace powertune
