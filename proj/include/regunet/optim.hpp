// Adam optimizer with bias-corrected first and second moments.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "regunet/matrix.hpp"

namespace regunet {

/// A named view onto one trainable parameter and its gradient buffer.
struct ParamRef {
    Matrix* value;
    Matrix* grad;
    std::string name;
};

struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

inline AdamState adam_init(const std::vector<ParamRef>& params,
                           double lr = 0.001, double beta1 = 0.9,
                           double beta2 = 0.999, double eps = 1e-8) {
    if (params.empty()) throw std::invalid_argument("adam_init: parameter list is empty");
    if (lr <= 0.0) throw std::invalid_argument("adam_init: lr must be positive");
    AdamState state;
    state.lr = lr;
    state.beta1 = beta1;
    state.beta2 = beta2;
    state.eps = eps;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const ParamRef& p : params) {
        state.m.emplace_back(p.value->rows(), p.value->cols());
        state.v.emplace_back(p.value->rows(), p.value->cols());
    }
    return state;
}

/// One Adam step over all parameters:
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,
///   param <- param - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps).
/// eps sits outside the square root.
inline void adam_step(AdamState& state, const std::vector<ParamRef>& params) {
    if (params.size() != state.m.size())
        throw ShapeError("adam_step: got " + std::to_string(params.size()) +
                         " parameters, state holds " + std::to_string(state.m.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const ParamRef& p = params[k];
        if (!p.grad->same_shape(*p.value) || !state.m[k].same_shape(*p.value))
            throw ShapeError("adam_step: shape mismatch for parameter '" + p.name + "'");
        const double* g = p.grad->data();
        for (std::size_t i = 0, n = p.grad->size(); i < n; ++i)
            if (!std::isfinite(g[i]))
                throw NumericError("adam_step: non-finite gradient in parameter '" + p.name + "'");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        double* w = params[k].value->data();
        const double* g = params[k].grad->data();
        double* m = state.m[k].data();
        double* v = state.v[k].data();
        for (std::size_t i = 0, n = params[k].value->size(); i < n; ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

} // namespace regunet
