// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/adam.hpp"

#include <cmath>

namespace hyperalign {

Adam::Adam(std::vector<Tensor*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const Tensor* p : params_) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
    }
}

void Adam::step(std::span<const Tensor> grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = *params_[k];
        const Tensor& g = grads[k];
        if (g.shape() != p.shape()) {
            throw ShapeError("Adam::step: gradient " + shape_str(g.shape()) + " for parameter " + shape_str(p.shape()));
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            m_[k][i] = b1 * m_[k][i] + (1.0 - b1) * g[i];
            v_[k][i] = b2 * v_[k][i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= config_.learning_rate * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + config_.epsilon);
        }
    }
}

}  // namespace hyperalign
