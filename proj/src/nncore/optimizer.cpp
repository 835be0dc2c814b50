#include "satdet/nn/optimizer.hpp"

#include <cmath>

namespace satdet::nn {

void Adam::step(std::span<Param* const> params) {
    if (m_.empty()) {
        for (const Param* p : params) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
    if (m_.size() != params.size()) {
        throw ShapeError("adam: parameter count changed from " + std::to_string(m_.size()) + " to " +
                         std::to_string(params.size()));
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (p.grad.empty()) continue;
        require_same_shape(p.value.shape(), p.grad.shape(), "adam gradient");
        require_same_shape(p.value.shape(), m_[i].shape(), "adam state");
        double* w = p.value.ptr();
        const double* g = p.grad.ptr();
        double* m = m_[i].ptr();
        double* v = v_[i].ptr();
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            w[k] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

} // namespace satdet::nn
