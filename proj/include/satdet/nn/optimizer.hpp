#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "satdet/nn/layers.hpp"

namespace satdet::nn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias-corrected moments. State is positional: the same
/// parameter list, in the same order, must be passed to every step.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(std::span<Param* const> params);
    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    const AdamConfig& config() const { return config_; }
    std::int64_t steps() const { return t_; }

private:
    AdamConfig config_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

} // namespace satdet::nn
