#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmems/tensor.hpp"

namespace cmems {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// L2 penalty added to the gradient (coupled, not decoupled).
    double weight_decay = 1e-4;
};

/// Adam over several parameter groups sharing one step counter.
class Adam {
public:
    Adam() = default;
    Adam(AdamConfig cfg, const std::vector<std::size_t>& group_sizes);

    void step(std::span<const std::span<real>> params, std::span<const std::span<const real>> grads);

    const AdamConfig& config() const { return cfg_; }
    std::int64_t steps() const { return t_; }

    // Exposed for checkpointing.
    std::vector<std::vector<real>>& first_moments() { return m_; }
    std::vector<std::vector<real>>& second_moments() { return v_; }
    const std::vector<std::vector<real>>& first_moments() const { return m_; }
    const std::vector<std::vector<real>>& second_moments() const { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<real>> m_, v_;
};

}  // namespace cmems
