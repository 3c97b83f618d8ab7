#include "cmems/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace cmems {

Adam::Adam(AdamConfig cfg, const std::vector<std::size_t>& group_sizes) : cfg_(cfg) {
    for (auto n : group_sizes) {
        m_.emplace_back(n, real(0));
        v_.emplace_back(n, real(0));
    }
}

void Adam::step(std::span<const std::span<real>> params, std::span<const std::span<const real>> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw std::invalid_argument("Adam::step: group count mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step_size = cfg_.lr / bc1;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, wd = cfg_.weight_decay, eps = cfg_.eps;
    for (std::size_t g = 0; g < params.size(); ++g) {
        auto p = params[g];
        auto gr = grads[g];
        auto& m = m_[g];
        auto& v = v_[g];
        if (p.size() != m.size() || gr.size() != m.size()) throw std::invalid_argument("Adam::step: size mismatch");
        const std::size_t n = p.size();
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            const double grad = static_cast<double>(gr[i]) + wd * p[i];
            const double mi = b1 * m[i] + (1 - b1) * grad;
            const double vi = b2 * v[i] + (1 - b2) * grad * grad;
            m[i] = static_cast<real>(mi);
            v[i] = static_cast<real>(vi);
            p[i] = static_cast<real>(p[i] - step_size * mi / (std::sqrt(vi / bc2) + eps));
        }
    }
}

}  // namespace cmems
