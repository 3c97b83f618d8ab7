#include "cmems/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cmems/kernels.hpp"

namespace cmems {
namespace {

void check_target(const ProbMap& p, const PseudoLabel& t) {
    const Shape4& s = p.probs.shape();
    if (s.n != t.n || s.h != t.h || s.w != t.w || t.classes.size() != t.size() || t.valid.size() != t.size()) {
        throw ShapeError("loss target " + std::to_string(t.n) + "x" + std::to_string(t.h) + "x" +
                         std::to_string(t.w) + " does not match predictions " + s.str());
    }
    for (auto c : t.classes) {
        if (c < 0 || c >= s.c) throw ShapeError("target class " + std::to_string(c) + " outside prediction classes");
    }
}

struct DiceTerms {
    // [n][k]
    std::vector<double> inter, psum, tsum;
};

DiceTerms dice_terms(const ProbMap& p, const PseudoLabel& t) {
    const int n_items = t.n, k = p.probs.c();
    const std::size_t hw = static_cast<std::size_t>(t.h) * t.w;
    DiceTerms d;
    d.inter.assign(static_cast<std::size_t>(n_items) * k, 0.0);
    d.psum = d.inter;
    d.tsum = d.inter;
    for (int n = 0; n < n_items; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = n * hw + i;
            if (!t.valid[idx]) continue;
            const int tc = t.classes[idx];
            for (int c = 0; c < k; ++c) d.psum[n * k + c] += p.probs.plane(n, c)[i];
            d.inter[n * k + tc] += p.probs.plane(n, tc)[i];
            d.tsum[n * k + tc] += 1.0;
        }
    }
    return d;
}

double dice_from_terms(const DiceTerms& d, int n_items, int k) {
    double total = 0;
    for (int n = 0; n < n_items; ++n) {
        double coeff = 0;
        for (int c = 0; c < k; ++c) {
            const std::size_t j = static_cast<std::size_t>(n) * k + c;
            coeff += (2.0 * d.inter[j] + kDiceEps) / (d.psum[j] + d.tsum[j] + kDiceEps);
        }
        total += 1.0 - coeff / k;
    }
    return n_items > 0 ? total / n_items : 0.0;
}

}  // namespace

ProbMap softmax_probs(const Tensor& logits) {
    ProbMap p;
    kernels::softmax_channels(logits, p.probs);
    return p;
}

PseudoLabel pseudo_label(const ProbMap& p, double tau, bool literal_eq3) {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("pseudo_label: tau must lie in (0,1)");
    const Shape4& s = p.probs.shape();
    PseudoLabel t;
    t.n = s.n;
    t.h = s.h;
    t.w = s.w;
    t.classes.resize(t.size());
    t.valid.resize(t.size());
    const std::size_t hw = s.plane();
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
            int best = 0;
            real best_p = p.probs.plane(n, 0)[i];
            for (int c = 1; c < s.c; ++c) {
                const real v = p.probs.plane(n, c)[i];
                if (v > best_p) {
                    best_p = v;
                    best = c;
                }
            }
            const bool confident = best_p >= tau;
            const std::size_t idx = n * hw + i;
            if (literal_eq3) {
                t.classes[idx] = confident ? best : 0;
                t.valid[idx] = 1;
            } else {
                t.classes[idx] = best;
                t.valid[idx] = confident ? 1 : 0;
            }
        }
    }
    return t;
}

double ce_loss(const ProbMap& p, const PseudoLabel& t) {
    check_target(p, t);
    const std::size_t hw = static_cast<std::size_t>(t.h) * t.w;
    double sum = 0;
    std::size_t count = 0;
    for (int n = 0; n < t.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = n * hw + i;
            if (!t.valid[idx]) continue;
            sum -= std::log(std::max<double>(p.probs.plane(n, t.classes[idx])[i], kProbFloor));
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

double dice_loss(const ProbMap& p, const PseudoLabel& t) {
    check_target(p, t);
    return dice_from_terms(dice_terms(p, t), t.n, p.probs.c());
}

double seg_loss(const ProbMap& p, const PseudoLabel& t) { return 0.5 * ce_loss(p, t) + 0.5 * dice_loss(p, t); }

double seg_loss_backward(const ProbMap& p, const PseudoLabel& t, double weight, Tensor& dlogits) {
    check_target(p, t);
    const Shape4& s = p.probs.shape();
    const int k = s.c;
    const std::size_t hw = s.plane();
    if (dlogits.empty()) dlogits = Tensor(s);
    require_same_shape(dlogits, p.probs, "seg_loss_backward");

    const double ce = ce_loss(p, t);
    const DiceTerms d = dice_terms(p, t);
    const double dice = dice_from_terms(d, t.n, k);
    const double loss = 0.5 * ce + 0.5 * dice;
    if (weight == 0.0) return loss;

    const std::size_t valid = t.valid_count();
    if (valid == 0) return loss;
    const double ce_scale = 0.5 * weight / static_cast<double>(valid);
    const double dice_scale = -0.5 * weight / (static_cast<double>(t.n) * k);

    std::vector<double> g(k), pk(k);
    for (int n = 0; n < t.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t idx = n * hw + i;
            if (!t.valid[idx]) continue;
            const int tc = t.classes[idx];
            // dL/dp_c from the Dice term.
            for (int c = 0; c < k; ++c) {
                const std::size_t j = static_cast<std::size_t>(n) * k + c;
                const double den = d.psum[j] + d.tsum[j] + kDiceEps;
                const double tk = c == tc ? 1.0 : 0.0;
                g[c] = dice_scale * (2.0 * tk * den - (2.0 * d.inter[j] + kDiceEps)) / (den * den);
                pk[c] = p.probs.plane(n, c)[i];
            }
            double dot = 0;
            for (int c = 0; c < k; ++c) dot += pk[c] * g[c];
            for (int c = 0; c < k; ++c) {
                // Softmax chain rule for Dice; CE through softmax is p - onehot.
                const double ce_grad = ce_scale * (pk[c] - (c == tc ? 1.0 : 0.0));
                dlogits.plane(n, c)[i] += static_cast<real>(pk[c] * (g[c] - dot) + ce_grad);
            }
        }
    }
    return loss;
}

double cmip_loss(std::span<const ProbMap, 2> preds, std::span<const PseudoLabel, 2> pseudos, bool cross) {
    double sum = 0;
    for (int m = 0; m < 2; ++m) sum += seg_loss(preds[m], pseudos[teacher_of(m, cross)]);
    return sum;
}

double cmfp_loss(std::span<const ProbMap, 2> preds, std::span<const PseudoLabel, 2> pseudos, bool cross) {
    return cmip_loss(preds, pseudos, cross);
}

LossBreakdown total_loss(double l_e, double l_s, double l_cmip, double l_cmfp, double lambda_cmip,
                         double lambda_cmfp) {
    LossBreakdown b;
    b.l_e = l_e;
    b.l_s = l_s;
    b.l_cmip = l_cmip;
    b.l_cmfp = l_cmfp;
    b.lambda_cmip = lambda_cmip;
    b.lambda_cmfp = lambda_cmfp;
    b.l_total = l_e + l_s + lambda_cmip * l_cmip + lambda_cmfp * l_cmfp;
    return b;
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
    j = nlohmann::json{{"l_e", b.l_e},
                       {"l_s", b.l_s},
                       {"l_cmip", b.l_cmip},
                       {"l_cmfp", b.l_cmfp},
                       {"l_total", b.l_total},
                       {"valid_pixel_fraction", b.valid_pixel_fraction}};
}

}  // namespace cmems
