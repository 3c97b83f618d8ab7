#pragma once

#include <array>
#include <span>

#include <json.hpp>

#include "cmems/datamodel.hpp"
#include "cmems/tensor.hpp"

namespace cmems {

inline constexpr double kDiceEps = 1e-5;
/// Probability floor inside the cross-entropy log.
inline constexpr double kProbFloor = 1e-12;

/// Channel softmax. Throws std::domain_error on non-finite logits.
ProbMap softmax_probs(const Tensor& logits);

/// argmax over classes (ties to the smallest index), valid where max prob ≥ τ.
/// With literal_eq3 the below-threshold pixels become class 0 and stay valid.
PseudoLabel pseudo_label(const ProbMap& p, double tau, bool literal_eq3 = false);

/// Mean of -log p[target] over valid pixels of the whole batch; 0 if none are valid.
double ce_loss(const ProbMap& p, const PseudoLabel& target);
/// 1 - class-mean soft Dice per item (background included), averaged over items.
double dice_loss(const ProbMap& p, const PseudoLabel& target);
/// ½ CE + ½ Dice.
double seg_loss(const ProbMap& p, const PseudoLabel& target);

/// seg_loss plus its gradient with respect to the logits that produced p,
/// scaled by `weight` and added into dlogits (allocated if empty).
double seg_loss_backward(const ProbMap& p, const PseudoLabel& target, double weight, Tensor& dlogits);

/// Σ_m seg(preds[m], pseudos[m̄]); with cross=false pairs preds[m] with pseudos[m].
double cmip_loss(std::span<const ProbMap, 2> preds, std::span<const PseudoLabel, 2> pseudos, bool cross = true);
/// Same pairing rule as cmip_loss, applied to feature-perturbed predictions.
double cmfp_loss(std::span<const ProbMap, 2> preds, std::span<const PseudoLabel, 2> pseudos, bool cross = true);

/// Index of the pseudo-label that supervises network m (0-based).
constexpr int teacher_of(int m, bool cross) { return cross ? 1 - m : m; }

struct LossBreakdown {
    double l_e = 0, l_s = 0, l_cmip = 0, l_cmfp = 0, l_total = 0;
    double lambda_cmip = 0, lambda_cmfp = 0;
    /// Per-network contributions, index m-1.
    std::array<double, 2> e{}, s{}, cmip{}, cmfp{};
    /// Fraction of unlabeled pixels whose pseudo-label passed τ, both networks pooled.
    double valid_pixel_fraction = 0;
};

/// Sums the four components with the trade-off weights:
/// l_total = l_e + l_s + λ_cmip·l_cmip + λ_cmfp·l_cmfp.
LossBreakdown total_loss(double l_e, double l_s, double l_cmip, double l_cmfp, double lambda_cmip,
                         double lambda_cmfp);

void to_json(nlohmann::json& j, const LossBreakdown& b);

}  // namespace cmems
