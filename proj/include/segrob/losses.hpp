#pragma once

#include "segrob/types.hpp"

#include <string>
#include <vector>

namespace segrob {

enum class LossKind { Ce, Js, MaskedCe, MaskedCeBalanced, SegPgd, CosPgd };

LossKind loss_kind_from_string(const std::string& name);
std::string loss_kind_name(LossKind kind);

/// Per-class loss weights 1/N_s from training-split pixel counts. Classes
/// absent from the training data carry no weight and may not appear as labels.
struct ClassWeights {
  Vector weight;               // K entries, 1/N_s; 0 where absent
  std::vector<char> present;   // per class

  static ClassWeights from_pixel_counts(const Eigen::VectorXd& counts);
  double at(int label) const {
    check(label >= 0 && label < int(weight.size()), "ClassWeights: label out of range");
    check(present[size_t(label)] != 0, "ClassWeights: class absent from training data");
    return weight[label];
  }
};

/// Value and logit gradient of a per-pixel attack objective, plus the scalar
/// total (plain sum over pixels).
struct LossEval {
  Vector per_pixel;  // H*W
  Matrix grad;       // (H*W) x K
  double total = 0.0;
};

/// L_CE = -log p_y, stable via max-shifted log-sum-exp; gradient p - e_y.
LossEval ce_loss(const LogitMap& logits, const LabelMap& labels);

/// Jensen-Shannon divergence between softmax(u) and the one-hot label:
/// value 1/2 [log(2/(1+p_y)) + sum_i p_i log(2 p_i / (delta_yi + p_i))],
/// gradient d/du_t = 1/2 p_y log(p_y/(1+p_y)) (delta_yt - p_t).
LossEval js_loss(const LogitMap& logits, const LabelMap& labels);

/// Masked CE: both value and gradient carry mask * w_y, where the mask is 1
/// iff the pixel is currently classified correctly and is recomputed from the
/// given logits (never differentiated through). Unbalanced uses w_y = 1,
/// balanced uses w_y = 1/N_y from the supplied weights.
LossEval masked_ce_loss(const LogitMap& logits, const LabelMap& labels, bool balanced,
                        const ClassWeights* weights = nullptr,
                        const PredictionMap* pred = nullptr);

/// SegPGD / CosPGD objectives: per-pixel weight times CE value and CE
/// gradient, weights treated as constants. SegPGD weighs correct pixels
/// 1-lambda(t) and wrong ones lambda(t) with lambda(t) = (t-1)/(2T); CosPGD
/// weighs by sigma(u_y)/||sigma(u)||_2 with the logistic sigma.
LossEval baseline_weighted_ce(const LogitMap& logits, const LabelMap& labels, LossKind kind,
                              int iteration, int total_iterations,
                              const PredictionMap* pred = nullptr);

/// Constant per-pixel weights frozen from the evaluation point of `kind`;
/// test oracles difference sum_a w_a * CE_a against the analytic gradient.
Vector frozen_pixel_weights(const LogitMap& logits, const LabelMap& labels, LossKind kind,
                            int iteration, int total_iterations,
                            const ClassWeights* weights = nullptr,
                            const PredictionMap* pred = nullptr);

/// Dispatch on kind. iteration/total_iterations only matter for SegPGD;
/// weights only for the balanced masked CE.
LossEval eval_loss(LossKind kind, const LogitMap& logits, const LabelMap& labels,
                   const ClassWeights* weights = nullptr, int iteration = 1,
                   int total_iterations = 1, const PredictionMap* pred = nullptr);

}  // namespace segrob
