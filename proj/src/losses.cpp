#include "segrob/losses.hpp"

#include "segrob/softmax.hpp"

#include <cmath>

namespace segrob {

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "ce") return LossKind::Ce;
  if (name == "js") return LossKind::Js;
  if (name == "mce") return LossKind::MaskedCe;
  if (name == "mce-bal") return LossKind::MaskedCeBalanced;
  if (name == "segpgd") return LossKind::SegPgd;
  if (name == "cospgd") return LossKind::CosPgd;
  throw std::invalid_argument("unknown loss kind: " + name);
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Ce: return "ce";
    case LossKind::Js: return "js";
    case LossKind::MaskedCe: return "mce";
    case LossKind::MaskedCeBalanced: return "mce-bal";
    case LossKind::SegPgd: return "segpgd";
    case LossKind::CosPgd: return "cospgd";
  }
  return "?";
}

ClassWeights ClassWeights::from_pixel_counts(const Eigen::VectorXd& counts) {
  ClassWeights w;
  w.weight = Vector::Zero(counts.size());
  w.present.assign(size_t(counts.size()), 0);
  for (Eigen::Index s = 0; s < counts.size(); ++s) {
    if (counts[s] > 0) {
      w.weight[s] = 1.0 / counts[s];
      w.present[size_t(s)] = 1;
    }
  }
  return w;
}

namespace {

void check_loss_inputs(const LogitMap& logits, const LabelMap& labels) {
  check(logits.height == labels.height && logits.width == labels.width,
        "loss: logits/labels shape mismatch");
  labels.validate_range(logits.classes);
}

}  // namespace

LossEval ce_loss(const LogitMap& logits, const LabelMap& labels) {
  check_loss_inputs(logits, labels);
  check_numeric(logits.finite(), "ce_loss: non-finite logits");
  const int n = logits.pixels();
  LossEval out;
  out.per_pixel.resize(n);
  const Vector row_max = logits.data.rowwise().maxCoeff();
  out.grad = (logits.data.colwise() - row_max).array().exp();
  const Vector sums = out.grad.rowwise().sum();
  out.grad.array().colwise() /= sums.array();
  for (int a = 0; a < n; ++a) {
    const int y = labels.labels[a];
    out.per_pixel[a] = std::log(sums[a]) + row_max[a] - logits.data(a, y);
    out.grad(a, y) -= 1.0;
  }
  out.total = out.per_pixel.sum();
  return out;
}

LossEval js_loss(const LogitMap& logits, const LabelMap& labels) {
  check_loss_inputs(logits, labels);
  const int n = logits.pixels();
  const int k = logits.classes;
  const ProbMap p = softmax(logits);
  LossEval out;
  out.per_pixel.resize(n);
  out.grad.resize(n, k);
  const double log2 = std::log(2.0);
  for (int a = 0; a < n; ++a) {
    const int y = labels.labels[a];
    const double py = p.data(a, y);
    double value = std::log(2.0 / (1.0 + py));
    for (int i = 0; i < k; ++i) {
      const double pi = p.data(a, i);
      if (pi <= 0.0) continue;  // 0 * log 0 = 0
      if (i == y)
        value += pi * std::log(2.0 * pi / (1.0 + pi));
      else
        value += pi * log2;
    }
    out.per_pixel[a] = 0.5 * value;
    // p_y log(p_y / (1+p_y)) -> 0 as p_y -> 0
    const double factor = py > 0.0 ? 0.5 * py * std::log(py / (1.0 + py)) : 0.0;
    for (int t = 0; t < k; ++t)
      out.grad(a, t) = factor * ((t == y ? 1.0 : 0.0) - p.data(a, t));
  }
  out.total = out.per_pixel.sum();
  return out;
}

LossEval masked_ce_loss(const LogitMap& logits, const LabelMap& labels, bool balanced,
                        const ClassWeights* weights, const PredictionMap* pred) {
  check(!balanced || weights != nullptr, "masked_ce_loss: balanced variant needs class weights");
  LossEval out = ce_loss(logits, labels);
  PredictionMap local;
  if (!pred) {
    local = predict(logits);
    pred = &local;
  }
  for (int a = 0; a < logits.pixels(); ++a) {
    const int y = labels.labels[a];
    const double w = (pred->labels[a] == y) ? (balanced ? weights->at(y) : 1.0) : 0.0;
    out.per_pixel[a] *= w;
    out.grad.row(a) *= w;
  }
  out.total = out.per_pixel.sum();
  return out;
}

Vector frozen_pixel_weights(const LogitMap& logits, const LabelMap& labels, LossKind kind,
                            int iteration, int total_iterations, const ClassWeights* weights,
                            const PredictionMap* pred_in) {
  check_loss_inputs(logits, labels);
  const int n = logits.pixels();
  PredictionMap local;
  auto prediction = [&]() -> const PredictionMap& {
    if (pred_in) return *pred_in;
    if (local.labels.size() == 0) local = predict(logits);
    return local;
  };
  Vector w(n);
  switch (kind) {
    case LossKind::Ce:
      w.setOnes();
      break;
    case LossKind::MaskedCe:
    case LossKind::MaskedCeBalanced: {
      const PredictionMap& pred = prediction();
      for (int a = 0; a < n; ++a) {
        const int y = labels.labels[a];
        const bool correct = pred.labels[a] == y;
        const double base = kind == LossKind::MaskedCeBalanced ? weights->at(y) : 1.0;
        w[a] = correct ? base : 0.0;
      }
      break;
    }
    case LossKind::SegPgd: {
      check(total_iterations >= 1 && iteration >= 1 && iteration <= total_iterations,
            "segpgd: iteration out of range");
      const double lambda = double(iteration - 1) / (2.0 * total_iterations);
      const PredictionMap& pred = prediction();
      for (int a = 0; a < n; ++a)
        w[a] = pred.labels[a] == labels.labels[a] ? 1.0 - lambda : lambda;
      break;
    }
    case LossKind::CosPgd: {
      for (int a = 0; a < n; ++a) {
        double norm_sq = 0.0;
        for (int t = 0; t < logits.classes; ++t) {
          const double s = 1.0 / (1.0 + std::exp(-logits.data(a, t)));
          norm_sq += s * s;
        }
        const double sy = 1.0 / (1.0 + std::exp(-logits.data(a, labels.labels[a])));
        w[a] = sy / std::sqrt(norm_sq);
      }
      break;
    }
    case LossKind::Js:
      throw std::invalid_argument("frozen_pixel_weights: JS is not a weighted-CE loss");
  }
  return w;
}

LossEval baseline_weighted_ce(const LogitMap& logits, const LabelMap& labels, LossKind kind,
                              int iteration, int total_iterations, const PredictionMap* pred) {
  check(kind == LossKind::SegPgd || kind == LossKind::CosPgd,
        "baseline_weighted_ce: kind must be segpgd or cospgd");
  const Vector w =
      frozen_pixel_weights(logits, labels, kind, iteration, total_iterations, nullptr, pred);
  LossEval out = ce_loss(logits, labels);
  out.per_pixel.array() *= w.array();
  out.grad.array().colwise() *= w.array();
  out.total = out.per_pixel.sum();
  return out;
}

LossEval eval_loss(LossKind kind, const LogitMap& logits, const LabelMap& labels,
                   const ClassWeights* weights, int iteration, int total_iterations,
                   const PredictionMap* pred) {
  switch (kind) {
    case LossKind::Ce: return ce_loss(logits, labels);
    case LossKind::Js: return js_loss(logits, labels);
    case LossKind::MaskedCe: return masked_ce_loss(logits, labels, false, nullptr, pred);
    case LossKind::MaskedCeBalanced: return masked_ce_loss(logits, labels, true, weights, pred);
    case LossKind::SegPgd:
    case LossKind::CosPgd:
      return baseline_weighted_ce(logits, labels, kind, iteration, total_iterations, pred);
  }
  throw std::invalid_argument("eval_loss: bad kind");
}

}  // namespace segrob
