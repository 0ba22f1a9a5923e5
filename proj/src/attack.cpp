#include "segrob/attack.hpp"

#include "segrob/data.hpp"
#include "segrob/parallel.hpp"
#include "segrob/rng.hpp"
#include "segrob/softmax.hpp"

#include <algorithm>
#include <cmath>

namespace segrob {

Schedule schedule_from_string(const std::string& name) {
  if (name == "red-eps") return Schedule::RedEps;
  if (name == "const-eps") return Schedule::ConstEps;
  throw std::invalid_argument("unknown schedule: " + name);
}

std::string schedule_name(Schedule s) { return s == Schedule::RedEps ? "red-eps" : "const-eps"; }

void AttackConfig::validate() const {
  check(epsilon >= 0.0, "AttackConfig: epsilon must be >= 0");
  check(iterations >= 1, "AttackConfig: iterations must be >= 1");
  check(restarts >= 1, "AttackConfig: restarts must be >= 1");
  check(step_scale > 0.0, "AttackConfig: step scale must be > 0");
}

ImageTensor project_linf_box(const ImageTensor& original, const ImageTensor& candidate,
                             double epsilon) {
  check(original.same_shape(candidate), "project_linf_box: shape mismatch");
  ImageTensor out = original;
  out.data = candidate.data.cwiseMax((original.data.array() - epsilon).matrix())
                 .cwiseMin((original.data.array() + epsilon).matrix())
                 .cwiseMax(0.0)
                 .cwiseMin(1.0);
  return out;
}

bool is_feasible(const ImageTensor& original, const ImageTensor& candidate, double epsilon,
                 double tol) {
  if (!original.same_shape(candidate)) return false;
  // compare against the same computed bounds the projection clamps to, so a
  // projected point is feasible with zero tolerance
  const double over = (candidate.data - (original.data.array() + epsilon).matrix()).maxCoeff();
  const double under = ((original.data.array() - epsilon).matrix() - candidate.data).maxCoeff();
  return over <= tol && under <= tol && candidate.data.minCoeff() >= -tol &&
         candidate.data.maxCoeff() <= 1.0 + tol;
}

namespace {

Matrix sign_of(const Matrix& g) {
  return g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

ImageTensor random_start(const ImageTensor& original, double epsilon, Rng& rng) {
  ImageTensor cand = original;
  for (Eigen::Index i = 0; i < cand.data.size(); ++i)
    cand.data.data()[i] += rng.uniform(-epsilon, epsilon);
  return project_linf_box(original, cand, epsilon);
}

/// Attack-internal score of an iterate: lower is "worse for the model".
/// Plain correct-pixel count, or the 1/N_y-weighted count for the balanced
/// loss whose target is the mIoU bound.
double tracked_badness(const PredictionMap& pred, const LabelMap& labels, LossKind kind,
                       const ClassWeights* weights) {
  double score = 0.0;
  const bool weighted = kind == LossKind::MaskedCeBalanced && weights != nullptr;
  for (int a = 0; a < pred.pixels(); ++a) {
    if (pred.labels[a] == labels.labels[a]) score += weighted ? weights->at(labels.labels[a]) : 1.0;
  }
  return score;
}

/// Forward pass with the tape retained, so the input gradient reuses the
/// activations instead of paying for a second forward.
struct IterateEval {
  ForwardTape tape;
  LossEval loss;
  PredictionMap pred;
  double track = 0.0;
};

IterateEval evaluate(const ModelParams& model, LossKind kind, const ImageTensor& x,
                     const LabelMap& labels, const ClassWeights* weights, int t, int total) {
  IterateEval e;
  LogitMap logits(x.height, x.width, model.spec.num_classes,
                  forward_layers(model.spec.layers, model.layers, normalize_input(x.data),
                                 x.height, x.width, &e.tape));
  e.pred = predict(logits);
  e.loss = eval_loss(kind, logits, labels, weights, t, total, &e.pred);
  e.track = tracked_badness(e.pred, labels, kind, weights);
  return e;
}

Matrix gradient_of(const ModelParams& model, const IterateEval& e, const ImageTensor& x) {
  return kInputScale *
         backward_layers(model.spec.layers, model.layers, e.tape, e.loss.grad, x.height, x.width);
}

void finish_result(AttackResult& r, const LabelMap& labels, int num_classes) {
  r.counts = count_image(num_classes, r.prediction, labels, r.image_id);
  r.accuracy = double(r.counts.correct()) / double(labels.pixels());
}

/// APGD checkpoint schedule: w_j = ceil(p_j * n) with p_0 = 0, p_1 = 0.22,
/// p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06).
std::vector<int> checkpoint_schedule(int n_iter) {
  std::vector<int> w;
  double p_prev = 0.0, p = 0.22;
  while (true) {
    const int ck = int(std::ceil(p * n_iter));
    if (ck >= n_iter) break;
    if (w.empty() || ck > w.back()) w.push_back(ck);
    const double next = p + std::max(p - p_prev - 0.03, 0.06);
    p_prev = p;
    p = next;
  }
  return w;
}

}  // namespace

AttackResult apgd(const ModelParams& model, LossKind loss, const ImageTensor& image,
                  const LabelMap& labels, double epsilon, int n_iter, std::uint64_t seed,
                  const ClassWeights* weights, const ImageTensor* init, double step_scale) {
  check(epsilon >= 0.0, "apgd: epsilon must be >= 0");
  check(n_iter >= 1, "apgd: need at least one iteration");
  const int num_classes = model.spec.num_classes;

  Rng rng(derive_seed(seed, "apgd-init"));
  ImageTensor x = init ? project_linf_box(image, *init, epsilon)
                       : random_start(image, epsilon, rng);
  ImageTensor x_prev = x;

  IterateEval cur = evaluate(model, loss, x, labels, weights, 1, n_iter);

  AttackResult result;
  result.adversarial = x;
  result.prediction = cur.pred;
  double best_track = cur.track;

  double f_best = cur.loss.total;
  ImageTensor x_best = x;
  result.objective_trace.push_back(cur.loss.total);

  double step = 2.0 * epsilon * step_scale;
  const std::vector<int> checkpoints = checkpoint_schedule(n_iter);
  std::size_t ck_idx = 0;
  int last_ck = 0;
  int improvements = 0;
  double f_best_at_ck = f_best;
  double step_at_ck = step;

  for (int k = 0; k < n_iter; ++k) {
    const int t = std::min(k + 1, n_iter);
    check_numeric(cur.loss.grad.allFinite(), "apgd: non-finite loss gradient");
    const Matrix g = gradient_of(model, cur, x);
    check_numeric(g.allFinite(), "apgd: non-finite input gradient");

    ImageTensor z = x;
    z.data = x.data + step * sign_of(g);
    z = project_linf_box(image, z, epsilon);
    ImageTensor x_next = x;
    if (k == 0) {
      x_next = z;
    } else {
      x_next.data = x.data + 0.75 * (z.data - x.data) + 0.25 * (x.data - x_prev.data);
      x_next = project_linf_box(image, x_next, epsilon);
    }
    x_prev = std::move(x);
    x = std::move(x_next);

    const double f_prev_iter = cur.loss.total;
    cur = evaluate(model, loss, x, labels, weights, std::min(t + 1, n_iter), n_iter);
    result.objective_trace.push_back(cur.loss.total);
    if (cur.loss.total > f_prev_iter) ++improvements;
    if (cur.loss.total > f_best) {
      f_best = cur.loss.total;
      x_best = x;
    }
    if (cur.track < best_track) {
      best_track = cur.track;
      result.adversarial = x;
      result.prediction = cur.pred;
    }

    const int iterations_done = k + 1;
    if (ck_idx < checkpoints.size() && iterations_done == checkpoints[ck_idx]) {
      const int span = iterations_done - last_ck;
      const bool too_few_improvements = improvements < 0.75 * span;
      const bool stale = step == step_at_ck && f_best == f_best_at_ck;
      if (too_few_improvements || stale) {
        step *= 0.5;
        x = x_best;
        cur = evaluate(model, loss, x, labels, weights, std::min(t + 1, n_iter), n_iter);
      }
      last_ck = iterations_done;
      improvements = 0;
      f_best_at_ck = f_best;
      step_at_ck = step;
      ++ck_idx;
    }
  }

  result.best_objective = *std::max_element(result.objective_trace.begin(),
                                            result.objective_trace.end());
  finish_result(result, labels, num_classes);
  return result;
}

double baseline_step_size(double epsilon) {
  static const double radii[] = {0.25 / 255, 0.5 / 255, 1.0 / 255, 2.0 / 255,
                                 4.0 / 255,  8.0 / 255, 12.0 / 255};
  static const double steps[] = {8e-4, 9e-4, 1e-3, 2e-3, 3e-3, 5e-3, 6e-3};
  constexpr int n = 7;
  if (epsilon <= radii[0]) return steps[0];
  if (epsilon >= radii[n - 1]) return steps[n - 1];
  for (int i = 1; i < n; ++i) {
    if (epsilon <= radii[i]) {
      const double a = (epsilon - radii[i - 1]) / (radii[i] - radii[i - 1]);
      return steps[i - 1] + a * (steps[i] - steps[i - 1]);
    }
  }
  return steps[n - 1];
}

AttackResult pgd(const ModelParams& model, LossKind loss, const ImageTensor& image,
                 const LabelMap& labels, double epsilon, int n_iter, std::uint64_t seed,
                 const ClassWeights* weights, const ImageTensor* init) {
  check(epsilon >= 0.0, "pgd: epsilon must be >= 0");
  check(n_iter >= 1, "pgd: need at least one iteration");
  const int num_classes = model.spec.num_classes;
  const double step = baseline_step_size(epsilon);

  Rng rng(derive_seed(seed, "pgd-init"));
  ImageTensor x = init ? project_linf_box(image, *init, epsilon)
                       : random_start(image, epsilon, rng);

  AttackResult result;
  double f_best = -std::numeric_limits<double>::infinity();
  for (int t = 1; t <= n_iter; ++t) {
    IterateEval cur = evaluate(model, loss, x, labels, weights, t, n_iter);
    result.objective_trace.push_back(cur.loss.total);
    if (cur.loss.total > f_best) {
      f_best = cur.loss.total;
      result.adversarial = x;
      result.prediction = cur.pred;
    }
    check_numeric(cur.loss.grad.allFinite(), "pgd: non-finite loss gradient");
    const Matrix g = gradient_of(model, cur, x);
    check_numeric(g.allFinite(), "pgd: non-finite input gradient");
    ImageTensor x_next = x;
    x_next.data = x.data + step * sign_of(g);
    x = project_linf_box(image, x_next, epsilon);
  }
  IterateEval last = evaluate(model, loss, x, labels, weights, n_iter, n_iter);
  result.objective_trace.push_back(last.loss.total);
  if (last.loss.total > f_best) {
    f_best = last.loss.total;
    result.adversarial = x;
    result.prediction = last.pred;
  }
  result.best_objective = f_best;
  finish_result(result, labels, num_classes);
  return result;
}

namespace {

bool is_baseline(LossKind k) { return k == LossKind::SegPgd || k == LossKind::CosPgd; }

AttackResult run_single(const ModelParams& model, LossKind loss, const ImageTensor& image,
                        const LabelMap& labels, double epsilon, int n_iter, std::uint64_t seed,
                        const ClassWeights* weights, const ImageTensor* init, double step_scale) {
  return is_baseline(loss)
             ? pgd(model, loss, image, labels, epsilon, n_iter, seed, weights, init)
             : apgd(model, loss, image, labels, epsilon, n_iter, seed, weights, init, step_scale);
}

}  // namespace

AttackResult red_eps_attack(const ModelParams& model, LossKind loss, const ImageTensor& image,
                            const LabelMap& labels, double epsilon, int n_iter, std::uint64_t seed,
                            const ClassWeights* weights, double step_scale) {
  check(n_iter >= 10, "red_eps_attack: need at least 10 iterations");
  const int n1 = n_iter * 3 / 10;
  const int budgets[3] = {n1, n1, n_iter - 2 * n1};
  const double radii[3] = {2.0 * epsilon, 1.5 * epsilon, epsilon};

  AttackResult stage;
  std::vector<double> trace;
  for (int s = 0; s < 3; ++s) {
    const std::uint64_t stage_seed = derive_seed(seed, "red-eps-stage", std::uint64_t(s));
    if (s == 0) {
      stage = run_single(model, loss, image, labels, radii[s], budgets[s], stage_seed, weights,
                         nullptr, step_scale);
    } else {
      const ImageTensor warm = project_linf_box(image, stage.adversarial, radii[s]);
      stage = run_single(model, loss, image, labels, radii[s], budgets[s], stage_seed, weights,
                         &warm, step_scale);
    }
    trace.insert(trace.end(), stage.objective_trace.begin(), stage.objective_trace.end());
  }
  stage.objective_trace = std::move(trace);
  stage.best_objective = *std::max_element(stage.objective_trace.begin(),
                                           stage.objective_trace.end());
  return stage;
}

AttackResult run_attack(const ModelParams& model, const AttackConfig& config,
                        const ImageTensor& image, const LabelMap& labels,
                        std::uint64_t image_seed, const ClassWeights* weights) {
  config.validate();
  if (config.schedule == Schedule::RedEps)
    return red_eps_attack(model, config.loss, image, labels, config.epsilon, config.iterations,
                          image_seed, weights, config.step_scale);

  const int restarts = config.restarts;
  const int base = config.iterations / restarts;
  const int extra = config.iterations % restarts;
  check(base >= 1, "run_attack: budget too small for restart count");

  AttackResult best;
  double best_track = std::numeric_limits<double>::infinity();
  double best_obj = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    const int budget = base + (r < extra ? 1 : 0);
    const std::uint64_t restart_seed =
        restarts == 1 ? image_seed : derive_seed(image_seed, "restart", std::uint64_t(r));
    AttackResult res = run_single(model, config.loss, image, labels, config.epsilon, budget,
                                  restart_seed, weights, nullptr, config.step_scale);
    if (is_baseline(config.loss)) {
      // baselines keep the highest-loss iterate across the whole run
      if (r == 0 || res.best_objective > best_obj) {
        best_obj = res.best_objective;
        best = std::move(res);
      }
    } else {
      const double track = tracked_badness(res.prediction, labels, config.loss, weights);
      if (r == 0 || track < best_track) {
        best_track = track;
        best = std::move(res);
      }
    }
  }
  return best;
}

DatasetAttackResult attack_dataset(const ModelParams& model, const AttackConfig& config,
                                   const Dataset& dataset, const ClassWeights* weights,
                                   int workers) {
  check(dataset.size() > 0, "attack_dataset: empty dataset");
  DatasetAttackResult out;
  out.per_image.resize(dataset.size());
  parallel_for(int(dataset.size()), workers, [&](int i) {
    const std::uint64_t image_seed = config.seed ^ std::uint64_t(i);
    AttackResult res = run_attack(model, config, dataset.images[size_t(i)],
                                  dataset.labels[size_t(i)], image_seed, weights);
    res.image_id = dataset.ids[size_t(i)];
    res.counts.image_id = dataset.ids[size_t(i)];
    out.per_image[size_t(i)] = std::move(res);
  });
  out.confusion = ConfusionAccumulator(model.spec.num_classes);
  for (const auto& res : out.per_image) out.confusion.add(res.counts);
  return out;
}

ConfusionAccumulator transfer_eval(const std::vector<AttackResult>& source_results,
                                   const ModelParams& target, const Dataset& dataset,
                                   int workers) {
  check(source_results.size() == dataset.size(), "transfer_eval: result/dataset count mismatch");
  std::vector<ImageCounts> counts(dataset.size());
  parallel_for(int(dataset.size()), workers, [&](int i) {
    const ImageTensor& adv = source_results[size_t(i)].adversarial;
    check(adv.height == dataset.height && adv.width == dataset.width &&
              adv.channels == target.spec.in_channels,
          "transfer_eval: adversarial image shape mismatch");
    const PredictionMap pred = predict(forward(target, adv));
    counts[size_t(i)] = count_image(target.spec.num_classes, pred, dataset.labels[size_t(i)],
                                    dataset.ids[size_t(i)]);
  });
  ConfusionAccumulator acc(target.spec.num_classes);
  for (const auto& c : counts) acc.add(c);
  return acc;
}

ConfusionAccumulator clean_eval(const ModelParams& model, const Dataset& dataset, int workers) {
  std::vector<ImageCounts> counts(dataset.size());
  parallel_for(int(dataset.size()), workers, [&](int i) {
    const PredictionMap pred = predict(forward(model, dataset.images[size_t(i)]));
    counts[size_t(i)] = count_image(model.spec.num_classes, pred, dataset.labels[size_t(i)],
                                    dataset.ids[size_t(i)]);
  });
  ConfusionAccumulator acc(model.spec.num_classes);
  for (const auto& c : counts) acc.add(c);
  return acc;
}

}  // namespace segrob
