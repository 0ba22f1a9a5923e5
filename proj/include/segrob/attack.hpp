#pragma once

#include "segrob/losses.hpp"
#include "segrob/metrics.hpp"
#include "segrob/model.hpp"
#include "segrob/types.hpp"

#include <string>
#include <vector>

namespace segrob {

enum class Schedule { RedEps, ConstEps };

Schedule schedule_from_string(const std::string& name);
std::string schedule_name(Schedule s);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;  // ell_inf radius in [0,1] units
  int iterations = 300;
  LossKind loss = LossKind::MaskedCe;
  Schedule schedule = Schedule::RedEps;
  int restarts = 1;  // const-eps only
  std::uint64_t seed = 0;
  double step_scale = 1.0;  // APGD initial step = 2 * eps * step_scale

  void validate() const;
};

struct AttackResult {
  std::string image_id;
  ImageTensor adversarial;
  double best_objective = 0.0;
  std::vector<double> objective_trace;
  PredictionMap prediction;   // of the returned adversarial image
  double accuracy = 0.0;      // per-image pixel accuracy of that prediction
  ImageCounts counts;         // per-class TP/FP/FN against truth
};

/// Componentwise clamp of candidate to [original - eps, original + eps] n [0,1].
ImageTensor project_linf_box(const ImageTensor& original, const ImageTensor& candidate, double epsilon);

bool is_feasible(const ImageTensor& original, const ImageTensor& candidate, double epsilon,
                 double tol = 0.0);

/// APGD: momentum sign-gradient ascent with best-point tracking and step
/// halving at a fixed checkpoint schedule. Returns the iterate with the
/// lowest pixel accuracy (weighted 1/N_y accuracy for the balanced loss);
/// the best masked/weighted objective is kept separately for the restarts.
AttackResult apgd(const ModelParams& model, LossKind loss, const ImageTensor& image,
                  const LabelMap& labels, double epsilon, int n_iter, std::uint64_t seed,
                  const ClassWeights* weights = nullptr,
                  const ImageTensor* init = nullptr, double step_scale = 1.0);

/// Plain PGD with a constant step size and highest-loss iterate selection;
/// the optimizer behind the SegPGD/CosPGD baselines.
AttackResult pgd(const ModelParams& model, LossKind loss, const ImageTensor& image,
                 const LabelMap& labels, double epsilon, int n_iter, std::uint64_t seed,
                 const ClassWeights* weights = nullptr, const ImageTensor* init = nullptr);

/// Constant PGD step for a given radius: the published grid
/// (0.25,0.5,1,2,4,8,12)/255 -> (8e-4,9e-4,1e-3,2e-3,3e-3,5e-3,6e-3),
/// linearly interpolated in between and clamped at the ends.
double baseline_step_size(double epsilon);

/// Three sequential runs at radii (2e, 1.5e, e) with iteration split
/// (floor(0.3 n), floor(0.3 n), rest), each warm-started from the previous
/// stage's result projected to the shrunken ball.
AttackResult red_eps_attack(const ModelParams& model, LossKind loss, const ImageTensor& image,
                            const LabelMap& labels, double epsilon, int n_iter, std::uint64_t seed,
                            const ClassWeights* weights = nullptr, double step_scale = 1.0);

/// Dispatch on config.schedule; const-eps splits the budget across restarts
/// and keeps the restart with the lowest accuracy.
AttackResult run_attack(const ModelParams& model, const AttackConfig& config,
                        const ImageTensor& image, const LabelMap& labels,
                        std::uint64_t image_seed, const ClassWeights* weights = nullptr);

struct DatasetAttackResult {
  std::vector<AttackResult> per_image;
  ConfusionAccumulator confusion;
};

struct Dataset;  // data.hpp

DatasetAttackResult attack_dataset(const ModelParams& model, const AttackConfig& config,
                                   const Dataset& dataset, const ClassWeights* weights = nullptr,
                                   int workers = 1);

/// Evaluate a target model on previously generated adversarial images.
ConfusionAccumulator transfer_eval(const std::vector<AttackResult>& source_results,
                                   const ModelParams& target, const Dataset& dataset,
                                   int workers = 1);

ConfusionAccumulator clean_eval(const ModelParams& model, const Dataset& dataset, int workers = 1);

}  // namespace segrob
