#pragma once

#include "segrob/attack.hpp"
#include "segrob/metrics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace segrob {

/// Per-image outcome of every ensemble component plus both worst-case
/// aggregations (image-wise accuracy argmin, greedy dataset mIoU).
struct EnsembleResult {
  std::vector<LossKind> attacks;
  // [attack][image]
  std::vector<std::vector<AttackResult>> runs;
  std::vector<double> attack_accuracy;   // dataset aAcc per attack
  std::vector<double> attack_miou;       // dataset mIoU per attack
  std::vector<int> chosen_for_accuracy;  // per image
  std::vector<int> chosen_for_miou;      // per image
  double worst_case_accuracy = 0.0;
  double worst_case_miou = 0.0;
  int greedy_rounds = 0;
};

struct WorstCaseAccuracy {
  std::vector<int> selection;
  double accuracy = 0.0;
};

struct WorstCaseMiou {
  std::vector<int> selection;
  double miou = 0.0;
  int rounds = 0;
};

/// Per-image argmin of accuracy (ties to the lowest attack index); dataset
/// accuracy is pixel weighted over the selected runs.
WorstCaseAccuracy worst_case_accuracy(const std::vector<std::vector<ImageCounts>>& counts);

/// Greedy selection for the dataset mIoU: start from the attack with the
/// smallest whole-dataset mIoU, then sweep shuffled image orders accepting
/// strictly improving swaps until a full round changes nothing.
WorstCaseMiou greedy_worst_case_miou(const std::vector<std::vector<ImageCounts>>& counts,
                                     int num_classes, std::uint64_t shuffle_seed);

struct Dataset;

/// One red-eps APGD run per loss in {mce, mce-bal, js}, aggregated both ways.
EnsembleResult sea_attack(const ModelParams& model, const Dataset& dataset, double epsilon,
                          int iterations, std::uint64_t seed, const ClassWeights& weights,
                          int workers = 1,
                          const std::vector<LossKind>& components = {LossKind::MaskedCe,
                                                                     LossKind::MaskedCeBalanced,
                                                                     LossKind::Js});

}  // namespace segrob
