#include "segrob/sea.hpp"

#include "segrob/data.hpp"
#include "segrob/rng.hpp"

#include <algorithm>
#include <numeric>

namespace segrob {

WorstCaseAccuracy worst_case_accuracy(const std::vector<std::vector<ImageCounts>>& counts) {
  check(!counts.empty(), "worst_case_accuracy: no attacks");
  const std::size_t n_attacks = counts.size();
  const std::size_t n_images = counts[0].size();
  check(n_images > 0, "worst_case_accuracy: no images");
  for (const auto& per_attack : counts)
    check(per_attack.size() == n_images, "worst_case_accuracy: ragged results");

  WorstCaseAccuracy out;
  out.selection.resize(n_images, 0);
  std::int64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < n_images; ++i) {
    int best = 0;
    double best_acc = counts[0][i].accuracy();
    for (std::size_t j = 1; j < n_attacks; ++j) {
      const double acc = counts[j][i].accuracy();
      if (acc < best_acc) {
        best_acc = acc;
        best = int(j);
      }
    }
    out.selection[i] = best;
    correct += counts[size_t(best)][i].correct();
    total += counts[size_t(best)][i].pixels();
  }
  out.accuracy = double(correct) / double(total);
  return out;
}

WorstCaseMiou greedy_worst_case_miou(const std::vector<std::vector<ImageCounts>>& counts,
                                     int num_classes, std::uint64_t shuffle_seed) {
  check(!counts.empty(), "greedy_worst_case_miou: no attacks");
  const std::size_t n_attacks = counts.size();
  const std::size_t n_images = counts[0].size();
  check(n_images > 0, "greedy_worst_case_miou: no images");

  using CountVec = Eigen::VectorX<std::int64_t>;
  auto dataset_miou_of = [&](std::size_t attack) {
    CountVec tp = CountVec::Zero(num_classes), fp = tp, fn = tp;
    for (std::size_t i = 0; i < n_images; ++i) {
      tp += counts[attack][i].tp;
      fp += counts[attack][i].fp;
      fn += counts[attack][i].fn;
    }
    return miou_from_counts(tp, fp, fn);
  };

  // start everywhere from the attack with the smallest whole-dataset mIoU
  std::size_t init_attack = 0;
  double init_miou = dataset_miou_of(0);
  for (std::size_t j = 1; j < n_attacks; ++j) {
    const double m = dataset_miou_of(j);
    if (m < init_miou) {
      init_miou = m;
      init_attack = j;
    }
  }

  WorstCaseMiou out;
  out.selection.assign(n_images, int(init_attack));
  CountVec tp = CountVec::Zero(num_classes), fp = tp, fn = tp;
  for (std::size_t i = 0; i < n_images; ++i) {
    tp += counts[init_attack][i].tp;
    fp += counts[init_attack][i].fp;
    fn += counts[init_attack][i].fn;
  }
  double current = miou_from_counts(tp, fp, fn);

  Rng rng(derive_seed(shuffle_seed, "greedy-miou"));
  std::vector<std::size_t> order(n_images);
  std::iota(order.begin(), order.end(), std::size_t(0));

  bool improved = true;
  while (improved) {
    improved = false;
    ++out.rounds;
    shuffle(order, rng);
    for (const std::size_t i : order) {
      for (std::size_t j = 0; j < n_attacks; ++j) {
        const std::size_t cur = std::size_t(out.selection[i]);
        if (j == cur) continue;
        // adjust only this image's contribution, O(K) per candidate
        const CountVec tp2 = tp - counts[cur][i].tp + counts[j][i].tp;
        const CountVec fp2 = fp - counts[cur][i].fp + counts[j][i].fp;
        const CountVec fn2 = fn - counts[cur][i].fn + counts[j][i].fn;
        const double candidate = miou_from_counts(tp2, fp2, fn2);
        if (candidate < current) {
          current = candidate;
          tp = tp2;
          fp = fp2;
          fn = fn2;
          out.selection[i] = int(j);
          improved = true;
        }
      }
    }
  }
  out.miou = current;
  return out;
}

EnsembleResult sea_attack(const ModelParams& model, const Dataset& dataset, double epsilon,
                          int iterations, std::uint64_t seed, const ClassWeights& weights,
                          int workers, const std::vector<LossKind>& components) {
  check(dataset.size() > 0, "sea_attack: empty dataset");
  check(!components.empty(), "sea_attack: empty ensemble");

  EnsembleResult out;
  out.attacks = components;
  std::vector<std::vector<ImageCounts>> counts;
  for (const LossKind loss : components) {
    AttackConfig config;
    config.epsilon = epsilon;
    config.iterations = iterations;
    config.loss = loss;
    config.schedule = Schedule::RedEps;
    config.seed = derive_seed(seed, "sea-" + loss_kind_name(loss));
    DatasetAttackResult res = attack_dataset(model, config, dataset, &weights, workers);
    out.attack_accuracy.push_back(pixel_accuracy(res.confusion));
    out.attack_miou.push_back(miou(res.confusion));
    std::vector<ImageCounts> per_image;
    for (const auto& r : res.per_image) per_image.push_back(r.counts);
    counts.push_back(std::move(per_image));
    out.runs.push_back(std::move(res.per_image));
  }

  const WorstCaseAccuracy acc = worst_case_accuracy(counts);
  out.chosen_for_accuracy = acc.selection;
  out.worst_case_accuracy = acc.accuracy;

  const WorstCaseMiou wm =
      greedy_worst_case_miou(counts, model.spec.num_classes, derive_seed(seed, "sea-shuffle"));
  out.chosen_for_miou = wm.selection;
  out.worst_case_miou = wm.miou;
  out.greedy_rounds = wm.rounds;
  return out;
}

}  // namespace segrob
