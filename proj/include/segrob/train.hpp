#pragma once

#include "segrob/data.hpp"
#include "segrob/model.hpp"
#include "segrob/rng.hpp"
#include "segrob/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace segrob {

struct TrainConfig {
  int epochs = 8;
  int attack_steps = 2;          // k
  double train_epsilon = 8.0 / 255.0;
  double pgd_step = 2.0 / 255.0;
  double learning_rate = 1.0;    // on the per-pixel mean CE
  int batch_size = 8;
  std::uint64_t seed = 0;
  std::string init_mode = "clean";       // "clean" | "robust"
  std::string optimizer = "sgd-momentum";
  double momentum = 0.9;
  double warmup_fraction = 0.1;  // linear warmup, then polynomial decay
  double poly_power = 0.9;
  int probe_images = 8;          // robust-accuracy probe subset per epoch

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double clean_loss = 0.0;  // mean per-pixel CE over the epoch
  double adv_loss = 0.0;
  double probe_robust_accuracy = -1.0;  // -1 when no probe split was given
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> log;
};

struct TrainStep {
  ModelParams gradient;  // of the mean per-pixel CE on the adversarial batch
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  std::vector<ImageTensor> adversarial;  // kept so tests can audit feasibility
};

/// k-step PGD inner maximization (CE objective, sign steps, random init in
/// the eps box, projection every step), then the CE parameter gradient on
/// the adversarial batch. The batch is 100% adversarial examples.
TrainStep pgd_train_step(const ModelParams& model, const std::vector<ImageTensor>& images,
                         const std::vector<LabelMap>& labels, int k, double epsilon,
                         double step_size, Rng& rng, int workers = 1);

/// Full AT / PIR-AT loop: SGD with momentum, linear warmup + polynomial
/// decay, seeded shuffling and horizontal-flip augmentation. Deterministic
/// given (config, seed); throws on divergence (non-finite loss).
TrainResult train(const ArchSpec& spec, const TrainConfig& config, const Dataset& train_data,
                  const Dataset* probe_data = nullptr, const BackboneCheckpoint* backbone = nullptr,
                  int workers = 1);

/// k-step PGD accuracy of a segmentation model (training-time probe; the
/// reported robustness numbers come from the SEA evaluation instead).
double pgd_robust_accuracy(const ModelParams& model, const Dataset& data, int k, double epsilon,
                           double step_size, std::uint64_t seed, int workers = 1);

struct PretrainStats {
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;  // k-step PGD at the pretrain epsilon
};

struct PretrainResult {
  BackboneCheckpoint checkpoint;
  PretrainStats stats;
};

/// Adversarial pretraining of the backbone prefix on patch classification:
/// backbone + global average pool + linear head, PGD-AT with CE, head
/// discarded afterwards. epsilon 0 yields a clean-pretrained checkpoint.
/// stats.robust_accuracy is measured at eval_epsilon (the training radius
/// when negative), so clean and adversarial checkpoints compare fairly.
PretrainResult pretrain_robust_backbone(const ArchSpec& spec, const PatchDataset& patches,
                                        const TrainConfig& config, int workers = 1,
                                        double eval_epsilon = -1.0);

}  // namespace segrob
