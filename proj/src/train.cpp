#include "segrob/train.hpp"

#include "segrob/attack.hpp"
#include "segrob/losses.hpp"
#include "segrob/parallel.hpp"
#include "segrob/softmax.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace segrob {

void TrainConfig::validate() const {
  check(epochs >= 0, "TrainConfig: epochs must be >= 0");
  check(attack_steps >= 1, "TrainConfig: attack steps must be >= 1");
  check(train_epsilon >= 0.0, "TrainConfig: epsilon must be >= 0");
  check(pgd_step > 0.0, "TrainConfig: PGD step must be > 0");
  check(learning_rate > 0.0, "TrainConfig: learning rate must be > 0");
  check(batch_size >= 1, "TrainConfig: batch size must be >= 1");
  check(init_mode == "clean" || init_mode == "robust", "TrainConfig: init mode must be clean|robust");
  check(optimizer == "sgd-momentum", "TrainConfig: unsupported optimizer");
}

namespace {

/// One PGD maximization of the summed CE w.r.t. the input.
ImageTensor pgd_maximize_ce(const ModelParams& model, const ImageTensor& image,
                            const LabelMap& labels, int k, double epsilon, double step_size,
                            std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor x = image;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] += rng.uniform(-epsilon, epsilon);
  x = project_linf_box(image, x, epsilon);
  for (int step = 0; step < k; ++step) {
    const LogitMap logits = forward(model, x);
    const LossEval loss = ce_loss(logits, labels);
    check_numeric(std::isfinite(loss.total), "pgd_train_step: non-finite loss");
    const Matrix g = input_gradient(model, x, LogitMap(x.height, x.width, model.spec.num_classes,
                                                       loss.grad));
    x.data += step_size * g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    x = project_linf_box(image, x, epsilon);
  }
  return x;
}

void add_scaled(ModelParams& acc, const ModelParams& g, double scale) {
  for (std::size_t i = 0; i < acc.layers.size(); ++i) {
    acc.layers[i].weight += scale * g.layers[i].weight;
    acc.layers[i].bias += scale * g.layers[i].bias;
  }
}

ModelParams zero_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto& l : z.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return z;
}

double schedule_lr(const TrainConfig& config, int epoch) {
  const int warmup = std::max(1, int(std::lround(config.warmup_fraction * config.epochs)));
  if (epoch < warmup) return config.learning_rate * double(epoch + 1) / double(warmup);
  const int decay_span = std::max(1, config.epochs - warmup);
  const double progress = double(epoch - warmup) / double(decay_span);
  return config.learning_rate * std::pow(1.0 - progress, config.poly_power);
}

}  // namespace

TrainStep pgd_train_step(const ModelParams& model, const std::vector<ImageTensor>& images,
                         const std::vector<LabelMap>& labels, int k, double epsilon,
                         double step_size, Rng& rng, int workers) {
  check(k >= 1, "pgd_train_step: k must be >= 1");
  check(!images.empty() && images.size() == labels.size(), "pgd_train_step: bad batch");
  const std::size_t batch = images.size();

  std::vector<std::uint64_t> seeds(batch);
  for (auto& s : seeds) s = rng.next_u64();

  TrainStep out;
  out.adversarial.resize(batch);
  std::vector<ModelParams> grads(batch);
  std::vector<double> clean_ce(batch), adv_ce(batch);
  std::vector<std::int64_t> pixel_counts(batch);

  parallel_for(int(batch), workers, [&](int i) {
    const ImageTensor& image = images[size_t(i)];
    const LabelMap& truth = labels[size_t(i)];
    pixel_counts[size_t(i)] = truth.pixels();
    clean_ce[size_t(i)] = ce_loss(forward(model, image), truth).total;
    const ImageTensor adv =
        pgd_maximize_ce(model, image, truth, k, epsilon, step_size, seeds[size_t(i)]);
    const LogitMap adv_logits = forward(model, adv);
    const LossEval adv_loss = ce_loss(adv_logits, truth);
    adv_ce[size_t(i)] = adv_loss.total;
    grads[size_t(i)] = param_gradient(model, adv,
                                      LogitMap(adv.height, adv.width, model.spec.num_classes,
                                               adv_loss.grad));
    out.adversarial[size_t(i)] = adv;
  });

  const double total_pixels = double(std::accumulate(pixel_counts.begin(), pixel_counts.end(),
                                                     std::int64_t(0)));
  out.gradient = zero_like(model);
  for (std::size_t i = 0; i < batch; ++i) add_scaled(out.gradient, grads[i], 1.0 / total_pixels);
  out.clean_loss = std::accumulate(clean_ce.begin(), clean_ce.end(), 0.0) / total_pixels;
  out.adv_loss = std::accumulate(adv_ce.begin(), adv_ce.end(), 0.0) / total_pixels;
  check_numeric(std::isfinite(out.adv_loss) && std::isfinite(out.clean_loss),
                "pgd_train_step: non-finite loss");
  return out;
}

double pgd_robust_accuracy(const ModelParams& model, const Dataset& data, int k, double epsilon,
                           double step_size, std::uint64_t seed, int workers) {
  check(data.size() > 0, "pgd_robust_accuracy: empty data");
  std::vector<std::int64_t> correct(data.size()), total(data.size());
  parallel_for(int(data.size()), workers, [&](int i) {
    const ImageTensor adv = pgd_maximize_ce(model, data.images[size_t(i)], data.labels[size_t(i)],
                                            k, epsilon, step_size,
                                            derive_seed(seed, "probe", std::uint64_t(i)));
    const PredictionMap pred = predict(forward(model, adv));
    std::int64_t c = 0;
    for (int a = 0; a < pred.pixels(); ++a)
      if (pred.labels[a] == data.labels[size_t(i)].labels[a]) ++c;
    correct[size_t(i)] = c;
    total[size_t(i)] = pred.pixels();
  });
  return double(std::accumulate(correct.begin(), correct.end(), std::int64_t(0))) /
         double(std::accumulate(total.begin(), total.end(), std::int64_t(0)));
}

TrainResult train(const ArchSpec& spec, const TrainConfig& config, const Dataset& train_data,
                  const Dataset* probe_data, const BackboneCheckpoint* backbone, int workers) {
  config.validate();
  check(train_data.size() > 0, "train: empty dataset");
  if (config.init_mode == "robust")
    check(backbone != nullptr, "train: robust init mode needs a backbone checkpoint");

  TrainResult out;
  out.params = init_params(spec, derive_seed(config.seed, "init"),
                           config.init_mode == "robust" ? InitSource::PretrainedBackbone
                                                        : InitSource::Random,
                           backbone);
  ModelParams velocity = zero_like(out.params);

  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), std::size_t(0));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = schedule_lr(config, epoch);
    Rng shuffle_rng(derive_seed(config.seed, "shuffle", std::uint64_t(epoch)));
    shuffle(order, shuffle_rng);
    Rng flip_rng(derive_seed(config.seed, "flip", std::uint64_t(epoch)));
    Rng attack_rng(derive_seed(config.seed, "attack", std::uint64_t(epoch)));

    double epoch_clean = 0.0, epoch_adv = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(config.batch_size));
      std::vector<ImageTensor> images;
      std::vector<LabelMap> labels;
      for (std::size_t idx = start; idx < stop; ++idx) {
        const std::size_t i = order[idx];
        if (flip_rng.coin()) {
          images.push_back(flip_horizontal(train_data.images[i]));
          labels.push_back(flip_horizontal(train_data.labels[i]));
        } else {
          images.push_back(train_data.images[i]);
          labels.push_back(train_data.labels[i]);
        }
      }
      TrainStep step = pgd_train_step(out.params, images, labels, config.attack_steps,
                                      config.train_epsilon, config.pgd_step, attack_rng, workers);
      for (std::size_t l = 0; l < out.params.layers.size(); ++l) {
        velocity.layers[l].weight =
            config.momentum * velocity.layers[l].weight - lr * step.gradient.layers[l].weight;
        velocity.layers[l].bias =
            config.momentum * velocity.layers[l].bias - lr * step.gradient.layers[l].bias;
        out.params.layers[l].weight += velocity.layers[l].weight;
        out.params.layers[l].bias += velocity.layers[l].bias;
      }
      epoch_clean += step.clean_loss;
      epoch_adv += step.adv_loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.clean_loss = epoch_clean / batches;
    rec.adv_loss = epoch_adv / batches;
    if (probe_data && probe_data->size() > 0 && config.probe_images > 0) {
      const Dataset probe = probe_data->subset(std::size_t(config.probe_images));
      rec.probe_robust_accuracy =
          pgd_robust_accuracy(out.params, probe, config.attack_steps, config.train_epsilon,
                              config.pgd_step, derive_seed(config.seed, "probe", std::uint64_t(epoch)),
                              workers);
    }
    out.log.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// patch classifier for backbone pretraining

namespace {

struct PatchClassifier {
  std::vector<ConvLayerSpec> specs;  // backbone prefix
  std::vector<ConvLayer> layers;
  Matrix head_weight;  // C_backbone x K
  Vector head_bias;    // K

  int feature_channels() const { return specs.back().out_channels; }
};

struct ClsEval {
  Vector logits;
  ForwardTape tape;
  Matrix features;  // (P*P) x C
};

ClsEval classifier_forward(const PatchClassifier& cls, const ImageTensor& patch) {
  ClsEval e;
  e.features = forward_layers(cls.specs, cls.layers, normalize_input(patch.data), patch.height,
                              patch.width, &e.tape);
  const Vector pooled = e.features.colwise().mean();
  e.logits = cls.head_weight.transpose() * pooled + cls.head_bias;
  return e;
}

double cls_ce(const Vector& logits, int label, Vector* grad_out) {
  const double m = logits.maxCoeff();
  const Vector e = (logits.array() - m).exp();
  const double z = e.sum();
  const Vector p = e / z;
  if (grad_out) {
    *grad_out = p;
    (*grad_out)[label] -= 1.0;
  }
  return std::log(z) + m - logits[label];
}

struct ClsGrads {
  std::vector<ConvLayer> layers;
  Matrix head_weight;
  Vector head_bias;
};

/// Backward from the logit cotangent; returns the patch-pixel gradient.
Matrix classifier_backward(const PatchClassifier& cls, const ImageTensor& patch, const ClsEval& e,
                           const Vector& dlogits, ClsGrads* grads) {
  const Vector pooled = e.features.colwise().mean();
  if (grads) {
    grads->head_weight = pooled * dlogits.transpose();
    grads->head_bias = dlogits;
    grads->layers.resize(cls.layers.size());
  }
  const Vector dpooled = cls.head_weight * dlogits;
  Matrix dfeatures(e.features.rows(), e.features.cols());
  dfeatures = (Vector::Ones(e.features.rows()) / double(e.features.rows())) * dpooled.transpose();
  return kInputScale * backward_layers(cls.specs, cls.layers, e.tape, dfeatures, patch.height,
                                       patch.width, grads ? &grads->layers : nullptr);
}

ImageTensor cls_pgd_attack(const PatchClassifier& cls, const ImageTensor& patch, int label, int k,
                           double epsilon, double step_size, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor x = patch;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] += rng.uniform(-epsilon, epsilon);
  x = project_linf_box(patch, x, epsilon);
  for (int step = 0; step < k; ++step) {
    const ClsEval e = classifier_forward(cls, x);
    Vector dlogits;
    cls_ce(e.logits, label, &dlogits);
    const Matrix g = classifier_backward(cls, x, e, dlogits, nullptr);
    x.data += step_size * g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    x = project_linf_box(patch, x, epsilon);
  }
  return x;
}

int cls_predict(const PatchClassifier& cls, const ImageTensor& patch) {
  const ClsEval e = classifier_forward(cls, patch);
  return argmax_lowest(e.logits.transpose());
}

}  // namespace

PretrainResult pretrain_robust_backbone(const ArchSpec& spec, const PatchDataset& patches,
                                        const TrainConfig& config, int workers,
                                        double eval_epsilon) {
  config.validate();
  if (eval_epsilon < 0.0) eval_epsilon = config.train_epsilon;
  check(spec.backbone_layers >= 1, "pretrain_robust_backbone: architecture has no backbone prefix");
  check(!patches.patches.empty(), "pretrain_robust_backbone: empty patch dataset");
  for (int label : patches.labels)
    check(label >= 0 && label < patches.num_classes, "pretrain_robust_backbone: bad patch label");

  PatchClassifier cls;
  cls.specs.assign(spec.layers.begin(), spec.layers.begin() + spec.backbone_layers);
  const ModelParams seed_params = init_params(spec, derive_seed(config.seed, "pretrain-init"));
  cls.layers.assign(seed_params.layers.begin(), seed_params.layers.begin() + spec.backbone_layers);
  {
    Rng head_rng(derive_seed(config.seed, "pretrain-head"));
    const int c = cls.feature_channels();
    const double scale = 1.0 / std::sqrt(double(c));
    cls.head_weight.resize(c, patches.num_classes);
    for (Eigen::Index i = 0; i < cls.head_weight.size(); ++i)
      cls.head_weight.data()[i] = head_rng.uniform(-scale, scale);
    cls.head_bias = Vector::Zero(patches.num_classes);
  }

  std::vector<ConvLayer> layer_velocity(cls.layers.size());
  for (std::size_t i = 0; i < cls.layers.size(); ++i) {
    layer_velocity[i].weight = Matrix::Zero(cls.layers[i].weight.rows(), cls.layers[i].weight.cols());
    layer_velocity[i].bias = Vector::Zero(cls.layers[i].bias.size());
  }
  Matrix head_w_velocity = Matrix::Zero(cls.head_weight.rows(), cls.head_weight.cols());
  Vector head_b_velocity = Vector::Zero(cls.head_bias.size());

  std::vector<std::size_t> order(patches.patches.size());
  std::iota(order.begin(), order.end(), std::size_t(0));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = schedule_lr(config, epoch);
    Rng shuffle_rng(derive_seed(config.seed, "pretrain-shuffle", std::uint64_t(epoch)));
    shuffle(order, shuffle_rng);
    Rng attack_rng(derive_seed(config.seed, "pretrain-attack", std::uint64_t(epoch)));

    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(config.batch_size));
      const std::size_t batch = stop - start;
      std::vector<std::uint64_t> seeds(batch);
      for (auto& s : seeds) s = attack_rng.next_u64();

      std::vector<ClsGrads> grads(batch);
      std::vector<double> losses(batch);
      parallel_for(int(batch), workers, [&](int b) {
        const std::size_t i = order[start + std::size_t(b)];
        const ImageTensor& patch = patches.patches[i];
        const int label = patches.labels[i];
        const ImageTensor adv =
            config.train_epsilon > 0.0
                ? cls_pgd_attack(cls, patch, label, config.attack_steps, config.train_epsilon,
                                 config.pgd_step, seeds[size_t(b)])
                : patch;
        const ClsEval e = classifier_forward(cls, adv);
        Vector dlogits;
        losses[size_t(b)] = cls_ce(e.logits, label, &dlogits);
        classifier_backward(cls, adv, e, dlogits, &grads[size_t(b)]);
      });
      check_numeric(std::isfinite(std::accumulate(losses.begin(), losses.end(), 0.0)),
                    "pretrain_robust_backbone: non-finite loss");

      const double inv = 1.0 / double(batch);
      for (std::size_t l = 0; l < cls.layers.size(); ++l) {
        Matrix gw = Matrix::Zero(cls.layers[l].weight.rows(), cls.layers[l].weight.cols());
        Vector gb = Vector::Zero(cls.layers[l].bias.size());
        for (const auto& g : grads) {
          gw += g.layers[l].weight;
          gb += g.layers[l].bias;
        }
        layer_velocity[l].weight = config.momentum * layer_velocity[l].weight - lr * inv * gw;
        layer_velocity[l].bias = config.momentum * layer_velocity[l].bias - lr * inv * gb;
        cls.layers[l].weight += layer_velocity[l].weight;
        cls.layers[l].bias += layer_velocity[l].bias;
      }
      Matrix gw = Matrix::Zero(cls.head_weight.rows(), cls.head_weight.cols());
      Vector gb = Vector::Zero(cls.head_bias.size());
      for (const auto& g : grads) {
        gw += g.head_weight;
        gb += g.head_bias;
      }
      head_w_velocity = config.momentum * head_w_velocity - lr * inv * gw;
      head_b_velocity = config.momentum * head_b_velocity - lr * inv * gb;
      cls.head_weight += head_w_velocity;
      cls.head_bias += head_b_velocity;
    }
  }

  // hold the head just long enough to measure the classifier, then drop it
  PretrainResult out;
  std::vector<int> clean_ok(patches.patches.size()), robust_ok(patches.patches.size());
  parallel_for(int(patches.patches.size()), workers, [&](int i) {
    const ImageTensor& patch = patches.patches[size_t(i)];
    const int label = patches.labels[size_t(i)];
    clean_ok[size_t(i)] = cls_predict(cls, patch) == label ? 1 : 0;
    const ImageTensor adv = cls_pgd_attack(cls, patch, label, config.attack_steps, eval_epsilon,
                                           config.pgd_step,
                                           derive_seed(config.seed, "pretrain-eval", std::uint64_t(i)));
    robust_ok[size_t(i)] = cls_predict(cls, adv) == label ? 1 : 0;
  });
  out.stats.clean_accuracy = double(std::accumulate(clean_ok.begin(), clean_ok.end(), 0)) /
                             double(patches.patches.size());
  out.stats.robust_accuracy = double(std::accumulate(robust_ok.begin(), robust_ok.end(), 0)) /
                              double(patches.patches.size());

  out.checkpoint.provenance = config.train_epsilon > 0.0 ? "adv-pretrained" : "clean-pretrained";
  out.checkpoint.pretrain_epsilon = config.train_epsilon;
  out.checkpoint.layer_specs = cls.specs;
  out.checkpoint.layers = cls.layers;
  return out;
}

}  // namespace segrob
