#include "segrob/train.hpp"
#include "segrob/attack.hpp"
#include "segrob/losses.hpp"
#include "segrob/softmax.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace segrob;

namespace {

Dataset tiny_dataset(int n, int side = 16, int k = 4, std::uint64_t seed = 314) {
  return generate_dataset(seed, n, side, side, k);
}

}  // namespace

TEST_CASE("pgd train step") {
  Dataset d = tiny_dataset(3);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 5);

  SUBCASE("epsilon zero reduces to a standard step") {
    Rng rng(1);
    TrainStep step = pgd_train_step(model, d.images, d.labels, 2, 0.0, 0.01, rng, 1);
    for (std::size_t i = 0; i < d.size(); ++i)
      CHECK(step.adversarial[i].data == d.images[i].data);
    CHECK(step.adv_loss == doctest::Approx(step.clean_loss).epsilon(1e-15));
  }
  SUBCASE("adversarial examples are feasible, exactly") {
    Rng rng(2);
    const double eps = 8.0 / 255.0;
    TrainStep step = pgd_train_step(model, d.images, d.labels, 3, eps, 2.0 / 255.0, rng, 2);
    for (std::size_t i = 0; i < d.size(); ++i)
      CHECK(is_feasible(d.images[i], step.adversarial[i], eps, 0.0));
  }
  SUBCASE("inner maximization raises the CE loss on average") {
    Rng rng(3);
    double clean_total = 0.0, adv_total = 0.0;
    for (int batch = 0; batch < 50; ++batch) {
      Dataset b = tiny_dataset(2, 16, 4, 1000 + std::uint64_t(batch));
      TrainStep step = pgd_train_step(model, b.images, b.labels, 2, 6.0 / 255.0, 2.0 / 255.0, rng, 1);
      clean_total += step.clean_loss;
      adv_total += step.adv_loss;
    }
    CHECK(adv_total > clean_total);
  }
  SUBCASE("k=1 with a full-length step lands on the sign corner for a linear model") {
    ModelParams linear = init_params(ArchSpec::pixel_linear(d.num_classes), 6);
    ImageTensor img(1, 1, 3);
    img.data << 0.5, 0.5, 0.5;
    LabelMap label(1, 1);
    label.labels[0] = 0;
    const double eps = 0.05;
    Rng rng(4);
    TrainStep step = pgd_train_step(linear, {img}, {label}, 1, eps, 2 * eps, rng, 1);
    // the CE input gradient of a linear model is constant over the box
    const LossEval ce = ce_loss(forward(linear, img), label);
    Matrix g = input_gradient(linear, img, LogitMap(1, 1, d.num_classes, ce.grad));
    for (int c = 0; c < 3; ++c) {
      const double expect = img.data(0, c) + (g(0, c) > 0 ? eps : -eps);
      CHECK(step.adversarial[0].data(0, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("training loop") {
  Dataset train_data = tiny_dataset(12);
  const ArchSpec spec = ArchSpec::small_conv(train_data.num_classes);

  SUBCASE("zero epochs returns the initialization unchanged") {
    TrainConfig c;
    c.epochs = 0;
    c.seed = 9;
    TrainResult r = train(spec, c, train_data);
    CHECK(params_equal(r.params, init_params(spec, derive_seed(9, "init"))));
    CHECK(r.log.empty());
  }
  SUBCASE("same seed twice gives bit-identical parameters and log") {
    TrainConfig c;
    c.epochs = 2;
    c.batch_size = 4;
    c.learning_rate = 0.05;
    c.seed = 10;
    TrainResult a = train(spec, c, train_data, nullptr, nullptr, 1);
    TrainResult b = train(spec, c, train_data, nullptr, nullptr, 1);
    CHECK(params_equal(a.params, b.params));
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].clean_loss == b.log[i].clean_loss);
      CHECK(a.log[i].adv_loss == b.log[i].adv_loss);
    }
    // worker count must not change the result either
    TrainResult d = train(spec, c, train_data, nullptr, nullptr, 3);
    CHECK(params_equal(a.params, d.params));
  }
  SUBCASE("learning rate follows warmup then polynomial decay") {
    TrainConfig c;
    c.epochs = 10;
    c.batch_size = 12;
    c.learning_rate = 1e-6;  // tiny so the run stays stable
    c.seed = 11;
    TrainResult r = train(spec, c, train_data, nullptr, nullptr, 1);
    REQUIRE(r.log.size() == 10);
    CHECK(r.log[0].learning_rate == doctest::Approx(1e-6));  // 1-epoch warmup hits peak at once
    for (std::size_t e = 1; e + 1 < r.log.size(); ++e)
      CHECK(r.log[e + 1].learning_rate < r.log[e].learning_rate);
  }
  SUBCASE("robust init without a checkpoint is rejected") {
    TrainConfig c;
    c.epochs = 1;
    c.init_mode = "robust";
    CHECK_THROWS_AS(train(spec, c, train_data), std::invalid_argument);
  }
  SUBCASE("non-finite losses abort with a diagnostic") {
    ModelParams broken = init_params(spec, 12);
    broken.layers[1].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
    Rng rng(13);
    CHECK_THROWS_AS(
        pgd_train_step(broken, train_data.images, train_data.labels, 1, 0.02, 0.01, rng, 1),
        std::domain_error);
  }
}

TEST_CASE("robust backbone pretraining") {
  Dataset source = tiny_dataset(30);
  const ArchSpec spec = ArchSpec::small_conv(source.num_classes);
  PatchDataset patches = make_patch_dataset(source, 12, 6, 77);

  TrainConfig base;
  base.epochs = 12;
  base.attack_steps = 3;
  base.learning_rate = 0.03;
  base.batch_size = 8;
  base.seed = 21;

  TrainConfig clean_cfg = base;
  clean_cfg.train_epsilon = 0.0;
  TrainConfig adv_cfg = base;
  adv_cfg.train_epsilon = 4.0 / 255.0;

  PretrainResult clean_pre = pretrain_robust_backbone(spec, patches, clean_cfg, 2,
                                                      adv_cfg.train_epsilon);
  PretrainResult adv_pre = pretrain_robust_backbone(spec, patches, adv_cfg, 2);

  SUBCASE("provenance reflects the pretraining mode") {
    CHECK(clean_pre.checkpoint.provenance == "clean-pretrained");
    CHECK(adv_pre.checkpoint.provenance == "adv-pretrained");
    CHECK(adv_pre.checkpoint.pretrain_epsilon == doctest::Approx(4.0 / 255.0));
  }
  SUBCASE("checkpoints load into the segmentation architecture") {
    ModelParams p = init_params(spec, 3, InitSource::PretrainedBackbone, &adv_pre.checkpoint);
    for (int l = 0; l < spec.backbone_layers; ++l)
      CHECK(p.layers[size_t(l)].weight == adv_pre.checkpoint.layers[size_t(l)].weight);
  }
  SUBCASE("adversarial pretraining buys robustness over clean pretraining") {
    // both measured with the same k-step PGD at the adversarial pretrain radius
    CHECK(adv_pre.stats.robust_accuracy > clean_pre.stats.robust_accuracy);
  }
}

TEST_CASE("pir-at reuses the pretrained prefix") {
  Dataset train_data = tiny_dataset(8);
  const ArchSpec spec = ArchSpec::small_conv(train_data.num_classes);
  PatchDataset patches = make_patch_dataset(train_data, 12, 2, 5);
  TrainConfig pre_cfg;
  pre_cfg.epochs = 1;
  pre_cfg.learning_rate = 0.02;
  pre_cfg.train_epsilon = 4.0 / 255.0;
  pre_cfg.seed = 31;
  PretrainResult pre = pretrain_robust_backbone(spec, patches, pre_cfg, 1);

  TrainConfig c;
  c.epochs = 0;
  c.init_mode = "robust";
  c.seed = 32;
  TrainResult r = train(spec, c, train_data, nullptr, &pre.checkpoint);
  for (int l = 0; l < spec.backbone_layers; ++l)
    CHECK(r.params.layers[size_t(l)].weight == pre.checkpoint.layers[size_t(l)].weight);
}
