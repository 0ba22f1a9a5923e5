#include "segrob/attack.hpp"
#include "segrob/data.hpp"
#include "segrob/softmax.hpp"
#include "segrob/rng.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace segrob;

namespace {

Dataset tiny_dataset(int n, int side = 16, int k = 4, std::uint64_t seed = 902) {
  return generate_dataset(seed, n, side, side, k);
}

ClassWeights weights_of(const Dataset& d) {
  return ClassWeights::from_pixel_counts(
      class_pixel_counts(d.labels, d.num_classes).pixels_per_class.cast<double>());
}

}  // namespace

TEST_CASE("linf box projection") {
  ImageTensor orig(1, 1, 3);
  orig.data << 0.9, 0.5, 0.2;
  SUBCASE("identity when candidate equals original") {
    ImageTensor proj = project_linf_box(orig, orig, 0.1);
    CHECK(proj.data == orig.data);
  }
  SUBCASE("epsilon zero returns the original exactly") {
    ImageTensor cand = orig;
    cand.data << 0.1, 0.99, 0.7;
    ImageTensor proj = project_linf_box(orig, cand, 0.0);
    CHECK(proj.data == orig.data);
  }
  SUBCASE("unit box binds before the ball") {
    ImageTensor cand = orig;
    cand.data << 1.3, 0.5, 0.2;
    ImageTensor proj = project_linf_box(orig, cand, 0.1);
    CHECK(proj.data(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("ball binds inside the box") {
    ImageTensor cand = orig;
    cand.data << 0.9, 0.75, 0.05;
    ImageTensor proj = project_linf_box(orig, cand, 0.1);
    CHECK(proj.data(0, 1) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(proj.data(0, 2) == doctest::Approx(0.1).epsilon(1e-15));
  }
}

TEST_CASE("apgd with epsilon zero returns the original image") {
  Dataset d = tiny_dataset(1);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 3);
  AttackResult res = apgd(model, LossKind::MaskedCe, d.images[0], d.labels[0], 0.0, 20, 7);
  CHECK(res.adversarial.data == d.images[0].data);
  const PredictionMap clean = predict(forward(model, d.images[0]));
  CHECK(res.prediction.labels == clean.labels);
}

TEST_CASE("attacks stay feasible for every loss and schedule") {
  Dataset d = tiny_dataset(2);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 5);
  ClassWeights w = weights_of(d);
  const double eps = 6.0 / 255.0;
  for (LossKind kind : {LossKind::Ce, LossKind::Js, LossKind::MaskedCe,
                        LossKind::MaskedCeBalanced, LossKind::SegPgd, LossKind::CosPgd}) {
    for (Schedule schedule : {Schedule::ConstEps, Schedule::RedEps}) {
      AttackConfig cfg;
      cfg.epsilon = eps;
      cfg.iterations = 15;
      cfg.loss = kind;
      cfg.schedule = schedule;
      cfg.seed = 11;
      AttackResult res = run_attack(model, cfg, d.images[0], d.labels[0], 123, &w);
      CAPTURE(loss_kind_name(kind));
      CAPTURE(schedule_name(schedule));
      CHECK(is_feasible(d.images[0], res.adversarial, eps, 0.0));
      CHECK(res.best_objective ==
            *std::max_element(res.objective_trace.begin(), res.objective_trace.end()));
    }
  }
}

TEST_CASE("single-iteration attack from random init is feasible") {
  Dataset d = tiny_dataset(1);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 9);
  AttackResult res = apgd(model, LossKind::Ce, d.images[0], d.labels[0], 0.05, 1, 99);
  CHECK(is_feasible(d.images[0], res.adversarial, 0.05, 0.0));
}

TEST_CASE("apgd on a one-pixel linear problem matches exhaustive grid search") {
  // one pixel, K=2: CE objective over the eps-box has its maximum at a corner
  ModelParams model = init_params(ArchSpec::pixel_linear(2), 21);
  ImageTensor img(1, 1, 3);
  img.data << 0.5, 0.4, 0.6;
  LabelMap label(1, 1);
  label.labels[0] = 0;
  const double eps = 0.1;

  double grid_best = -1e300;
  const int steps = 21;
  ImageTensor probe = img;
  for (int i = 0; i < steps; ++i)
    for (int j = 0; j < steps; ++j)
      for (int k = 0; k < steps; ++k) {
        probe.data(0, 0) = std::clamp(img.data(0, 0) - eps + 2 * eps * i / (steps - 1), 0.0, 1.0);
        probe.data(0, 1) = std::clamp(img.data(0, 1) - eps + 2 * eps * j / (steps - 1), 0.0, 1.0);
        probe.data(0, 2) = std::clamp(img.data(0, 2) - eps + 2 * eps * k / (steps - 1), 0.0, 1.0);
        grid_best = std::max(grid_best, ce_loss(forward(model, probe), label).total);
      }

  AttackResult res = apgd(model, LossKind::Ce, img, label, eps, 50, 3);
  // the linear objective is maximized at the sign-aligned corner; APGD must
  // reach it within grid resolution
  CHECK(res.best_objective >= grid_best - 1e-6);

  // corner check: the gradient direction for a linear model is constant
  const LossEval at_opt = ce_loss(forward(model, res.adversarial), label);
  Matrix g = input_gradient(model, res.adversarial, LogitMap(1, 1, 2, at_opt.grad));
  for (int c = 0; c < 3; ++c) {
    const double lo = std::max(0.0, img.data(0, c) - eps);
    const double hi = std::min(1.0, img.data(0, c) + eps);
    const double x = res.adversarial.data(0, c);
    CHECK((g(0, c) > 0 ? hi - x : x - lo) < 1e-9);
  }
}

TEST_CASE("red-eps splits the budget 3:3:4 and concatenates traces") {
  Dataset d = tiny_dataset(1);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 31);
  SUBCASE("n=10") {
    AttackResult res = red_eps_attack(model, LossKind::Ce, d.images[0], d.labels[0], 0.03, 10, 5);
    // each stage contributes budget+1 evaluations
    CHECK(res.objective_trace.size() == 10 + 3);
    CHECK(is_feasible(d.images[0], res.adversarial, 0.03, 0.0));
  }
  SUBCASE("n=300 slot arithmetic") {
    CHECK(300 * 3 / 10 == 90);
    CHECK(300 - 2 * 90 == 120);
    CHECK(10 * 3 / 10 == 3);
    CHECK(10 - 2 * 3 == 4);
  }
  SUBCASE("epsilon zero degenerates to the original") {
    AttackResult res = red_eps_attack(model, LossKind::MaskedCe, d.images[0], d.labels[0], 0.0, 10, 5);
    CHECK(res.adversarial.data == d.images[0].data);
  }
  SUBCASE("budget below 10 is rejected") {
    CHECK_THROWS_AS(red_eps_attack(model, LossKind::Ce, d.images[0], d.labels[0], 0.03, 9, 5),
                    std::invalid_argument);
  }
}

TEST_CASE("warm starting a larger radius never loses accuracy ground") {
  Dataset d = tiny_dataset(2);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 41);
  const double eps1 = 0.02, eps2 = 0.04;
  for (int i = 0; i < 2; ++i) {
    AttackResult small = apgd(model, LossKind::MaskedCe, d.images[size_t(i)], d.labels[size_t(i)],
                              eps1, 25, 77);
    AttackResult large = apgd(model, LossKind::MaskedCe, d.images[size_t(i)], d.labels[size_t(i)],
                              eps2, 25, 78, nullptr, &small.adversarial);
    CHECK(large.accuracy <= small.accuracy);
  }
}

TEST_CASE("attacks are deterministic and worker-count independent") {
  Dataset d = tiny_dataset(4);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 51);
  ClassWeights w = weights_of(d);
  AttackConfig cfg;
  cfg.epsilon = 0.03;
  cfg.iterations = 12;
  cfg.loss = LossKind::MaskedCe;
  cfg.schedule = Schedule::RedEps;
  cfg.seed = 1234;
  DatasetAttackResult a = attack_dataset(model, cfg, d, &w, 1);
  DatasetAttackResult b = attack_dataset(model, cfg, d, &w, 3);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(a.per_image[i].adversarial.data == b.per_image[i].adversarial.data);
    CHECK(a.per_image[i].accuracy == b.per_image[i].accuracy);
  }
  CHECK(a.confusion.tp == b.confusion.tp);

  DatasetAttackResult c = attack_dataset(model, cfg, d, &w, 1);
  for (std::size_t i = 0; i < d.size(); ++i)
    CHECK(a.per_image[i].adversarial.data == c.per_image[i].adversarial.data);
}

TEST_CASE("const-eps restarts pick the lowest-accuracy run deterministically") {
  Dataset d = tiny_dataset(1);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 61);
  AttackConfig cfg;
  cfg.epsilon = 0.04;
  cfg.iterations = 30;
  cfg.loss = LossKind::MaskedCe;
  cfg.schedule = Schedule::ConstEps;
  cfg.restarts = 3;
  AttackResult multi = run_attack(model, cfg, d.images[0], d.labels[0], 7);
  CHECK(is_feasible(d.images[0], multi.adversarial, cfg.epsilon, 0.0));
  // each restart runs 10 iterations; the winner must not be worse than the
  // seed-matched single restarts
  for (int r = 0; r < 3; ++r) {
    AttackResult single = apgd(model, LossKind::MaskedCe, d.images[0], d.labels[0], cfg.epsilon, 10,
                               derive_seed(7, "restart", std::uint64_t(r)));
    CHECK(multi.accuracy <= single.accuracy + 1e-15);
  }
}

TEST_CASE("baseline step sizes follow the published grid") {
  CHECK(baseline_step_size(0.25 / 255) == doctest::Approx(8e-4));
  CHECK(baseline_step_size(4.0 / 255) == doctest::Approx(3e-3));
  CHECK(baseline_step_size(8.0 / 255) == doctest::Approx(5e-3));
  CHECK(baseline_step_size(12.0 / 255) == doctest::Approx(6e-3));
  CHECK(baseline_step_size(20.0 / 255) == doctest::Approx(6e-3));  // clamped
  CHECK(baseline_step_size(0.1 / 255) == doctest::Approx(8e-4));   // clamped
  const double mid = baseline_step_size(6.0 / 255);
  CHECK(mid > 3e-3);
  CHECK(mid < 5e-3);
  CHECK(mid == doctest::Approx(4e-3));
}

TEST_CASE("pgd baselines keep the highest-loss iterate") {
  Dataset d = tiny_dataset(1);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 71);
  AttackResult res = pgd(model, LossKind::SegPgd, d.images[0], d.labels[0], 0.03, 12, 5);
  CHECK(res.best_objective ==
        *std::max_element(res.objective_trace.begin(), res.objective_trace.end()));
  CHECK(is_feasible(d.images[0], res.adversarial, 0.03, 0.0));
}

TEST_CASE("non-finite model output aborts with a diagnostic") {
  Dataset d = tiny_dataset(1);
  ModelParams model = init_params(ArchSpec::small_conv(d.num_classes), 81);
  model.layers[0].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(apgd(model, LossKind::Ce, d.images[0], d.labels[0], 0.03, 5, 1),
                  std::domain_error);
}

TEST_CASE("transfer evaluation") {
  Dataset d = tiny_dataset(3);
  ModelParams source_model = init_params(ArchSpec::small_conv(d.num_classes), 91);
  ClassWeights w = weights_of(d);
  AttackConfig cfg;
  cfg.epsilon = 0.04;
  cfg.iterations = 12;
  cfg.loss = LossKind::MaskedCe;
  cfg.schedule = Schedule::ConstEps;
  cfg.seed = 5;
  DatasetAttackResult res = attack_dataset(source_model, cfg, d, &w, 1);

  SUBCASE("transfer to the same model reproduces its metrics") {
    ConfusionAccumulator acc = transfer_eval(res.per_image, source_model, d, 1);
    CHECK(acc.tp == res.confusion.tp);
    CHECK(acc.fp == res.confusion.fp);
    CHECK(acc.fn == res.confusion.fn);
  }
  SUBCASE("zero-radius perturbations give clean metrics on any target") {
    AttackConfig zero = cfg;
    zero.epsilon = 0.0;
    DatasetAttackResult clean_res = attack_dataset(source_model, zero, d, &w, 1);
    ModelParams target = init_params(ArchSpec::small_conv(d.num_classes), 92);
    ConfusionAccumulator transferred = transfer_eval(clean_res.per_image, target, d, 1);
    ConfusionAccumulator clean = clean_eval(target, d, 1);
    CHECK(transferred.tp == clean.tp);
    CHECK(transferred.fn == clean.fn);
  }
  SUBCASE("transferred attacks are no stronger than white-box ones") {
    ModelParams target = init_params(ArchSpec::small_conv(d.num_classes), 93);
    ConfusionAccumulator transferred = transfer_eval(res.per_image, target, d, 1);
    DatasetAttackResult white_box = attack_dataset(target, cfg, d, &w, 1);
    CHECK(pixel_accuracy(transferred) >= pixel_accuracy(white_box.confusion));
  }
}
