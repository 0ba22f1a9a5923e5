#include "segrob/losses.hpp"
#include "segrob/softmax.hpp"
#include "segrob/rng.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace segrob;

namespace {

LogitMap single_pixel(std::initializer_list<double> logits) {
  LogitMap u(1, 1, int(logits.size()));
  int k = 0;
  for (double v : logits) u.data(0, k++) = v;
  return u;
}

LabelMap single_label(int y) {
  LabelMap m(1, 1);
  m.labels[0] = y;
  return m;
}

}  // namespace

TEST_CASE("cross entropy values and gradients") {
  SUBCASE("uniform two-class pixel") {
    LossEval e = ce_loss(single_pixel({0.0, 0.0}), single_label(0));
    CHECK(e.per_pixel[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(e.grad(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(e.grad(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(e.total == doctest::Approx(e.per_pixel.sum()));
  }
  SUBCASE("confident correct prediction") {
    LossEval e = ce_loss(single_pixel({40.0, -40.0}), single_label(0));
    CHECK(e.per_pixel[0] < 1e-30);
    CHECK(e.grad.cwiseAbs().maxCoeff() < 1e-30);
  }
  SUBCASE("gradient norm against the closed-form bounds at p=(0.5,0.5)") {
    LossEval e = ce_loss(single_pixel({0.0, 0.0}), single_label(0));
    const double norm_sq = e.grad.row(0).squaredNorm();
    CHECK(norm_sq == doctest::Approx(0.5).epsilon(1e-12));
    const double py = 0.5;
    CHECK(norm_sq >= 2.0 / 1.0 * (1 - py) * (1 - py) - 1e-12);  // K/(K-1)(1-p)^2 = 0.5
    CHECK(norm_sq <= (1 - py) * (1 - py) + (1 - py) + 1e-12);   // 0.75
  }
  SUBCASE("label out of range") {
    CHECK_THROWS_AS(ce_loss(single_pixel({0.0, 0.0}), single_label(2)), std::invalid_argument);
  }
}

TEST_CASE("cross entropy gradient-norm bounds hold on random probability vectors") {
  Rng rng(31);
  for (int k : {2, 5, 21}) {
    for (int trial = 0; trial < 1000; ++trial) {
      LogitMap u(1, 1, k);
      const double scale = rng.uniform(0.5, 12.0);
      for (int i = 0; i < k; ++i) u.data(0, i) = rng.uniform(-scale, scale);
      const int y = int(rng.uniform_index(std::uint64_t(k)));
      LossEval e = ce_loss(u, single_label(y));
      const double py = softmax(u).data(0, y);
      const double norm_sq = e.grad.row(0).squaredNorm();
      CHECK(norm_sq + 1e-12 >= k / double(k - 1) * (1 - py) * (1 - py));
      CHECK(norm_sq <= (1 - py) * (1 - py) + (1 - py) + 1e-12);
    }
  }
}

TEST_CASE("JS divergence values and gradients") {
  SUBCASE("identical distributions") {
    LossEval e = js_loss(single_pixel({40.0, -40.0}), single_label(0));
    CHECK(e.per_pixel[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(e.grad.cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("uniform two-class pixel") {
    LossEval e = js_loss(single_pixel({0.0, 0.0}), single_label(0));
    CHECK(e.per_pixel[0] == doctest::Approx(0.215761).epsilon(1e-5));
    CHECK(e.grad(0, 0) == doctest::Approx(-0.137327).epsilon(1e-5));
    CHECK(e.grad(0, 1) == doctest::Approx(0.137327).epsilon(1e-5));
  }
  SUBCASE("vanishing gradient for confidently wrong pixels") {
    LossEval e = js_loss(single_pixel({-40.0, 0.0, 0.0}), single_label(0));
    CHECK(e.grad.row(0).norm() < 1e-12);
  }
  SUBCASE("monotone decay of the gradient norm as u_y drops") {
    double prev = std::numeric_limits<double>::infinity();
    for (double uy : {0.0, -5.0, -10.0, -20.0, -40.0}) {
      LossEval e = js_loss(single_pixel({uy, 0.0, 0.0, 0.0}), single_label(0));
      const double norm = e.grad.row(0).norm();
      CHECK(norm < prev);
      prev = norm;
    }
  }
}

TEST_CASE("JS divergence is bounded by log 2") {
  Rng rng(32);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + int(rng.uniform_index(7));
    LogitMap u = testing::random_logits(1, 1, k, rng, 25.0);
    LossEval e = js_loss(u, single_label(int(rng.uniform_index(std::uint64_t(k)))));
    CHECK(e.per_pixel[0] >= -1e-15);
    CHECK(e.per_pixel[0] <= std::log(2.0) + 1e-12);
  }
}

TEST_CASE("masked cross entropy") {
  SUBCASE("correctly classified pixel keeps its CE value") {
    LossEval e = masked_ce_loss(single_pixel({2.0, 0.0}), single_label(0), false);
    CHECK(e.per_pixel[0] == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
    LossEval ce = ce_loss(single_pixel({2.0, 0.0}), single_label(0));
    CHECK((e.grad - ce.grad).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("misclassified pixel is zeroed") {
    LossEval e = masked_ce_loss(single_pixel({0.0, 2.0}), single_label(0), false);
    CHECK(e.per_pixel[0] == 0.0);
    CHECK(e.grad.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("balanced weight scales by 1/N_y") {
    Eigen::VectorXd counts(2);
    counts << 10, 40;
    ClassWeights w = ClassWeights::from_pixel_counts(counts);
    LossEval bal = masked_ce_loss(single_pixel({0.0, 2.0}), single_label(1), true, &w);
    LossEval ce = ce_loss(single_pixel({0.0, 2.0}), single_label(1));
    CHECK(bal.per_pixel[0] == doctest::Approx(0.025 * ce.per_pixel[0]).epsilon(1e-12));
  }
  SUBCASE("equals plain CE when every pixel is correct") {
    Rng rng(33);
    LogitMap u = testing::random_logits(4, 4, 3, rng);
    LabelMap y(4, 4);
    PredictionMap m = predict(u);
    y.labels = m.labels;
    LossEval masked = masked_ce_loss(u, y, false);
    LossEval plain = ce_loss(u, y);
    CHECK(masked.total == plain.total);
    CHECK((masked.grad - plain.grad).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("balanced variant requires weights and present classes") {
    CHECK_THROWS_AS(masked_ce_loss(single_pixel({0.0, 1.0}), single_label(0), true, nullptr),
                    std::invalid_argument);
    Eigen::VectorXd counts(2);
    counts << 0, 40;  // class 0 absent from training data
    ClassWeights w = ClassWeights::from_pixel_counts(counts);
    CHECK_THROWS_AS(masked_ce_loss(single_pixel({2.0, 0.0}), single_label(0), true, &w),
                    std::invalid_argument);
  }
}

TEST_CASE("SegPGD and CosPGD weighting") {
  SUBCASE("segpgd ramps lambda from zero") {
    // t=1: correct pixels weigh 1, wrong ones 0
    LossEval correct = baseline_weighted_ce(single_pixel({2.0, 0.0}), single_label(0),
                                            LossKind::SegPgd, 1, 10);
    LossEval ce = ce_loss(single_pixel({2.0, 0.0}), single_label(0));
    CHECK(correct.per_pixel[0] == doctest::Approx(ce.per_pixel[0]).epsilon(1e-12));
    LossEval wrong = baseline_weighted_ce(single_pixel({0.0, 2.0}), single_label(0),
                                          LossKind::SegPgd, 1, 10);
    CHECK(wrong.per_pixel[0] == 0.0);
  }
  SUBCASE("segpgd mid-run weights") {
    // T=10, t=6: lambda = 0.25
    LogitMap u = single_pixel({2.0, 0.0});
    const Vector w_correct = frozen_pixel_weights(u, single_label(0), LossKind::SegPgd, 6, 10);
    CHECK(w_correct[0] == doctest::Approx(0.75).epsilon(1e-12));
    const Vector w_wrong = frozen_pixel_weights(u, single_label(1), LossKind::SegPgd, 6, 10);
    CHECK(w_wrong[0] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("cospgd weight at uniform logits") {
    const Vector w = frozen_pixel_weights(single_pixel({0.0, 0.0}), single_label(0),
                                          LossKind::CosPgd, 1, 1);
    CHECK(w[0] == doctest::Approx(0.707107).epsilon(1e-5));
  }
  SUBCASE("invalid iteration bounds") {
    CHECK_THROWS_AS(baseline_weighted_ce(single_pixel({0.0, 0.0}), single_label(0),
                                         LossKind::SegPgd, 0, 10),
                    std::invalid_argument);
    CHECK_THROWS_AS(baseline_weighted_ce(single_pixel({0.0, 0.0}), single_label(0),
                                         LossKind::SegPgd, 11, 10),
                    std::invalid_argument);
  }
}

TEST_CASE("analytic loss gradients match finite differences through a model") {
  Rng rng(34);
  ModelParams model = init_params(ArchSpec::small_conv(4), 55);
  Eigen::VectorXd counts(4);
  counts << 50, 25, 100, 10;
  ClassWeights weights = ClassWeights::from_pixel_counts(counts);

  for (LossKind kind : {LossKind::Ce, LossKind::Js, LossKind::MaskedCe,
                        LossKind::MaskedCeBalanced, LossKind::SegPgd, LossKind::CosPgd}) {
    ImageTensor img = testing::kink_free_image(model, 5, 5, rng);
    LabelMap labels = testing::random_labels(5, 5, 4, rng);
    const int t = 3, T = 7;
    const LogitMap u = forward(model, img);
    LossEval loss = eval_loss(kind, u, labels, &weights, t, T);
    Matrix analytic = input_gradient(model, img, LogitMap(5, 5, 4, loss.grad));
    auto objective = testing::loss_objective(model, labels, kind, &weights, t, T, img);
    Matrix fd = testing::finite_difference_input_grad(objective, img);
    CAPTURE(loss_kind_name(kind));
    CHECK(testing::max_relative_error(analytic, fd) < 1e-4);
  }
}

TEST_CASE("loss names round-trip") {
  for (LossKind kind : {LossKind::Ce, LossKind::Js, LossKind::MaskedCe,
                        LossKind::MaskedCeBalanced, LossKind::SegPgd, LossKind::CosPgd})
    CHECK(loss_kind_from_string(loss_kind_name(kind)) == kind);
  CHECK_THROWS_AS(loss_kind_from_string("bogus"), std::invalid_argument);
}
