#include <doctest.h>

#include "bases/loss.hpp"
#include "bases/zoo.hpp"
#include "support.hpp"

using namespace bases;

namespace {

Vector<double> v(std::initializer_list<double> xs) {
  Vector<double> out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out[i++] = x;
  return out;
}

Vector<double> random_logits(SplitMix64& rng, int c) {
  Vector<double> z(c);
  for (auto& x : z) x = rng.uniform(-4, 4);
  return z;
}

}  // namespace

TEST_CASE("cw margin examples") {
  CHECK(cw_margin_loss(v({2, 0}), AttackGoal::targeted(0), 5.0) == -2.0);
  CHECK(cw_margin_loss(v({0, 3}), AttackGoal::targeted(0), 0.0) == 3.0);
  CHECK(cw_margin_loss(v({1, 1}), AttackGoal::targeted(0), 0.0) == 0.0);
  CHECK(cw_margin_loss(v({4, 0, 1}), AttackGoal::targeted(0), 2.0) == -2.0);  // clipped at -kappa
  CHECK(cw_margin_loss(v({4, 0, 1}), AttackGoal::untargeted(0), 0.0) == 3.0);
}

TEST_CASE("losses need at least two classes and an in-range label") {
  CHECK_THROWS_AS(cw_margin_loss(v({1}), AttackGoal::targeted(0), 0.0), DegenerateClassifier);
  CHECK_THROWS_AS(cross_entropy_loss(v({1}), AttackGoal::targeted(0)), DegenerateClassifier);
  CHECK_THROWS_AS(cw_margin_loss(v({1, 2}), AttackGoal::targeted(2), 0.0), Error);
}

TEST_CASE("cross entropy examples") {
  CHECK(cross_entropy_loss(v({0, 0}), AttackGoal::targeted(0)) == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy_loss(v({50, 0}), AttackGoal::targeted(0)) == doctest::Approx(0.0));
  CHECK(cross_entropy_loss(v({0, 0}), AttackGoal::untargeted(0)) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("cw sign agrees with strict argmax success for nonzero margins") {
  SplitMix64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const auto z = random_logits(rng, 5);
    const int label = static_cast<int>(rng.below(5));
    for (auto goal : {AttackGoal::targeted(label), AttackGoal::untargeted(label)}) {
      const double l = cw_margin_loss(z, goal, 1.0);
      if (l == 0.0) continue;
      CHECK((l < 0.0) == goal.satisfied_by(argmax(z)));
    }
  }
}

TEST_CASE("untargeted cw equals the negated targeted margin toward the best other class") {
  // Brute force: with y the true class and j the runner-up, the untargeted margin
  // z_y - z_j is the targeted margin for y* = j with its sign flipped.
  SplitMix64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const auto z = random_logits(rng, 3);
    const int y = static_cast<int>(rng.below(3));
    int j = -1;
    for (int k = 0; k < 3; ++k) {
      if (k != y && (j < 0 || z[k] > z[j])) j = k;
    }
    const double untargeted = cw_margin_loss(z, AttackGoal::untargeted(y), 1e9);
    double best_other_than_j = -1e300;
    for (int k = 0; k < 3; ++k) {
      if (k != j) best_other_than_j = std::max(best_other_than_j, z[k]);
    }
    // When y is the top class the targeted margin for j is z_y - z_j.
    if (best_other_than_j == z[y]) {
      CHECK(untargeted == doctest::Approx(cw_margin_loss(z, AttackGoal::targeted(j), 1e9)));
    }
    CHECK(untargeted == doctest::Approx(z[y] - z[j]));
  }
}

TEST_CASE("loss gradients match finite differences") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto z = random_logits(rng, 4);
    const int label = static_cast<int>(rng.below(4));
    for (auto goal : {AttackGoal::targeted(label), AttackGoal::untargeted(label)}) {
      for (auto kind : {LossKind::cw(0.5), LossKind::ce()}) {
        const auto lg = loss_grad(z, goal, kind);
        Tensor<double> zt({4}, z);
        const auto fd = fd_gradient([&](const Tensor<double>& p) { return loss_grad(p.data, goal, kind).value; },
                                    zt, 1e-6);
        // The margin loss is piecewise linear; skip points within h of a kink.
        if (kind.kind == LossKind::cw_margin) {
          std::vector<double> sorted(z.begin(), z.end());
          std::sort(sorted.begin(), sorted.end());
          bool near_kink = std::abs(lg.value + kind.kappa) < 1e-4;
          for (int k = 1; k < 4; ++k) near_kink |= sorted[k] - sorted[k - 1] < 1e-4;
          if (near_kink) continue;
        }
        CHECK((lg.grad - fd.data).cwiseAbs().maxCoeff() < 1e-6);
      }
    }
  }
}

TEST_CASE("singleton ensemble reduces to the single-model loss") {
  SplitMix64 rng(4);
  const std::vector<double> one{1.0};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vector<double>> z{random_logits(rng, 5)};
    const auto goal = AttackGoal::targeted(static_cast<int>(rng.below(5)));
    for (auto kind : {LossKind::cw(0.0), LossKind::ce()}) {
      const double single = loss_grad(z[0], goal, kind).value;
      CHECK(ensemble_loss(z, one, FusionKind::weighted_loss, kind, goal) == doctest::Approx(single));
      CHECK(ensemble_loss(z, one, FusionKind::weighted_logits, kind, goal) == doctest::Approx(single));
    }
    // Weighted probabilities always uses the cross-entropy form.
    CHECK(ensemble_loss(z, one, FusionKind::weighted_probabilities, LossKind::cw(0.0), goal) ==
          doctest::Approx(cross_entropy_loss(z[0], goal)));
  }
}

TEST_CASE("weighted logits of identical members do not depend on w") {
  SplitMix64 rng(5);
  const auto z = random_logits(rng, 4);
  const std::vector<Vector<double>> same{z, z, z};
  const auto goal = AttackGoal::targeted(2);
  const double ref = ensemble_loss(same, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, FusionKind::weighted_logits,
                                   LossKind::cw(0.0), goal);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w{rng.uniform(), rng.uniform(), rng.uniform()};
    const double s = w[0] + w[1] + w[2];
    for (auto& x : w) x /= s;
    CHECK(ensemble_loss(same, w, FusionKind::weighted_logits, LossKind::cw(0.0), goal) == doctest::Approx(ref));
  }
}

TEST_CASE("weighted loss is the weighted sum of member losses") {
  SplitMix64 rng(6);
  const std::vector<Vector<double>> z{random_logits(rng, 4), random_logits(rng, 4), random_logits(rng, 4)};
  const std::vector<double> w{0.2, 0.3, 0.5};
  const auto goal = AttackGoal::targeted(1);
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> others;
    for (int k = 0; k < 4; ++k) {
      if (k != 1) others.push_back(z[i][k]);
    }
    expected += w[i] * std::max(*std::max_element(others.begin(), others.end()) - z[i][1], 0.0);
  }
  CHECK(ensemble_loss(z, w, FusionKind::weighted_loss, LossKind::cw(0.0), goal) == doctest::Approx(expected));

  // Affine in w: the centroid value is the mean of the vertex values.
  double vertex_mean = 0.0;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> e(3, 0.0);
    e[i] = 1.0;
    vertex_mean += ensemble_loss(z, e, FusionKind::weighted_loss, LossKind::cw(0.0), goal) / 3.0;
  }
  const std::vector<double> centroid(3, 1.0 / 3);
  CHECK(std::abs(ensemble_loss(z, centroid, FusionKind::weighted_loss, LossKind::cw(0.0), goal) - vertex_mean) <
        1e-6);
}

TEST_CASE("fusions reject arity mismatches") {
  const std::vector<Vector<double>> z{v({1, 2}), v({0, 1})};
  for (auto f : {FusionKind::weighted_loss, FusionKind::weighted_logits, FusionKind::weighted_probabilities}) {
    CHECK_THROWS_AS(ensemble_loss(z, std::vector<double>{1.0}, f, LossKind::cw(0.0), AttackGoal::targeted(0)),
                    EnsembleArityError);
  }
  const std::vector<Vector<double>> ragged{v({1, 2}), v({0, 1, 2})};
  CHECK_THROWS_AS(ensemble_loss(ragged, std::vector<double>{0.5, 0.5}, FusionKind::weighted_loss, LossKind::ce(),
                                AttackGoal::targeted(0)),
                  EnsembleArityError);
}

TEST_CASE("weighted probabilities stays finite for vanishing target probability") {
  const std::vector<Vector<double>> z{v({0, 900}), v({0, 800})};
  const auto [value, grads] = ensemble_loss_grad(z, std::vector<double>{0.5, 0.5}, FusionKind::weighted_probabilities,
                                                 LossKind::ce(), AttackGoal::targeted(0));
  CHECK(std::isfinite(value));
  CHECK(value == doctest::Approx(800.0 - std::log(0.5)).epsilon(1e-9));
  for (const auto& g : grads) CHECK(g.allFinite());
}

TEST_CASE("fusion logit gradients match finite differences") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Vector<double>> z{random_logits(rng, 4), random_logits(rng, 4), random_logits(rng, 4)};
    std::vector<double> w{rng.uniform() + 0.05, rng.uniform() + 0.05, rng.uniform() + 0.05};
    const int label = static_cast<int>(rng.below(4));
    for (auto goal : {AttackGoal::targeted(label), AttackGoal::untargeted(label)}) {
      for (auto f : {FusionKind::weighted_logits, FusionKind::weighted_probabilities, FusionKind::weighted_loss}) {
        const auto [value, grads] = ensemble_loss_grad(z, w, f, LossKind::ce(), goal);
        for (int i = 0; i < 3; ++i) {
          Tensor<double> zi({4}, z[i]);
          const auto fd = fd_gradient(
              [&](const Tensor<double>& p) {
                auto zz = z;
                zz[i] = p.data;
                return ensemble_loss(zz, w, f, LossKind::ce(), goal);
              },
              zi, 1e-6);
          CHECK((grads[i] - fd.data).cwiseAbs().maxCoeff() < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("ensemble input gradient at a vertex equals the single-model gradient") {
  auto models = testing::random_models(3, 6, 4, 9);
  SplitMix64 rng(10);
  const auto x = testing::random_image({1, 6, 6}, rng);
  const auto delta = ImageTensor::zeros({1, 6, 6});
  const auto goal = AttackGoal::targeted(1);
  const std::vector<double> w{1.0, 0.0, 0.0};
  const auto g = ensemble_input_gradient<float>(models, x, delta, w, FusionKind::weighted_loss, LossKind::ce(), goal);
  const Vector<double> z = forward(models[0], x).data.cast<double>();
  const auto lg = cross_entropy_loss_grad(z, goal);
  const auto single = input_gradient(models[0], x, Tensor<float>({4}, lg.grad.cast<float>()));
  CHECK(bitwise_equal(g, single));
}

TEST_CASE("ensemble input gradient matches finite differences of the ensemble loss") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Network<double>> models;
    for (const auto& m : testing::random_models(3, 5, 3, 20 + trial)) models.push_back(m.cast<double>());
    const auto x = testing::random_image({1, 5, 5}, rng).cast<double>();
    const Tensor<double> delta({1, 5, 5});
    const std::vector<double> w{0.2, 0.3, 0.5};
    const auto goal = AttackGoal::targeted(static_cast<int>(rng.below(3)));
    const auto g = ensemble_input_gradient<double>(models, x, delta, w, FusionKind::weighted_probabilities,
                                                   LossKind::ce(), goal);
    const auto fd = fd_gradient(
        [&](const Tensor<double>& d) {
          return ensemble_loss_at<double>(models, x, d, w, FusionKind::weighted_probabilities, LossKind::ce(), goal);
        },
        delta, 1e-6);
    CHECK((g.data - fd.data).cwiseAbs().maxCoeff() <= 1e-3 * fd.data.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("weighted-loss input gradient is linear in w") {
  auto models = testing::random_models(3, 6, 4, 12);
  SplitMix64 rng(13);
  const auto x = testing::random_image({1, 6, 6}, rng);
  const auto delta = ImageTensor::zeros({1, 6, 6});
  const auto goal = AttackGoal::targeted(3);
  const std::vector<double> w1{0.6, 0.3, 0.1}, w2{0.1, 0.1, 0.8};
  const double a = 0.25;
  std::vector<double> mix(3);
  for (int i = 0; i < 3; ++i) mix[i] = a * w1[i] + (1 - a) * w2[i];
  auto grad = [&](const std::vector<double>& w) {
    return ensemble_input_gradient<float>(models, x, delta, w, FusionKind::weighted_loss, LossKind::ce(), goal).data;
  };
  const Vector<float> lhs = grad(mix);
  const Vector<float> rhs = a * grad(w1) + (1 - a) * grad(w2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-5f * (1.0f + rhs.cwiseAbs().maxCoeff()));
}

TEST_CASE("fusion and loss names round-trip") {
  for (auto f : {FusionKind::weighted_loss, FusionKind::weighted_logits, FusionKind::weighted_probabilities}) {
    CHECK(fusion_from_string(to_string(f)) == f);
  }
  CHECK(loss_kind_from_string(to_string(LossKind::cw_margin)) == LossKind::cw_margin);
  CHECK(loss_kind_from_string(to_string(LossKind::cross_entropy)) == LossKind::cross_entropy);
  CHECK_THROWS_AS(fusion_from_string("max"), ConfigError);
}
