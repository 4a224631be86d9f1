#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "bases/loss.hpp"
#include "bases/network.hpp"

namespace bases {

enum class Norm { linf, l2 };

std::string to_string(Norm n);
Norm norm_from_string(const std::string& s);

/// Perturbation ball in [0,1] pixel units. The pixel range is always [0,1].
struct Budget {
  Norm norm = Norm::linf;
  double epsilon = 16.0 / 255.0;
};

struct PMConfig {
  int steps = 10;
  double step_size = 3.0 * (16.0 / 255.0) / 10.0;
  Budget budget{};
  LossKind loss = LossKind::cw(0.0);
  FusionKind fusion = FusionKind::weighted_loss;
};

/// Three times the I-FGSM step epsilon / T.
inline double default_step(const Budget& budget, int steps) {
  if (steps < 1) throw ConfigError("PM needs at least one step");
  return 3.0 * budget.epsilon / steps;
}

/// PMConfig with T steps and the default step size for `budget`.
inline PMConfig make_pm_config(const Budget& budget, int steps = 10, LossKind loss = LossKind::cw(0.0),
                               FusionKind fusion = FusionKind::weighted_loss) {
  return {steps, default_step(budget, steps), budget, loss, fusion};
}

/// Norm of the perturbation, accumulated in double.
template <typename Scalar>
double perturbation_norm(const Tensor<Scalar>& delta, Norm norm) {
  if (norm == Norm::linf) return static_cast<double>(delta.data.cwiseAbs().maxCoeff());
  return delta.data.template cast<double>().norm();
}

template <typename Scalar>
bool norm_exceeds(const Tensor<Scalar>& delta, const Budget& budget) {
  if (budget.norm == Norm::linf) {
    return (delta.data.cwiseAbs().array() > static_cast<Scalar>(budget.epsilon)).any();
  }
  return perturbation_norm(delta, Norm::l2) > budget.epsilon;
}

/// True when the perturbation lies in the budget ball and x + delta in [0,1].
template <typename Scalar>
bool is_feasible(const Tensor<Scalar>& delta, const Tensor<Scalar>& x, const Budget& budget) {
  if (delta.shape != x.shape) return false;
  if (norm_exceeds(delta, budget)) return false;
  const Vector<Scalar> sum = x.data + delta.data;
  return (sum.array() >= Scalar(0)).all() && (sum.array() <= Scalar(1)).all();
}

/// Projection onto the budget ball followed by the pixel-range clamp of x + delta.
/// Coordinates already feasible are left untouched, which makes the map idempotent.
template <typename Scalar>
Tensor<Scalar> project(const Tensor<Scalar>& delta, const Tensor<Scalar>& x, const Budget& budget) {
  if (delta.shape != x.shape) throw ShapeError("perturbation shape differs from image shape");
  if (!(budget.epsilon > 0.0)) throw ConfigError("budget epsilon must be positive");
  Tensor<Scalar> out = delta;
  if (budget.norm == Norm::linf) {
    const auto eps = static_cast<Scalar>(budget.epsilon);
    out.data = out.data.cwiseMax(-eps).cwiseMin(eps);
  } else {
    double n = perturbation_norm(out, Norm::l2);
    if (n > budget.epsilon) {
      const Vector<double> wide = delta.data.template cast<double>();
      double factor = budget.epsilon / n;
      // Rounding back to Scalar can land a hair outside the ball; shrink until it does not.
      for (int attempt = 0; attempt < 64; ++attempt) {
        out.data = (wide * factor).template cast<Scalar>();
        if (perturbation_norm(out, Norm::l2) <= budget.epsilon) break;
        factor *= 1.0 - 1e-7 * (attempt + 1);
      }
    }
  }
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const Scalar v = x[i] + out[i];
    if (v > Scalar(1)) {
      out[i] = Scalar(1) - x[i];
    } else if (v < Scalar(0)) {
      out[i] = -x[i];
    }
  }
  return out;
}

template <typename Scalar>
struct PMResult {
  Tensor<Scalar> delta;
  Tensor<Scalar> x_star;
};

/// Called after every inner step with (step index from 1, the projected
/// perturbation, ensemble loss evaluated before the step).
template <typename Scalar>
using PMObserver = std::function<void(int, const Tensor<Scalar>&, double)>;

/// Signed-gradient PGD on the weighted ensemble loss:
/// delta <- project(delta - step_size * sign(grad)), repeated `steps` times,
/// starting from project(delta_init).
template <typename Scalar>
PMResult<Scalar> pm_run(const Tensor<Scalar>& x, const AttackGoal& goal, std::span<const Network<Scalar>> models,
                        std::span<const double> weights, const Tensor<Scalar>& delta_init, const PMConfig& cfg,
                        const PMObserver<Scalar>& observer = {}) {
  if (cfg.steps < 1) throw ConfigError("PM needs at least one step");
  if (cfg.step_size < 0.0) throw ConfigError("PM step size must be non-negative");
  if (delta_init.shape != x.shape) throw ShapeError("initial perturbation shape differs from image shape");
  const auto step = static_cast<Scalar>(cfg.step_size);
  Tensor<Scalar> delta = project(delta_init, x, cfg.budget);
  for (int t = 1; t <= cfg.steps; ++t) {
    const auto eval = ensemble_evaluate(models, x, delta, weights, cfg.fusion, cfg.loss, goal);
    Tensor<Scalar> moved(delta.shape, delta.data - step * eval.gradient.data.cwiseSign());
    delta = project(moved, x, cfg.budget);
    if (observer) observer(t, delta, eval.loss);
  }
  Tensor<Scalar> x_star(x.shape, x.data + delta.data);
  return {std::move(delta), std::move(x_star)};
}

}  // namespace bases
