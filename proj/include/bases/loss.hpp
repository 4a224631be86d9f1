#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bases/errors.hpp"
#include "bases/network.hpp"

namespace bases {

enum class GoalMode { targeted, untargeted };

/// For targeted goals `label` is the target class y*; for untargeted goals it
/// is the true class y that must be left.
struct AttackGoal {
  GoalMode mode = GoalMode::targeted;
  int label = 0;

  static AttackGoal targeted(int target) { return {GoalMode::targeted, target}; }
  static AttackGoal untargeted(int true_label) { return {GoalMode::untargeted, true_label}; }

  bool satisfied_by(Eigen::Index predicted) const {
    return mode == GoalMode::targeted ? predicted == label : predicted != label;
  }

  friend bool operator==(const AttackGoal&, const AttackGoal&) = default;
};

enum class FusionKind { weighted_probabilities, weighted_logits, weighted_loss };

struct LossKind {
  enum Kind { cw_margin, cross_entropy };
  Kind kind = cw_margin;
  double kappa = 0.0;

  static LossKind cw(double kappa = 0.0) { return {cw_margin, kappa}; }
  static LossKind ce() { return {cross_entropy, 0.0}; }

  friend bool operator==(const LossKind&, const LossKind&) = default;
};

std::string to_string(FusionKind f);
FusionKind fusion_from_string(const std::string& s);
std::string to_string(LossKind::Kind k);
LossKind::Kind loss_kind_from_string(const std::string& s);

/// Loss value together with its gradient w.r.t. the logits.
struct LossWithGrad {
  double value = 0.0;
  Vector<double> grad;
};

namespace detail {

inline void check_goal(Eigen::Index classes, const AttackGoal& goal) {
  if (classes < 2) throw DegenerateClassifier("adversarial loss needs at least 2 classes");
  if (goal.label < 0 || goal.label >= classes) {
    throw Error("goal label " + std::to_string(goal.label) + " out of range for " + std::to_string(classes) +
                " classes");
  }
}

/// Largest logit other than `skip`; ties go to the lowest index.
inline Eigen::Index best_other(const Vector<double>& z, int skip) {
  Eigen::Index best = -1;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    if (j == skip) continue;
    if (best < 0 || z[j] > z[best]) best = j;
  }
  return best;
}

}  // namespace detail

/// Targeted: max(max_{j!=y*} z_j - z_{y*}, -kappa).
/// Untargeted: max(z_y - max_{j!=y} z_j, -kappa).
/// The gradient is active whenever the margin is at or above -kappa.
inline LossWithGrad cw_margin_loss_grad(const Vector<double>& z, const AttackGoal& goal, double kappa) {
  detail::check_goal(z.size(), goal);
  const Eigen::Index other = detail::best_other(z, goal.label);
  const double sign = goal.mode == GoalMode::targeted ? 1.0 : -1.0;
  const double margin = sign * (z[other] - z[goal.label]);
  LossWithGrad out{std::max(margin, -kappa), Vector<double>::Zero(z.size())};
  if (margin >= -kappa) {
    out.grad[other] = sign;
    out.grad[goal.label] = -sign;
  }
  return out;
}

/// Targeted: -log softmax(z)_{y*}. Untargeted: log softmax(z)_y, so that lower
/// is more adversarial for both modes.
inline LossWithGrad cross_entropy_loss_grad(const Vector<double>& z, const AttackGoal& goal) {
  detail::check_goal(z.size(), goal);
  const double nll = log_sum_exp(z) - z[goal.label];
  Vector<double> grad = softmax(z);
  grad[goal.label] -= 1.0;
  if (goal.mode == GoalMode::targeted) return {nll, std::move(grad)};
  return {-nll, -grad};
}

inline LossWithGrad loss_grad(const Vector<double>& z, const AttackGoal& goal, const LossKind& kind) {
  return kind.kind == LossKind::cw_margin ? cw_margin_loss_grad(z, goal, kind.kappa)
                                          : cross_entropy_loss_grad(z, goal);
}

template <typename Derived>
double cw_margin_loss(const Eigen::MatrixBase<Derived>& z, const AttackGoal& goal, double kappa) {
  return cw_margin_loss_grad(z.template cast<double>(), goal, kappa).value;
}

template <typename Derived>
double cross_entropy_loss(const Eigen::MatrixBase<Derived>& z, const AttackGoal& goal) {
  return cross_entropy_loss_grad(z.template cast<double>(), goal).value;
}

template <typename Derived>
double adversarial_loss(const Eigen::MatrixBase<Derived>& z, const AttackGoal& goal, const LossKind& kind) {
  return loss_grad(z.template cast<double>(), goal, kind).value;
}

/// Fused ensemble loss and its gradient w.r.t. each member's logits.
/// weighted_probabilities uses the fixed cross-entropy form on the mixture
/// sum_i w_i softmax(z_i) regardless of `kind`.
inline std::pair<double, std::vector<Vector<double>>> ensemble_loss_grad(std::span<const Vector<double>> logits,
                                                                         std::span<const double> weights,
                                                                         FusionKind fusion, const LossKind& kind,
                                                                         const AttackGoal& goal) {
  const std::size_t n = logits.size();
  if (n == 0 || weights.size() != n) {
    throw EnsembleArityError("ensemble has " + std::to_string(n) + " members but " +
                             std::to_string(weights.size()) + " weights");
  }
  const Eigen::Index classes = logits[0].size();
  for (const auto& z : logits) {
    if (z.size() != classes) throw EnsembleArityError("ensemble members disagree on class count");
  }
  detail::check_goal(classes, goal);

  std::vector<Vector<double>> grads(n, Vector<double>::Zero(classes));
  switch (fusion) {
    case FusionKind::weighted_loss: {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0) continue;
        auto l = loss_grad(logits[i], goal, kind);
        total += weights[i] * l.value;
        grads[i] = weights[i] * l.grad;
      }
      return {total, std::move(grads)};
    }
    case FusionKind::weighted_logits: {
      Vector<double> fused = Vector<double>::Zero(classes);
      for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] != 0.0) fused += weights[i] * logits[i];
      }
      auto l = loss_grad(fused, goal, kind);
      for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] != 0.0) grads[i] = weights[i] * l.grad;
      }
      return {l.value, std::move(grads)};
    }
    case FusionKind::weighted_probabilities: {
      // log P_t = logsumexp_i(log w_i + log p_{i,t}) keeps tiny probabilities finite.
      const int t = goal.label;
      std::vector<double> log_terms(n, -std::numeric_limits<double>::infinity());
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] <= 0.0) continue;
        log_terms[i] = std::log(weights[i]) + logits[i][t] - log_sum_exp(logits[i]);
        top = std::max(top, log_terms[i]);
      }
      if (!std::isfinite(top)) throw EnsembleArityError("weighted-probability fusion needs a positive weight");
      double acc = 0.0;
      for (double lt : log_terms) acc += std::exp(lt - top);
      const double log_p = top + std::log(acc);
      const double sign = goal.mode == GoalMode::targeted ? -1.0 : 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] <= 0.0) continue;
        // d log P_t / d z_i = (w_i p_{i,t} / P_t) (e_t - p_i)
        const double share = std::exp(log_terms[i] - log_p);
        Vector<double> d = -softmax(logits[i]);
        d[t] += 1.0;
        grads[i] = sign * share * d;
      }
      return {sign * log_p, std::move(grads)};
    }
  }
  throw Error("unknown fusion kind");
}

inline double ensemble_loss(std::span<const Vector<double>> logits, std::span<const double> weights,
                            FusionKind fusion, const LossKind& kind, const AttackGoal& goal) {
  return ensemble_loss_grad(logits, weights, fusion, kind, goal).first;
}

template <typename Scalar>
struct EnsembleEvaluation {
  double loss = 0.0;
  Tensor<Scalar> gradient;  // w.r.t. the perturbation
};

/// Loss and exact reverse-mode gradient of the fused ensemble loss at x + delta.
/// Per-model input gradients are summed in model order. Members with zero
/// weight are not evaluated.
template <typename Scalar>
EnsembleEvaluation<Scalar> ensemble_evaluate(std::span<const Network<Scalar>> models, const Tensor<Scalar>& x,
                                             const Tensor<Scalar>& delta, std::span<const double> weights,
                                             FusionKind fusion, const LossKind& kind, const AttackGoal& goal) {
  if (models.size() != weights.size()) {
    throw EnsembleArityError(std::to_string(models.size()) + " models but " + std::to_string(weights.size()) +
                             " weights");
  }
  if (x.shape != delta.shape) throw ShapeError("perturbation shape differs from image shape");
  const Vector<Scalar> input = x.data + delta.data;

  std::vector<detail::ForwardTrace<Scalar>> traces(models.size());
  std::vector<Vector<double>> logits(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    detail::check_input(models[i], x);
    if (weights[i] == 0.0) {
      logits[i] = Vector<double>::Zero(models[i].num_classes());
      continue;
    }
    traces[i] = detail::forward_trace(models[i], input);
    logits[i] = traces[i].back().template cast<double>();
  }
  auto [value, logit_grads] = ensemble_loss_grad(logits, weights, fusion, kind, goal);

  Tensor<Scalar> grad(x.shape);
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (weights[i] == 0.0) continue;
    grad.data += detail::backward(models[i], traces[i], Vector<Scalar>(logit_grads[i].template cast<Scalar>()));
  }
  return {value, std::move(grad)};
}

template <typename Scalar>
Tensor<Scalar> ensemble_input_gradient(std::span<const Network<Scalar>> models, const Tensor<Scalar>& x,
                                       const Tensor<Scalar>& delta, std::span<const double> weights,
                                       FusionKind fusion, const LossKind& kind, const AttackGoal& goal) {
  return ensemble_evaluate(models, x, delta, weights, fusion, kind, goal).gradient;
}

/// Ensemble loss at x + delta, without the gradient.
template <typename Scalar>
double ensemble_loss_at(std::span<const Network<Scalar>> models, const Tensor<Scalar>& x, const Tensor<Scalar>& delta,
                        std::span<const double> weights, FusionKind fusion, const LossKind& kind,
                        const AttackGoal& goal) {
  const Tensor<Scalar> input(x.shape, x.data + delta.data);
  std::vector<Vector<double>> logits;
  for (const auto& m : models) logits.push_back(forward(m, input).data.template cast<double>());
  return ensemble_loss(logits, weights, fusion, kind, goal);
}

}  // namespace bases
