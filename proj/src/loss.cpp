#include "bases/loss.hpp"

#include "bases/perturbation.hpp"

namespace bases {

std::string to_string(FusionKind f) {
  switch (f) {
    case FusionKind::weighted_probabilities:
      return "weighted_probabilities";
    case FusionKind::weighted_logits:
      return "weighted_logits";
    case FusionKind::weighted_loss:
      return "weighted_loss";
  }
  return "unknown";
}

FusionKind fusion_from_string(const std::string& s) {
  if (s == "weighted_probabilities") return FusionKind::weighted_probabilities;
  if (s == "weighted_logits") return FusionKind::weighted_logits;
  if (s == "weighted_loss") return FusionKind::weighted_loss;
  throw ConfigError("unknown fusion '" + s + "'");
}

std::string to_string(LossKind::Kind k) { return k == LossKind::cw_margin ? "cw_margin" : "cross_entropy"; }

LossKind::Kind loss_kind_from_string(const std::string& s) {
  if (s == "cw_margin") return LossKind::cw_margin;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + s + "'");
}

std::string to_string(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

Norm norm_from_string(const std::string& s) {
  if (s == "linf") return Norm::linf;
  if (s == "l2") return Norm::l2;
  throw ConfigError("unknown norm '" + s + "'");
}

}  // namespace bases
