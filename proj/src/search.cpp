#include "bases/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "bases/binary_io.hpp"
#include "bases/rng.hpp"

namespace bases {

WeightVector WeightVector::uniform(std::size_t n) {
  if (n == 0) throw ConfigError("weight vector needs at least one entry");
  return WeightVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

bool WeightVector::on_simplex(double tolerance) const {
  if (w_.empty()) return false;
  double sum = 0.0;
  for (double v : w_) {
    if (!(v >= 0.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tolerance;
}

WeightVector normalize_weights(std::span<const double> raw) {
  if (raw.empty()) throw ConfigError("weight vector needs at least one entry");
  std::vector<double> w(raw.begin(), raw.end());
  double sum = 0.0;
  for (double& v : w) {
    if (!(v > 0.0)) v = 0.0;  // also maps NaN to zero
    sum += v;
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) return WeightVector::uniform(w.size());
  for (double& v : w) v /= sum;
  return WeightVector(std::move(w));
}

std::pair<WeightVector, WeightVector> coordinate_pair(const WeightVector& w, std::size_t n, double eta) {
  if (n >= w.size()) throw ConfigError("coordinate index out of range");
  std::vector<double> plus = w.vector(), minus = w.vector();
  plus[n] += eta;
  minus[n] -= eta;
  return {normalize_weights(plus), normalize_weights(minus)};
}

std::string to_string(CoordinateOrder o) { return o == CoordinateOrder::cyclic ? "cyclic" : "random"; }

CoordinateOrder coordinate_order_from_string(const std::string& s) {
  if (s == "cyclic") return CoordinateOrder::cyclic;
  if (s == "random") return CoordinateOrder::random;
  throw ConfigError("unknown coordinate order '" + s + "'");
}

std::string to_string(SelectRule r) {
  return r == SelectRule::paper_two_way ? "paper_two_way" : "monotone_three_way";
}

SelectRule select_rule_from_string(const std::string& s) {
  if (s == "paper_two_way") return SelectRule::paper_two_way;
  if (s == "monotone_three_way") return SelectRule::monotone_three_way;
  throw ConfigError("unknown select rule '" + s + "'");
}

std::string to_string(CandidateTag t) {
  switch (t) {
    case CandidateTag::init:
      return "init";
    case CandidateTag::plus:
      return "plus";
    case CandidateTag::minus:
      return "minus";
  }
  return "unknown";
}

std::string QueryLog::to_csv() const {
  std::string out = "query_index,coordinate,candidate_tag,victim_loss,success_flag\n";
  char line[128];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%d,%d,%s,%.9g,%d\n", e.query_index, e.coordinate, to_string(e.tag).c_str(),
                  e.victim_loss, e.success ? 1 : 0);
    out += line;
  }
  return out;
}

void QueryLog::write_csv(const std::string& path) const { io::write_file(path, to_csv()); }

namespace {

struct Candidate {
  CandidateTag tag = CandidateTag::init;
  WeightVector weights;
  ImageTensor delta;
  double loss = 0.0;
  bool success = false;
};

/// Cycles through coordinates either in index order or in a fresh seeded
/// permutation per sweep.
class CoordinateSchedule {
 public:
  CoordinateSchedule(std::size_t n, CoordinateOrder order, std::uint64_t seed)
      : order_(order), rng_(seed, "coordinate-order"), perm_(n) {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  }

  std::size_t next() {
    if (pos_ == perm_.size()) pos_ = 0;
    if (pos_ == 0 && order_ == CoordinateOrder::random) rng_.shuffle(perm_);
    return perm_[pos_++];
  }

 private:
  CoordinateOrder order_;
  SplitMix64 rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

void validate(std::span<const Model> surrogates, const SearchConfig& cfg) {
  if (surrogates.empty()) throw ConfigError("surrogate ensemble is empty");
  if (cfg.max_queries < 1) throw ConfigError("query budget must be at least 1");
  if (!(cfg.eta_for(surrogates.size()) > 0.0)) throw ConfigError("coordinate step eta must be positive");
}

using VictimFn = std::function<OracleResponse(const ImageTensor&)>;

/// Shared outer loop. Records into `out` as it goes so that a transport
/// failure leaves a usable partial transcript behind.
void run_search(AttackOutcome& out, const ImageTensor& x, const AttackGoal& goal, const VictimFn& victim,
                std::span<const Model> surrogates, const SearchConfig& cfg, bool stop_on_success,
                std::vector<ImageTensor>* deltas) {
  validate(surrogates, cfg);
  const std::size_t n_models = surrogates.size();
  const double eta = cfg.eta_for(n_models);
  const int budget = cfg.max_queries;

  auto evaluate = [&](const WeightVector& w, const ImageTensor& init, int coordinate, CandidateTag tag) {
    auto pm = pm_run(x, goal, surrogates, w.values(), init, cfg.pm);
    const OracleResponse response = victim(pm.x_star);
    if (response.kind != OracleMode::soft) throw CapabilityError("score-based search needs a soft-label victim");
    Candidate c{tag, w, std::move(pm.delta), adversarial_loss(response.logits, goal, cfg.pm.loss),
                is_success(response, goal)};
    out.log.entries.push_back({static_cast<int>(out.log.size()) + 1, coordinate, tag, c.loss, c.success, w,
                               digest(pm.x_star)});
    out.queries = static_cast<int>(out.log.size());
    if (deltas) deltas->push_back(c.delta);
    return c;
  };

  auto accept = [&](const Candidate& c) {
    out.weights = c.weights;
    out.delta = c.delta;
    out.victim_loss = c.loss;
  };

  Candidate incumbent = evaluate(WeightVector::uniform(n_models), ImageTensor::zeros(x.shape), -1, CandidateTag::init);
  accept(incumbent);
  if (incumbent.success) {
    out.success = true;
    out.success_iteration = 0;
    if (stop_on_success) return;
  }

  CoordinateSchedule schedule(n_models, cfg.order, cfg.order_seed);
  int iteration = 0;
  while (out.queries < budget) {
    ++iteration;
    const std::size_t n = schedule.next();
    const auto [w_plus, w_minus] = coordinate_pair(incumbent.weights, n, eta);
    const ImageTensor warm_start = cfg.warm_start ? incumbent.delta : ImageTensor::zeros(x.shape);

    std::vector<Candidate> candidates;
    candidates.push_back(evaluate(w_plus, warm_start, static_cast<int>(n), CandidateTag::plus));
    if (!(stop_on_success && candidates.back().success) && out.queries < budget) {
      candidates.push_back(evaluate(w_minus, warm_start, static_cast<int>(n), CandidateTag::minus));
    }

    const Candidate* chosen = nullptr;
    for (const auto& c : candidates) {
      if (c.success && stop_on_success) {
        chosen = &c;
        break;
      }
    }
    if (!chosen) {
      // Candidates are ordered (incumbent,) plus, minus; strict < keeps the earlier one on ties.
      chosen = cfg.select == SelectRule::monotone_three_way ? &incumbent : &candidates.front();
      for (const auto& c : candidates) {
        if (c.loss < chosen->loss) chosen = &c;
      }
    }
    const bool hit = std::any_of(candidates.begin(), candidates.end(), [](const auto& c) { return c.success; });
    incumbent = Candidate(*chosen);
    accept(incumbent);
    out.iterations.push_back({static_cast<int>(n), incumbent.tag, incumbent.weights, incumbent.loss, warm_start,
                              incumbent.delta});
    if (hit && out.success_iteration < 0) out.success_iteration = iteration;
    if (hit) out.success = true;
    if (hit && stop_on_success) return;
  }
}

}  // namespace

AttackOutcome bases_attack(const ImageTensor& x, const AttackGoal& goal, Oracle& oracle,
                           std::span<const Model> surrogates, const SearchConfig& cfg) {
  if (oracle.mode() != OracleMode::soft) throw CapabilityError("bases_attack needs a soft-label oracle");
  AttackOutcome out;
  try {
    run_search(out, x, goal, [&oracle](const ImageTensor& image) { return oracle.query(image); }, surrogates, cfg,
               true, nullptr);
  } catch (const AttackInterrupted&) {
    throw;
  } catch (const TransportError& e) {
    out.queries = static_cast<int>(out.log.size());
    throw AttackInterrupted(e.what(), std::move(out));
  } catch (const ProtocolError& e) {
    out.queries = static_cast<int>(out.log.size());
    throw AttackInterrupted(std::string("protocol error: ") + e.what(), std::move(out));
  }
  return out;
}

std::vector<double> estimate_weight_gradient(const std::function<double(const WeightVector&)>& fn,
                                             const WeightVector& w, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  std::vector<double> g(w.size(), 0.0);
  for (std::size_t n = 0; n < w.size(); ++n) {
    const auto [plus, minus] = coordinate_pair(w, n, h);
    g[n] = (fn(plus) - fn(minus)) / (2.0 * h);
  }
  return g;
}

AttackOutcome whitebox_weight_attack(const ImageTensor& x, const AttackGoal& goal, const Model& victim,
                                     std::span<const Model> surrogates, const SearchConfig& cfg,
                                     const WhiteboxConfig& wb) {
  validate(surrogates, cfg);
  const double eta = cfg.eta_for(surrogates.size());
  const double h = wb.fd_step.value_or(eta);
  const double step = wb.step.value_or(eta);
  const int iterations = wb.iterations.value_or((cfg.max_queries - 1) / 2);

  auto victim_eval = [&](const ImageTensor& x_star) {
    const Vector<float> logits = forward(victim, x_star).data;
    return std::pair{adversarial_loss(logits, goal, cfg.pm.loss), goal.satisfied_by(argmax(logits))};
  };

  AttackOutcome out;
  out.weights = WeightVector::uniform(surrogates.size());
  auto pm = pm_run(x, goal, surrogates, out.weights.values(), ImageTensor::zeros(x.shape), cfg.pm);
  auto [loss, success] = victim_eval(pm.x_star);
  out.delta = std::move(pm.delta);
  out.victim_loss = loss;
  if (success) {
    out.success = true;
    out.success_iteration = 0;
    return out;
  }

  for (int it = 1; it <= iterations; ++it) {
    const ImageTensor warm_start = cfg.warm_start ? out.delta : ImageTensor::zeros(x.shape);
    auto victim_loss_at = [&](const WeightVector& w) {
      return victim_eval(pm_run(x, goal, surrogates, w.values(), warm_start, cfg.pm).x_star).first;
    };
    const auto g = estimate_weight_gradient(victim_loss_at, out.weights, h);
    double g_max = 0.0;
    for (double v : g) g_max = std::max(g_max, std::abs(v));
    if (g_max > 0.0) {
      std::vector<double> raw = out.weights.vector();
      for (std::size_t n = 0; n < raw.size(); ++n) raw[n] -= step * g[n] / g_max;
      out.weights = normalize_weights(raw);
    }
    pm = pm_run(x, goal, surrogates, out.weights.values(), warm_start, cfg.pm);
    std::tie(loss, success) = victim_eval(pm.x_star);
    out.delta = std::move(pm.delta);
    out.victim_loss = loss;
    out.iterations.push_back({-1, CandidateTag::init, out.weights, loss, warm_start, out.delta});
    if (success) {
      out.success = true;
      out.success_iteration = it;
      return out;
    }
  }
  return out;
}

std::vector<ImageTensor> hardlabel_queryset(const ImageTensor& x, const AttackGoal& goal, const Model& surrogate_victim,
                                            std::span<const Model> surrogates, const SearchConfig& cfg) {
  LocalOracle stand_in(surrogate_victim, OracleMode::soft);
  AttackOutcome scratch;
  std::vector<ImageTensor> deltas;
  run_search(scratch, x, goal, [&stand_in](const ImageTensor& image) { return stand_in.query(image); }, surrogates,
             cfg, false, &deltas);
  return deltas;
}

AttackOutcome hardlabel_attack(const ImageTensor& x, const AttackGoal& goal, std::span<const ImageTensor> queryset,
                               Oracle& oracle) {
  AttackOutcome out;
  out.victim_loss = std::numeric_limits<double>::quiet_NaN();
  try {
    for (const auto& delta : queryset) {
      if (delta.shape != x.shape) throw ShapeError("query-set perturbation shape differs from image shape");
      const ImageTensor x_star(x.shape, x.data + delta.data);
      const OracleResponse response = oracle.query(x_star);
      const bool success = is_success(response, goal);
      out.log.entries.push_back({static_cast<int>(out.log.size()) + 1, -1,
                                 out.log.size() == 0 ? CandidateTag::init : CandidateTag::plus,
                                 std::numeric_limits<double>::quiet_NaN(), success, {}, digest(x_star)});
      out.queries = static_cast<int>(out.log.size());
      out.delta = delta;
      if (success) {
        out.success = true;
        out.success_iteration = out.queries - 1;
        break;
      }
    }
  } catch (const AttackInterrupted&) {
    throw;
  } catch (const TransportError& e) {
    throw AttackInterrupted(e.what(), std::move(out));
  }
  return out;
}

}  // namespace bases
