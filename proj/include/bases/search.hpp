#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bases/oracle.hpp"
#include "bases/perturbation.hpp"

namespace bases {

/// A point on the probability simplex: non-negative entries summing to one.
class WeightVector {
 public:
  WeightVector() = default;

  static WeightVector uniform(std::size_t n);

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> values() const { return w_; }
  const std::vector<double>& vector() const { return w_; }

  bool on_simplex(double tolerance = 1e-9) const;

  friend bool operator==(const WeightVector&, const WeightVector&) = default;

 private:
  explicit WeightVector(std::vector<double> w) : w_(std::move(w)) {}
  friend WeightVector normalize_weights(std::span<const double> raw);

  std::vector<double> w_;
};

/// Clamps negatives to zero and rescales to unit sum; an all-zero result
/// falls back to the uniform vector.
WeightVector normalize_weights(std::span<const double> raw);

/// normalize(w + eta e_n) and normalize(w - eta e_n).
std::pair<WeightVector, WeightVector> coordinate_pair(const WeightVector& w, std::size_t n, double eta);

enum class CoordinateOrder { cyclic, random };
enum class SelectRule { paper_two_way, monotone_three_way };
enum class CandidateTag { init, plus, minus };

std::string to_string(CoordinateOrder o);
CoordinateOrder coordinate_order_from_string(const std::string& s);
std::string to_string(SelectRule r);
SelectRule select_rule_from_string(const std::string& s);
std::string to_string(CandidateTag t);

struct SearchConfig {
  int max_queries = 50;
  /// Coordinate step; defaults to 1 / (10 N).
  std::optional<double> eta;
  CoordinateOrder order = CoordinateOrder::cyclic;
  std::uint64_t order_seed = 0;
  SelectRule select = SelectRule::monotone_three_way;
  /// Start each candidate's PM run from the incumbent perturbation rather than zero.
  bool warm_start = true;
  PMConfig pm{};

  double eta_for(std::size_t n) const { return eta.value_or(1.0 / (10.0 * static_cast<double>(n))); }
};

struct QueryRecord {
  int query_index = 0;  // 1-based
  int coordinate = -1;  // -1 for the initial equal-weights query
  CandidateTag tag = CandidateTag::init;
  double victim_loss = 0.0;
  bool success = false;
  WeightVector weights;  // the weights handed to the PM for this query
  std::uint64_t image_digest = 0;
};

/// Attack transcript, one record per victim query.
struct QueryLog {
  std::vector<QueryRecord> entries;

  std::size_t size() const { return entries.size(); }
  /// CSV with header query_index,coordinate,candidate_tag,victim_loss,success_flag.
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

/// State accepted at the end of one outer iteration.
struct IterationRecord {
  int coordinate = 0;
  CandidateTag accepted = CandidateTag::init;
  WeightVector weights;
  double victim_loss = 0.0;
  ImageTensor delta_init;  // the warm start handed to the PM in this iteration
  ImageTensor delta;       // accepted perturbation
};

struct AttackOutcome {
  bool success = false;
  ImageTensor delta;
  int queries = 0;
  WeightVector weights;
  double victim_loss = 0.0;
  QueryLog log;
  std::vector<IterationRecord> iterations;
  /// Outer iteration at which the goal was first met (0 = initial query), or -1.
  int success_iteration = -1;
};

/// Thrown when the oracle fails mid-attack; carries the transcript so far.
class AttackInterrupted : public TransportError {
 public:
  AttackInterrupted(const std::string& what, AttackOutcome partial)
      : TransportError(what), partial_(std::move(partial)) {}
  const AttackOutcome& partial() const { return partial_; }

 private:
  AttackOutcome partial_;
};

/// Score-based surrogate-ensemble search. The first query uses equal weights;
/// each outer iteration perturbs one weight coordinate by +/- eta, regenerates
/// both candidates with the PM warm-started from the incumbent perturbation,
/// queries them in (plus, minus) order and keeps the lowest victim loss.
/// Stops at the first successful query or after max_queries.
AttackOutcome bases_attack(const ImageTensor& x, const AttackGoal& goal, Oracle& oracle,
                           std::span<const Model> surrogates, const SearchConfig& cfg);

struct WhiteboxConfig {
  /// Outer iterations; defaults to the number bases_attack completes under max_queries.
  std::optional<int> iterations;
  /// Finite-difference half-width on the simplex; defaults to eta.
  std::optional<double> fd_step;
  /// Largest per-coordinate move of a normalised-gradient step; defaults to eta.
  std::optional<double> step;
};

/// Central-difference gradient of fn over the simplex coordinates:
/// g_n = (fn(normalize(w + h e_n)) - fn(normalize(w - h e_n))) / (2h).
std::vector<double> estimate_weight_gradient(const std::function<double(const WeightVector&)>& fn,
                                             const WeightVector& w, double h);

/// Reference optimiser with full victim access: each iteration estimates the
/// victim-loss gradient over all N weights by central differences (2N PM runs)
/// and takes w <- normalize(w - step * g / max|g|). No queries are counted.
AttackOutcome whitebox_weight_attack(const ImageTensor& x, const AttackGoal& goal, const Model& victim,
                                     std::span<const Model> surrogates, const SearchConfig& cfg,
                                     const WhiteboxConfig& wb = {});

/// Runs the score-based search against a whitebox stand-in victim without
/// early stopping and returns the perturbation of every evaluated query, in
/// order: exactly `cfg.max_queries` entries.
std::vector<ImageTensor> hardlabel_queryset(const ImageTensor& x, const AttackGoal& goal, const Model& surrogate_victim,
                                            std::span<const Model> surrogates, const SearchConfig& cfg);

/// Replays a stored query set against a label-only oracle until the first success.
AttackOutcome hardlabel_attack(const ImageTensor& x, const AttackGoal& goal, std::span<const ImageTensor> queryset,
                               Oracle& oracle);

}  // namespace bases
