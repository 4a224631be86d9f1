#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bases/rng.hpp"
#include "bases/search.hpp"

namespace bases {

/// Epsilon on the [0,1] scale for the l2 rule 255 * sqrt(0.001 D) stated on 0-255 pixels.
inline double l2_budget(std::size_t pixel_count) {
  if (pixel_count < 1) throw ConfigError("pixel count must be positive");
  return std::sqrt(0.001 * static_cast<double>(pixel_count));
}

enum class TargetPolicy { provided, easiest, hardest, random, untargeted };

std::string to_string(TargetPolicy p);
TargetPolicy target_policy_from_string(const std::string& s);

/// easiest: highest clean logit other than the true label; hardest: lowest
/// clean logit overall; random: uniform over classes other than the true
/// label. Ties resolve to the lowest index.
int pick_target(const Vector<float>& clean_logits, int true_label, TargetPolicy policy, SplitMix64& rng);

struct VictimSpec {
  std::optional<std::string> model_id;
  std::optional<std::string> url;
};

enum class AttackMethod { bases, hardlabel };

struct ExperimentConfig {
  std::string dataset;
  std::string manifest;
  std::vector<std::string> surrogates;
  VictimSpec victim;
  bool allow_victim_in_surrogates = false;
  TargetPolicy policy = TargetPolicy::easiest;
  std::vector<int> targets;  // per attacked image, for the "provided" policy
  SearchConfig search{};
  AttackMethod method = AttackMethod::bases;
  std::string surrogate_victim;  // hard-label method only
  OracleMode victim_mode = OracleMode::soft;
  std::string output_dir;
  std::uint64_t seed = 0;
  int max_images = 100;

  /// Strict parse: unknown keys and inconsistent settings raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig read(const std::string& path);
  nlohmann::json to_json() const;
};

struct ImageRecord {
  int index = 0;  // position in the test split
  int label = 0;
  int target = -1;  // -1 for untargeted
  bool success = false;
  int queries = 0;
  int success_iteration = -1;
};

struct QueryStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int median = 0;    // lower middle for even counts
  int min = 0;
  int max = 0;
};

struct MetricsSummary {
  int attempted = 0;
  int successes = 0;
  int failures = 0;
  int skipped = 0;  // misclassified clean inputs
  double fooling_rate = 0.0;
  QueryStats queries;                     // over all attempts; failures count their full budget
  std::optional<QueryStats> successful;  // over successful attempts only
  std::vector<ImageRecord> records;

  nlohmann::json to_json() const;
};

QueryStats query_stats(std::vector<int> counts);

MetricsSummary summarize(std::span<const ImageRecord> records, int skipped = 0);

/// Rebuilds per-image records from attack transcripts: the query count is the
/// number of entries and success is any successful entry.
MetricsSummary summarize(std::span<const QueryLog> logs);

/// Reads a transcript written by QueryLog::write_csv.
QueryLog read_query_log_csv(const std::string& path);

/// Fraction of attempted images fooled within q queries, for q = 1..max_queries.
std::vector<double> success_curve(std::span<const ImageRecord> records, int max_queries);

struct ExperimentResult {
  MetricsSummary summary;
  std::vector<double> curve;
};

/// Attacks every test-split image the victim classifies correctly (up to
/// max_images), writing queries/image_<k>.csv, curve.csv and summary.json
/// under output_dir when it is non-empty.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SweepRow {
  int i = 0, j = 0, k = 0;
  double loss = 0.0;
  bool success = false;

  WeightVector weights(int resolution) const;
};

/// Victim loss over the barycentric grid w = (i, j, k) / R, i + j + k = R,
/// running the PM from a zero perturbation at every point.
std::vector<SweepRow> triangle_sweep(const ImageTensor& x, const AttackGoal& goal, std::span<const Model> surrogates,
                                     Oracle& victim, int resolution, const PMConfig& pm);

std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace bases
