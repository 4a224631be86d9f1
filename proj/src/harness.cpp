#include "bases/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bases/binary_io.hpp"
#include "bases/rng.hpp"

namespace bases {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(TargetPolicy p) {
  switch (p) {
    case TargetPolicy::provided:
      return "provided";
    case TargetPolicy::easiest:
      return "easiest";
    case TargetPolicy::hardest:
      return "hardest";
    case TargetPolicy::random:
      return "random";
    case TargetPolicy::untargeted:
      return "untargeted";
  }
  return "unknown";
}

TargetPolicy target_policy_from_string(const std::string& s) {
  for (auto p : {TargetPolicy::provided, TargetPolicy::easiest, TargetPolicy::hardest, TargetPolicy::random,
                 TargetPolicy::untargeted}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown goal policy '" + s + "'");
}

int pick_target(const Vector<float>& clean_logits, int true_label, TargetPolicy policy, SplitMix64& rng) {
  const auto classes = static_cast<int>(clean_logits.size());
  if (classes < 2) throw DegenerateClassifier("target selection needs at least 2 classes");
  switch (policy) {
    case TargetPolicy::easiest: {
      int best = -1;
      for (int c = 0; c < classes; ++c) {
        if (c == true_label) continue;
        if (best < 0 || clean_logits[c] > clean_logits[best]) best = c;
      }
      return best;
    }
    case TargetPolicy::hardest:
      return static_cast<int>(argmin(clean_logits));
    case TargetPolicy::random: {
      const int draw = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
      return draw >= true_label ? draw + 1 : draw;
    }
    default:
      throw ConfigError("policy '" + to_string(policy) + "' does not pick targets from logits");
  }
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    check_keys(j,
               {"dataset", "manifest", "surrogates", "victim", "allow_victim_in_surrogates", "goal", "search", "pm",
                "method", "surrogate_victim", "output_dir", "seed", "max_images"},
               "experiment config");
    cfg.dataset = j.at("dataset").get<std::string>();
    cfg.manifest = j.at("manifest").get<std::string>();
    cfg.surrogates = j.at("surrogates").get<std::vector<std::string>>();
    cfg.allow_victim_in_surrogates = get_or(j, "allow_victim_in_surrogates", false);
    cfg.output_dir = get_or<std::string>(j, "output_dir", "");
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    cfg.max_images = get_or(j, "max_images", 100);

    const json& victim = j.at("victim");
    check_keys(victim, {"model", "url", "mode"}, "victim");
    if (victim.contains("model")) cfg.victim.model_id = victim.at("model").get<std::string>();
    if (victim.contains("url")) cfg.victim.url = victim.at("url").get<std::string>();
    cfg.victim_mode = oracle_mode_from_string(get_or<std::string>(victim, "mode", "soft"));

    if (j.contains("goal")) {
      const json& goal = j.at("goal");
      check_keys(goal, {"policy", "targets"}, "goal");
      cfg.policy = target_policy_from_string(get_or<std::string>(goal, "policy", "easiest"));
      cfg.targets = get_or(goal, "targets", std::vector<int>{});
    }

    if (j.contains("search")) {
      const json& s = j.at("search");
      check_keys(s, {"max_queries", "eta", "order", "order_seed", "select_rule", "warm_start"}, "search");
      cfg.search.max_queries = get_or(s, "max_queries", 50);
      if (s.contains("eta") && !s.at("eta").is_null()) cfg.search.eta = s.at("eta").get<double>();
      cfg.search.order = coordinate_order_from_string(get_or<std::string>(s, "order", "cyclic"));
      cfg.search.order_seed = get_or<std::uint64_t>(s, "order_seed", 0);
      cfg.search.select = select_rule_from_string(get_or<std::string>(s, "select_rule", "monotone_three_way"));
      cfg.search.warm_start = get_or<bool>(s, "warm_start", true);
    }

    Budget budget;
    int steps = 10;
    std::optional<double> step_size;
    LossKind loss = LossKind::cw(0.0);
    FusionKind fusion = FusionKind::weighted_loss;
    if (j.contains("pm")) {
      const json& p = j.at("pm");
      check_keys(p, {"steps", "step_size", "norm", "epsilon", "loss", "kappa", "fusion"}, "pm");
      steps = get_or(p, "steps", 10);
      if (p.contains("step_size") && !p.at("step_size").is_null()) step_size = p.at("step_size").get<double>();
      budget.norm = norm_from_string(get_or<std::string>(p, "norm", "linf"));
      budget.epsilon = get_or(p, "epsilon", 16.0 / 255.0);
      loss.kind = loss_kind_from_string(get_or<std::string>(p, "loss", "cw_margin"));
      loss.kappa = get_or(p, "kappa", 0.0);
      fusion = fusion_from_string(get_or<std::string>(p, "fusion", "weighted_loss"));
    }
    if (steps < 1) throw ConfigError("pm.steps must be at least 1");
    if (!(budget.epsilon > 0.0)) throw ConfigError("pm.epsilon must be positive");
    if (loss.kappa < 0.0) throw ConfigError("pm.kappa must be non-negative");
    cfg.search.pm = {steps, step_size.value_or(default_step(budget, steps)), budget, loss, fusion};

    const std::string method = get_or<std::string>(j, "method", "bases");
    if (method == "bases") {
      cfg.method = AttackMethod::bases;
    } else if (method == "hardlabel") {
      cfg.method = AttackMethod::hardlabel;
    } else {
      throw ConfigError("unknown method '" + method + "'");
    }
    cfg.surrogate_victim = get_or<std::string>(j, "surrogate_victim", "");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }

  if (cfg.surrogates.empty()) throw ConfigError("at least one surrogate id is required");
  if (std::set<std::string>(cfg.surrogates.begin(), cfg.surrogates.end()).size() != cfg.surrogates.size()) {
    throw ConfigError("surrogate ids must be unique");
  }
  if (cfg.victim.model_id.has_value() == cfg.victim.url.has_value()) {
    throw ConfigError("victim needs exactly one of 'model' or 'url'");
  }
  if (cfg.victim.model_id && !cfg.allow_victim_in_surrogates &&
      std::find(cfg.surrogates.begin(), cfg.surrogates.end(), *cfg.victim.model_id) != cfg.surrogates.end()) {
    throw ConfigError("victim '" + *cfg.victim.model_id + "' is also a surrogate");
  }
  if (cfg.search.max_queries < 1) throw ConfigError("search.max_queries must be at least 1");
  if (cfg.search.eta && !(*cfg.search.eta > 0.0)) throw ConfigError("search.eta must be positive");
  if (cfg.max_images < 1) throw ConfigError("max_images must be at least 1");
  if (cfg.policy == TargetPolicy::provided && cfg.targets.empty()) {
    throw ConfigError("goal policy 'provided' needs a targets list");
  }
  if (cfg.method == AttackMethod::bases && cfg.victim_mode != OracleMode::soft) {
    throw ConfigError("score-based attacks need a soft-label victim");
  }
  if (cfg.victim_mode == OracleMode::hard &&
      (cfg.policy == TargetPolicy::easiest || cfg.policy == TargetPolicy::hardest)) {
    throw ConfigError("easiest/hardest targets need victim confidence scores; use a soft victim");
  }
  if (cfg.method == AttackMethod::hardlabel) {
    if (cfg.surrogate_victim.empty()) throw ConfigError("hardlabel method needs a surrogate_victim");
    if (cfg.victim.model_id && *cfg.victim.model_id == cfg.surrogate_victim) {
      throw ConfigError("surrogate_victim must differ from the victim");
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::read(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse '" + path + "': " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json victim_j;
  if (victim.model_id) victim_j["model"] = *victim.model_id;
  if (victim.url) victim_j["url"] = *victim.url;
  victim_j["mode"] = bases::to_string(victim_mode);
  json search_j{{"max_queries", search.max_queries},
                {"eta", search.eta ? json(*search.eta) : json(nullptr)},
                {"order", bases::to_string(search.order)},
                {"order_seed", search.order_seed},
                {"select_rule", bases::to_string(search.select)},
                {"warm_start", search.warm_start}};
  json pm_j{{"steps", search.pm.steps},
            {"step_size", search.pm.step_size},
            {"norm", bases::to_string(search.pm.budget.norm)},
            {"epsilon", search.pm.budget.epsilon},
            {"loss", bases::to_string(search.pm.loss.kind)},
            {"kappa", search.pm.loss.kappa},
            {"fusion", bases::to_string(search.pm.fusion)}};
  json goal_j{{"policy", bases::to_string(policy)}};
  if (!targets.empty()) goal_j["targets"] = targets;
  json j{{"dataset", dataset},
         {"manifest", manifest},
         {"surrogates", surrogates},
         {"victim", victim_j},
         {"allow_victim_in_surrogates", allow_victim_in_surrogates},
         {"goal", goal_j},
         {"search", search_j},
         {"pm", pm_j},
         {"method", method == AttackMethod::bases ? "bases" : "hardlabel"},
         {"output_dir", output_dir},
         {"seed", seed},
         {"max_images", max_images}};
  if (!surrogate_victim.empty()) j["surrogate_victim"] = surrogate_victim;
  return j;
}

QueryStats query_stats(std::vector<int> counts) {
  QueryStats s;
  if (counts.empty()) return s;
  std::sort(counts.begin(), counts.end());
  double sum = 0.0;
  for (int c : counts) sum += c;
  s.mean = sum / static_cast<double>(counts.size());
  double sq = 0.0;
  for (int c : counts) sq += (c - s.mean) * (c - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(counts.size()));
  s.median = counts[(counts.size() - 1) / 2];
  s.min = counts.front();
  s.max = counts.back();
  return s;
}

MetricsSummary summarize(std::span<const ImageRecord> records, int skipped) {
  if (records.empty()) throw Error("nothing to summarise");
  MetricsSummary m;
  m.records.assign(records.begin(), records.end());
  m.attempted = static_cast<int>(records.size());
  m.skipped = skipped;
  std::vector<int> all, ok;
  for (const auto& r : records) {
    all.push_back(r.queries);
    if (r.success) ok.push_back(r.queries);
  }
  m.successes = static_cast<int>(ok.size());
  m.failures = m.attempted - m.successes;
  m.fooling_rate = static_cast<double>(m.successes) / static_cast<double>(m.attempted);
  m.queries = query_stats(all);
  if (!ok.empty()) m.successful = query_stats(ok);
  return m;
}

MetricsSummary summarize(std::span<const QueryLog> logs) {
  std::vector<ImageRecord> records;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    ImageRecord r;
    r.index = static_cast<int>(i);
    r.queries = static_cast<int>(logs[i].size());
    r.success = std::any_of(logs[i].entries.begin(), logs[i].entries.end(), [](const auto& e) { return e.success; });
    records.push_back(r);
  }
  return summarize(records);
}

QueryLog read_query_log_csv(const std::string& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "query_index,coordinate,candidate_tag,victim_loss,success_flag") {
    throw FormatError("unexpected query log header in '" + path + "'", 0);
  }
  QueryLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(row, field, ',')) f.push_back(field);
    if (f.size() != 5) throw FormatError("malformed query log row '" + line + "'", 0);
    QueryRecord e;
    e.query_index = std::stoi(f[0]);
    e.coordinate = std::stoi(f[1]);
    e.tag = f[2] == "plus" ? CandidateTag::plus : f[2] == "minus" ? CandidateTag::minus : CandidateTag::init;
    e.victim_loss = std::strtod(f[3].c_str(), nullptr);
    e.success = f[4] == "1";
    log.entries.push_back(std::move(e));
  }
  return log;
}

std::vector<double> success_curve(std::span<const ImageRecord> records, int max_queries) {
  std::vector<double> curve(static_cast<std::size_t>(std::max(max_queries, 0)), 0.0);
  if (records.empty()) return curve;
  for (int q = 1; q <= max_queries; ++q) {
    int fooled = 0;
    for (const auto& r : records) fooled += (r.success && r.queries <= q) ? 1 : 0;
    curve[q - 1] = static_cast<double>(fooled) / static_cast<double>(records.size());
  }
  return curve;
}

namespace {

json stats_json(const QueryStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
}

}  // namespace

json MetricsSummary::to_json() const {
  json images = json::array();
  for (const auto& r : records) {
    images.push_back({{"index", r.index},
                      {"label", r.label},
                      {"target", r.target},
                      {"success", r.success},
                      {"queries", r.queries},
                      {"success_iteration", r.success_iteration}});
  }
  return {{"attempted", attempted},
          {"successes", successes},
          {"failures", failures},
          {"skipped", skipped},
          {"fooling_rate", fooling_rate},
          {"queries", stats_json(queries)},
          {"queries_successful", successful ? stats_json(*successful) : json(nullptr)},
          {"images", images}};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  // Everything that can be checked up front is checked before the first attack.
  const ZooManifest manifest = ZooManifest::read(cfg.manifest);
  for (const auto& id : cfg.surrogates) manifest.find(id);
  if (cfg.victim.model_id) manifest.find(*cfg.victim.model_id);
  if (cfg.method == AttackMethod::hardlabel) manifest.find(cfg.surrogate_victim);
  LabeledDataset data;
  try {
    data = load_dataset(cfg.dataset);
    data.validate();
  } catch (const Error& e) {
    throw ConfigError("dataset '" + cfg.dataset + "': " + e.what());
  }
  const std::vector<Model> surrogates = manifest.load(cfg.surrogates);
  for (const auto& m : surrogates) {
    if (m.num_classes() != data.num_classes || m.input_shape() != Shape{1, data.side, data.side}) {
      throw ConfigError("surrogate model does not match the dataset");
    }
  }
  std::optional<Model> stand_in;
  if (cfg.method == AttackMethod::hardlabel) stand_in = manifest.load(cfg.surrogate_victim);

  std::unique_ptr<Oracle> oracle;
  if (cfg.victim.model_id) {
    oracle = std::make_unique<LocalOracle>(manifest.load(*cfg.victim.model_id), cfg.victim_mode);
  } else {
    oracle = RemoteOracle::connect(*cfg.victim.url, {cfg.victim_mode, data.num_classes, "", 10.0});
  }

  if (!cfg.output_dir.empty()) fs::create_directories(fs::path(cfg.output_dir) / "queries");

  const LabeledDataset test = data.test_split();
  std::vector<ImageRecord> records;
  int skipped = 0;
  for (std::size_t idx = 0; idx < test.size() && static_cast<int>(records.size()) < cfg.max_images; ++idx) {
    const ImageTensor& x = test.images[idx];
    const int y = test.labels[idx];
    const OracleResponse clean = oracle->query(x);
    if (clean.predicted() != y) {
      ++skipped;
      continue;
    }
    SplitMix64 image_rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * (idx + 1)), "image");
    AttackGoal goal;
    int target = -1;
    if (cfg.policy == TargetPolicy::untargeted) {
      goal = AttackGoal::untargeted(y);
    } else {
      if (cfg.policy == TargetPolicy::provided) {
        if (records.size() >= cfg.targets.size()) throw ConfigError("targets list is shorter than the image set");
        target = cfg.targets[records.size()];
        if (target < 0 || target >= data.num_classes || target == y) {
          throw ConfigError("provided target " + std::to_string(target) + " is invalid for image " +
                            std::to_string(idx));
        }
      } else {
        // Label-only victims only reach here with the random policy, which needs just the class count.
        const Vector<float> scores =
            clean.kind == OracleMode::soft ? clean.logits : Vector<float>::Zero(oracle->num_classes());
        target = pick_target(scores, y, cfg.policy, image_rng);
      }
      goal = AttackGoal::targeted(target);
    }

    SearchConfig search = cfg.search;
    search.order_seed ^= image_rng.next();
    AttackOutcome outcome;
    if (cfg.method == AttackMethod::bases) {
      outcome = bases_attack(x, goal, *oracle, surrogates, search);
    } else {
      const auto queryset = hardlabel_queryset(x, goal, *stand_in, surrogates, search);
      outcome = hardlabel_attack(x, goal, queryset, *oracle);
    }
    records.push_back({static_cast<int>(idx), y, target, outcome.success, outcome.queries, outcome.success_iteration});
    if (!cfg.output_dir.empty()) {
      outcome.log.write_csv((fs::path(cfg.output_dir) / "queries" / ("image_" + std::to_string(idx) + ".csv")).string());
    }
  }
  if (records.empty()) throw ConfigError("the victim misclassifies every test image; nothing to attack");

  ExperimentResult result{summarize(records, skipped), success_curve(records, cfg.search.max_queries)};
  if (!cfg.output_dir.empty()) {
    std::string curve = "q,success_rate\n";
    char line[64];
    for (std::size_t q = 0; q < result.curve.size(); ++q) {
      std::snprintf(line, sizeof line, "%zu,%.6f\n", q + 1, result.curve[q]);
      curve += line;
    }
    io::write_file((fs::path(cfg.output_dir) / "curve.csv").string(), curve);
    json summary = result.summary.to_json();
    summary["config"] = cfg.to_json();
    io::write_file((fs::path(cfg.output_dir) / "summary.json").string(), summary.dump(2) + "\n");
  }
  return result;
}

WeightVector SweepRow::weights(int resolution) const {
  const double r = resolution;
  const std::vector<double> raw{i / r, j / r, k / r};
  return normalize_weights(raw);
}

std::vector<SweepRow> triangle_sweep(const ImageTensor& x, const AttackGoal& goal, std::span<const Model> surrogates,
                                     Oracle& victim, int resolution, const PMConfig& pm) {
  if (surrogates.size() != 3) throw ConfigError("triangle sweep needs exactly 3 surrogates");
  if (resolution < 1) throw ConfigError("sweep resolution must be positive");
  if (victim.mode() != OracleMode::soft) throw CapabilityError("triangle sweep needs victim logits");
  std::vector<SweepRow> rows;
  for (int i = resolution; i >= 0; --i) {
    for (int j = resolution - i; j >= 0; --j) {
      SweepRow row{i, j, resolution - i - j};
      const WeightVector w = row.weights(resolution);
      const auto result = pm_run(x, goal, surrogates, w.values(), ImageTensor::zeros(x.shape), pm);
      const OracleResponse response = victim.query(result.x_star);
      row.loss = adversarial_loss(response.logits, goal, pm.loss);
      row.success = is_success(response, goal);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "i,j,k,loss,success\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%d,%d,%.9g,%d\n", r.i, r.j, r.k, r.loss, r.success ? 1 : 0);
    out += line;
  }
  return out;
}

}  // namespace bases
