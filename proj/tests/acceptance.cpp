// Acceptance suite: builds the desk zoo in a temp directory and checks every
// criterion, printing one PASS/FAIL line each. Exits 0 when the failing set
// equals the --known-failure list.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "bases/dataset.hpp"
#include "bases/harness.hpp"
#include "bases/oracle.hpp"
#include "bases/search.hpp"
#include "bases/zoo.hpp"

using namespace bases;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<std::string> kSurrogates{"cnn-a", "mlp-a", "cnn-b", "mlp-b", "cnn-c", "mlp-c"};
const std::vector<std::string> kVictims{"cnn-d", "mlp-d"};

struct Fixture {
  std::string dir;
  ZooManifest manifest;
  LabeledDataset test;

  std::string manifest_path() const { return dir + "/manifest.json"; }
  std::string dataset_path() const { return dir + "/dataset.bds"; }

  json experiment(const std::string& victim, std::vector<std::string> surrogates, const std::string& policy,
                  int images) const {
    return {{"dataset", dataset_path()},
            {"manifest", manifest_path()},
            {"surrogates", std::move(surrogates)},
            {"victim", {{"model", victim}}},
            {"goal", {{"policy", policy}}},
            {"max_images", images}};
  }

  /// Test-split indices the victim classifies correctly, in order.
  std::vector<int> correct_indices(const Model& victim, int limit) const {
    std::vector<int> out;
    for (int i = 0; i < test.size() && static_cast<int>(out.size()) < limit; ++i) {
      if (argmax(forward(victim, test.images[i]).data) == test.labels[i]) out.push_back(i);
    }
    return out;
  }
};

ImageTensor random_image(const Shape& shape, SplitMix64& rng) {
  ImageTensor x(shape);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform());
  return x;
}

int random_other(int label, int classes, SplitMix64& rng) {
  int t = static_cast<int>(rng.below(classes - 1));
  return t >= label ? t + 1 : t;
}

// 1. Reverse-mode input gradients agree with central differences in double.
Verdict gradient_check(const Fixture& fx) {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(1, "gradient");
  double worst = 0.0;
  int resampled = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const auto& entry = fx.manifest.entries[pair % fx.manifest.entries.size()];
    const auto net = fx.manifest.load(entry.id).cast<double>();
    const auto& base = fx.test.images[pair % fx.test.size()];
    Tensor<double> x;
    // Central differences are only valid away from ReLU kinks.
    for (;;) {
      x = Tensor<double>(base.shape);
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::clamp(base[i] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      const auto trace = detail::forward_trace(net, x.data);
      double margin = INFINITY;
      const auto& layers = net.architecture().layers;
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].kind == LayerKind::relu) margin = std::min(margin, trace[l].cwiseAbs().minCoeff());
      }
      if (margin > 1e-4) break;
      ++resampled;
    }
    Tensor<double> up({net.num_classes()});
    for (Eigen::Index i = 0; i < up.size(); ++i) up[i] = rng.uniform(-1, 1);
    const auto g = input_gradient(net, x, up);
    const auto fd = fd_gradient([&](const Tensor<double>& p) { return up.data.dot(forward(net, p).data); }, x, 1e-6);
    const double scale = std::max({g.data.cwiseAbs().maxCoeff(), fd.data.cwiseAbs().maxCoeff(), 1e-12});
    worst = std::max(worst, (g.data - fd.data).cwiseAbs().maxCoeff() / scale);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-3 && t < 30.0,
          fmt("max relative error %.2e over 100 pairs (%d kink resamples), %.1f s", worst, resampled, t)};
}

// Plain PGD written against the network API only: CW margin subgradient,
// elementwise sign step, l-inf clamp, pixel clamp.
ImageTensor reference_pgd(const Model& net, const ImageTensor& x, int target, const ImageTensor& init, float eps,
                          float step, int steps) {
  ImageTensor delta = init;
  auto clamp_in_place = [&](ImageTensor& d) {
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      float v = std::min(std::max(d[i], -eps), eps);
      if (x[i] + v > 1.0f) v = 1.0f - x[i];
      if (x[i] + v < 0.0f) v = -x[i];
      d[i] = v;
    }
  };
  clamp_in_place(delta);
  for (int t = 0; t < steps; ++t) {
    ImageTensor input(x.shape, x.data + delta.data);
    const auto z = forward(net, input);
    int other = -1;
    for (int j = 0; j < z.size(); ++j) {
      if (j != target && (other < 0 || z[j] > z[other])) other = j;
    }
    Tensor<float> up({static_cast<int>(z.size())});
    if (static_cast<double>(z[other]) - static_cast<double>(z[target]) >= 0.0) {
      up[other] = 1.0f;
      up[target] = -1.0f;
    }
    const auto g = input_gradient(net, input, up);
    for (Eigen::Index i = 0; i < delta.size(); ++i) {
      const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      delta[i] = delta[i] - step * s;
    }
    clamp_in_place(delta);
  }
  return delta;
}

// 2. The PM with a single surrogate is plain PGD, bit for bit.
Verdict pm_matches_pgd(const Fixture& fx) {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(2, "pgd");
  const PMConfig pm = make_pm_config(Budget{}, 10);
  int equal = 0;
  for (int c = 0; c < 20; ++c) {
    const auto net = fx.manifest.load(fx.manifest.entries[c % fx.manifest.entries.size()].id);
    const auto& x = fx.test.images[c];
    const int target = random_other(fx.test.labels[c], fx.test.num_classes, rng);
    ImageTensor init(x.shape);
    if (c % 2) {
      for (Eigen::Index i = 0; i < init.size(); ++i) init[i] = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
    const std::vector<Model> one{net};
    const std::vector<double> w{1.0};
    const auto ours = pm_run<float>(x, AttackGoal::targeted(target), one, w, init, pm);
    const auto ref = reference_pgd(net, x, target, init, static_cast<float>(pm.budget.epsilon),
                                   static_cast<float>(pm.step_size), pm.steps);
    equal += bitwise_equal(ours.delta, ref);
  }
  const double t = seconds_since(t0);
  return {equal == 20 && t < 10.0, fmt("%d/20 bitwise equal, %.1f s", equal, t)};
}

// 3. Every inner PM iterate is feasible.
Verdict pm_feasibility(const Fixture& fx) {
  SplitMix64 rng(3, "feasibility");
  const auto surrogates = fx.manifest.load(kSurrogates);
  long checks = 0, violations = 0;
  for (int run = 0; checks < 10000; ++run) {
    const auto& x = fx.test.images[run % fx.test.size()];
    Budget budget;
    budget.norm = run % 2 ? Norm::l2 : Norm::linf;
    budget.epsilon = budget.norm == Norm::linf ? rng.uniform(1.0, 32.0) / 255.0 : rng.uniform(0.1, 3.0);
    PMConfig pm = make_pm_config(budget, 10);
    pm.step_size *= rng.uniform(0.5, 2.0);
    std::vector<double> raw(surrogates.size());
    for (auto& r : raw) r = rng.uniform();
    const auto w = normalize_weights(raw);
    ImageTensor init(x.shape);
    for (Eigen::Index i = 0; i < init.size(); ++i) init[i] = static_cast<float>(rng.uniform(-0.5, 0.5));
    const int target = random_other(fx.test.labels[run % fx.test.size()], fx.test.num_classes, rng);
    pm_run<float>(x, AttackGoal::targeted(target), surrogates, w.values(), init, pm,
                  [&](int, const ImageTensor& d, double) {
                    ++checks;
                    violations += !is_feasible(d, x, budget);
                  });
  }
  return {violations == 0, fmt("%ld violations in %ld step checks", violations, checks)};
}

struct FuzzTally {
  int runs = 0;
  int simplex = 0, over_budget = 0, after_success = 0, count_mismatch = 0, non_monotone = 0;
  bool exact_budget = false;
};

// Tiny random classifiers make the 500-run fuzz cheap while still producing
// a mix of early successes and exhausted budgets.
Model fuzz_model(int side, int classes, std::uint64_t seed, bool conv) {
  Architecture arch;
  if (conv) {
    arch = {{1, side, side},
            {LayerSpec::conv2d(1, 3, 3), LayerSpec::relu(), LayerSpec::flatten(),
             LayerSpec::dense(3 * (side - 2) * (side - 2), classes)}};
  } else {
    arch = {{1, side, side},
            {LayerSpec::flatten(), LayerSpec::dense(side * side, 8), LayerSpec::relu(), LayerSpec::dense(8, classes)}};
  }
  return build_model(arch, seed);
}

const FuzzTally& fuzz_tally() {
  static const FuzzTally tally = [] {
    FuzzTally t;
    SplitMix64 rng(4, "fuzz");
    const int side = 6, classes = 4;
    for (int run = 0; run < 500; ++run) {
      const int n = 1 + static_cast<int>(rng.below(5));
      std::vector<Model> surrogates;
      for (int i = 0; i < n; ++i) surrogates.push_back(fuzz_model(side, classes, rng.next(), rng.below(2)));
      LocalOracle oracle(fuzz_model(side, classes, rng.next(), rng.below(2)), OracleMode::soft);
      SearchConfig cfg;
      cfg.max_queries = 1 + static_cast<int>(rng.below(20));
      cfg.pm = make_pm_config(Budget{Norm::linf, rng.uniform(2.0, 32.0) / 255.0}, 1 + static_cast<int>(rng.below(10)));
      cfg.order = rng.below(2) ? CoordinateOrder::random : CoordinateOrder::cyclic;
      cfg.order_seed = rng.next();
      cfg.warm_start = rng.below(4) != 0;
      const auto x = random_image({1, side, side}, rng);
      const int label = static_cast<int>(rng.below(classes));
      const auto goal = rng.below(3) ? AttackGoal::targeted(label) : AttackGoal::untargeted(label);
      const auto out = bases_attack(x, goal, oracle, surrogates, cfg);

      ++t.runs;
      bool on_simplex = out.weights.on_simplex();
      for (const auto& e : out.log.entries) on_simplex &= e.weights.on_simplex();
      for (const auto& it : out.iterations) on_simplex &= it.weights.on_simplex();
      t.simplex += on_simplex;
      t.over_budget += out.queries > cfg.max_queries;
      t.count_mismatch += static_cast<std::size_t>(out.queries) != oracle.query_count() ||
                          out.log.size() != oracle.query_count() || (!out.success && out.queries != cfg.max_queries);
      for (std::size_t i = 0; i + 1 < out.log.size(); ++i) t.after_success += out.log.entries[i].success;
      double previous = out.log.entries.front().victim_loss;
      for (const auto& it : out.iterations) {
        t.non_monotone += it.victim_loss > previous;
        previous = it.victim_loss;
      }
    }

    // A victim that ignores its input and always answers class 0.
    auto stubborn = fuzz_model(side, 3, 99, false);
    stubborn.params().back().weight.setZero();
    stubborn.params().back().bias = Vector<float>{{5.0f, 0.0f, 0.0f}};
    LocalOracle oracle(stubborn, OracleMode::soft);
    std::vector<Model> three;
    for (int i = 0; i < 3; ++i) three.push_back(fuzz_model(side, 3, 200 + i, i % 2));
    SearchConfig cfg;
    cfg.max_queries = 7;
    const auto out = bases_attack(random_image({1, side, side}, rng), AttackGoal::targeted(2), oracle, three, cfg);
    t.exact_budget = !out.success && out.queries == 7 && oracle.query_count() == 7;
    return t;
  }();
  return tally;
}

// 4. Weight vectors stay on the simplex and query accounting is exact.
Verdict simplex_and_accounting(const Fixture&) {
  const auto& t = fuzz_tally();
  const bool ok = t.simplex == t.runs && t.over_budget == 0 && t.after_success == 0 && t.count_mismatch == 0 &&
                  t.exact_budget;
  return {ok, fmt("%d/%d runs on simplex, %d over budget, %d queries after success, %d count mismatches, "
                  "Q=7 N=3 unreachable goal used exactly 7: %s",
                  t.simplex, t.runs, t.over_budget, t.after_success, t.count_mismatch, t.exact_budget ? "yes" : "no")};
}

// 5. Accepted victim loss never increases under the three-way rule.
Verdict monotone_loss(const Fixture&) {
  const auto& t = fuzz_tally();
  return {t.non_monotone == 0, fmt("%d increases over %d fuzzed trajectories", t.non_monotone, t.runs)};
}

// 6. More surrogates do not hurt, and the search improves on one-shot transfer.
Verdict ensemble_size_trend(const Fixture& fx) {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (const auto& victim : kVictims) {
    const auto six = run_experiment(ExperimentConfig::from_json(fx.experiment(victim, kSurrogates, "random", 100)));
    const auto two = run_experiment(
        ExperimentConfig::from_json(fx.experiment(victim, {kSurrogates[0], kSurrogates[1]}, "random", 100)));
    const double n6 = six.curve.back(), n2 = two.curve.back(), q1 = six.curve.front();
    ok &= n6 >= n2 - 0.02 && n6 > q1;
    detail += fmt("%s: N=6 %.1f%% vs N=2 %.1f%%, Q=1 %.1f%% -> Q=50 %.1f%%; ", victim.c_str(), 100 * n6, 100 * n2,
                  100 * q1, 100 * n6);
  }
  const double t = seconds_since(t0);
  return {ok && t < 900.0, detail + fmt("%.0f s", t)};
}

// 7. The query-based search ends close to the full-access reference optimiser.
Verdict whitebox_vs_blackbox(const Fixture& fx) {
  const auto victim = fx.manifest.load("cnn-d");
  const auto surrogates = fx.manifest.load(kSurrogates);
  SplitMix64 rng(7, "targets");
  SearchConfig cfg;
  int images = 0, bb = 0, wb = 0;
  for (int idx : fx.correct_indices(victim, 50)) {
    const auto& x = fx.test.images[idx];
    const auto goal = AttackGoal::targeted(random_other(fx.test.labels[idx], fx.test.num_classes, rng));
    LocalOracle oracle(victim, OracleMode::soft);
    bb += bases_attack(x, goal, oracle, surrogates, cfg).success;
    wb += whitebox_weight_attack(x, goal, victim, surrogates, cfg).success;
    ++images;
  }
  const double gap = std::abs(bb - wb) / static_cast<double>(images);
  return {gap <= 0.10, fmt("blackbox %d/%d, whitebox %d/%d, gap %.1f pp", bb, images, wb, images, 100 * gap)};
}

// 8. Replaying a stored query set beats one-shot transfer against a label-only victim.
Verdict hardlabel_vs_transfer(const Fixture& fx) {
  auto j = fx.experiment("mlp-d", kSurrogates, "random", 100);
  j["victim"]["mode"] = "hard";
  j["method"] = "hardlabel";
  j["surrogate_victim"] = "cnn-d";
  const auto cfg = ExperimentConfig::from_json(j);
  const auto r = run_experiment(cfg);
  int max_q = 0;
  for (const auto& rec : r.summary.records) max_q = std::max(max_q, rec.queries);
  const double one_shot = r.curve.front(), final = r.curve.back();
  return {final >= one_shot && max_q <= cfg.search.max_queries,
          fmt("one-shot %.1f%% -> %.1f%% after replay, max queries %d over %d images", 100 * one_shot, 100 * final,
              max_q, r.summary.attempted)};
}

// 9. A loopback HTTP victim is indistinguishable from the in-process one.
Verdict remote_transparency(const Fixture& fx) {
  const auto victim = fx.manifest.load("cnn-d");
  const auto surrogates = fx.manifest.load(kSurrogates);
  OracleServer server(victim, {OracleMode::soft, std::nullopt});
  server.bind("127.0.0.1", 0);
  server.start();
  SplitMix64 rng(9, "targets");
  SearchConfig cfg;
  int identical = 0, images = 0;
  for (int idx : fx.correct_indices(victim, 50)) {
    const auto& x = fx.test.images[idx];
    const auto goal = AttackGoal::targeted(random_other(fx.test.labels[idx], fx.test.num_classes, rng));
    LocalOracle local(victim, OracleMode::soft);
    auto remote = RemoteOracle::connect(server.url(), {.expected_classes = victim.num_classes()});
    const auto a = bases_attack(x, goal, local, surrogates, cfg);
    const auto b = bases_attack(x, goal, *remote, surrogates, cfg);
    bool same = a.queries == b.queries && a.success == b.success && a.iterations.size() == b.iterations.size() &&
                a.log.to_csv() == b.log.to_csv();
    for (std::size_t k = 0; same && k < a.iterations.size(); ++k) same = a.iterations[k].weights == b.iterations[k].weights;
    identical += same;
    ++images;
  }
  server.stop();
  return {identical == images && images == 50, fmt("%d/%d images with identical trajectories", identical, images)};
}

// 10. The barycentric sweep has the right size and the simplex is not uniformly adversarial.
Verdict triangle_landscape(const Fixture& fx) {
  const auto victim_model = fx.manifest.load("cnn-d");
  const auto surrogates = fx.manifest.load(std::vector<std::string>{"cnn-a", "mlp-a", "cnn-b"});
  const auto pm = make_pm_config(Budget{}, 10);
  SplitMix64 rng(10, "targets");
  std::size_t rows = 0;
  int mixed_at = -1, scanned = 0;
  for (int idx : fx.correct_indices(victim_model, 30)) {
    LocalOracle victim(victim_model, OracleMode::soft);
    const auto goal = AttackGoal::targeted(random_other(fx.test.labels[idx], fx.test.num_classes, rng));
    const auto sweep = triangle_sweep(fx.test.images[idx], goal, surrogates, victim, 10, pm);
    rows = sweep.size();
    ++scanned;
    const auto hits = std::count_if(sweep.begin(), sweep.end(), [](const SweepRow& r) { return r.success; });
    if (hits > 0 && hits < static_cast<long>(sweep.size())) {
      mixed_at = idx;
      break;
    }
  }
  return {rows == 66 && mixed_at >= 0,
          fmt("%zu rows; mixed success/failure region %s (scanned %d images)", rows,
              mixed_at >= 0 ? fmt("at test image %d", mixed_at).c_str() : "not found", scanned)};
}

// 11. Easier targets need fewer queries.
Verdict target_difficulty(const Fixture& fx) {
  double mean[3];
  const char* policies[3] = {"easiest", "random", "hardest"};
  for (int p = 0; p < 3; ++p) {
    mean[p] = run_experiment(ExperimentConfig::from_json(fx.experiment("cnn-d", kSurrogates, policies[p], 50)))
                  .summary.queries.mean;
  }
  return {mean[0] <= mean[1] && mean[1] <= mean[2],
          fmt("mean queries easiest %.2f, random %.2f, hardest %.2f", mean[0], mean[1], mean[2])};
}

// 12. Closed-form budget and step checks.
Verdict formulas(const Fixture&) {
  const double l2 = l2_budget(150528) * 255.0;
  const bool step_exact = default_step(Budget{Norm::linf, 16.0 / 255.0}, 10) == 3.0 * (16.0 / 255.0) / 10.0;
  return {std::abs(l2 - 3128.0) <= 0.5 && step_exact,
          fmt("255*l2_budget(150528) = %.4f (target 3128 +/- 0.5); default_step exact: %s", l2,
              step_exact ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks on a freshly built desk zoo"};
  std::vector<int> only, known;
  std::string zoo_dir;
  app.add_option("--only", only, "Run just these criteria")->check(CLI::Range(1, 12));
  app.add_option("--known-failure", known, "Criteria expected to fail")->check(CLI::Range(1, 12));
  app.add_option("--zoo", zoo_dir, "Reuse a zoo directory instead of building one");
  CLI11_PARSE(app, argc, argv);

  Fixture fx;
  if (zoo_dir.empty()) {
    fx.dir = (std::filesystem::temp_directory_path() / "bases-acceptance-zoo").string();
    std::filesystem::remove_all(fx.dir);
    const auto t0 = std::chrono::steady_clock::now();
    fx.manifest = build_default_zoo(fx.dir, ZooBuildOptions{});
    std::printf("built fixture zoo in %.1f s at %s\n", seconds_since(t0), fx.dir.c_str());
  } else {
    fx.dir = zoo_dir;
    fx.manifest = ZooManifest::read(fx.manifest_path());
  }
  fx.test = load_dataset(fx.dataset_path()).test_split();

  const std::vector<std::pair<std::string, Verdict (*)(const Fixture&)>> criteria{
      {"gradient correctness", gradient_check},
      {"PM equals plain PGD at N=1", pm_matches_pgd},
      {"PM feasibility at every step", pm_feasibility},
      {"simplex and query accounting", simplex_and_accounting},
      {"monotone accepted loss", monotone_loss},
      {"ensemble size trend", ensemble_size_trend},
      {"whitebox vs blackbox", whitebox_vs_blackbox},
      {"hard-label replay vs transfer", hardlabel_vs_transfer},
      {"remote oracle transparency", remote_transparency},
      {"triangle sweep landscape", triangle_landscape},
      {"target difficulty ordering", target_difficulty},
      {"formula checks", formulas},
  };

  std::set<int> failed;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const int id = static_cast<int>(c) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[c].second(fx);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) failed.insert(id);
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[c].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }

  std::set<int> expected;
  for (int k : known) {
    if (only.empty() || std::find(only.begin(), only.end(), k) != only.end()) expected.insert(k);
  }
  std::printf("%zu failing; expected failures:", failed.size());
  for (int k : expected) std::printf(" %d", k);
  std::printf("\n");
  return failed == expected ? 0 : 1;
}
