#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "bases/binary_io.hpp"
#include "bases/dataset.hpp"
#include "bases/harness.hpp"
#include "bases/oracle.hpp"
#include "bases/zoo.hpp"

using namespace bases;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTransport = 3;

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    io::write_file(path, text);
  }
}

std::pair<std::string, int> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--bind expects addr:port, got '" + bind + "'");
  try {
    return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--bind has a non-numeric port: '" + bind + "'");
  }
}

std::optional<std::size_t> parse_budget(const std::string& text) {
  if (text == "none") return std::nullopt;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used == text.size() && v >= 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("--budget expects a non-negative integer or 'none', got '" + text + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate-ensemble search attacks: zoo preparation, victim serving, experiments and sweeps"};
  app.require_subcommand(1);

  auto* zoo_build = app.add_subcommand("zoo-build", "Generate the synthetic dataset and train the default zoo");
  std::string zoo_dir;
  ZooBuildOptions zoo_opts;
  bool verbose = false;
  zoo_build->add_option("--out", zoo_dir, "Output directory")->required();
  zoo_build->add_option("--classes", zoo_opts.num_classes, "Number of classes");
  zoo_build->add_option("--per-class", zoo_opts.per_class, "Samples per class (half train, half test)");
  zoo_build->add_option("--side", zoo_opts.side, "Image side length");
  zoo_build->add_option("--seed", zoo_opts.seed, "Dataset and initialisation seed");
  zoo_build->add_option("--epochs", zoo_opts.train.epochs, "Training epochs per model");
  zoo_build->add_flag("--verbose", verbose, "Report per-model accuracy while training");

  auto* zoo_train = app.add_subcommand("zoo-train", "Train one architecture on a dataset file");
  std::string arch_path, train_data, train_out, train_id;
  TrainConfig train_cfg;
  std::uint64_t init_seed = 1;
  zoo_train->add_option("--arch", arch_path, "Architecture JSON {input_shape, layers}")->required();
  zoo_train->add_option("--dataset", train_data, "BDS1 dataset; the train split is used")->required();
  zoo_train->add_option("--out", train_out, "Output .bem path")->required();
  zoo_train->add_option("--id", train_id, "Model id stored in the file")->required();
  zoo_train->add_option("--epochs", train_cfg.epochs, "Epochs");
  zoo_train->add_option("--lr", train_cfg.learning_rate, "Learning rate");
  zoo_train->add_option("--batch", train_cfg.batch_size, "Batch size");
  zoo_train->add_option("--weight-decay", train_cfg.weight_decay, "L2 weight decay");
  zoo_train->add_option("--seed", train_cfg.seed, "Batch order seed");
  zoo_train->add_option("--init-seed", init_seed, "Parameter initialisation seed");

  auto* serve = app.add_subcommand("serve", "Serve one model over HTTP");
  std::string model_path, mode_name = "soft", bind = "127.0.0.1:8080", budget_text = "none";
  serve->add_option("--model", model_path, "Model .bem file")->required();
  serve->add_option("--mode", mode_name, "soft (logits) or hard (label)");
  serve->add_option("--bind", bind, "addr:port; port 0 picks a free port");
  serve->add_option("--budget", budget_text, "Per-client query cap, or 'none'");

  auto* attack = app.add_subcommand("attack", "Run an experiment described by a JSON config");
  std::string config_path, output_override;
  attack->add_option("--config", config_path, "Experiment config JSON")->required();
  attack->add_option("--output-dir", output_override, "Override output_dir from the config");

  auto* sweep = app.add_subcommand("sweep-triangle", "Victim loss over the barycentric grid of three surrogates");
  std::string sweep_manifest, sweep_dataset, sweep_victim, sweep_url, sweep_out, sweep_norm = "linf";
  std::vector<std::string> sweep_surrogates;
  int sweep_image = 0, sweep_target = -1, sweep_resolution = 10, sweep_steps = 10;
  double sweep_eps = 16.0 / 255.0;
  sweep->add_option("--manifest", sweep_manifest, "Zoo manifest.json")->required();
  sweep->add_option("--dataset", sweep_dataset, "BDS1 dataset; images come from the test split")->required();
  sweep->add_option("--surrogates", sweep_surrogates, "Exactly three surrogate ids")->required()->expected(3);
  auto* victim_opt = sweep->add_option("--victim", sweep_victim, "Victim model id");
  sweep->add_option("--url", sweep_url, "Remote soft-label victim")->excludes(victim_opt);
  sweep->add_option("--image", sweep_image, "Test-split index");
  sweep->add_option("--target", sweep_target, "Target class; omit for untargeted");
  sweep->add_option("--resolution", sweep_resolution, "Grid resolution R; emits (R+1)(R+2)/2 rows");
  sweep->add_option("--steps", sweep_steps, "PM steps");
  sweep->add_option("--norm", sweep_norm, "linf or l2");
  sweep->add_option("--epsilon", sweep_eps, "Budget on the [0,1] scale");
  sweep->add_option("--out", sweep_out, "CSV path, '-' for stdout");

  auto* summarize_cmd = app.add_subcommand("summarize", "Rebuild summary statistics from attack transcripts");
  std::vector<std::string> log_paths;
  std::string summary_out;
  summarize_cmd->add_option("logs", log_paths, "Transcript CSVs or directories containing them")->required();
  summarize_cmd->add_option("--out", summary_out, "JSON path, '-' for stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*zoo_build) {
      const auto manifest = build_default_zoo(zoo_dir, zoo_opts, verbose);
      for (const auto& e : manifest.entries) std::printf("%s\t%.4f\n", e.id.c_str(), e.accuracy);
    } else if (*zoo_train) {
      Architecture arch = json::parse(io::read_file(arch_path)).get<Architecture>();
      const auto data = load_dataset(train_data);
      TrainReport report;
      const auto model = train(build_model(arch, init_seed), data.train_split(), train_cfg, &report);
      save_model(model, train_id, train_out);
      std::printf("%s\tfinal loss %.6f\ttest accuracy %.4f\n", train_id.c_str(), report.epoch_loss.back(),
                  accuracy(model, data.test_split()));
    } else if (*serve) {
      const auto [host, port] = split_bind(bind);
      OracleServer server(load_model(model_path).model, {oracle_mode_from_string(mode_name), parse_budget(budget_text)});
      const int bound = server.bind(host, port);
      std::printf("serving %s on http://%s:%d\n", model_path.c_str(), host.c_str(), bound);
      std::fflush(stdout);
      server.run();
    } else if (*attack) {
      auto cfg = ExperimentConfig::read(config_path);
      if (!output_override.empty()) cfg.output_dir = output_override;
      const auto result = run_experiment(cfg);
      std::cout << result.summary.to_json().dump(2) << "\n";
    } else if (*sweep) {
      if (sweep_victim.empty() == sweep_url.empty()) throw ConfigError("give exactly one of --victim or --url");
      const auto manifest = ZooManifest::read(sweep_manifest);
      const auto data = load_dataset(sweep_dataset).test_split();
      if (sweep_image < 0 || sweep_image >= data.size()) {
        throw ConfigError("--image " + std::to_string(sweep_image) + " outside the test split");
      }
      std::unique_ptr<Oracle> victim;
      if (sweep_url.empty()) {
        victim = std::make_unique<LocalOracle>(manifest.load(sweep_victim), OracleMode::soft);
      } else {
        victim = RemoteOracle::connect(sweep_url, {.expected_classes = data.num_classes});
      }
      const auto goal = sweep_target >= 0 ? AttackGoal::targeted(sweep_target)
                                          : AttackGoal::untargeted(data.labels[sweep_image]);
      const auto pm = make_pm_config(Budget{norm_from_string(sweep_norm), sweep_eps}, sweep_steps);
      const auto rows = triangle_sweep(data.images[sweep_image], goal, manifest.load(sweep_surrogates), *victim,
                                       sweep_resolution, pm);
      write_or_print(sweep_out, sweep_csv(rows));
    } else if (*summarize_cmd) {
      std::vector<std::string> files;
      for (const auto& p : log_paths) {
        if (std::filesystem::is_directory(p)) {
          for (const auto& e : std::filesystem::directory_iterator(p)) {
            if (e.path().extension() == ".csv") files.push_back(e.path().string());
          }
        } else {
          files.push_back(p);
        }
      }
      std::sort(files.begin(), files.end());
      std::vector<QueryLog> logs;
      for (const auto& f : files) logs.push_back(read_query_log_csv(f));
      write_or_print(summary_out, summarize(std::span<const QueryLog>(logs)).to_json().dump(2) + "\n");
    }
    return kExitOk;
  } catch (const TransportError& e) {
    std::fprintf(stderr, "transport error: %s\n", e.what());
    return kExitTransport;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const SpecError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const CapabilityError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
}
