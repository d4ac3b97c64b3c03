// opesel: offline-RL model selection experiments on the sepsis simulator.
//
// Every subcommand exits 0 on success; failures print a single line
//   opesel: error: <subcommand>: <message>
// to stderr and exit 1 (2 for command-line usage errors).

#include "opesel/config.hpp"
#include "opesel/dataset.hpp"
#include "opesel/pipeline.hpp"
#include "opesel/policy_learning.hpp"
#include "opesel/reports.hpp"
#include "opesel/rng.hpp"
#include "opesel/sepsis.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

using opesel::ExperimentConfig;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& common, bool with_out = true) {
  cmd->add_option("--config", common.config_path, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seed, "Master seed");
  cmd->add_option("--workers", common.workers, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--set", common.overrides, "Config override 'key=value' (repeatable)");
  if (with_out) cmd->add_option("--out", common.out, "Output path");
}

ExperimentConfig resolve(const Common& common) {
  ExperimentConfig config;
  if (!common.config_path.empty()) config = opesel::load_config(common.config_path);
  for (const auto& item : common.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + item + "'");
    config.set(item.substr(0, eq), item.substr(eq + 1));
  }
  if (common.seed) config.seeds = {*common.seed};
  if (common.workers) config.workers = *common.workers;
  if (!common.out.empty()) config.output_dir = common.out;
  return config;
}

std::uint64_t master_seed(const ExperimentConfig& config) { return config.seeds.front(); }

std::string header(const ExperimentConfig& config) {
  return config.describe() + "seed = " + std::to_string(master_seed(config)) + "\n";
}

opesel::Dataset load_dataset(const std::string& path) { return opesel::load(path); }

template <typename Fn>
void write_text(const std::string& path, Fn&& fill) {
  std::ostringstream out;
  fill(out);
  if (path.empty() || path == "-") {
    std::cout << out.str();
  } else {
    opesel::write_file_atomic(path, out.str());
  }
}

std::string read_text(const std::string& path) {
  if (path.empty() || path == "-") {
    std::ostringstream all;
    all << std::cin.rdbuf();
    return all.str();
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream all;
  all << in.rdbuf();
  return all.str();
}

std::filesystem::path with_suffix(const std::filesystem::path& path, const std::string& suffix) {
  auto out = path;
  out.replace_filename(path.stem().string() + suffix + path.extension().string());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline RL model selection with off-policy evaluation (sepsis simulator)"};
  app.require_subcommand(1);

  // generate
  Common gen_common;
  std::string gen_env = "sepsis";
  std::string gen_behavior = "uniform";
  int gen_m = 1000;
  int gen_max_len = opesel::sepsis::kMaxEpisodeLength;
  std::string gen_role;
  std::optional<double> gen_split;
  auto* gen = app.add_subcommand("generate", "Generate a dataset file");
  add_common(gen, gen_common);
  gen->add_option("--env", gen_env, "Environment label")->check(CLI::IsMember({"sepsis"}));
  gen->add_option("--behavior", gen_behavior, "uniform | egreedy-<eps> | mixture-<label>:<count>+...");
  gen->add_option("--m", gen_m, "Number of episodes")->check(CLI::PositiveNumber);
  gen->add_option("--max-len", gen_max_len, "Episode length cap")->check(CLI::PositiveNumber);
  gen->add_option("--role", gen_role, "Use the train or val sub-seed of --seed")->check(CLI::IsMember({"train", "val"}));
  gen->add_option("--split", gen_split, "Also write <out>_train/<out>_val with this episode fraction in the first part")
      ->check(CLI::Range(0.0, 1.0));

  // train
  Common train_common;
  std::string train_data;
  std::string train_mode;
  auto* train = app.add_subcommand("train", "Train candidate policies and write a manifest");
  add_common(train, train_common);
  train->add_option("--data", train_data, "Training dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--mode", train_mode, "discrete | continuous")->check(CLI::IsMember({"discrete", "continuous"}));

  // truth
  Common truth_common;
  std::string truth_manifest;
  auto* truth = app.add_subcommand("truth", "Exact values of the candidates in a manifest");
  add_common(truth, truth_common);
  truth->add_option("--manifest", truth_manifest, "Candidate manifest")->required()->check(CLI::ExistingFile);

  // evaluate
  Common eval_common;
  std::string eval_manifest;
  std::string eval_data;
  std::string eval_methods;
  std::string eval_mode;
  std::optional<double> eval_epsilon;
  std::optional<int> eval_horizon;
  auto* evaluate = app.add_subcommand("evaluate", "Score candidates with OPE on validation data");
  add_common(evaluate, eval_common);
  evaluate->add_option("--manifest", eval_manifest, "Candidate manifest")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--data", eval_data, "Validation dataset")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--methods", eval_methods, "Comma-separated OPE methods");
  evaluate->add_option("--mode", eval_mode, "discrete | continuous")->check(CLI::IsMember({"discrete", "continuous"}));
  evaluate->add_option("--epsilon", eval_epsilon, "Policy softening for WIS/WDR")->check(CLI::Range(0.0, 1.0));
  evaluate->add_option("--horizon", eval_horizon, "FQE/AM horizon")->check(CLI::PositiveNumber);

  // select
  Common select_common;
  std::string select_scores;
  std::string select_truths;
  std::string select_two_stage;
  auto* select = app.add_subcommand("select", "Rank scored candidates and write selection reports");
  add_common(select, select_common);
  select->add_option("--scores", select_scores, "Scores CSV ('-' for stdin)")->required();
  select->add_option("--truths", select_truths, "Truths CSV")->required()->check(CLI::ExistingFile);
  select->add_option("--two-stage", select_two_stage, "stage1,stage2,alpha (e.g. wis,fqe,24)");

  // analyze
  Common analyze_common;
  auto* analyze = app.add_subcommand("analyze", "Sensitivity sweeps and pruning CDF tables");
  add_common(analyze, analyze_common);

  // run
  Common run_common;
  std::vector<std::uint64_t> run_seeds;
  auto* run = app.add_subcommand("run", "Full pipeline for every configured seed");
  add_common(run, run_common);
  run->add_option("--seeds", run_seeds, "Seeds (overrides the config list)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "opesel: error: usage: " << e.what() << '\n';
    return 2;
  }

  std::string active = app.get_subcommands().front()->get_name();
  try {
    if (*gen) {
      ExperimentConfig config = resolve(gen_common);
      if (gen_common.out.empty()) throw std::invalid_argument("--out is required");
      std::uint64_t seed = master_seed(config);
      if (gen_role == "train") seed = opesel::derive_seed(seed, opesel::seed_stream::train_data);
      if (gen_role == "val") seed = opesel::derive_seed(seed, opesel::seed_stream::val_data);
      config.max_len = gen_max_len;
      const auto behavior = opesel::BehaviorSpec::parse(gen_behavior);
      const opesel::Dataset data = opesel::generate_data(config, gen_m, seed, behavior);
      opesel::save(data, gen_common.out);
      if (gen_split) {
        if (!(*gen_split > 0.0 && *gen_split < 1.0)) throw std::invalid_argument("--split must lie in (0, 1)");
        const auto [first, second] = opesel::split(data, *gen_split, seed);
        opesel::save(first, with_suffix(gen_common.out, "_train"));
        opesel::save(second, with_suffix(gen_common.out, "_val"));
      }
    } else if (*train) {
      ExperimentConfig config = resolve(train_common);
      if (!train_mode.empty()) config.set("state_mode", train_mode);
      if (train_common.out.empty()) throw std::invalid_argument("--out is required");
      const auto data = load_dataset(train_data);
      const auto set = opesel::train_candidates(data, config, master_seed(config));
      opesel::save_candidates(set, train_common.out, header(config));
    } else if (*truth) {
      const ExperimentConfig config = resolve(truth_common);
      const auto set = opesel::load_candidates(truth_manifest);
      const auto truths = opesel::ground_truths(set, config);
      write_text(truth_common.out, [&](std::ostream& out) { opesel::write_truths(out, truths, header(config)); });
    } else if (*evaluate) {
      ExperimentConfig config = resolve(eval_common);
      if (!eval_mode.empty()) config.set("state_mode", eval_mode);
      if (!eval_methods.empty()) config.set("ope.methods", eval_methods);
      if (eval_epsilon) config.epsilon = *eval_epsilon;
      if (eval_horizon) {
        config.fqe_horizon = *eval_horizon;
        config.am_horizon = *eval_horizon;
      }
      const auto set = opesel::load_candidates(eval_manifest);
      const auto data = load_dataset(eval_data);
      const auto scores = opesel::score_candidates(set, data, config, master_seed(config));
      write_text(eval_common.out, [&](std::ostream& out) { opesel::write_scores(out, scores, header(config)); });
    } else if (*select) {
      ExperimentConfig config = resolve(select_common);
      std::istringstream score_text(read_text(select_scores));
      const auto scores = opesel::read_scores(score_text);
      config.methods = scores.methods;
      if (!select_two_stage.empty()) {
        std::vector<std::string> parts;
        std::stringstream ss(select_two_stage);
        std::string item;
        while (std::getline(ss, item, ',')) parts.push_back(item);
        if (parts.size() != 3) throw std::invalid_argument("--two-stage expects stage1,stage2,alpha");
        config.stage1 = parts[0];
        config.stage2 = parts[1];
        config.set("selection.alpha", parts[2]);
      }
      std::ifstream truth_in(select_truths);
      const auto truths = opesel::read_truths(truth_in);
      const auto report = opesel::make_report(scores, truths, config, master_seed(config));
      const std::filesystem::path dir = select_common.out.empty() ? "." : select_common.out;
      std::ostringstream csv;
      opesel::write_report_csv(csv, report, header(config));
      opesel::write_file_atomic(dir / "report.csv", csv.str());
      opesel::write_file_atomic(dir / "summary.json", opesel::summary_json(report, config));
    } else if (*analyze) {
      const ExperimentConfig config = resolve(analyze_common);
      opesel::run_analyze(config);
    } else if (*run) {
      ExperimentConfig config = resolve(run_common);
      if (!run_seeds.empty()) config.seeds = run_seeds;
      const auto result = opesel::run_pipeline(config);
      if (result.reports.empty()) throw std::runtime_error("every seed failed");
    }
  } catch (const std::exception& e) {
    std::string message = e.what();
    for (char& c : message) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "opesel: error: " << active << ": " << message << '\n';
    return 1;
  }
  return 0;
}
