#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hpl/errors.hpp"
#include "hpl/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string method_override;
  std::int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool method_flag = true) {
  cmd->add_option("--config", args.config_path, "config JSON file")->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  if (method_flag) {
    cmd->add_option("--method", args.method_override,
                    "none|tri|tri_noise|tri_adv|ours");
  }
  cmd->add_option("--seed", args.seed_override,
                  "master seed; derives all stage seeds");
}

hpl::RunConfig load_config(const CommonArgs& args) {
  hpl::RunConfig cfg = hpl::RunConfig::from_file(args.config_path);
  if (!args.method_override.empty()) {
    cfg.method = hpl::method_from_name(args.method_override);
  }
  if (args.seed_override >= 0) {
    const auto n = static_cast<std::uint64_t>(args.seed_override);
    cfg.dataset.seed = n;
    cfg.seeds.surrogate = n + 1;
    cfg.seeds.victim = n + 2;
    cfg.seeds.trigger = n + 3;
    cfg.seeds.perturbation = n + 4;
    cfg.seeds.selection = n + 5;
    cfg.seeds.dp = n + 6;
  }
  return cfg;
}

std::vector<double> parse_sweep_values(const std::string& spec,
                                       std::string& key_out) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw hpl::ArgumentError("sweep spec must look like key=v1,v2,...");
  }
  key_out = spec.substr(0, eq);
  std::vector<double> values;
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    values.push_back(std::stod(item));
  }
  if (values.empty()) {
    throw hpl::ArgumentError("sweep spec has no values");
  }
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hpl: clean-label backdoor laboratory for deep hashing retrieval"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string train_on = "clean";
  std::string sweep_spec;
  std::size_t jobs = 1;

  CLI::App* gen_data = app.add_subcommand("gen-data", "synthesize the dataset");
  add_common(gen_data, args);
  CLI::App* train_cmd =
      app.add_subcommand("train", "train hashing models (clean or poisoned)");
  add_common(train_cmd, args);
  train_cmd->add_option("--on", train_on, "clean|poisoned")
      ->check(CLI::IsMember({"clean", "poisoned"}));
  CLI::App* gen_trigger =
      app.add_subcommand("gen-trigger", "optimize the universal patch trigger");
  add_common(gen_trigger, args);
  CLI::App* gen_perturb = app.add_subcommand(
      "gen-perturb", "generate perturbations for the configured method");
  add_common(gen_perturb, args);
  CLI::App* poison =
      app.add_subcommand("poison", "craft the clean-label poisoned train set");
  add_common(poison, args);
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate MAP/t-MAP and export curves");
  add_common(eval_cmd, args);
  CLI::App* defend =
      app.add_subcommand("defend", "run the enabled defenses");
  add_common(defend, args);
  CLI::App* pipeline =
      app.add_subcommand("pipeline", "run every stage end to end");
  add_common(pipeline, args);
  CLI::App* sweep = app.add_subcommand(
      "sweep", "run the pipeline over a parameter sweep");
  add_common(sweep, args);
  sweep->add_option("--sweep", sweep_spec, "key=v1,v2,... over "
                    "lambda|poison_count|trigger_size|blend|code_length")
      ->required();
  sweep->add_option("--jobs", jobs, "parallel sweep points (HPL_THREADS caps)");

  CLI11_PARSE(app, argc, argv);

  try {
    const hpl::RunConfig cfg = load_config(args);
    const fs::path out(args.out_dir);
    if (gen_data->parsed()) {
      hpl::stage_gen_data(cfg, out);
    } else if (train_cmd->parsed()) {
      if (train_on == "clean") {
        hpl::stage_train_clean(cfg, out);
      } else {
        hpl::stage_train_victim(cfg, out);
      }
    } else if (gen_trigger->parsed()) {
      hpl::stage_gen_trigger(cfg, out);
    } else if (gen_perturb->parsed()) {
      hpl::stage_gen_perturb(cfg, out);
    } else if (poison->parsed()) {
      hpl::stage_poison(cfg, out);
    } else if (eval_cmd->parsed()) {
      hpl::stage_eval(cfg, out);
    } else if (defend->parsed()) {
      hpl::stage_defend(cfg, out);
    } else if (pipeline->parsed()) {
      hpl::run_pipeline(cfg, out);
    } else if (sweep->parsed()) {
      std::string key;
      const auto values = parse_sweep_values(sweep_spec, key);
      hpl::run_sweep(cfg, out, key, values, jobs);
    }
  } catch (const hpl::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const hpl::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
