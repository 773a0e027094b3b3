#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpl/attack.hpp"
#include "hpl/dataset_synth.hpp"
#include "hpl/hash_model.hpp"

namespace hpl {

enum class AttackMethod { None, Tri, TriNoise, TriAdv, Ours };

const char* method_name(AttackMethod m);
AttackMethod method_from_name(const std::string& name);

struct TriggerConfig {
  std::size_t size = 0;  // 0 -> scaled default, at least 4
  Corner location = Corner::BottomRight;
  double blend = 1.0;
  std::size_t iterations = 2000;
  std::size_t batch_size = 32;
  double step_size = 12.0;
  bool normalize_by_batch = true;
};

struct SpectralDefenseConfig {
  bool enabled = false;
  double remove_multiplier = 1.5;  // removed = round(multiplier * M)
  std::size_t remove_count = 0;    // 0 -> derived from the multiplier
};

struct PruneDefenseConfig {
  bool enabled = false;
  std::vector<std::size_t> counts;  // empty -> eighths of the hidden width
};

struct DpDefenseConfig {
  bool enabled = false;
  double clip_bound = 0.3;
  std::vector<double> noise_scales{0.0, 0.01, 0.03, 0.1};
};

struct SeedPack {
  std::uint64_t surrogate = 7;
  std::uint64_t victim = 1009;
  std::uint64_t trigger = 11;
  std::uint64_t perturbation = 13;
  std::uint64_t selection = 17;
  std::uint64_t dp = 23;
};

// One experiment, fully described: re-running from the echoed config
// reproduces identical reports.
struct RunConfig {
  int version = 1;
  SyntheticDatasetSpec dataset;
  std::vector<std::size_t> hidden_sizes{64};
  std::size_t code_length = 16;
  SgdSchedule schedule;  // role seeds are taken from `seeds`, not from here
  PairwiseLossConfig loss{0.0, 0.01};
  TriggerConfig trigger;
  PerturbationBudget budget;
  std::size_t target_class = 0;
  std::size_t poison_count = 60;
  double lambda = 0.8;
  AttackMethod method = AttackMethod::Ours;
  std::size_t top_n = 1000;
  std::vector<std::size_t> precision_at{1, 5, 10, 20, 50, 100};
  bool exclude_target_class = true;
  SpectralDefenseConfig spectral;
  PruneDefenseConfig pruning;
  DpDefenseConfig dp;
  SeedPack seeds;

  std::size_t trigger_size() const;
  double margin() const;
  HashModelConfig model_config(std::uint64_t seed) const;
  LabelVector target_label() const;
  SgdSchedule schedule_for(std::uint64_t seed) const;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;  // fully resolved echo
};

// Pipeline stages. Each stage loads its upstream artifacts from `dir`,
// writes its own artifacts there and merges one block into report.json.
// cmd pipeline is exactly this chain, so per-stage CLI runs compose to the
// same bytes.
void stage_gen_data(const RunConfig& cfg, const std::filesystem::path& dir);
void stage_train_clean(const RunConfig& cfg, const std::filesystem::path& dir);
void stage_gen_trigger(const RunConfig& cfg, const std::filesystem::path& dir);
void stage_gen_perturb(const RunConfig& cfg, const std::filesystem::path& dir);
void stage_poison(const RunConfig& cfg, const std::filesystem::path& dir);
void stage_train_victim(const RunConfig& cfg, const std::filesystem::path& dir);
void stage_eval(const RunConfig& cfg, const std::filesystem::path& dir);
void stage_defend(const RunConfig& cfg, const std::filesystem::path& dir);

nlohmann::json run_pipeline(const RunConfig& cfg,
                            const std::filesystem::path& dir);

nlohmann::json load_report(const std::filesystem::path& dir);
nlohmann::json report_without_timings(nlohmann::json report);

// Ablation sweeps over {lambda, poison_count, trigger_size, blend,
// code_length}; one pipeline run per value in its own subdirectory, plus a
// sweep.csv summary. jobs > 1 runs points concurrently, capped by the
// HPL_THREADS environment variable.
void run_sweep(const RunConfig& cfg, const std::filesystem::path& dir,
               const std::string& key, const std::vector<double>& values,
               std::size_t jobs = 1);

}  // namespace hpl
