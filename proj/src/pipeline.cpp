#include "hpl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "hpl/binary_io.hpp"
#include "hpl/defenses.hpp"
#include "hpl/errors.hpp"
#include "hpl/metrics.hpp"
#include "hpl/poison.hpp"

namespace hpl {

using nlohmann::json;
namespace fs = std::filesystem;

const char* method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::None: return "none";
    case AttackMethod::Tri: return "tri";
    case AttackMethod::TriNoise: return "tri_noise";
    case AttackMethod::TriAdv: return "tri_adv";
    case AttackMethod::Ours: return "ours";
  }
  return "none";
}

AttackMethod method_from_name(const std::string& name) {
  if (name == "none") return AttackMethod::None;
  if (name == "tri") return AttackMethod::Tri;
  if (name == "tri_noise") return AttackMethod::TriNoise;
  if (name == "tri_adv") return AttackMethod::TriAdv;
  if (name == "ours") return AttackMethod::Ours;
  throw ArgumentError("unknown method '" + name +
                      "' (expected none|tri|tri_noise|tri_adv|ours)");
}

std::size_t RunConfig::trigger_size() const {
  if (trigger.size > 0) return trigger.size;
  const double side = static_cast<double>(std::min(dataset.height, dataset.width));
  // paper-scale footprint 24/224, kept at >= 4 so the patch stays learnable
  const auto scaled = static_cast<std::size_t>(std::ceil(side * 24.0 / 224.0));
  return std::max<std::size_t>(4, scaled);
}

double RunConfig::margin() const {
  return loss.margin > 0.0 ? loss.margin
                           : static_cast<double>(code_length) / 2.0;
}

HashModelConfig RunConfig::model_config(std::uint64_t seed) const {
  HashModelConfig mc;
  mc.height = dataset.height;
  mc.width = dataset.width;
  mc.channels = dataset.channels;
  mc.hidden_sizes = hidden_sizes;
  mc.code_length = code_length;
  mc.seed = seed;
  return mc;
}

LabelVector RunConfig::target_label() const {
  return single_label(target_class, dataset.classes);
}

SgdSchedule RunConfig::schedule_for(std::uint64_t seed) const {
  SgdSchedule s = schedule;
  s.seed = seed;
  return s;
}

namespace {

[[noreturn]] void config_fail(const std::string& field, const std::string& what) {
  throw FormatError("config: field '" + field + "' " + what);
}

template <typename T>
T get_or(const json& j, const std::string& scope, const char* key, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_fail(scope.empty() ? key : scope + "." + key,
                std::string("has the wrong type (") + e.what() + ")");
  }
}

void check_known_keys(const json& j, const std::string& scope,
                      std::initializer_list<const char*> known) {
  if (!j.is_object()) config_fail(scope, "must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end()) {
      config_fail(scope.empty() ? key : scope + "." + key, "is not recognized");
    }
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  check_known_keys(j, "",
                   {"version", "dataset", "model", "schedule", "loss",
                    "trigger", "budget", "poison", "method", "eval",
                    "defenses", "seeds"});
  RunConfig cfg;
  if (!j.contains("version")) config_fail("version", "is required");
  cfg.version = get_or(j, "", "version", 1);
  if (cfg.version != 1) config_fail("version", "must be 1");

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    cfg.dataset.classes = get_or<std::size_t>(d, "dataset", "classes", 10);
    cfg.dataset.per_class_train =
        get_or<std::size_t>(d, "dataset", "per_class_train", 100);
    cfg.dataset.per_class_query =
        get_or<std::size_t>(d, "dataset", "per_class_query", 20);
    cfg.dataset.per_class_db =
        get_or<std::size_t>(d, "dataset", "per_class_db", 200);
    cfg.dataset.height = get_or<std::size_t>(d, "dataset", "height", 16);
    cfg.dataset.width = get_or<std::size_t>(d, "dataset", "width", 16);
    cfg.dataset.channels = get_or<std::size_t>(d, "dataset", "channels", 3);
    cfg.dataset.template_contrast =
        get_or(d, "dataset", "template_contrast", 0.6);
    cfg.dataset.noise_sigma = get_or(d, "dataset", "noise_sigma", 0.08);
    cfg.dataset.seed = get_or<std::uint64_t>(d, "dataset", "seed", 0);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    cfg.hidden_sizes = get_or(m, "model", "hidden_sizes",
                              std::vector<std::size_t>{64});
    cfg.code_length = get_or<std::size_t>(m, "model", "code_length", 16);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    cfg.schedule.learning_rate = get_or(s, "schedule", "learning_rate", 0.01);
    cfg.schedule.momentum = get_or(s, "schedule", "momentum", 0.9);
    cfg.schedule.weight_decay = get_or(s, "schedule", "weight_decay", 0.0005);
    cfg.schedule.epochs = get_or<std::size_t>(s, "schedule", "epochs", 40);
    cfg.schedule.batch_size = get_or<std::size_t>(s, "schedule", "batch_size", 24);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    cfg.loss.margin = get_or(l, "loss", "margin", 0.0);
    cfg.loss.quantization_weight =
        get_or(l, "loss", "quantization_weight", 0.01);
  }
  if (j.contains("trigger")) {
    const json& t = j.at("trigger");
    cfg.trigger.size = get_or<std::size_t>(t, "trigger", "size", 0);
    cfg.trigger.location = corner_from_name(
        get_or<std::string>(t, "trigger", "location", "bottom_right"));
    cfg.trigger.blend = get_or(t, "trigger", "blend", 1.0);
    cfg.trigger.iterations =
        get_or<std::size_t>(t, "trigger", "iterations", 2000);
    cfg.trigger.batch_size = get_or<std::size_t>(t, "trigger", "batch_size", 32);
    cfg.trigger.step_size = get_or(t, "trigger", "step_size", 12.0);
    cfg.trigger.normalize_by_batch =
        get_or(t, "trigger", "normalize_by_batch", true);
  }
  if (j.contains("budget")) {
    const json& b = j.at("budget");
    cfg.budget.epsilon = get_or(b, "budget", "epsilon", 0.032);
    cfg.budget.step_size = get_or(b, "budget", "step_size", 0.003);
    cfg.budget.epochs = get_or<std::size_t>(b, "budget", "epochs", 20);
    cfg.budget.batch_size = get_or<std::size_t>(b, "budget", "batch_size", 20);
  }
  if (j.contains("poison")) {
    const json& p = j.at("poison");
    cfg.target_class = get_or<std::size_t>(p, "poison", "target_class", 0);
    cfg.poison_count = get_or<std::size_t>(p, "poison", "count", 60);
    cfg.lambda = get_or(p, "poison", "lambda", 0.8);
  }
  cfg.method = method_from_name(get_or<std::string>(j, "", "method", "ours"));
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    cfg.top_n = get_or<std::size_t>(e, "eval", "top_n", 1000);
    cfg.precision_at = get_or(e, "eval", "precision_at",
                              std::vector<std::size_t>{1, 5, 10, 20, 50, 100});
    cfg.exclude_target_class = get_or(e, "eval", "exclude_target_class", true);
  }
  if (j.contains("defenses")) {
    const json& d = j.at("defenses");
    if (d.contains("spectral")) {
      const json& s = d.at("spectral");
      cfg.spectral.enabled = get_or(s, "defenses.spectral", "enabled", false);
      cfg.spectral.remove_multiplier =
          get_or(s, "defenses.spectral", "remove_multiplier", 1.5);
      cfg.spectral.remove_count =
          get_or<std::size_t>(s, "defenses.spectral", "remove_count", 0);
    }
    if (d.contains("pruning")) {
      const json& p = d.at("pruning");
      cfg.pruning.enabled = get_or(p, "defenses.pruning", "enabled", false);
      cfg.pruning.counts = get_or(p, "defenses.pruning", "counts",
                                  std::vector<std::size_t>{});
    }
    if (d.contains("dp")) {
      const json& dp = d.at("dp");
      cfg.dp.enabled = get_or(dp, "defenses.dp", "enabled", false);
      cfg.dp.clip_bound = get_or(dp, "defenses.dp", "clip_bound", 0.3);
      cfg.dp.noise_scales = get_or(dp, "defenses.dp", "noise_scales",
                                   std::vector<double>{0.0, 0.01, 0.03, 0.1});
    }
  }
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    cfg.seeds.surrogate = get_or<std::uint64_t>(s, "seeds", "surrogate", 7);
    cfg.seeds.victim = get_or<std::uint64_t>(s, "seeds", "victim", 1009);
    cfg.seeds.trigger = get_or<std::uint64_t>(s, "seeds", "trigger", 11);
    cfg.seeds.perturbation =
        get_or<std::uint64_t>(s, "seeds", "perturbation", 13);
    cfg.seeds.selection = get_or<std::uint64_t>(s, "seeds", "selection", 17);
    cfg.seeds.dp = get_or<std::uint64_t>(s, "seeds", "dp", 23);
  }

  validate_spec(cfg.dataset);
  if (cfg.code_length < 4) config_fail("model.code_length", "must be >= 4");
  if (cfg.margin() > static_cast<double>(cfg.code_length)) {
    config_fail("loss.margin", "must be <= code_length");
  }
  if (cfg.target_class >= cfg.dataset.classes) {
    config_fail("poison.target_class", "is out of range");
  }
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0) {
    config_fail("poison.lambda", "must lie in [0, 1]");
  }
  validate_budget(cfg.budget);
  validate_schedule(cfg.schedule_for(0));
  if (!(cfg.trigger.blend > 0.0 && cfg.trigger.blend <= 1.0)) {
    config_fail("trigger.blend", "must lie in (0, 1]");
  }
  return cfg;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw FormatError("config parse error at " + path.string() + ":" +
                      std::to_string(line) + ":" + std::to_string(col) + ": " +
                      e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["version"] = version;
  j["dataset"] = {{"classes", dataset.classes},
                  {"per_class_train", dataset.per_class_train},
                  {"per_class_query", dataset.per_class_query},
                  {"per_class_db", dataset.per_class_db},
                  {"height", dataset.height},
                  {"width", dataset.width},
                  {"channels", dataset.channels},
                  {"template_contrast", dataset.template_contrast},
                  {"noise_sigma", dataset.noise_sigma},
                  {"seed", dataset.seed}};
  j["model"] = {{"hidden_sizes", hidden_sizes}, {"code_length", code_length}};
  j["schedule"] = {{"learning_rate", schedule.learning_rate},
                   {"momentum", schedule.momentum},
                   {"weight_decay", schedule.weight_decay},
                   {"epochs", schedule.epochs},
                   {"batch_size", schedule.batch_size}};
  j["loss"] = {{"margin", margin()},
               {"quantization_weight", loss.quantization_weight}};
  j["trigger"] = {{"size", trigger_size()},
                  {"location", corner_name(trigger.location)},
                  {"blend", trigger.blend},
                  {"iterations", trigger.iterations},
                  {"batch_size", trigger.batch_size},
                  {"step_size", trigger.step_size},
                  {"normalize_by_batch", trigger.normalize_by_batch}};
  j["budget"] = {{"epsilon", budget.epsilon},
                 {"step_size", budget.step_size},
                 {"epochs", budget.epochs},
                 {"batch_size", budget.batch_size}};
  j["poison"] = {{"target_class", target_class},
                 {"count", poison_count},
                 {"lambda", lambda}};
  j["method"] = method_name(method);
  j["eval"] = {{"top_n", top_n},
               {"precision_at", precision_at},
               {"exclude_target_class", exclude_target_class}};
  j["defenses"] = {
      {"spectral",
       {{"enabled", spectral.enabled},
        {"remove_multiplier", spectral.remove_multiplier},
        {"remove_count", spectral.remove_count}}},
      {"pruning", {{"enabled", pruning.enabled}, {"counts", pruning.counts}}},
      {"dp",
       {{"enabled", dp.enabled},
        {"clip_bound", dp.clip_bound},
        {"noise_scales", dp.noise_scales}}}};
  j["seeds"] = {{"surrogate", seeds.surrogate}, {"victim", seeds.victim},
                {"trigger", seeds.trigger},     {"perturbation", seeds.perturbation},
                {"selection", seeds.selection}, {"dp", seeds.dp}};
  return j;
}

namespace {

constexpr const char* kDatasetFile = "dataset.bin";
constexpr const char* kSurrogateFile = "surrogate.ckpt";
constexpr const char* kCleanFile = "clean.ckpt";
constexpr const char* kBackdooredFile = "backdoored.ckpt";
constexpr const char* kTriggerFile = "trigger.bin";
constexpr const char* kPerturbationFile = "perturbations.bin";
constexpr const char* kPoisonedTrainFile = "poisoned_train.bin";
constexpr const char* kManifestFile = "poison_manifest.json";
constexpr const char* kReportFile = "report.json";

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

// Opens (or creates) the report and pins the config echo. A mismatching
// echo means the directory holds a different run.
json open_report(const RunConfig& cfg, const fs::path& dir) {
  const fs::path path = dir / kReportFile;
  if (fs::exists(path)) {
    json j = read_json_file(path);
    if (j.contains("config") && j["config"] != cfg.to_json()) {
      throw ArgumentError("out dir " + dir.string() +
                          " holds a run with a different config");
    }
    j["config"] = cfg.to_json();
    return j;
  }
  json j;
  j["version"] = 1;
  j["config"] = cfg.to_json();
  return j;
}

void note_artifact(json& report, const char* name, const fs::path& dir,
                   const char* file) {
  report["artifacts"][name] = {{"file", file},
                               {"digest", file_digest(dir / file)}};
}

void finish_stage(json& report, const RunConfig& cfg, const fs::path& dir,
                  const char* stage, const StageTimer& timer) {
  report["timings"][stage] = timer.seconds();
  write_json_file(dir / kReportFile, report);
  (void)cfg;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string code_to_string(const HashCode& code) {
  std::string s;
  s.reserve(code.length());
  for (auto b : code.bits) s.push_back(b > 0 ? '+' : '-');
  return s;
}

std::string label_bits_string(const LabelVector& label) {
  std::string s;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i) s.push_back(';');
    s.push_back(label.bits[i] ? '1' : '0');
  }
  return s;
}

void write_code_database_csv(const fs::path& path, const CodeDatabase& db) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "id,label_bits,code\n";
  for (std::size_t r = 0; r < db.size(); ++r) {
    out << db.ids[r] << ',' << label_bits_string(db.labels[r]) << ','
        << code_to_string(db.code_at(r)) << '\n';
  }
}

void write_pr_curve_csv(const fs::path& path, const PrCurve& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "cutoff,recall,precision\n";
  for (std::size_t i = 0; i < curve.cutoffs.size(); ++i) {
    out << curve.cutoffs[i] << ',' << format_double(curve.recall[i]) << ','
        << format_double(curve.precision[i]) << '\n';
  }
}

void write_hist_csv(const fs::path& path, const std::vector<std::size_t>& bins) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "distance,count\n";
  for (std::size_t d = 0; d < bins.size(); ++d) {
    out << d << ',' << bins[d] << '\n';
  }
}

DatasetBundle load_bundle_checked(const fs::path& dir) {
  require_artifact(dir / kDatasetFile, "gen-data");
  return load_dataset_bundle(dir / kDatasetFile);
}

HashModel load_model_checked(const RunConfig& cfg, const fs::path& dir,
                             const char* file, const char* stage,
                             std::uint64_t seed) {
  require_artifact(dir / file, stage);
  return load_checkpoint(dir / file, cfg.model_config(seed));
}

std::vector<std::pair<std::uint64_t, const Tensor*>> poison_targets_of(
    const RunConfig& cfg, const Dataset& train) {
  const auto ids = select_poison_targets(train, cfg.target_class,
                                         cfg.poison_count, cfg.seeds.selection);
  std::vector<std::pair<std::uint64_t, const Tensor*>> targets;
  targets.reserve(ids.size());
  for (std::uint64_t id : ids) {
    for (const auto& s : train.samples) {
      if (s.id == id) {
        targets.emplace_back(id, &s.image);
        break;
      }
    }
  }
  return targets;
}

bool method_uses_perturbations(AttackMethod m) {
  return m == AttackMethod::TriNoise || m == AttackMethod::TriAdv ||
         m == AttackMethod::Ours;
}

TriggerSpec load_trigger_checked(const fs::path& dir) {
  require_artifact(dir / kTriggerFile, "gen-trigger");
  return load_trigger(dir / kTriggerFile);
}

double mean_anchor_distance(const HashModel& model, const Dataset& train,
                            const TriggerSpec& trigger, const Tensor& anchor,
                            std::size_t probe_count) {
  const std::size_t n = std::min(probe_count, train.samples.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor code =
        model.relaxed_forward(inject(train.samples[i].image, trigger));
    sum += relaxed_hamming(code, anchor);
  }
  return sum / static_cast<double>(n);
}

json metrics_block(const HashModel& model, const RunConfig& cfg,
                   const DatasetBundle& bundle, const TriggerSpec& trigger,
                   const Dataset& hist_source, const fs::path& dir,
                   const std::string& tag) {
  const CodeDatabase db = build_code_database(model, bundle.database);
  const LabelVector target = cfg.target_label();

  json block;
  block["map"] = map_score(model, bundle.query, db, cfg.top_n);
  block["tmap"] = tmap_score(model, bundle.query, trigger, target, db,
                             cfg.top_n, cfg.exclude_target_class);

  const PrCurve curve = pr_curves(model, bundle.query, db, cfg.top_n, &trigger,
                                  &target, cfg.exclude_target_class);
  json pat = json::array();
  for (std::size_t k : cfg.precision_at) {
    if (k >= 1 && k <= curve.precision.size()) {
      pat.push_back({k, curve.precision[k - 1]});
    }
  }
  block["precision_at"] = pat;
  block["pr_curve"] = {{"cutoffs", curve.cutoffs},
                       {"precision", curve.precision},
                       {"recall", curve.recall}};

  std::vector<HashCode> target_codes;
  for (const auto& s : hist_source.samples) {
    if (pairwise_similarity(s.label, target) == 1) {
      target_codes.push_back(model.hash_forward(s.image));
    }
  }
  const auto bins = distance_histogram(target_codes);
  block["distance_histogram"] = bins;
  block["mean_target_distance"] = mean_pairwise_distance(target_codes);

  write_code_database_csv(dir / ("db_codes_" + tag + ".csv"), db);
  write_pr_curve_csv(dir / ("pr_curve_" + tag + ".csv"), curve);
  write_hist_csv(dir / ("hist_" + tag + ".csv"), bins);
  return block;
}

std::pair<double, double> eval_model_pair(const HashModel& model,
                                          const RunConfig& cfg,
                                          const DatasetBundle& bundle,
                                          const TriggerSpec& trigger) {
  const CodeDatabase db = build_code_database(model, bundle.database);
  const double map = map_score(model, bundle.query, db, cfg.top_n);
  const double tmap = tmap_score(model, bundle.query, trigger,
                                 cfg.target_label(), db, cfg.top_n,
                                 cfg.exclude_target_class);
  return {map, tmap};
}

}  // namespace

void stage_gen_data(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  fs::create_directories(dir);
  json report = open_report(cfg, dir);
  DatasetBundle bundle = synthesize_dataset(cfg.dataset);
  validate_dataset(bundle.train, bundle.classes);
  validate_dataset(bundle.query, bundle.classes);
  validate_dataset(bundle.database, bundle.classes);
  save_dataset_bundle(bundle, dir / kDatasetFile);
  note_artifact(report, "dataset", dir, kDatasetFile);
  report["stages"]["gen_data"] = {
      {"train_size", bundle.train.samples.size()},
      {"query_size", bundle.query.samples.size()},
      {"database_size", bundle.database.samples.size()}};
  finish_stage(report, cfg, dir, "gen_data", timer);
}

void stage_train_clean(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  json report = open_report(cfg, dir);
  const DatasetBundle bundle = load_bundle_checked(dir);
  PairwiseLossConfig loss_cfg{cfg.margin(), cfg.loss.quantization_weight};

  TrainResult surrogate =
      train(HashModel::init(cfg.model_config(cfg.seeds.surrogate)),
            bundle.train, cfg.schedule_for(cfg.seeds.surrogate), loss_cfg);
  save_checkpoint(surrogate.model, dir / kSurrogateFile);

  TrainResult clean =
      train(HashModel::init(cfg.model_config(cfg.seeds.victim)), bundle.train,
            cfg.schedule_for(cfg.seeds.victim), loss_cfg);
  save_checkpoint(clean.model, dir / kCleanFile);

  note_artifact(report, "surrogate_model", dir, kSurrogateFile);
  note_artifact(report, "clean_model", dir, kCleanFile);
  report["stages"]["train_clean"] = {
      {"surrogate_epoch_losses", surrogate.epoch_losses},
      {"clean_epoch_losses", clean.epoch_losses}};
  finish_stage(report, cfg, dir, "train_clean", timer);
}

void stage_gen_trigger(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  json report = open_report(cfg, dir);
  const DatasetBundle bundle = load_bundle_checked(dir);
  const HashModel surrogate = load_model_checked(cfg, dir, kSurrogateFile,
                                                 "train", cfg.seeds.surrogate);

  const TriggerSpec initial = TriggerSpec::make(
      cfg.dataset.height, cfg.dataset.width, cfg.dataset.channels,
      cfg.trigger_size(), cfg.trigger.location, cfg.trigger.blend);
  TriggerOptConfig opt;
  opt.iterations = cfg.trigger.iterations;
  opt.batch_size = cfg.trigger.batch_size;
  opt.step_size = cfg.trigger.step_size;
  opt.normalize_by_batch = cfg.trigger.normalize_by_batch;
  opt.seed = cfg.seeds.trigger;

  // Anchor over the target class for reporting and the progress probe.
  std::vector<HashCode> target_codes;
  for (const auto& s : bundle.train.samples) {
    if (pairwise_similarity(s.label, cfg.target_label()) == 1) {
      target_codes.push_back(surrogate.hash_forward(s.image));
    }
  }
  const AnchorCode anchor = anchor_code(target_codes);
  const Tensor anchor_t = code_as_tensor(anchor.code);

  const double before =
      mean_anchor_distance(surrogate, bundle.train, initial, anchor_t, 64);
  const TriggerSpec trigger = generate_trigger(
      {&surrogate}, bundle.train, cfg.target_label(), opt, initial);
  const double after =
      mean_anchor_distance(surrogate, bundle.train, trigger, anchor_t, 64);

  save_trigger(trigger, dir / kTriggerFile);
  note_artifact(report, "trigger", dir, kTriggerFile);
  report["stages"]["gen_trigger"] = {
      {"anchor_code", code_to_string(anchor.code)},
      {"anchor_sources", anchor.source_count},
      {"probe_distance_initial", before},
      {"probe_distance_final", after}};
  finish_stage(report, cfg, dir, "gen_trigger", timer);
}

void stage_gen_perturb(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  json report = open_report(cfg, dir);
  if (!method_uses_perturbations(cfg.method)) {
    report["stages"]["gen_perturb"] = {{"method", method_name(cfg.method)},
                                       {"perturbations", nullptr}};
    finish_stage(report, cfg, dir, "gen_perturb", timer);
    return;
  }
  const DatasetBundle bundle = load_bundle_checked(dir);
  const HashModel surrogate = load_model_checked(cfg, dir, kSurrogateFile,
                                                 "train", cfg.seeds.surrogate);
  const auto targets = poison_targets_of(cfg, bundle.train);

  PerturbationBudget budget = cfg.budget;
  budget.seed = cfg.seeds.perturbation;

  PerturbationSet set;
  set.epsilon = budget.epsilon;
  switch (cfg.method) {
    case AttackMethod::TriNoise: {
      Rng rng(budget.seed);
      for (const auto& [id, img] : targets) {
        Tensor eta(img->shape);
        for (double& v : eta.data) {
          v = rng.uniform(-budget.epsilon, budget.epsilon);
        }
        set.ids.push_back(id);
        set.etas.push_back(std::move(eta));
      }
      break;
    }
    case AttackMethod::TriAdv: {
      for (const auto& [id, img] : targets) {
        set.ids.push_back(id);
        set.etas.push_back(adversarial_perturbation(surrogate, *img, budget));
      }
      break;
    }
    case AttackMethod::Ours: {
      set = confusing_perturbations({&surrogate}, targets, cfg.lambda, budget);
      break;
    }
    default:
      break;
  }

  double max_abs = 0.0;
  for (const auto& eta : set.etas) {
    for (double v : eta.data) max_abs = std::max(max_abs, std::abs(v));
  }

  // Dispersion of the target-class codes on the crafting model, with and
  // without the perturbations.
  std::vector<HashCode> plain_codes, perturbed_codes;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    plain_codes.push_back(surrogate.hash_forward(*targets[i].second));
    Tensor shifted = *targets[i].second;
    for (std::size_t e = 0; e < shifted.size(); ++e) {
      shifted[e] += set.etas[i][e];
    }
    clamp01_inplace(shifted);
    perturbed_codes.push_back(surrogate.hash_forward(shifted));
  }

  save_perturbations(set, {cfg.dataset.height, cfg.dataset.width, cfg.dataset.channels},
                     dir / kPerturbationFile);
  note_artifact(report, "perturbations", dir, kPerturbationFile);
  report["stages"]["gen_perturb"] = {
      {"method", method_name(cfg.method)},
      {"count", set.ids.size()},
      {"epsilon", set.epsilon},
      {"max_abs_eta", max_abs},
      {"surrogate_dispersion_plain", mean_pairwise_distance(plain_codes)},
      {"surrogate_dispersion_perturbed",
       mean_pairwise_distance(perturbed_codes)}};
  finish_stage(report, cfg, dir, "gen_perturb", timer);
}

void stage_poison(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  json report = open_report(cfg, dir);
  if (cfg.method == AttackMethod::None) {
    report["stages"]["poison"] = {{"method", "none"}, {"poisoned_count", 0}};
    finish_stage(report, cfg, dir, "poison", timer);
    return;
  }
  const DatasetBundle bundle = load_bundle_checked(dir);
  PoisonPlan plan;
  plan.target_class = cfg.target_class;
  plan.poison_count = cfg.poison_count;
  plan.trigger = load_trigger_checked(dir);
  plan.lambda = cfg.lambda;
  plan.selection_seed = cfg.seeds.selection;
  if (method_uses_perturbations(cfg.method)) {
    require_artifact(dir / kPerturbationFile, "gen-perturb");
    plan.perturbations = load_perturbations(dir / kPerturbationFile);
  }

  auto [poisoned, manifest] = craft_poisoned_set(bundle.train, plan);
  validate_dataset(poisoned, bundle.classes);
  manifest.trigger_digest = file_digest(dir / kTriggerFile);
  if (plan.perturbations) {
    manifest.perturbations_digest = file_digest(dir / kPerturbationFile);
  }
  save_dataset(poisoned, bundle.classes, dir / kPoisonedTrainFile);

  json mj;
  mj["poisoned_ids"] = manifest.poisoned_ids;
  mj["target_class"] = manifest.target_class;
  mj["poison_count"] = manifest.poison_count;
  mj["lambda"] = manifest.lambda;
  mj["selection_seed"] = manifest.selection_seed;
  mj["method"] = method_name(cfg.method);
  mj["trigger_digest"] = manifest.trigger_digest;
  mj["perturbations_digest"] = manifest.perturbations_digest;
  write_json_file(dir / kManifestFile, mj);

  note_artifact(report, "poisoned_train", dir, kPoisonedTrainFile);
  note_artifact(report, "poison_manifest", dir, kManifestFile);
  report["stages"]["poison"] = {{"method", method_name(cfg.method)},
                                {"poisoned_count", manifest.poisoned_ids.size()}};
  finish_stage(report, cfg, dir, "poison", timer);
}

void stage_train_victim(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  json report = open_report(cfg, dir);
  if (cfg.method == AttackMethod::None) {
    report["stages"]["train_victim"] = {
        {"note", "method none trains no victim; the clean model stands in"}};
    finish_stage(report, cfg, dir, "train_victim", timer);
    return;
  }
  require_artifact(dir / kPoisonedTrainFile, "poison");
  std::size_t classes = 0;
  const Dataset poisoned = load_dataset(dir / kPoisonedTrainFile, &classes);
  PairwiseLossConfig loss_cfg{cfg.margin(), cfg.loss.quantization_weight};
  TrainResult victim =
      train(HashModel::init(cfg.model_config(cfg.seeds.victim)), poisoned,
            cfg.schedule_for(cfg.seeds.victim), loss_cfg);
  save_checkpoint(victim.model, dir / kBackdooredFile);
  note_artifact(report, "backdoored_model", dir, kBackdooredFile);
  report["stages"]["train_victim"] = {
      {"victim_epoch_losses", victim.epoch_losses}};
  finish_stage(report, cfg, dir, "train_victim", timer);
}

void stage_eval(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  json report = open_report(cfg, dir);
  const DatasetBundle bundle = load_bundle_checked(dir);
  const TriggerSpec trigger = load_trigger_checked(dir);
  const HashModel clean =
      load_model_checked(cfg, dir, kCleanFile, "train", cfg.seeds.victim);

  report["metrics"]["clean"] =
      metrics_block(clean, cfg, bundle, trigger, bundle.train, dir, "clean");

  if (cfg.method != AttackMethod::None) {
    const HashModel backdoored = load_model_checked(
        cfg, dir, kBackdooredFile, "train --on poisoned", cfg.seeds.victim);
    require_artifact(dir / kPoisonedTrainFile, "poison");
    const Dataset poisoned = load_dataset(dir / kPoisonedTrainFile);
    report["metrics"]["backdoored"] = metrics_block(
        backdoored, cfg, bundle, trigger, poisoned, dir, "backdoored");
  }
  finish_stage(report, cfg, dir, "eval", timer);
}

void stage_defend(const RunConfig& cfg, const fs::path& dir) {
  StageTimer timer;
  json report = open_report(cfg, dir);
  if (!cfg.spectral.enabled && !cfg.pruning.enabled && !cfg.dp.enabled) {
    report["defenses"] = {{"note", "no defense enabled"}};
    finish_stage(report, cfg, dir, "defend", timer);
    return;
  }

  const DatasetBundle bundle = load_bundle_checked(dir);
  const TriggerSpec trigger = load_trigger_checked(dir);
  const bool attacked = cfg.method != AttackMethod::None;
  const HashModel victim =
      attacked ? load_model_checked(cfg, dir, kBackdooredFile,
                                    "train --on poisoned", cfg.seeds.victim)
               : load_model_checked(cfg, dir, kCleanFile, "train",
                                    cfg.seeds.victim);
  Dataset victim_train;
  std::set<std::uint64_t> poisoned_ids;
  if (attacked) {
    require_artifact(dir / kPoisonedTrainFile, "poison");
    victim_train = load_dataset(dir / kPoisonedTrainFile);
    const json manifest = read_json_file(dir / kManifestFile);
    for (const auto& id : manifest.at("poisoned_ids")) {
      poisoned_ids.insert(id.get<std::uint64_t>());
    }
  } else {
    victim_train = bundle.train;
  }

  json defenses;

  if (cfg.spectral.enabled) {
    Dataset subset;
    subset.role = victim_train.role;
    const LabelVector target = cfg.target_label();
    for (const auto& s : victim_train.samples) {
      if (pairwise_similarity(s.label, target) == 1) subset.samples.push_back(s);
    }
    std::size_t remove = cfg.spectral.remove_count;
    if (remove == 0) {
      remove = static_cast<std::size_t>(std::llround(
          cfg.spectral.remove_multiplier * static_cast<double>(
              attacked ? poisoned_ids.size() : 0)));
    }
    const SpectralReport sr =
        spectral_signature_filter(victim, subset, remove, poisoned_ids);
    std::ofstream csv(dir / "spectral.csv", std::ios::trunc);
    csv << "id,score,removed,is_poisoned\n";
    for (const auto& s : sr.scored) {
      csv << s.id << ',' << format_double(s.score) << ',' << (s.removed ? 1 : 0)
          << ',' << (s.is_poisoned ? 1 : 0) << '\n';
    }
    defenses["spectral"] = {{"subset_size", sr.scored.size()},
                            {"removed", sr.removed_ids.size()},
                            {"clean_removed", sr.clean_removed},
                            {"clean_remained", sr.clean_remained},
                            {"poisoned_removed", sr.poisoned_removed},
                            {"poisoned_remained", sr.poisoned_remained}};
  }

  if (cfg.pruning.enabled) {
    std::vector<std::size_t> counts = cfg.pruning.counts;
    if (counts.empty()) {
      const std::size_t width = cfg.hidden_sizes.back();
      for (std::size_t c = 0; c <= width; c += std::max<std::size_t>(1, width / 8)) {
        counts.push_back(c);
      }
      if (counts.back() != width) counts.push_back(width);
    }
    const PruneReport pr = prune_dormant(
        victim, bundle.query, counts, [&](const HashModel& pruned) {
          return eval_model_pair(pruned, cfg, bundle, trigger);
        });
    std::ofstream csv(dir / "prune.csv", std::ios::trunc);
    csv << "pruned_count,map,tmap\n";
    json rows = json::array();
    for (const auto& row : pr.rows) {
      csv << row.pruned_count << ',' << format_double(row.map) << ','
          << format_double(row.tmap) << '\n';
      rows.push_back({{"pruned_count", row.pruned_count},
                      {"map", row.map},
                      {"tmap", row.tmap}});
    }
    defenses["pruning"] = {{"rows", rows}};
  }

  if (cfg.dp.enabled) {
    PairwiseLossConfig loss_cfg{cfg.margin(), cfg.loss.quantization_weight};
    json rows = json::array();
    for (double sigma : cfg.dp.noise_scales) {
      DpConfig dpc{cfg.dp.clip_bound, sigma, cfg.seeds.dp};
      const TrainResult tr =
          dp_train(HashModel::init(cfg.model_config(cfg.seeds.victim)),
                   victim_train, cfg.schedule_for(cfg.seeds.victim), loss_cfg,
                   dpc);
      const auto [map, tmap] = eval_model_pair(tr.model, cfg, bundle, trigger);
      rows.push_back(
          {{"noise_scale", sigma}, {"map", map}, {"tmap", tmap}});
    }
    defenses["dp"] = {{"clip_bound", cfg.dp.clip_bound}, {"rows", rows}};
  }

  report["defenses"] = defenses;
  finish_stage(report, cfg, dir, "defend", timer);
}

json run_pipeline(const RunConfig& cfg, const fs::path& dir) {
  stage_gen_data(cfg, dir);
  stage_train_clean(cfg, dir);
  stage_gen_trigger(cfg, dir);
  stage_gen_perturb(cfg, dir);
  stage_poison(cfg, dir);
  stage_train_victim(cfg, dir);
  stage_eval(cfg, dir);
  stage_defend(cfg, dir);
  return load_report(dir);
}

json load_report(const fs::path& dir) {
  return read_json_file(dir / kReportFile);
}

json report_without_timings(json report) {
  report.erase("timings");
  return report;
}

namespace {

RunConfig apply_sweep_value(RunConfig cfg, const std::string& key, double value) {
  if (key == "lambda") {
    cfg.lambda = value;
  } else if (key == "poison_count") {
    cfg.poison_count = static_cast<std::size_t>(std::llround(value));
  } else if (key == "trigger_size") {
    cfg.trigger.size = static_cast<std::size_t>(std::llround(value));
  } else if (key == "blend") {
    cfg.trigger.blend = value;
  } else if (key == "code_length") {
    cfg.code_length = static_cast<std::size_t>(std::llround(value));
    cfg.loss.margin = 0.0;  // re-derive K/2
  } else {
    throw ArgumentError("sweep: unknown key '" + key +
                        "' (expected lambda|poison_count|trigger_size|blend|"
                        "code_length)");
  }
  return cfg;
}

std::size_t thread_cap() {
  if (const char* env = std::getenv("HPL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::thread::hardware_concurrency() > 0
             ? std::thread::hardware_concurrency()
             : 1;
}

std::string sweep_value_string(double v) {
  std::string s = format_double(v);
  for (auto& c : s) {
    if (c == '.') c = 'p';
  }
  return s;
}

}  // namespace

void run_sweep(const RunConfig& cfg, const fs::path& dir,
               const std::string& key, const std::vector<double>& values,
               std::size_t jobs) {
  if (values.empty()) throw ArgumentError("sweep: empty value list");
  fs::create_directories(dir);
  const std::size_t workers = std::max<std::size_t>(
      1, std::min({jobs == 0 ? std::size_t{1} : jobs, thread_cap(), values.size()}));

  struct Point {
    double value;
    fs::path subdir;
    double map = 0.0;
    double tmap = 0.0;
    std::string error;
  };
  std::vector<Point> points;
  points.reserve(values.size());
  for (double v : values) {
    points.push_back({v, dir / (key + "=" + sweep_value_string(v)), 0, 0, ""});
  }

  auto run_point = [&](Point& p) {
    try {
      const RunConfig point_cfg = apply_sweep_value(cfg, key, p.value);
      const json report = run_pipeline(point_cfg, p.subdir);
      const char* block =
          point_cfg.method == AttackMethod::None ? "clean" : "backdoored";
      p.map = report.at("metrics").at(block).at("map").get<double>();
      p.tmap = report.at("metrics").at(block).at("tmap").get<double>();
    } catch (const std::exception& e) {
      p.error = e.what();
    }
  };

  if (workers == 1) {
    for (auto& p : points) run_point(p);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex mu;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (;;) {
          std::size_t idx;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= points.size()) return;
            idx = next++;
          }
          run_point(points[idx]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  for (const auto& p : points) {
    if (!p.error.empty()) {
      throw StateError("sweep point " + key + "=" + format_double(p.value) +
                       " failed: " + p.error);
    }
  }

  std::ofstream csv(dir / "sweep.csv", std::ios::trunc);
  if (!csv) throw FormatError("cannot write sweep.csv");
  csv << "key,value,map,tmap,out_dir\n";
  for (const auto& p : points) {
    csv << key << ',' << format_double(p.value) << ',' << format_double(p.map)
        << ',' << format_double(p.tmap) << ',' << p.subdir.filename().string()
        << '\n';
  }
}

}  // namespace hpl
