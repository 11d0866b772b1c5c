#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "disengcd/dataset.hpp"
#include "disengcd/evaluation.hpp"
#include "disengcd/trainer.hpp"

namespace disengcd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return kExitData;
    case ErrorKind::numeric: return kExitNumeric;
    default: return kExitUsage;
  }
}

/// Settings shared by the subcommands. Everything is optional so a config
/// file and command-line flags can be layered; flags win.
struct RunConfig {
  std::optional<std::string> logs, q, dependency, out, checkpoint, variant, fixed_structure;
  std::optional<std::size_t> min_logs, batch_size, max_epochs, patience, hyper_nodes, gat_layers;
  std::optional<std::vector<double>> split;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, lambda, noise_ratio, delete_fraction;
};

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, std::optional<T>& slot) {
  if (!j.contains(key)) return;
  try {
    slot = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::config, std::string("config key '") + key + "' has the wrong type");
  }
}

template <class T>
void overlay(std::optional<T>& base, const std::optional<T>& top) {
  if (top) base = top;
}

}  // namespace detail

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "logs",      "q",       "dependency", "out",        "checkpoint",  "variant",     "fixed_structure",
      "min_logs",  "batch_size", "max_epochs", "patience", "P",           "L",           "split",
      "seed",      "lr",      "lambda",     "noise_ratio", "delete_fraction"};
  return keys;
}

/// Reads a JSON config file; unknown keys are rejected.
inline RunConfig read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::config, "cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
  require(j.is_object(), ErrorKind::config, "config file must hold a JSON object");
  std::string unknown;
  for (const auto& [key, value] : j.items())
    if (!config_keys().count(key)) unknown += " " + key;
  require(unknown.empty(), ErrorKind::config, "unknown config keys:" + unknown);
  RunConfig c;
  detail::take(j, "logs", c.logs);
  detail::take(j, "q", c.q);
  detail::take(j, "dependency", c.dependency);
  detail::take(j, "out", c.out);
  detail::take(j, "checkpoint", c.checkpoint);
  detail::take(j, "variant", c.variant);
  detail::take(j, "fixed_structure", c.fixed_structure);
  detail::take(j, "min_logs", c.min_logs);
  detail::take(j, "batch_size", c.batch_size);
  detail::take(j, "max_epochs", c.max_epochs);
  detail::take(j, "patience", c.patience);
  detail::take(j, "P", c.hyper_nodes);
  detail::take(j, "L", c.gat_layers);
  detail::take(j, "split", c.split);
  detail::take(j, "seed", c.seed);
  detail::take(j, "lr", c.lr);
  detail::take(j, "lambda", c.lambda);
  detail::take(j, "noise_ratio", c.noise_ratio);
  detail::take(j, "delete_fraction", c.delete_fraction);
  return c;
}

inline RunConfig layered(RunConfig base, const RunConfig& flags) {
  using detail::overlay;
  overlay(base.logs, flags.logs);
  overlay(base.q, flags.q);
  overlay(base.dependency, flags.dependency);
  overlay(base.out, flags.out);
  overlay(base.checkpoint, flags.checkpoint);
  overlay(base.variant, flags.variant);
  overlay(base.fixed_structure, flags.fixed_structure);
  overlay(base.min_logs, flags.min_logs);
  overlay(base.batch_size, flags.batch_size);
  overlay(base.max_epochs, flags.max_epochs);
  overlay(base.patience, flags.patience);
  overlay(base.hyper_nodes, flags.hyper_nodes);
  overlay(base.gat_layers, flags.gat_layers);
  overlay(base.split, flags.split);
  overlay(base.seed, flags.seed);
  overlay(base.lr, flags.lr);
  overlay(base.lambda, flags.lambda);
  overlay(base.noise_ratio, flags.noise_ratio);
  overlay(base.delete_fraction, flags.delete_fraction);
  return base;
}

inline SplitSpec split_spec(const RunConfig& c) {
  SplitSpec s;
  if (c.split) {
    require(c.split->size() == 3, ErrorKind::config, "--split needs three fractions: train,val,test");
    s.train = (*c.split)[0];
    s.val = (*c.split)[1];
    s.test = (*c.split)[2];
  }
  s.seed = c.seed.value_or(0);
  try {
    s.check();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  return s;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  if (c.lr) t.learning_rate = *c.lr;
  if (c.batch_size) t.batch_size = *c.batch_size;
  if (c.max_epochs) t.max_epochs = *c.max_epochs;
  if (c.patience) t.patience = *c.patience;
  if (c.seed) t.seed = *c.seed;
  if (c.hyper_nodes) t.model.hyper_nodes = *c.hyper_nodes;
  if (c.gat_layers) t.model.gat_layers = *c.gat_layers;
  if (c.lambda) t.model.lambda = *c.lambda;
  if (c.variant) t.model.variant = variant_from_name(*c.variant);
  if (c.noise_ratio) t.noise_ratio = *c.noise_ratio;
  if (c.delete_fraction) t.delete_fraction = *c.delete_fraction;
  if (c.fixed_structure) {
    std::ifstream in(*c.fixed_structure);
    require(static_cast<bool>(in), ErrorKind::config, "cannot open fixed structure file: " + *c.fixed_structure);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, "fixed structure file " + *c.fixed_structure + " is not valid JSON: " + e.what());
    }
    t.model.fixed_structure = metagraph_from_json(j);
    require(t.model.variant.mode == StudentMode::fixed_paths, ErrorKind::config,
            "a fixed structure needs a fixed-path variant (mp)");
  }
  t.check();
  return t;
}

struct DataPaths {
  std::string logs, q;
  std::optional<std::string> dependency;
  std::size_t min_logs = 0;

  nlohmann::json to_json() const {
    return {{"logs", logs},
            {"q", q},
            {"dependency", dependency ? nlohmann::json(*dependency) : nlohmann::json(nullptr)},
            {"min_logs", min_logs}};
  }
};

inline DataPaths data_paths(const RunConfig& c) {
  require(c.logs.has_value(), ErrorKind::config, "missing --logs");
  require(c.q.has_value(), ErrorKind::config, "missing --q");
  return {*c.logs, *c.q, c.dependency, c.min_logs.value_or(0)};
}

inline Dataset load(const DataPaths& p) {
  for (const auto* path : {&p.logs, &p.q})
    require(std::filesystem::exists(*path), ErrorKind::config, "file not found: " + *path);
  if (p.dependency)
    require(std::filesystem::exists(*p.dependency), ErrorKind::config, "file not found: " + *p.dependency);
  std::optional<std::filesystem::path> dep;
  if (p.dependency) dep = *p.dependency;
  auto d = load_dataset(p.logs, p.q, dep);
  if (p.min_logs > 0) d = filter_min_logs(d, p.min_logs);
  return d;
}

inline std::filesystem::path out_dir(const RunConfig& c) {
  std::filesystem::path dir = c.out.value_or(".");
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::config, "cannot write file: " + path.string());
  out << text;
}

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json run_identity(const TrainConfig& t, const SplitSpec& s, const DataPaths& p) {
  return {{"train", to_json(t)}, {"split", {s.train, s.val, s.test}}, {"data", p.to_json()}};
}

inline nlohmann::json id_map_json(const IdMap& ids, const std::string& digest) {
  return {{"students", ids.students}, {"exercises", ids.exercises}, {"concepts", ids.concepts},
          {"config_digest", digest}};
}

inline nlohmann::json metagraph_json(const DisenGCD& m, const std::string& digest) {
  auto j = to_json(m.structure());
  j["config_digest"] = digest;
  return j;
}

// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& c, bool dot, std::ostream& out, std::ostream& err) {
  const auto paths = data_paths(c);
  const auto spec = split_spec(c);
  const auto config = train_config(c);
  const auto data = load(paths);
  const auto dir = out_dir(c);
  const auto identity = run_identity(config, spec, paths);
  const auto digest = config_digest(identity);

  const auto start = std::chrono::steady_clock::now();
  const auto started_at = now_utc();
  const auto splits = prepare_splits(data, spec, config);
  const auto result = train_bilevel(splits.train, splits.val, config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const nlohmann::json metadata = {{"run", identity}, {"config_digest", digest}};
  const TrainState& saved = result.diverged ? *result.last_finite : result.best;
  save_checkpoint(saved, dir / "checkpoint.bin", metadata);
  write_text(dir / "history.csv", history_csv(result.history));
  write_text(dir / "metagraph.json", metagraph_json(saved.model, digest).dump(2) + "\n");
  if (dot) write_text(dir / "metagraph.dot", to_dot(saved.model.structure()));
  write_text(dir / "id_map.json", id_map_json(*data.ids, digest).dump(2) + "\n");

  std::vector<std::string> warnings = data.warnings;
  warnings.insert(warnings.end(), splits.warnings.begin(), splits.warnings.end());
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  const nlohmann::json log = {{"started_at", started_at},
                              {"finished_at", now_utc()},
                              {"seconds", seconds},
                              {"config_digest", digest},
                              {"epochs", result.history.size()},
                              {"best_epoch", result.best.epoch},
                              {"diverged", result.diverged},
                              {"warnings", warnings}};
  write_text(dir / "run_log.json", log.dump(2) + "\n");

  if (result.diverged) {
    err << "disengcd: numeric error: training diverged: " << result.divergence
        << "; checkpoint of the last finite state written to " << (dir / "checkpoint.bin").string() << "\n";
    return kExitNumeric;
  }
  const auto& best = result.history.at(result.best.epoch - 1);
  out << "trained " << result.history.size() << " epochs; best epoch " << result.best.epoch << " val_auc "
      << (best.val_auc ? format_double(*best.val_auc) : std::string("n/a")) << "\n";
  out << "artifacts in " << dir.string() << " (config " << digest << ")\n";
  return kExitOk;
}

/// Checkpoint plus the dataset and splits it was trained on.
struct Restored {
  TrainState state;
  std::string digest;
  Dataset data;
  PreparedSplits splits;
  ModelGraphs graphs;
};

inline Restored restore(const RunConfig& c) {
  require(c.checkpoint.has_value(), ErrorKind::config, "missing --checkpoint");
  require(std::filesystem::exists(*c.checkpoint), ErrorKind::config, "file not found: " + *c.checkpoint);
  auto loaded = load_checkpoint(*c.checkpoint);
  Restored r;
  r.state = std::move(loaded.state);
  r.digest = loaded.metadata.value("config_digest", std::string());

  RunConfig from_ckpt;
  if (loaded.metadata.contains("run")) {
    const auto& run = loaded.metadata.at("run");
    const auto& data = run.at("data");
    from_ckpt.logs = data.at("logs").get<std::string>();
    from_ckpt.q = data.at("q").get<std::string>();
    if (!data.at("dependency").is_null()) from_ckpt.dependency = data.at("dependency").get<std::string>();
    from_ckpt.min_logs = data.at("min_logs").get<std::size_t>();
    from_ckpt.split = run.at("split").get<std::vector<double>>();
  }
  from_ckpt.seed = r.state.config.seed;
  const auto merged = layered(from_ckpt, c);
  r.data = load(data_paths(merged));
  check_compatible(r.state.model, r.data);
  auto spec = split_spec(merged);
  spec.seed = r.state.config.seed;
  r.splits = prepare_splits(r.data, spec, r.state.config);
  r.graphs = ModelGraphs::build(r.splits.train);
  return r;
}

inline int cmd_eval(const RunConfig& c, const std::string& which, std::ostream& out) {
  const auto r = restore(c);
  const Dataset* part = which == "train" ? &r.splits.train : which == "val" ? &r.splits.val : &r.splits.test;
  auto report = evaluate_split(r.state.model, r.graphs, *part, which);
  report.config_digest = r.digest;
  const auto text = to_json(report).dump(2) + "\n";
  const std::filesystem::path dir =
      c.out ? out_dir(c) : std::filesystem::path(*c.checkpoint).parent_path();
  write_text((dir.empty() ? std::filesystem::path(".") : dir) / ("eval_" + which + ".json"), text);
  out << text;
  return kExitOk;
}

inline int cmd_diagnose(const RunConfig& c, const std::vector<std::string>& students, bool all, std::ostream& out) {
  require(all || !students.empty(), ErrorKind::config, "diagnose needs --student or --all");
  const auto r = restore(c);
  const auto& ids = *r.data.ids;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.students.size(); ++i) index.emplace(ids.students[i], i);

  std::vector<std::size_t> picks;
  nlohmann::json unknown = nlohmann::json::array();
  if (all) {
    for (std::size_t i = 0; i < ids.students.size(); ++i) picks.push_back(i);
  } else {
    for (const auto& s : students) {
      auto it = index.find(s);
      if (it == index.end())
        unknown.push_back(s);
      else
        picks.push_back(it->second);
    }
  }

  const auto reps = representations(r.state.model, r.graphs);
  const auto head = HeadParams::from(r.state.model.omega);
  std::vector<std::size_t> train_logs(r.data.n_students, 0);
  for (const auto& l : r.splits.train.logs) ++train_logs[l.student];
  nlohmann::json reports = nlohmann::json::array();
  for (auto i : picks) {
    const auto m = mastery_report(reps.students.row(i), reps.exercises, reps.concepts, *r.data.q_matrix, head);
    nlohmann::json flags = nlohmann::json::array();
    for (auto k : m.unexercised) flags.push_back("no_exercises:" + ids.concepts[k]);
    if (train_logs[i] == 0) flags.push_back("no_training_logs");
    reports.push_back({{"student_id", ids.students[i]}, {"mastery", m.mastery}, {"flags", std::move(flags)}});
  }
  const nlohmann::json doc = {
      {"concepts", ids.concepts}, {"reports", std::move(reports)}, {"unknown", std::move(unknown)},
      {"config_digest", r.digest}};
  const auto text = doc.dump(2) + "\n";
  if (c.out) write_text(out_dir(c) / "diagnosis.json", text);
  out << text;
  return kExitOk;
}

inline int cmd_experiment(const RunConfig& c, const std::string& kind, const std::vector<double>& values,
                          const std::vector<std::size_t>& hyper_nodes, const std::vector<std::string>& variants,
                          std::ostream& out, std::ostream& err) {
  const auto paths = data_paths(c);
  const auto spec = split_spec(c);
  const auto config = train_config(c);
  const auto data = load(paths);
  const auto dir = out_dir(c);
  const auto threads = worker_threads();

  Experiment e;
  nlohmann::json sweep;
  if (kind == "robustness") {
    require(!values.empty(), ErrorKind::config, "robustness needs --ratios");
    e = robustness_experiment(data, spec, config, values, threads);
    sweep = values;
  } else if (kind == "sparsity") {
    require(!values.empty(), ErrorKind::config, "sparsity needs --fractions");
    e = sparsity_experiment(data, spec, config, values, threads);
    sweep = values;
  } else if (kind == "sensitivity") {
    require(!hyper_nodes.empty(), ErrorKind::config, "sensitivity needs --P");
    e = sensitivity_experiment(data, spec, config, hyper_nodes, threads);
    sweep = hyper_nodes;
  } else {
    const auto names = variants.empty() ? ablation_variant_names() : variants;
    e = ablation_experiment(data, spec, config, names, threads);
    sweep = names;
  }
  auto identity = run_identity(config, spec, paths);
  identity["experiment"] = {{"name", kind}, {"sweep", sweep}};
  const auto digest = config_digest(identity);
  for (auto& row : e.rows) row.test.config_digest = digest;
  const auto csv_path = write_report(e, digest, dir);

  nlohmann::json timings = nlohmann::json::array();
  for (const auto& row : e.rows) timings.push_back({{"value", row.value}, {"seconds", row.seconds}});
  write_text(dir / ("run_log_" + kind + "_" + digest + ".json"),
             nlohmann::json{{"finished_at", now_utc()}, {"threads", threads}, {"timings", timings}}.dump(2) + "\n");
  for (const auto& row : e.rows)
    if (row.diverged) err << "warning: run " << row.parameter << "=" << row.value << " diverged\n";
  out << report_csv(e);
  out << "report written to " << csv_path.string() << "\n";
  return kExitOk;
}

inline int cmd_synth(std::size_t n, std::size_t m, std::size_t k, std::size_t per_student, std::uint64_t seed,
                     const std::string& dir_name, std::ostream& out) {
  const auto syn = generate_synthetic(n, m, k, per_student, seed);
  const std::filesystem::path dir = dir_name;
  std::filesystem::create_directories(dir);
  write_dataset(syn.dataset, dir / "logs.csv", dir / "q.csv", dir / "dependency.csv");
  auto rows = [](const DenseMatrix& x) {
    nlohmann::json a = nlohmann::json::array();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      a.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return a;
  };
  const auto& ids = *syn.dataset.ids;
  const nlohmann::json truth = {{"students", ids.students},
                                {"exercises", ids.exercises},
                                {"concepts", ids.concepts},
                                {"mastery", rows(syn.truth.mastery)},
                                {"difficulty", rows(syn.truth.difficulty)},
                                {"seed", seed}};
  write_text(dir / "truth.json", truth.dump(2) + "\n");
  out << "wrote " << syn.dataset.logs.size() << " logs for " << n << " students to " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_export(const RunConfig& c, bool dot, std::ostream& out) {
  require(c.checkpoint.has_value(), ErrorKind::config, "missing --checkpoint");
  require(std::filesystem::exists(*c.checkpoint), ErrorKind::config, "file not found: " + *c.checkpoint);
  const auto loaded = load_checkpoint(*c.checkpoint);
  const auto digest = loaded.metadata.value("config_digest", std::string());
  const auto text = metagraph_json(loaded.state.model, digest).dump(2) + "\n";
  if (c.out) {
    const auto dir = out_dir(c);
    write_text(dir / "metagraph.json", text);
    if (dot) write_text(dir / "metagraph.dot", to_dot(loaded.state.model.structure()));
  }
  out << (dot ? to_dot(loaded.state.model.structure()) : text);
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Registers the shared data/training flags on a subcommand.
inline void add_run_options(CLI::App& app, RunConfig& f, std::string& config_path, bool training,
                            bool split_fractions = true) {
  app.add_option("--config", config_path, "JSON config file; flags override its keys");
  app.add_option("--logs", f.logs, "response log CSV (student_id,exercise_id,response)");
  app.add_option("--q", f.q, "Q-matrix CSV (exercise_id,concept_id)");
  app.add_option("--dependency", f.dependency, "dependency CSV (concept_id,prerequisite_concept_id)");
  app.add_option("--min-logs", f.min_logs, "drop students with fewer logs");
  if (split_fractions) app.add_option("--split", f.split, "train,val,test fractions")->delimiter(',')->expected(3);
  app.add_option("--seed", f.seed, "seed for splitting, noise, initialization and batching");
  app.add_option("--out", f.out, "output directory");
  if (!training) return;
  app.add_option("--lr", f.lr, "Adam learning rate");
  app.add_option("--batch-size", f.batch_size);
  app.add_option("--max-epochs", f.max_epochs);
  app.add_option("--patience", f.patience, "epochs without val AUC improvement before stopping");
  app.add_option("--P", f.hyper_nodes, "hyper-nodes in the meta multigraph");
  app.add_option("--L", f.gat_layers, "GAT layers");
  app.add_option("--lambda", f.lambda, "routing threshold mix");
  app.add_option("--variant", f.variant, "full, disengcd_i, is_rec, ise_rc, isc_re, naive, mp or mg");
  app.add_option("--fixed-structure", f.fixed_structure, "path structure JSON for the mp variant");
  app.add_option("--noise-ratio", f.noise_ratio, "random interactions added per student, as a fraction");
  app.add_option("--delete-fraction", f.delete_fraction, "fraction of training logs removed");
}

inline RunConfig resolve(const std::string& config_path, const RunConfig& flags) {
  RunConfig base = config_path.empty() ? RunConfig{} : read_config_file(config_path);
  return layered(std::move(base), flags);
}

/// Entry point; returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cognitive diagnosis with disentangled graph learning", "disengcd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "disengcd 1.0");

  RunConfig flags;
  std::string config_path;
  bool dot = false;

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, history and structure");
  add_run_options(*train, flags, config_path, true);
  train->add_flag("--dot", dot, "also write metagraph.dot");

  std::string eval_split = "test";
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a split");
  add_run_options(*eval, flags, config_path, false, false);
  eval->add_option("--checkpoint", flags.checkpoint)->required();
  eval->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  std::vector<std::string> students;
  bool all = false;
  auto* diagnose = app.add_subcommand("diagnose", "per-concept mastery reports");
  add_run_options(*diagnose, flags, config_path, false);
  diagnose->add_option("--checkpoint", flags.checkpoint)->required();
  diagnose->add_option("--student", students, "student id (repeatable)")->delimiter(',');
  diagnose->add_flag("--all", all, "report every student");

  std::vector<double> values;
  std::vector<std::size_t> hyper_nodes;
  std::vector<std::string> variants;
  auto* experiment = app.add_subcommand("experiment", "robustness, sparsity, sensitivity or ablation sweeps");
  experiment->require_subcommand(1);
  auto* robustness = experiment->add_subcommand("robustness", "AUC under injected noise");
  auto* sparsity = experiment->add_subcommand("sparsity", "AUC with training logs deleted");
  auto* sensitivity = experiment->add_subcommand("sensitivity", "AUC per hyper-node count");
  auto* ablation = experiment->add_subcommand("ablation", "AUC per model variant");
  for (auto* sub : {robustness, sparsity, sensitivity, ablation}) add_run_options(*sub, flags, config_path, true);
  robustness->add_option("--ratios", values, "noise ratios")->delimiter(',')->required();
  sparsity->add_option("--fractions", values, "deleted fractions")->delimiter(',')->required();
  sensitivity->remove_option(sensitivity->get_option("--P"));
  sensitivity->add_option("--P", hyper_nodes, "hyper-node counts")->delimiter(',')->required();
  ablation->add_option("--variants", variants, "variants to run (default: all eight)")->delimiter(',');

  std::size_t n = 200, m = 100, k = 10, per = 50;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with known mastery");
  synth->add_option("--N", n, "students");
  synth->add_option("--M", m, "exercises");
  synth->add_option("--K", k, "concepts");
  synth->add_option("--logs-per-student", per);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* exporter = app.add_subcommand("export-metagraph", "print the learned path structure of a checkpoint");
  exporter->add_option("--checkpoint", flags.checkpoint)->required();
  exporter->add_option("--out", flags.out, "also write metagraph.json (and .dot) here");
  exporter->add_flag("--dot", dot, "emit DOT instead of JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(resolve(config_path, flags), dot, out, err);
    if (*eval) return cmd_eval(resolve(config_path, flags), eval_split, out);
    if (*diagnose) return cmd_diagnose(resolve(config_path, flags), students, all, out);
    if (*synth) return cmd_synth(n, m, k, per, synth_seed, synth_out, out);
    if (*exporter) return cmd_export(flags, dot, out);
    for (auto* sub : {robustness, sparsity, sensitivity, ablation})
      if (*sub) return cmd_experiment(resolve(config_path, flags), sub->get_name(), values, hyper_nodes, variants,
                                      out, err);
  } catch (const Error& e) {
    err << "disengcd: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "disengcd: config error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace disengcd::cli
