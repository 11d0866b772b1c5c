#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "disengcd/dataset.hpp"
#include "disengcd/metrics.hpp"
#include "disengcd/trainer.hpp"

namespace disengcd {

/// FNV-1a 64 over the compact JSON dump, as 16 hex digits.
inline std::string config_digest(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = {{"split", r.split}, {"n_examples", r.n_examples}, {"acc", r.acc}, {"rmse", r.rmse}};
  j["auc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr);
  j["config_digest"] = r.config_digest;
  return j;
}

struct PreparedSplits {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::string> warnings;
};

/// Split, then noise on train and val, then deletion on train. The test split
/// stays clean.
inline PreparedSplits prepare_splits(const Dataset& d, const SplitSpec& spec, const TrainConfig& config) {
  auto s = split(d, spec);
  PreparedSplits p{std::move(s.train), std::move(s.val), std::move(s.test), std::move(s.warnings)};
  if (config.noise_ratio > 0.0) {
    p.train = inject_noise(p.train, config.noise_ratio, derive_seed(config.seed, 101));
    p.val = inject_noise(p.val, config.noise_ratio, derive_seed(config.seed, 102));
    for (auto* part : {&p.train, &p.val})
      p.warnings.insert(p.warnings.end(), part->warnings.begin(), part->warnings.end());
  }
  if (config.delete_fraction > 0.0)
    p.train = delete_records(p.train, config.delete_fraction, derive_seed(config.seed, 103));
  return p;
}

struct RunOutcome {
  TrainResult training;
  MetricReport test;
  double seconds = 0.0;
};

inline MetricReport evaluate_split(const DisenGCD& model, const ModelGraphs& graphs, const Dataset& part,
                                   const std::string& label) {
  require(!part.logs.empty(), ErrorKind::validation, "split '" + label + "' has no logs");
  const auto preds = predict_logs(model, graphs, part.logs);
  return metrics(preds, labels_of(part.logs), label);
}

/// Trains from scratch on prepared splits and scores the best state on test.
inline RunOutcome run_once(const PreparedSplits& splits, const TrainConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  RunOutcome out;
  out.training = train_bilevel(splits.train, splits.val, config);
  const auto graphs = ModelGraphs::build(splits.train);
  out.test = evaluate_split(out.training.best.model, graphs, splits.test, "test");
  out.test.config_digest = config_digest(to_json(config));
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Worker count from DISENGCD_THREADS; 1 when unset or invalid.
inline std::size_t worker_threads() {
  const char* env = std::getenv("DISENGCD_THREADS");
  if (!env) return 1;
  try {
    const auto n = std::stoul(env);
    return n == 0 ? 1 : n;
  } catch (const std::exception&) {
    return 1;
  }
}

/// Runs `jobs[i]()` for every i on up to `threads` workers. Results land in
/// job order regardless of scheduling; the first failure is rethrown.
template <class Result>
std::vector<Result> run_jobs(const std::vector<std::function<Result()>>& jobs, std::size_t threads) {
  std::vector<Result> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        results[i] = jobs[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = std::min(threads, jobs.size());
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

struct ExperimentRow {
  std::string parameter;  // name of the swept quantity
  std::string value;      // its value for this row
  std::string variant;
  MetricReport test;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  bool diverged = false;
  double seconds = 0.0;  // wall clock; kept out of report files
};

struct Experiment {
  std::string name;
  std::vector<ExperimentRow> rows;
};

namespace detail {

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline ExperimentRow row_from(const RunOutcome& o, std::string parameter, std::string value,
                              const TrainConfig& config) {
  return {std::move(parameter), std::move(value), config.model.variant.name, o.test,
          o.training.history.size(), o.training.best.epoch, o.training.diverged, o.seconds};
}

inline Experiment sweep(std::string name, std::string parameter, const Dataset& d, const SplitSpec& spec,
                        const std::vector<std::pair<std::string, TrainConfig>>& settings, std::size_t threads) {
  std::vector<std::function<ExperimentRow()>> jobs;
  for (const auto& [value, config] : settings) {
    jobs.push_back([&d, &spec, parameter, value, config] {
      const auto splits = prepare_splits(d, spec, config);
      return row_from(run_once(splits, config), parameter, value, config);
    });
  }
  return {std::move(name), run_jobs(jobs, threads)};
}

}  // namespace detail

/// One training run per noise ratio, evaluated on the clean test split.
inline Experiment robustness_experiment(const Dataset& d, const SplitSpec& spec, const TrainConfig& base,
                                        const std::vector<double>& ratios, std::size_t threads = 1) {
  std::vector<std::pair<std::string, TrainConfig>> settings;
  for (double r : ratios) {
    require(r >= 0.0 && r <= 1.0, ErrorKind::config, "noise ratios must lie in [0,1]");
    auto c = base;
    c.noise_ratio = r;
    settings.emplace_back(detail::format_value(r), c);
  }
  return detail::sweep("robustness", "noise_ratio", d, spec, settings, threads);
}

/// One training run per fraction of training logs deleted.
inline Experiment sparsity_experiment(const Dataset& d, const SplitSpec& spec, const TrainConfig& base,
                                      const std::vector<double>& fractions, std::size_t threads = 1) {
  std::vector<std::pair<std::string, TrainConfig>> settings;
  for (double f : fractions) {
    require(f >= 0.0 && f < 1.0, ErrorKind::config, "delete fractions must lie in [0,1)");
    auto c = base;
    c.delete_fraction = f;
    settings.emplace_back(detail::format_value(f), c);
  }
  return detail::sweep("sparsity", "delete_fraction", d, spec, settings, threads);
}

/// One training run per hyper-node count, all with the same seed.
inline Experiment sensitivity_experiment(const Dataset& d, const SplitSpec& spec, const TrainConfig& base,
                                         const std::vector<std::size_t>& hyper_nodes, std::size_t threads = 1) {
  std::vector<std::pair<std::string, TrainConfig>> settings;
  for (auto p : hyper_nodes) {
    require(p >= 2, ErrorKind::config, "hyper-node counts must be >= 2");
    auto c = base;
    c.model.hyper_nodes = p;
    if (c.model.fixed_structure && c.model.fixed_structure->hyper_nodes != p) c.model.fixed_structure.reset();
    settings.emplace_back(std::to_string(p), c);
  }
  return detail::sweep("sensitivity", "P", d, spec, settings, threads);
}

/// One training run per named variant.
inline Experiment ablation_experiment(const Dataset& d, const SplitSpec& spec, const TrainConfig& base,
                                      const std::vector<std::string>& variants = ablation_variant_names(),
                                      std::size_t threads = 1) {
  std::vector<std::pair<std::string, TrainConfig>> settings;
  for (const auto& name : variants) {
    auto c = base;
    c.model.variant = variant_from_name(name);
    if (c.model.variant.mode != StudentMode::fixed_paths) c.model.fixed_structure.reset();
    settings.emplace_back(name, c);
  }
  return detail::sweep("ablation", "variant", d, spec, settings, threads);
}

inline std::string report_csv(const Experiment& e) {
  std::string out = "experiment,parameter,value,variant,acc,rmse,auc,n_examples,epochs,best_epoch,diverged\n";
  for (const auto& r : e.rows) {
    out += e.name + "," + r.parameter + "," + r.value + "," + r.variant + "," + format_double(r.test.acc) + "," +
           format_double(r.test.rmse) + "," + (r.test.auc ? format_double(*r.test.auc) : std::string()) + "," +
           std::to_string(r.test.n_examples) + "," + std::to_string(r.epochs_run) + "," +
           std::to_string(r.best_epoch) + "," + (r.diverged ? "1" : "0") + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const Experiment& e, const std::string& digest) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : e.rows) {
    rows.push_back({{"parameter", r.parameter},
                    {"value", r.value},
                    {"variant", r.variant},
                    {"metrics", to_json(r.test)},
                    {"epochs", r.epochs_run},
                    {"best_epoch", r.best_epoch},
                    {"diverged", r.diverged}});
  }
  return {{"experiment", e.name}, {"config_digest", digest}, {"rows", std::move(rows)}};
}

/// Writes report_<experiment>_<digest>.csv and .json into `dir`; returns the
/// CSV path.
inline std::filesystem::path write_report(const Experiment& e, const std::string& digest,
                                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto stem = "report_" + e.name + "_" + digest;
  const auto csv_path = dir / (stem + ".csv");
  std::ofstream(csv_path, std::ios::binary) << report_csv(e);
  std::ofstream(dir / (stem + ".json"), std::ios::binary) << report_json(e, digest).dump(2) << "\n";
  return csv_path;
}

}  // namespace disengcd
