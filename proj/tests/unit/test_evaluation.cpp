#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "disengcd/evaluation.hpp"
#include "support.hpp"

using namespace disengcd;
using testing_support::error_kind_of;

namespace {

const Dataset& data() {
  static const Dataset d = generate_synthetic(30, 20, 5, 10, 4).dataset;
  return d;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 64;
  c.max_epochs = 2;
  c.patience = 5;
  c.seed = 1;
  c.model.hyper_nodes = 3;
  c.model.gat_layers = 1;
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Digest, StableSixteenHexDigits) {
  const auto j = to_json(quick_config());
  const auto a = config_digest(j);
  EXPECT_EQ(a, config_digest(nlohmann::json::parse(j.dump())));
  ASSERT_EQ(a.size(), 16u);
  EXPECT_EQ(a.find_first_not_of("0123456789abcdef"), std::string::npos);
  auto other = quick_config();
  other.seed = 2;
  EXPECT_NE(config_digest(to_json(other)), a);
}

TEST(Digest, Fnv1aKnownValue) {
  // FNV-1a 64 of the two bytes "{}" (an empty object's compact dump)
  EXPECT_EQ(config_digest(nlohmann::json::object()), "08f44b07b5901a25");
}

TEST(PrepareSplits, NoiseOnlyTouchesTrainAndVal) {
  const auto spec = SplitSpec{};
  auto c = quick_config();
  const auto clean = prepare_splits(data(), spec, c);
  c.noise_ratio = 0.3;
  const auto noisy = prepare_splits(data(), spec, c);
  EXPECT_EQ(noisy.test.logs, clean.test.logs);
  EXPECT_GT(noisy.train.logs.size(), clean.train.logs.size());
  EXPECT_GT(noisy.val.logs.size(), clean.val.logs.size());
  c.noise_ratio = 0.0;
  c.delete_fraction = 0.5;
  const auto sparse = prepare_splits(data(), spec, c);
  EXPECT_LT(sparse.train.logs.size(), clean.train.logs.size());
  EXPECT_EQ(sparse.val.logs, clean.val.logs);
  EXPECT_EQ(sparse.test.logs, clean.test.logs);
}

TEST(RunOnce, ScoresTheBestStateOnTest) {
  const auto splits = prepare_splits(data(), {}, quick_config());
  const auto out = run_once(splits, quick_config());
  EXPECT_EQ(out.test.split, "test");
  EXPECT_EQ(out.test.n_examples, splits.test.logs.size());
  EXPECT_EQ(out.test.config_digest, config_digest(to_json(quick_config())));
  const auto again = evaluate_split(out.training.best.model, ModelGraphs::build(splits.train), splits.test, "test");
  EXPECT_EQ(again.acc, out.test.acc);
  EXPECT_EQ(*again.auc, *out.test.auc);
}

TEST(RunOnce, EmptySplitIsValidationError) {
  const auto splits = prepare_splits(data(), {}, quick_config());
  const auto model = run_once(splits, quick_config()).training.best.model;
  EXPECT_EQ(error_kind_of([&] {
              evaluate_split(model, ModelGraphs::build(splits.train), splits.test.with_logs({}), "test");
            }),
            ErrorKind::validation);
}

TEST(RunJobs, KeepsJobOrderAndRethrows) {
  std::vector<std::function<int()>> jobs;
  for (int i = 0; i < 9; ++i) jobs.push_back([i] { return i * i; });
  for (std::size_t threads : {1u, 3u, 16u}) {
    const auto r = run_jobs(jobs, threads);
    for (int i = 0; i < 9; ++i) EXPECT_EQ(r[i], i * i);
  }
  jobs.push_back([]() -> int { fail(ErrorKind::numeric, "boom"); });
  EXPECT_EQ(error_kind_of([&] { run_jobs(jobs, 2); }), ErrorKind::numeric);
}

TEST(RunJobs, ParallelResultsMatchSerial) {
  const auto spec = SplitSpec{};
  const auto serial = robustness_experiment(data(), spec, quick_config(), {0.0, 0.2}, 1);
  const auto parallel = robustness_experiment(data(), spec, quick_config(), {0.0, 0.2}, 2);
  EXPECT_EQ(report_csv(serial), report_csv(parallel));
}

TEST(Robustness, ZeroNoiseEqualsPlainRun) {
  const auto spec = SplitSpec{};
  const auto e = robustness_experiment(data(), spec, quick_config(), {0.0, 0.1, 0.3, 0.5});
  ASSERT_EQ(e.rows.size(), 4u);
  EXPECT_EQ(e.rows[0].value, "0");
  EXPECT_EQ(e.rows[3].value, "0.5");
  const auto plain = run_once(prepare_splits(data(), spec, quick_config()), quick_config());
  EXPECT_EQ(e.rows[0].test.acc, plain.test.acc);
  EXPECT_EQ(*e.rows[0].test.auc, *plain.test.auc);
  // Every row is scored on the same clean test split.
  for (const auto& r : e.rows) EXPECT_EQ(r.test.n_examples, plain.test.n_examples);
  EXPECT_EQ(error_kind_of([&] { robustness_experiment(data(), spec, quick_config(), {1.5}); }), ErrorKind::config);
}

TEST(Sparsity, OneRowPerFraction) {
  const auto e = sparsity_experiment(data(), {}, quick_config(), {0.0, 0.2});
  ASSERT_EQ(e.rows.size(), 2u);
  EXPECT_EQ(e.rows[1].parameter, "delete_fraction");
  EXPECT_EQ(error_kind_of([&] { sparsity_experiment(data(), {}, quick_config(), {1.0}); }), ErrorKind::config);
}

TEST(Sensitivity, OneRowPerHyperNodeCount) {
  const auto e = sensitivity_experiment(data(), {}, quick_config(), {2, 3, 4, 5});
  ASSERT_EQ(e.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(e.rows[i].parameter, "P");
    EXPECT_EQ(e.rows[i].value, std::to_string(i + 2));
    EXPECT_TRUE(e.rows[i].test.auc.has_value());
  }
  EXPECT_EQ(error_kind_of([&] { sensitivity_experiment(data(), {}, quick_config(), {1}); }), ErrorKind::config);
}

TEST(Ablation, EightVariantRows) {
  auto c = quick_config();
  c.max_epochs = 1;
  const auto e = ablation_experiment(data(), {}, c);
  ASSERT_EQ(e.rows.size(), 8u);
  const auto names = ablation_variant_names();
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(e.rows[i].variant, names[i]);
}

TEST(Reports, CsvColumnsAndFileNames) {
  const auto e = robustness_experiment(data(), {}, quick_config(), {0.0});
  const auto csv = report_csv(e);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "experiment,parameter,value,variant,acc,rmse,auc,n_examples,epochs,best_epoch,diverged");
  EXPECT_EQ(csv.rfind("robustness,noise_ratio,0,full,", csv.find('\n') + 1), csv.find('\n') + 1);
  const auto dir = testing_support::temp_dir("report");
  const auto path = write_report(e, "0123456789abcdef", dir);
  EXPECT_EQ(path.filename(), "report_robustness_0123456789abcdef.csv");
  EXPECT_EQ(read_file(path), csv);
  const auto j = nlohmann::json::parse(read_file(dir / "report_robustness_0123456789abcdef.json"));
  EXPECT_EQ(j.at("config_digest"), "0123456789abcdef");
  EXPECT_EQ(j.at("rows").size(), 1u);
  EXPECT_EQ(j.dump().find("seconds"), std::string::npos);
}

TEST(Reports, MetricJsonHasNullAucForSingleClass) {
  const auto r = metrics(std::vector<double>{0.2, 0.9}, std::vector<int>{1, 1}, "val");
  const auto j = to_json(r);
  EXPECT_TRUE(j.at("auc").is_null());
  EXPECT_EQ(j.at("split"), "val");
}
