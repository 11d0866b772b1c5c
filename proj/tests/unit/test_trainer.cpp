#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "disengcd/trainer.hpp"
#include "support.hpp"

using namespace disengcd;
using testing_support::error_kind_of;

namespace {

struct Splits {
  Dataset train, val;
};

Splits small_splits(std::size_t n = 30, std::size_t m = 20, std::size_t k = 5, std::size_t per = 10,
                    std::uint64_t seed = 3) {
  auto s = split(generate_synthetic(n, m, k, per, seed).dataset, {});
  return {std::move(s.train), std::move(s.val)};
}

TrainConfig small_config(std::size_t epochs = 3) {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.batch_size = 64;
  c.max_epochs = epochs;
  c.patience = 100;
  c.seed = 5;
  c.model.hyper_nodes = 3;
  c.model.gat_layers = 1;
  return c;
}

ModelDims dims_of(const Dataset& d) { return {d.n_students, d.n_exercises, d.n_concepts}; }

Batch batch_of(const Dataset& d) {
  std::vector<std::size_t> picks(d.logs.size());
  for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
  return make_batch(d.logs, picks);
}

TrainState trained_state() {
  const auto s = small_splits();
  return train_bilevel(s.train, s.val, small_config(2)).best;
}

}  // namespace

TEST(Train, ZeroEpochsLeavesInitialization) {
  const auto s = small_splits();
  auto c = small_config(0);
  const auto r = train_bilevel(s.train, s.val, c);
  EXPECT_TRUE(r.history.empty());
  const auto init = initial_state(c, dims_of(s.train));
  for (const auto& [name, m] : init.model.omega) EXPECT_EQ(r.best.model.omega.at(name).values(), m.values()) << name;
  EXPECT_EQ(r.best.model.meta.alpha.values(), init.model.meta.alpha.values());
}

TEST(Train, OmegaStepLeavesAlphaUntouched) {
  const auto s = small_splits();
  auto c = small_config();
  c.model.lambda = 0.0;  // keep every path so both blocks of weights reach the loss
  auto state = initial_state(c, dims_of(s.train));
  const auto graphs = ModelGraphs::build(s.train);
  const auto alpha = state.model.meta.alpha.values();
  const auto w = state.model.omega.at("student.W_S").values();
  omega_step(state, graphs, batch_of(s.train));
  EXPECT_EQ(state.model.meta.alpha.values(), alpha);
  EXPECT_NE(state.model.omega.at("student.W_S").values(), w);
}

TEST(Train, AlphaStepLeavesOmegaUntouched) {
  const auto s = small_splits();
  auto c = small_config();
  c.model.lambda = 0.0;  // keep every path so both blocks of weights reach the loss
  auto state = initial_state(c, dims_of(s.train));
  const auto graphs = ModelGraphs::build(s.train);
  const auto before = state.model.omega;
  const auto alpha = state.model.meta.alpha.values();
  alpha_step(state, graphs, batch_of(s.val));
  for (const auto& [name, m] : before) EXPECT_EQ(state.model.omega.at(name).values(), m.values()) << name;
  EXPECT_NE(state.model.meta.alpha.values(), alpha);
}

TEST(Train, SameSeedGivesIdenticalHistory) {
  const auto s = small_splits();
  const auto a = train_bilevel(s.train, s.val, small_config());
  const auto b = train_bilevel(s.train, s.val, small_config());
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_EQ(a.best.model.meta.alpha.values(), b.best.model.meta.alpha.values());
  auto other = small_config();
  other.seed = 6;
  EXPECT_NE(history_csv(train_bilevel(s.train, s.val, other).history), history_csv(a.history));
}

TEST(Train, BestStateHasTheHighestValidationAuc) {
  const auto s = small_splits(40, 25, 5, 12, 8);
  auto c = small_config(12);
  c.learning_rate = 5e-2;
  std::vector<TrainState> states;
  const auto r = train_bilevel(s.train, s.val, c, [&](const EpochRecord&, const TrainState& st) { states.push_back(st); });
  ASSERT_EQ(states.size(), r.history.size());
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < r.history.size(); ++i)
    if (*r.history[i].val_auc > *r.history[argmax].val_auc) argmax = i;
  EXPECT_EQ(r.best.epoch, argmax + 1);
  EXPECT_EQ(r.best.model.meta.alpha.values(), states[argmax].model.meta.alpha.values());
  const auto graphs = ModelGraphs::build(s.train);
  const auto preds = predict_logs(r.best.model, graphs, s.val.logs);
  EXPECT_EQ(*metrics(preds, labels_of(s.val.logs)).auc, *r.history[argmax].val_auc);
}

TEST(Train, PatienceStopsEarly) {
  const auto s = small_splits();
  auto c = small_config(50);
  c.patience = 2;
  const auto r = train_bilevel(s.train, s.val, c);
  EXPECT_LT(r.history.size(), 50u);
  EXPECT_EQ(r.history.size(), r.best.epoch + c.patience);
}

TEST(Train, DivergenceKeepsLastFiniteState) {
  const auto s = small_splits();
  auto c = small_config(3);
  c.learning_rate = 1e300;
  const auto r = train_bilevel(s.train, s.val, c);
  ASSERT_TRUE(r.diverged);
  EXPECT_FALSE(r.divergence.empty());
  ASSERT_TRUE(r.last_finite.has_value());
  for (const auto& [name, m] : r.last_finite->model.omega)
    for (double v : m.values()) ASSERT_TRUE(std::isfinite(v)) << name;
}

TEST(Train, EmptySplitsAreValidationErrors) {
  const auto s = small_splits();
  EXPECT_EQ(error_kind_of([&] { train_bilevel(s.train.with_logs({}), s.val, small_config()); }),
            ErrorKind::validation);
  EXPECT_EQ(error_kind_of([&] { train_bilevel(s.train, s.val.with_logs({}), small_config()); }),
            ErrorKind::validation);
}

TEST(Train, LossDecreasesOnSyntheticData) {
  auto s = split(generate_synthetic(200, 100, 10, 20, 0).dataset, {});
  TrainConfig c;
  c.learning_rate = 5e-3;
  c.max_epochs = 30;
  c.patience = 100;
  c.model.hyper_nodes = 3;
  c.model.gat_layers = 1;
  const auto r = train_bilevel(s.train, s.val, c);
  ASSERT_FALSE(r.diverged);
  ASSERT_EQ(r.history.size(), 30u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(TrainConfigTest, JsonRoundTripAndChecks) {
  auto c = small_config();
  c.noise_ratio = 0.3;
  c.delete_fraction = 0.2;
  EXPECT_EQ(to_json(train_config_from_json(nlohmann::json::parse(to_json(c).dump()))), to_json(c));
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.learning_rate = 0; }, [](TrainConfig& t) { t.batch_size = 0; },
           [](TrainConfig& t) { t.model.hyper_nodes = 1; }, [](TrainConfig& t) { t.model.lambda = 1.5; },
           [](TrainConfig& t) { t.noise_ratio = -0.1; }, [](TrainConfig& t) { t.delete_fraction = 1.0; }}) {
    auto bad = small_config();
    mutate(bad);
    EXPECT_EQ(error_kind_of([&] { bad.check(); }), ErrorKind::config);
  }
}

TEST(History, CsvHeaderAndBlankAuc) {
  std::vector<EpochRecord> h{{1, 0.5, 0.6, 0.7, 0.4, 0.8}, {2, 0.4, 0.5, 0.7, 0.4, std::nullopt}};
  const auto csv = history_csv(h);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,val_acc,val_rmse,val_auc");
  EXPECT_EQ(csv.substr(csv.rfind(',', csv.size() - 2)), ",\n");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto state = trained_state();
  const auto s = small_splits();
  const auto dir = testing_support::temp_dir("ckpt");
  save_checkpoint(state, dir / "c.bin", {{"note", "x"}});
  const auto loaded = load_checkpoint(dir / "c.bin");
  EXPECT_EQ(loaded.metadata.at("note"), "x");
  EXPECT_EQ(loaded.state.epoch, state.epoch);
  EXPECT_EQ(loaded.state.rng_state, state.rng_state);
  EXPECT_EQ(to_json(loaded.state.config), to_json(state.config));
  for (const auto& [name, m] : state.model.omega)
    EXPECT_EQ(loaded.state.model.omega.at(name).values(), m.values()) << name;
  EXPECT_EQ(loaded.state.adam_omega.step, state.adam_omega.step);
  const auto graphs = ModelGraphs::build(s.train);
  EXPECT_EQ(predict_logs(loaded.state.model, graphs, s.val.logs), predict_logs(state.model, graphs, s.val.logs));
  EXPECT_EQ(checkpoint_bytes(loaded.state, loaded.metadata), checkpoint_bytes(state, {{"note", "x"}}));
}

TEST(Checkpoint, TruncatedFileIsParseError) {
  const auto bytes = checkpoint_bytes(trained_state());
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_EQ(error_kind_of([&] { checkpoint_from_bytes(bytes.substr(0, cut)); }), ErrorKind::parse) << cut;
}

TEST(Checkpoint, BadMagicAndTrailingBytesAreRejected) {
  auto bytes = checkpoint_bytes(trained_state());
  EXPECT_EQ(error_kind_of([&] { checkpoint_from_bytes(bytes + "x"); }), ErrorKind::parse);
  bytes[0] = 'X';
  EXPECT_EQ(error_kind_of([&] { checkpoint_from_bytes(bytes); }), ErrorKind::parse);
}

TEST(Checkpoint, VersionMismatchNamesBothVersions) {
  auto bytes = checkpoint_bytes(trained_state());
  const auto pos = bytes.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 10] = '7';
  std::string msg;
  EXPECT_EQ(error_kind_of([&] { checkpoint_from_bytes(bytes); }, &msg), ErrorKind::parse);
  EXPECT_NE(msg.find("version 7"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected 1"), std::string::npos) << msg;
}

TEST(Checkpoint, DatasetMismatchNamesTheField) {
  const auto state = trained_state();
  const auto s = small_splits();
  EXPECT_NO_THROW(check_compatible(state.model, s.train));
  const auto other = generate_synthetic(30, 20, 6, 10, 3).dataset;
  std::string msg;
  EXPECT_EQ(error_kind_of([&] { check_compatible(state.model, other); }, &msg), ErrorKind::shape);
  EXPECT_NE(msg.find("concepts (K)"), std::string::npos) << msg;
  const auto fewer = generate_synthetic(29, 20, 5, 10, 3).dataset;
  EXPECT_EQ(error_kind_of([&] { check_compatible(state.model, fewer); }, &msg), ErrorKind::shape);
  EXPECT_NE(msg.find("students (N)"), std::string::npos) << msg;
}

TEST(Checkpoint, MissingFileIsConfigError) {
  EXPECT_EQ(error_kind_of([] { load_checkpoint("/nonexistent/dir/c.bin"); }), ErrorKind::config);
}
