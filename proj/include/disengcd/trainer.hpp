#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "disengcd/dataset.hpp"
#include "disengcd/metrics.hpp"
#include "disengcd/model.hpp"
#include "disengcd/numeric/adam.hpp"
#include "disengcd/rng.hpp"

namespace disengcd {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  ModelConfig model;
  double noise_ratio = 0.0;
  double delete_fraction = 0.0;

  void check() const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::config, "learning rate must be > 0");
    require(batch_size >= 1, ErrorKind::config, "batch size must be >= 1");
    require(model.hyper_nodes >= 2, ErrorKind::config, "P must be >= 2");
    require(model.lambda >= 0.0 && model.lambda <= 1.0, ErrorKind::config, "lambda must lie in [0,1]");
    require(noise_ratio >= 0.0 && noise_ratio <= 1.0, ErrorKind::config, "noise ratio must lie in [0,1]");
    require(delete_fraction >= 0.0 && delete_fraction < 1.0, ErrorKind::config,
            "delete fraction must lie in [0,1)");
    model.variant.check();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.learning_rate},   {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},  {"seed", c.seed},             {"model", to_json(c.model)},
          {"noise_ratio", c.noise_ratio}, {"delete_fraction", c.delete_fraction}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.model = model_config_from_json(j.at("model"));
  c.noise_ratio = j.at("noise_ratio").get<double>();
  c.delete_fraction = j.at("delete_fraction").get<double>();
  return c;
}

/// Everything needed to resume or reproduce a model.
struct TrainState {
  TrainConfig config;
  DisenGCD model;
  AdamState adam_omega;
  AdamState adam_alpha;
  std::size_t epoch = 0;
  std::string rng_state;
};

inline TrainState initial_state(const TrainConfig& config, const ModelDims& dims) {
  config.check();
  Rng init(config.seed);
  TrainState s;
  s.config = config;
  s.model = DisenGCD::initialize(config.model, dims, init);
  s.config.model = s.model.config;
  s.adam_omega.learning_rate = config.learning_rate;
  s.adam_alpha.learning_rate = config.learning_rate;
  s.rng_state = Rng(derive_seed(config.seed, 1)).state();
  return s;
}

/// One Adam step on the model weights against a training batch, path weights
/// frozen. Returns the batch loss.
inline double omega_step(TrainState& s, const ModelGraphs& graphs, const Batch& batch) {
  auto lg = build_loss_graph(s.model, graphs, batch, Differentiate::omega);
  const auto values = evaluate(lg.graph, bind_inputs(s.model, lg.forward));
  const auto grads = gradients(lg.graph, values);
  ParamSet g;
  for (const auto& [name, id] : lg.forward.inputs)
    if (name != kAlphaName) g.emplace(name, grads.at(id));
  adam_update(s.model.omega, g, s.adam_omega);
  return values[lg.graph.loss()][0];
}

/// One Adam step on the path weights against a validation batch, model
/// weights frozen. Returns the batch loss.
inline double alpha_step(TrainState& s, const ModelGraphs& graphs, const Batch& batch) {
  auto lg = build_loss_graph(s.model, graphs, batch, Differentiate::alpha);
  const auto values = evaluate(lg.graph, bind_inputs(s.model, lg.forward));
  const double loss = values[lg.graph.loss()][0];
  if (!lg.forward.alpha) return loss;
  const auto grads = gradients(lg.graph, values);
  ParamSet p;
  p.emplace(kAlphaName, std::move(s.model.meta.alpha));
  ParamSet g;
  g.emplace(kAlphaName, grads.at(*lg.forward.alpha));
  try {
    adam_update(p, g, s.adam_alpha);
  } catch (...) {
    s.model.meta.alpha = std::move(p.at(kAlphaName));
    throw;
  }
  s.model.meta.alpha = std::move(p.at(kAlphaName));
  return loss;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_rmse = 0.0;
  std::optional<double> val_auc;
};

struct TrainResult {
  TrainState best;               // state with the highest validation AUC
  std::vector<EpochRecord> history;
  bool diverged = false;
  std::string divergence;        // error message when diverged
  std::optional<TrainState> last_finite;  // end of the last completed epoch, when diverged
};

inline std::vector<int> labels_of(const std::vector<ResponseLog>& logs) {
  std::vector<int> y;
  y.reserve(logs.size());
  for (const auto& l : logs) y.push_back(l.response);
  return y;
}

/// First-order bilevel training: per step, an omega step on a training batch
/// then an alpha step on the next validation batch. Early stopping on
/// validation AUC with the configured patience.
inline TrainResult train_bilevel(const Dataset& train, const Dataset& val, const TrainConfig& config,
                                 const std::function<void(const EpochRecord&, const TrainState&)>& on_epoch = {}) {
  config.check();
  require(!train.logs.empty(), ErrorKind::validation, "training split is empty");
  require(!val.logs.empty(), ErrorKind::validation, "validation split is empty");
  const ModelDims dims{train.n_students, train.n_exercises, train.n_concepts};
  const auto graphs = ModelGraphs::build(train);

  TrainState state = initial_state(config, dims);
  Rng rng;
  rng.set_state(state.rng_state);

  TrainResult result;
  result.best = state;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const auto val_labels = labels_of(val.logs);
  std::vector<double> val_labels_d(val_labels.begin(), val_labels.end());

  std::vector<std::size_t> val_order(val.logs.size());
  std::iota(val_order.begin(), val_order.end(), std::size_t{0});
  std::size_t val_pos = val_order.size();
  auto next_val_batch = [&] {
    std::vector<std::size_t> picks;
    while (picks.size() < std::min(config.batch_size, val_order.size())) {
      if (val_pos == val_order.size()) {
        rng.shuffle(val_order);
        val_pos = 0;
      }
      picks.push_back(val_order[val_pos++]);
    }
    return make_batch(val.logs, picks);
  };

  TrainState epoch_start = state;
  const bool learn_paths = state.model.config.variant.learns_paths();
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    try {
      std::vector<std::size_t> order(train.logs.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      double loss_sum = 0.0;
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const auto n = std::min(config.batch_size, order.size() - b);
        const auto batch = make_batch(train.logs, std::span(order).subspan(b, n));
        loss_sum += omega_step(state, graphs, batch) * static_cast<double>(n);
        if (learn_paths) alpha_step(state, graphs, next_val_batch());
      }
      const auto preds = predict_logs(state.model, graphs, val.logs);
      const auto report = metrics(preds, val_labels, "val");
      EpochRecord rec{epoch,       loss_sum / static_cast<double>(order.size()),
                      bce_loss(preds, val_labels_d), report.acc, report.rmse, report.auc};
      require(std::isfinite(rec.train_loss) && std::isfinite(rec.val_loss), ErrorKind::numeric,
              "loss became non-finite in epoch " + std::to_string(epoch));
      result.history.push_back(rec);
      state.epoch = epoch;
      state.rng_state = rng.state();
      if (on_epoch) on_epoch(rec, state);
      epoch_start = state;
      const double score = rec.val_auc.value_or(-std::numeric_limits<double>::infinity());
      if (epoch == 1 || score > best_score) {
        best_score = score;
        result.best = state;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      result.diverged = true;
      result.divergence = e.what();
      result.last_finite = epoch_start;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "DGCDCKPT", u64 LE header length, JSON header, then the tensors
// listed in the header as little-endian IEEE-754 doubles, row-major.

inline constexpr std::uint64_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'G', 'C', 'D', 'C', 'K', 'P', 'T'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline nlohmann::json adam_header(const AdamState& a) {
  return {{"lr", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}, {"step", a.step}};
}

inline AdamState adam_from_header(const nlohmann::json& j) {
  AdamState a;
  a.learning_rate = j.at("lr").get<double>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.epsilon = j.at("epsilon").get<double>();
  a.step = j.at("step").get<std::uint64_t>();
  return a;
}

}  // namespace detail

/// Serializes a training state. `metadata` is stored verbatim in the header.
inline std::string checkpoint_bytes(const TrainState& s, const nlohmann::json& metadata = nlohmann::json::object()) {
  std::vector<std::pair<std::string, const DenseMatrix*>> tensors;
  for (const auto& [name, m] : s.model.omega) tensors.emplace_back("omega/" + name, &m);
  tensors.emplace_back("alpha", &s.model.meta.alpha);
  for (const auto& [name, mo] : s.adam_omega.moments) {
    tensors.emplace_back("adam_omega/m/" + name, &mo.first);
    tensors.emplace_back("adam_omega/v/" + name, &mo.second);
  }
  for (const auto& [name, mo] : s.adam_alpha.moments) {
    tensors.emplace_back("adam_alpha/m/" + name, &mo.first);
    tensors.emplace_back("adam_alpha/v/" + name, &mo.second);
  }

  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, m] : tensors) list.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  const nlohmann::json header = {
      {"format", "disengcd-checkpoint"},
      {"version", kCheckpointVersion},
      {"config", to_json(s.config)},
      {"dims", {{"students", s.model.dims.students}, {"exercises", s.model.dims.exercises},
                {"concepts", s.model.dims.concepts}}},
      {"epoch", s.epoch},
      {"rng_state", s.rng_state},
      {"adam", {{"omega", detail::adam_header(s.adam_omega)}, {"alpha", detail::adam_header(s.adam_alpha)}}},
      {"metadata", metadata},
      {"tensors", std::move(list)}};
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, 8);
  detail::put_u64(out, text.size());
  out += text;
  for (const auto& [name, m] : tensors)
    for (double v : m->values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

struct LoadedCheckpoint {
  TrainState state;
  nlohmann::json metadata;
};

inline LoadedCheckpoint checkpoint_from_bytes(const std::string& bytes) {
  auto parse_fail = [](const std::string& what) { fail(ErrorKind::parse, "checkpoint: " + what); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    parse_fail("not a checkpoint file or truncated header");
  const std::uint64_t hlen = detail::get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) parse_fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    parse_fail(std::string("malformed header: ") + e.what());
  }

  try {
    const auto version = header.at("version").get<std::uint64_t>();
    require(version == kCheckpointVersion, ErrorKind::parse,
            "checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");

    std::size_t offset = 16 + hlen;
    std::map<std::string, DenseMatrix> tensors;
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      const std::size_t n = rows * cols;
      if ((bytes.size() - offset) / 8 < n) parse_fail("truncated tensor data");
      DenseMatrix m(rows, cols);
      for (std::size_t i = 0; i < n; ++i, offset += 8)
        m[i] = std::bit_cast<double>(detail::get_u64(bytes.data() + offset));
      tensors.emplace(t.at("name").get<std::string>(), std::move(m));
    }
    if (offset != bytes.size()) parse_fail("trailing bytes after tensor data");

    LoadedCheckpoint out;
    auto& s = out.state;
    s.config = train_config_from_json(header.at("config"));
    const auto& d = header.at("dims");
    const ModelDims dims{d.at("students").get<std::size_t>(), d.at("exercises").get<std::size_t>(),
                         d.at("concepts").get<std::size_t>()};
    // Shapes come from a fresh initialization; every stored tensor must match.
    Rng scratch(0);
    s.model = DisenGCD::initialize(s.config.model, dims, scratch);
    for (auto& [name, m] : s.model.omega) {
      auto it = tensors.find("omega/" + name);
      if (it == tensors.end()) parse_fail("missing tensor omega/" + name);
      require(it->second.same_shape(m), ErrorKind::shape,
              "checkpoint tensor '" + name + "' is " + it->second.shape_string() + ", expected " + m.shape_string());
      m = std::move(it->second);
    }
    auto alpha = tensors.find("alpha");
    if (alpha == tensors.end()) parse_fail("missing tensor alpha");
    require(alpha->second.same_shape(s.model.meta.alpha), ErrorKind::shape,
            "checkpoint tensor 'alpha' is " + alpha->second.shape_string() + ", expected " +
                s.model.meta.alpha.shape_string());
    s.model.meta.alpha = std::move(alpha->second);

    s.adam_omega = detail::adam_from_header(header.at("adam").at("omega"));
    s.adam_alpha = detail::adam_from_header(header.at("adam").at("alpha"));
    for (auto& [key, m] : tensors) {
      for (auto [prefix, state] : {std::pair{std::string("adam_omega/"), &s.adam_omega},
                                   std::pair{std::string("adam_alpha/"), &s.adam_alpha}}) {
        if (key.rfind(prefix, 0) != 0) continue;
        const auto rest = key.substr(prefix.size());
        if (rest.size() < 2 || rest[1] != '/') parse_fail("bad moment tensor name " + key);
        auto& mo = state->moments[rest.substr(2)];
        (rest[0] == 'm' ? mo.first : mo.second) = std::move(m);
      }
    }
    s.epoch = header.at("epoch").get<std::size_t>();
    s.rng_state = header.at("rng_state").get<std::string>();
    out.metadata = header.value("metadata", nlohmann::json::object());
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("checkpoint: malformed header: ") + e.what());
  }
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::config, "cannot write checkpoint: " + path.string());
  const auto bytes = checkpoint_bytes(s, metadata);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::config, "failed writing checkpoint: " + path.string());
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::config, "cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

/// Throws a shape error naming the first dimension where a checkpointed model
/// and a dataset disagree.
inline void check_compatible(const DisenGCD& m, const Dataset& d) {
  auto same = [](const char* field, std::size_t ck, std::size_t ds) {
    require(ck == ds, ErrorKind::shape,
            std::string("checkpoint/dataset mismatch in ") + field + ": checkpoint has " + std::to_string(ck) +
                ", dataset has " + std::to_string(ds));
  };
  same("concepts (K)", m.dims.concepts, d.n_concepts);
  same("exercises (M)", m.dims.exercises, d.n_exercises);
  same("students (N)", m.dims.students, d.n_students);
}

// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,val_acc,val_rmse,val_auc\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           format_double(r.val_acc) + "," + format_double(r.val_rmse) + "," +
           (r.val_auc ? format_double(*r.val_auc) : std::string()) + "\n";
  }
  return out;
}

}  // namespace disengcd
