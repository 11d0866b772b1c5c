#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "disengcd/dataset.hpp"
#include "disengcd/diagnosis.hpp"
#include "disengcd/gat.hpp"
#include "disengcd/graphs.hpp"
#include "disengcd/student_meta.hpp"

namespace disengcd {

/// Where a representation is learned.
enum class Source { interaction, relation, dependency, naive };

enum class StudentMode {
  meta_multigraph,  // learned paths, threshold routing
  meta_graph,       // learned paths, only the top path per edge
  fixed_paths,      // predefined structure, no path learning
  naive,            // student representation is the raw embedding
};

inline const char* to_string(Source s) {
  switch (s) {
    case Source::interaction: return "interaction";
    case Source::relation: return "relation";
    case Source::dependency: return "dependency";
    case Source::naive: return "naive";
  }
  return "?";
}

inline const char* to_string(StudentMode m) {
  switch (m) {
    case StudentMode::meta_multigraph: return "meta_multigraph";
    case StudentMode::meta_graph: return "meta_graph";
    case StudentMode::fixed_paths: return "fixed_paths";
    case StudentMode::naive: return "naive";
  }
  return "?";
}

inline Source source_from_string(const std::string& s) {
  for (auto x : {Source::interaction, Source::relation, Source::dependency, Source::naive})
    if (s == to_string(x)) return x;
  fail(ErrorKind::config, "unknown representation source '" + s + "'");
}

inline StudentMode student_mode_from_string(const std::string& s) {
  for (auto x : {StudentMode::meta_multigraph, StudentMode::meta_graph, StudentMode::fixed_paths, StudentMode::naive})
    if (s == to_string(x)) return x;
  fail(ErrorKind::config, "unknown student mode '" + s + "'");
}

struct VariantSpec {
  std::string name = "full";
  Source student = Source::interaction;
  Source exercise = Source::relation;
  Source knowledge = Source::dependency;
  StudentMode mode = StudentMode::meta_multigraph;

  bool uses_meta_multigraph() const {
    return mode != StudentMode::naive &&
           (student == Source::interaction || exercise == Source::interaction || knowledge == Source::interaction);
  }
  bool learns_paths() const {
    return uses_meta_multigraph() && (mode == StudentMode::meta_multigraph || mode == StudentMode::meta_graph);
  }

  void check() const {
    require(student == Source::interaction || student == Source::naive, ErrorKind::config,
            std::string("variant '") + name + "': students exist only in the interaction graph");
    require(exercise != Source::dependency, ErrorKind::config,
            std::string("variant '") + name + "': exercises are not part of the dependency graph");
    require((student == Source::naive) == (mode == StudentMode::naive), ErrorKind::config,
            std::string("variant '") + name + "': naive student source and naive mode go together");
    require(mode != StudentMode::naive || (exercise != Source::interaction && knowledge != Source::interaction),
            ErrorKind::config,
            std::string("variant '") + name + "': interaction-graph representations need the meta multigraph");
  }
};

/// Named variants: the graph-assignment ablations and the student-module
/// modes (the latter keep the full graph assignment).
inline VariantSpec variant_from_name(const std::string& name) {
  using S = Source;
  VariantSpec v;
  v.name = name;
  if (name == "full") {
  } else if (name == "disengcd_i") {
    v.exercise = S::interaction;
    v.knowledge = S::interaction;
  } else if (name == "is_rec") {
    v.exercise = S::relation;
    v.knowledge = S::relation;
  } else if (name == "ise_rc") {
    v.exercise = S::interaction;
    v.knowledge = S::relation;
  } else if (name == "isc_re") {
    v.exercise = S::relation;
    v.knowledge = S::interaction;
  } else if (name == "naive") {
    v.student = S::naive;
    v.mode = StudentMode::naive;
  } else if (name == "mp") {
    v.mode = StudentMode::fixed_paths;
  } else if (name == "mg") {
    v.mode = StudentMode::meta_graph;
  } else {
    fail(ErrorKind::config, "unknown variant '" + name +
                                "' (expected full, disengcd_i, is_rec, ise_rc, isc_re, naive, mp or mg)");
  }
  v.check();
  return v;
}

inline const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names = {"full", "disengcd_i", "is_rec", "ise_rc",
                                                 "isc_re", "naive",      "mp",     "mg"};
  return names;
}

struct ModelConfig {
  std::size_t hyper_nodes = 5;
  std::size_t gat_layers = 2;
  double lambda = 0.8;
  std::size_t dim = 0;  // 0 means "number of concepts"
  VariantSpec variant;
  std::optional<MetaGraphExport> fixed_structure;  // for StudentMode::fixed_paths
};

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j = {{"P", c.hyper_nodes},
                      {"L", c.gat_layers},
                      {"lambda", c.lambda},
                      {"dim", c.dim},
                      {"variant",
                       {{"name", c.variant.name},
                        {"student", to_string(c.variant.student)},
                        {"exercise", to_string(c.variant.exercise)},
                        {"concept", to_string(c.variant.knowledge)},
                        {"mode", to_string(c.variant.mode)}}}};
  j["fixed_structure"] = c.fixed_structure ? to_json(*c.fixed_structure) : nlohmann::json(nullptr);
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hyper_nodes = j.at("P").get<std::size_t>();
  c.gat_layers = j.at("L").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.dim = j.at("dim").get<std::size_t>();
  const auto& v = j.at("variant");
  c.variant.name = v.at("name").get<std::string>();
  c.variant.student = source_from_string(v.at("student").get<std::string>());
  c.variant.exercise = source_from_string(v.at("exercise").get<std::string>());
  c.variant.knowledge = source_from_string(v.at("concept").get<std::string>());
  c.variant.mode = student_mode_from_string(v.at("mode").get<std::string>());
  if (j.contains("fixed_structure") && !j.at("fixed_structure").is_null())
    c.fixed_structure = metagraph_from_json(j.at("fixed_structure"));
  return c;
}

struct ModelDims {
  std::size_t students = 0;
  std::size_t exercises = 0;
  std::size_t concepts = 0;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Graph-side inputs derived from the training split.
struct ModelGraphs {
  InteractionGraph interaction;
  RelationGraph relation;
  DependencyGraph dependency;
  std::shared_ptr<const SparseMatrix> q_norm;
  std::shared_ptr<const SparseMatrix> q_matrix;

  static ModelGraphs build(const Dataset& train) {
    ModelGraphs m;
    m.interaction = build_interaction_graph(train);
    m.relation = disentangle_relation_graph(m.interaction);
    m.dependency = disentangle_dependency_graph(m.relation);
    m.q_norm = normalized_q(*train.q_matrix);
    m.q_matrix = train.q_matrix;
    return m;
  }
};

inline constexpr const char* kAlphaName = "meta.alpha";

/// All trainable state: model weights (omega) and path weights (alpha).
struct DisenGCD {
  ModelConfig config;
  ModelDims dims;
  ParamSet omega;
  MetaMultigraph meta;

  std::size_t dim() const { return config.dim; }

  static DisenGCD initialize(ModelConfig config, const ModelDims& dims, Rng& rng) {
    if (config.dim == 0) config.dim = dims.concepts;
    require(config.dim == dims.concepts, ErrorKind::config,
            "dimension d must equal the number of concepts (d=" + std::to_string(config.dim) +
                ", K=" + std::to_string(dims.concepts) + ")");
    config.variant.check();
    if (config.variant.mode == StudentMode::fixed_paths) {
      if (!config.fixed_structure) config.fixed_structure = default_fixed_structure(config.hyper_nodes);
      require(config.fixed_structure->hyper_nodes == config.hyper_nodes, ErrorKind::config,
              "fixed path structure has P=" + std::to_string(config.fixed_structure->hyper_nodes) +
                  " but the model has P=" + std::to_string(config.hyper_nodes));
    }
    const std::size_t d = config.dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    DisenGCD m;
    m.config = config;
    m.dims = dims;
    auto uniform = [&](std::size_t r, std::size_t c) {
      DenseMatrix x(r, c);
      for (auto& v : x.values()) v = rng.uniform(-bound, bound);
      return x;
    };
    m.omega["student.W_S"] = uniform(dims.students, d);
    m.omega["student.W_E"] = uniform(dims.exercises, d);
    m.omega["student.W_C"] = uniform(dims.concepts, d);
    m.omega["exercise.W_E"] = uniform(dims.exercises, d);
    m.omega["exercise.W_C"] = uniform(dims.concepts, d);
    m.omega["concept.W_C"] = uniform(dims.concepts, d);
    for (std::size_t l = 0; l < config.gat_layers; ++l)
      for (auto ctx : {AttentionContext::exercise_from_concept, AttentionContext::concept_from_exercise,
                       AttentionContext::concept_from_concept, AttentionContext::dependency}) {
        m.omega[attention_weight_name(ctx, l)] = uniform(2 * d, 1);
        m.omega[attention_bias_name(ctx, l)] = uniform(1, 1);
      }
    for (const char* layer : kHeadLayers) {
      m.omega[std::string(layer) + ".W"] = uniform(d, d);
      m.omega[std::string(layer) + ".b"] = uniform(1, d);
    }
    m.meta = MetaMultigraph::initialized(config.hyper_nodes, config.lambda, rng);
    return m;
  }

  /// The routing used by the forward pass in the current state.
  std::optional<RoutingPlan> routing() const {
    if (!config.variant.uses_meta_multigraph()) return std::nullopt;
    switch (config.variant.mode) {
      case StudentMode::meta_multigraph: return plan_from_alpha(meta, RoutingMode::threshold);
      case StudentMode::meta_graph: return plan_from_alpha(meta, RoutingMode::top1);
      case StudentMode::fixed_paths: return plan_from_structure(*config.fixed_structure);
      case StudentMode::naive: break;
    }
    return std::nullopt;
  }

  /// The structure actually used by the student module, for export.
  MetaGraphExport structure() const {
    if (config.variant.mode == StudentMode::fixed_paths) return *config.fixed_structure;
    return export_structure(meta, config.variant.mode == StudentMode::meta_graph ? RoutingMode::top1
                                                                                 : RoutingMode::threshold);
  }
};

/// Which parameters become trainable graph inputs.
enum class Differentiate { none, omega, alpha };

struct ForwardNodes {
  NodeId s_bar, e_bar, c_bar;
  std::map<std::string, NodeId> inputs;  // parameter name -> input node
  std::optional<NodeId> alpha;
};

/// Builds the forward pass up to (S, E, C) for the model's variant.
inline ForwardNodes build_forward(ExpressionGraph& g, const DisenGCD& m, const ModelGraphs& graphs,
                                  Differentiate diff, const GatOptions& gat = {}) {
  ForwardNodes f;
  const bool grad_omega = diff == Differentiate::omega;
  auto param = [&](const std::string& name) {
    if (auto it = f.inputs.find(name); it != f.inputs.end()) return it->second;
    const auto& x = m.omega.at(name);
    const NodeId id = g.input(name, x.rows(), x.cols(), grad_omega);
    f.inputs.emplace(name, id);
    return id;
  };
  const auto& v = m.config.variant;

  std::optional<HyperNodeState> top;
  if (v.uses_meta_multigraph()) {
    const HyperNodeState h1{param("student.W_S"), param("student.W_E"), param("student.W_C")};
    auto plan = *m.routing();
    if (plan.weights_from_alpha) {
      f.alpha = g.input(kAlphaName, m.meta.alpha.rows(), m.meta.alpha.cols(), diff == Differentiate::alpha);
      f.inputs.emplace(kAlphaName, *f.alpha);
    }
    top = forward_meta_multigraph(g, graphs.interaction, h1, plan, f.alpha);
  }

  std::optional<ExerciseModuleOutput> rel;
  if (v.exercise == Source::relation || v.knowledge == Source::relation) {
    ExerciseModuleNodes p{param("exercise.W_E"), param("exercise.W_C"), {}, {}, {}};
    for (std::size_t l = 0; l < m.config.gat_layers; ++l) {
      auto att = [&](AttentionContext c) {
        return AttentionNodes{param(attention_weight_name(c, l)), param(attention_bias_name(c, l))};
      };
      p.ec.push_back(att(AttentionContext::exercise_from_concept));
      p.ce.push_back(att(AttentionContext::concept_from_exercise));
      p.cc.push_back(att(AttentionContext::concept_from_concept));
    }
    rel = exercise_forward(g, graphs.relation, p, m.config.gat_layers, gat);
  }

  f.s_bar = v.student == Source::naive ? param("student.W_S") : top->s;

  switch (v.exercise) {
    case Source::interaction: f.e_bar = top->e; break;
    case Source::relation: f.e_bar = rel->exercises; break;
    default: f.e_bar = param("exercise.W_E"); break;
  }

  switch (v.knowledge) {
    case Source::interaction: f.c_bar = top->c; break;
    case Source::relation: f.c_bar = rel->concepts; break;
    case Source::dependency: {
      ConceptModuleNodes p{param("concept.W_C"), {}};
      for (std::size_t l = 0; l < m.config.gat_layers; ++l)
        p.dep.push_back({param(attention_weight_name(AttentionContext::dependency, l)),
                         param(attention_bias_name(AttentionContext::dependency, l))});
      f.c_bar = concept_forward(g, graphs.dependency, p, m.config.gat_layers, gat);
      break;
    }
    case Source::naive: f.c_bar = param("concept.W_C"); break;
  }
  return f;
}

inline HeadNodes head_nodes(ExpressionGraph& g, const DisenGCD& m, ForwardNodes& f, Differentiate diff) {
  auto param = [&](const std::string& name) {
    const auto& x = m.omega.at(name);
    const NodeId id = g.input(name, x.rows(), x.cols(), diff == Differentiate::omega);
    f.inputs.emplace(name, id);
    return id;
  };
  HeadNodes h;
  LinearNodes* slots[3] = {&h.si, &h.ej, &h.simi};
  for (int i = 0; i < 3; ++i)
    *slots[i] = {param(std::string(kHeadLayers[i]) + ".W"), param(std::string(kHeadLayers[i]) + ".b")};
  return h;
}

inline Bindings bind_inputs(const DisenGCD& m, const ForwardNodes& f) {
  Bindings b;
  for (const auto& [name, id] : f.inputs) {
    if (name == kAlphaName)
      b.bind(id, m.meta.alpha);
    else
      b.bind(id, m.omega.at(name));
  }
  return b;
}

/// Loss graph for one batch: forward pass, head, mean BCE.
struct LossGraph {
  ExpressionGraph graph;
  ForwardNodes forward;
  NodeId predictions;
};

inline LossGraph build_loss_graph(const DisenGCD& m, const ModelGraphs& graphs, const Batch& batch,
                                  Differentiate diff) {
  LossGraph lg;
  lg.forward = build_forward(lg.graph, m, graphs, diff);
  const auto head = head_nodes(lg.graph, m, lg.forward, diff);
  lg.predictions = predict_batch(lg.graph, lg.forward.s_bar, lg.forward.e_bar, lg.forward.c_bar, graphs.q_norm,
                                 batch, head);
  lg.graph.set_loss(lg.graph.bce(lg.predictions, batch.labels));
  return lg;
}

/// Evaluated summary representations S (N x d), E (M x d), C (K x d).
struct Representations {
  DenseMatrix students;
  DenseMatrix exercises;
  DenseMatrix concepts;
};

inline Representations representations(const DisenGCD& m, const ModelGraphs& graphs) {
  ExpressionGraph g;
  const auto f = build_forward(g, m, graphs, Differentiate::none);
  const auto values = evaluate(g, bind_inputs(m, f));
  return {values[f.s_bar], values[f.e_bar], values[f.c_bar]};
}

/// Probabilities for the given logs, computed outside the expression graph.
inline std::vector<double> predict_logs(const DisenGCD& m, const ModelGraphs& graphs,
                                        const std::vector<ResponseLog>& logs) {
  const auto reps = representations(m, graphs);
  const auto head = HeadParams::from(m.omega);
  std::vector<double> out;
  out.reserve(logs.size());
  std::vector<std::size_t> concepts;
  for (const auto& l : logs) {
    concepts.clear();
    for (auto e = graphs.q_matrix->row_begin(l.exercise); e < graphs.q_matrix->row_end(l.exercise); ++e)
      concepts.push_back(graphs.q_matrix->col(e));
    out.push_back(
        predict(reps.students.row(l.student), reps.exercises.row(l.exercise), reps.concepts, concepts, head)
            .probability);
  }
  return out;
}

}  // namespace disengcd
