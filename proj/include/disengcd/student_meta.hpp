#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "disengcd/graphs.hpp"
#include "disengcd/numeric/expression.hpp"
#include "disengcd/rng.hpp"

namespace disengcd {

/// Candidate propagation paths between two hyper-nodes.
enum class PathType { a_se, a_es, a_ek, a_ke, a_kk, identity, zero };

inline constexpr std::size_t kPathCount = 7;
inline constexpr std::array<PathType, kPathCount> kAllPaths = {
    PathType::a_se, PathType::a_es,     PathType::a_ek, PathType::a_ke,
    PathType::a_kk, PathType::identity, PathType::zero};

inline const char* to_string(PathType p) {
  switch (p) {
    case PathType::a_se: return "A_se";
    case PathType::a_es: return "A_es";
    case PathType::a_ek: return "A_ek";
    case PathType::a_ke: return "A_ke";
    case PathType::a_kk: return "A_kk";
    case PathType::identity: return "I";
    case PathType::zero: return "zero";
  }
  return "?";
}

inline PathType path_from_string(const std::string& s) {
  for (auto p : kAllPaths)
    if (s == to_string(p)) return p;
  fail(ErrorKind::config, "unknown path type '" + s + "'");
}

enum class Block { student, exercise, knowledge };

/// The node type a relation path writes into; nullopt for I and zero.
inline std::optional<Block> target_block(PathType p) {
  switch (p) {
    case PathType::a_es: return Block::student;
    case PathType::a_se:
    case PathType::a_ke: return Block::exercise;
    case PathType::a_ek:
    case PathType::a_kk: return Block::knowledge;
    default: return std::nullopt;
  }
}

/// Edges (u, v), 1 <= u < v <= P, are stored ordered by v then u.
inline std::size_t edge_count(std::size_t hyper_nodes) { return hyper_nodes * (hyper_nodes - 1) / 2; }

inline std::size_t edge_index(std::size_t u, std::size_t v) {
  require(u >= 1 && u < v, ErrorKind::contract,
          "invalid hyper-node edge (" + std::to_string(u) + "," + std::to_string(v) + ")");
  return (v - 1) * (v - 2) / 2 + (u - 1);
}

/// P hyper-nodes and raw (pre-softmax) path weights, one row of 7 per edge.
struct MetaMultigraph {
  std::size_t hyper_nodes = 5;
  double lambda = 0.8;
  DenseMatrix alpha;

  static MetaMultigraph initialized(std::size_t hyper_nodes, double lambda, Rng& rng) {
    require(hyper_nodes >= 2, ErrorKind::config, "meta multigraph needs at least 2 hyper-nodes");
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::config, "lambda must lie in [0,1]");
    MetaMultigraph mg{hyper_nodes, lambda, DenseMatrix(edge_count(hyper_nodes), kPathCount)};
    for (auto& a : mg.alpha.values()) a = rng.uniform(-0.01, 0.01);
    return mg;
  }
};

inline std::array<double, kPathCount> path_softmax(const MetaMultigraph& mg, std::size_t u, std::size_t v) {
  require(v <= mg.hyper_nodes, ErrorKind::contract, "edge target beyond the last hyper-node");
  std::array<double, kPathCount> w{};
  softmax_into(mg.alpha.row(edge_index(u, v)), w);
  return w;
}

/// tau = lambda * max(w) + (1 - lambda) * min(w).
inline double routing_threshold(std::span<const double> weights, double lambda) {
  require(!weights.empty(), ErrorKind::contract, "routing_threshold: no weights");
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::contract, "lambda must lie in [0,1]");
  const auto [mn, mx] = std::minmax_element(weights.begin(), weights.end());
  return lambda * *mx + (1.0 - lambda) * *mn;
}

struct KeptPath {
  PathType type;
  double weight;  // softmax weight, before renormalization

  friend bool operator==(const KeptPath&, const KeptPath&) = default;
};

/// Paths with weight >= tau, in canonical path order. The argmax always
/// survives: tau <= max by construction, and it is forced in case rounding in
/// tau pushes it a hair above the max.
inline std::vector<KeptPath> select_paths(std::span<const double> weights, double tau) {
  require(weights.size() == kPathCount, ErrorKind::contract, "select_paths expects 7 weights");
  const auto best = static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
  std::vector<KeptPath> kept;
  for (std::size_t a = 0; a < kPathCount; ++a)
    if (weights[a] >= tau || a == best) kept.push_back({kAllPaths[a], weights[a]});
  return kept;
}

struct EdgeStructure {
  std::size_t u = 0;
  std::size_t v = 0;
  double tau = 0.0;
  std::vector<KeptPath> paths;

  friend bool operator==(const EdgeStructure&, const EdgeStructure&) = default;
};

/// Kept paths per edge, the serializable form of a routed meta multigraph.
struct MetaGraphExport {
  std::size_t hyper_nodes = 0;
  double lambda = 0.0;
  std::vector<EdgeStructure> edges;  // stored in edge_index order

  friend bool operator==(const MetaGraphExport&, const MetaGraphExport&) = default;
};

enum class RoutingMode {
  threshold,  // keep weights >= tau (meta multigraph)
  top1,       // keep only the argmax path (meta graph)
};

inline MetaGraphExport export_structure(const MetaMultigraph& mg, RoutingMode mode = RoutingMode::threshold) {
  MetaGraphExport out{mg.hyper_nodes, mg.lambda, {}};
  for (std::size_t v = 2; v <= mg.hyper_nodes; ++v)
    for (std::size_t u = 1; u < v; ++u) {
      const auto w = path_softmax(mg, u, v);
      EdgeStructure e{u, v, routing_threshold(w, mg.lambda), {}};
      if (mode == RoutingMode::threshold) {
        e.paths = select_paths(w, e.tau);
      } else {
        const auto best = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
        e.paths = {{kAllPaths[best], w[best]}};
      }
      out.edges.push_back(std::move(e));
    }
  return out;
}

inline nlohmann::json to_json(const MetaGraphExport& x) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : x.edges) {
    nlohmann::json paths = nlohmann::json::array();
    for (const auto& p : e.paths) paths.push_back({{"type", to_string(p.type)}, {"weight", p.weight}});
    edges.push_back({{"u", e.u}, {"v", e.v}, {"tau", e.tau}, {"paths", std::move(paths)}});
  }
  return {{"P", x.hyper_nodes}, {"lambda", x.lambda}, {"edges", std::move(edges)}};
}

/// Parses and validates a structure: every edge of a P-node DAG exactly once,
/// each with at least one known path and finite nonnegative weights.
inline MetaGraphExport metagraph_from_json(const nlohmann::json& j) {
  try {
    MetaGraphExport x;
    x.hyper_nodes = j.at("P").get<std::size_t>();
    x.lambda = j.value("lambda", 0.8);
    require(x.hyper_nodes >= 2, ErrorKind::config, "meta multigraph structure: P must be >= 2");
    x.edges.resize(edge_count(x.hyper_nodes));
    std::vector<char> seen(x.edges.size(), 0);
    for (const auto& je : j.at("edges")) {
      EdgeStructure e;
      e.u = je.at("u").get<std::size_t>();
      e.v = je.at("v").get<std::size_t>();
      require(e.v <= x.hyper_nodes, ErrorKind::config, "meta multigraph structure: edge beyond P");
      e.tau = je.value("tau", 0.0);
      for (const auto& jp : je.at("paths")) {
        const double w = jp.value("weight", 1.0);
        require(std::isfinite(w) && w >= 0.0, ErrorKind::config, "meta multigraph structure: bad path weight");
        e.paths.push_back({path_from_string(jp.at("type").get<std::string>()), w});
      }
      require(!e.paths.empty(), ErrorKind::config, "meta multigraph structure: edge with no paths");
      const auto idx = edge_index(e.u, e.v);
      require(!seen[idx], ErrorKind::config, "meta multigraph structure: duplicate edge");
      seen[idx] = 1;
      x.edges[idx] = std::move(e);
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
      require(seen[i], ErrorKind::config, "meta multigraph structure: missing edge");
    return x;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::config, std::string("meta multigraph structure: ") + ex.what());
  }
}

/// DOT rendering, one line per kept path.
inline std::string to_dot(const MetaGraphExport& x) {
  std::ostringstream os;
  os << "digraph metagraph {\n  rankdir=LR;\n";
  for (std::size_t p = 1; p <= x.hyper_nodes; ++p) os << "  H" << p << ";\n";
  for (const auto& e : x.edges)
    for (const auto& p : e.paths)
      os << "  H" << e.u << " -> H" << e.v << " [label=\"" << to_string(p.type) << " " << p.weight << "\""
         << (p.type == PathType::zero ? ", style=dashed" : "") << "];\n";
  os << "}\n";
  return os.str();
}

/// A predefined chain in the spirit of hand-designed meta-paths: each hop
/// passes concept information into exercises, the last hop passes exercise
/// information into students, and identity keeps the other blocks alive.
/// Skip edges carry only the zero path.
inline MetaGraphExport default_fixed_structure(std::size_t hyper_nodes) {
  require(hyper_nodes >= 2, ErrorKind::config, "meta multigraph needs at least 2 hyper-nodes");
  MetaGraphExport x{hyper_nodes, 0.8, {}};
  for (std::size_t v = 2; v <= hyper_nodes; ++v)
    for (std::size_t u = 1; u < v; ++u) {
      EdgeStructure e{u, v, 0.0, {}};
      if (u + 1 != v)
        e.paths = {{PathType::zero, 1.0}};
      else if (v == hyper_nodes)
        e.paths = {{PathType::a_es, 0.5}, {PathType::identity, 0.5}};
      else
        e.paths = {{PathType::a_ke, 0.5}, {PathType::identity, 0.5}};
      x.edges.push_back(std::move(e));
    }
  return x;
}

/// Graph nodes holding one hyper-node's three blocks.
struct HyperNodeState {
  NodeId s;
  NodeId e;
  NodeId c;
};

/// How the forward pass obtains per-edge kept paths and their weights.
struct RoutingPlan {
  MetaGraphExport structure;
  /// When true, weights are recomputed inside the graph from the alpha node
  /// (so gradients reach alpha); otherwise the structure's weights are used
  /// as constants.
  bool weights_from_alpha = true;
};

inline RoutingPlan plan_from_alpha(const MetaMultigraph& mg, RoutingMode mode) {
  return {export_structure(mg, mode), true};
}

inline RoutingPlan plan_from_structure(MetaGraphExport structure) { return {std::move(structure), false}; }

namespace detail {

/// Per-path weights renormalized over the kept set. Summation and the
/// reciprocal are done the same way on both routes so an imported structure
/// reproduces the alpha-driven forward pass bit for bit.
inline std::vector<NodeId> kept_weights(ExpressionGraph& g, const RoutingPlan& plan, std::size_t edge,
                                        std::optional<NodeId> alpha_softmax) {
  const auto& es = plan.structure.edges[edge];
  std::vector<NodeId> out;
  if (plan.weights_from_alpha) {
    const std::size_t edges = plan.structure.edges.size();
    DenseMatrix mask(edges, kPathCount);
    for (const auto& p : es.paths) mask(edge, static_cast<std::size_t>(p.type)) = 1.0;
    const NodeId total = g.col_sum(g.masked_select(*alpha_softmax, std::move(mask)));
    const NodeId inv = g.reciprocal(total);
    for (const auto& p : es.paths) {
      DenseMatrix one(edges, kPathCount);
      one(edge, static_cast<std::size_t>(p.type)) = 1.0;
      out.push_back(g.mul(g.masked_select(*alpha_softmax, std::move(one)), inv));
    }
  } else {
    double total = 0.0;
    for (const auto& p : es.paths) total += p.weight;
    require(total > 0.0, ErrorKind::config,
            "edge (" + std::to_string(es.u) + "," + std::to_string(es.v) + ") has zero total weight");
    const double inv = 1.0 / total;
    for (const auto& p : es.paths) out.push_back(g.constant(DenseMatrix(1, 1, p.weight * inv), "path weight"));
  }
  return out;
}

}  // namespace detail

/// Output of one path applied to H_u, for the block the path targets.
/// Up(a, b) = a + b and Mess is mean aggregation over the normalized adjacency.
inline NodeId apply_relation_path(ExpressionGraph& g, PathType path, const HyperNodeState& h,
                                  const InteractionGraph& gi) {
  switch (path) {
    case PathType::a_es: return g.add(h.s, g.spmm(gi.a_es, h.e));
    case PathType::a_se: return g.add(h.e, g.spmm(gi.a_se, h.s));
    case PathType::a_ek: return g.add(h.c, g.spmm(gi.relation.a_ek, h.e));
    case PathType::a_ke: return g.add(h.e, g.spmm(gi.relation.a_ke, h.c));
    case PathType::a_kk: return g.add(h.c, g.spmm(gi.relation.a_kk, h.c));
    default: fail(ErrorKind::contract, "apply_relation_path: not a relation path");
  }
}

/// Builds H^(2..P) and returns H^(P). H^(1) is the initial embedding state.
/// Within an edge each block receives the weighted sum of kept relation paths
/// that target it; the identity path fills only blocks no kept relation path
/// targets; the zero path contributes nothing.
inline HyperNodeState forward_meta_multigraph(ExpressionGraph& g, const InteractionGraph& gi,
                                              const HyperNodeState& initial, const RoutingPlan& plan,
                                              std::optional<NodeId> alpha = std::nullopt) {
  const std::size_t P = plan.structure.hyper_nodes;
  require(P >= 2, ErrorKind::contract, "meta multigraph needs at least 2 hyper-nodes");
  require(plan.structure.edges.size() == edge_count(P), ErrorKind::contract, "routing plan edge count mismatch");
  require(!plan.weights_from_alpha || alpha.has_value(), ErrorKind::contract,
          "alpha-driven routing needs the alpha node");
  std::optional<NodeId> alpha_softmax;
  if (plan.weights_from_alpha) alpha_softmax = g.row_softmax(*alpha);

  const auto& s0 = g.node(initial.s);
  const auto& e0 = g.node(initial.e);
  const auto& c0 = g.node(initial.c);
  const std::array<std::pair<std::size_t, std::size_t>, 3> shapes = {
      std::pair{s0.rows, s0.cols}, std::pair{e0.rows, e0.cols}, std::pair{c0.rows, c0.cols}};

  std::vector<HyperNodeState> h{initial};
  for (std::size_t p = 2; p <= P; ++p) {
    std::array<std::optional<NodeId>, 3> acc;
    auto accumulate = [&](Block b, NodeId x) {
      auto& slot = acc[static_cast<std::size_t>(b)];
      slot = slot ? g.add(*slot, x) : x;
    };
    for (std::size_t u = 1; u < p; ++u) {
      const auto idx = edge_index(u, p);
      const auto& es = plan.structure.edges[idx];
      const auto& hu = h[u - 1];
      const auto weights = detail::kept_weights(g, plan, idx, alpha_softmax);
      std::array<bool, 3> targeted{};
      for (const auto& kp : es.paths)
        if (auto b = target_block(kp.type)) targeted[static_cast<std::size_t>(*b)] = true;
      const std::string where = "edge (" + std::to_string(u) + "," + std::to_string(p) + ") ";
      for (std::size_t a = 0; a < es.paths.size(); ++a) {
        const auto type = es.paths[a].type;
        if (type == PathType::zero) continue;
        if (type == PathType::identity) {
          const std::array<NodeId, 3> blocks = {hu.s, hu.e, hu.c};
          for (std::size_t b = 0; b < 3; ++b)
            if (!targeted[b])
              accumulate(static_cast<Block>(b), g.named(g.mul(blocks[b], weights[a]), where + "I"));
          continue;
        }
        const NodeId out = g.named(apply_relation_path(g, type, hu, gi), where + to_string(type) + " update");
        accumulate(*target_block(type), g.named(g.mul(out, weights[a]), where + to_string(type)));
      }
    }
    HyperNodeState next;
    std::array<NodeId*, 3> dst = {&next.s, &next.e, &next.c};
    for (std::size_t b = 0; b < 3; ++b)
      *dst[b] = acc[b] ? *acc[b]
                       : g.constant(DenseMatrix(shapes[b].first, shapes[b].second),
                                    "H(" + std::to_string(p) + ") zero block");
    h.push_back(next);
  }
  return h.back();
}

}  // namespace disengcd
