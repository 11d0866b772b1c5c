#pragma once

#include <memory>
#include <string>
#include <vector>

#include "disengcd/graphs.hpp"
#include "disengcd/numeric/adam.hpp"
#include "disengcd/numeric/expression.hpp"

namespace disengcd {

/// Attention contexts: which node type attends over which neighbors.
enum class AttentionContext {
  exercise_from_concept,    // exercises attend over their concepts (relation graph)
  concept_from_exercise,    // concepts attend over their exercises (relation graph)
  concept_from_concept,     // concepts attend over prerequisites (relation graph)
  dependency,               // concepts attend over prerequisites (dependency graph)
};

inline const char* to_string(AttentionContext c) {
  switch (c) {
    case AttentionContext::exercise_from_concept: return "ec";
    case AttentionContext::concept_from_exercise: return "ce";
    case AttentionContext::concept_from_concept: return "cc";
    case AttentionContext::dependency: return "dep";
  }
  return "?";
}

inline std::string attention_weight_name(AttentionContext c, std::size_t layer) {
  return std::string(c == AttentionContext::dependency ? "concept" : "exercise") + ".l" +
         std::to_string(layer) + ".att_" + to_string(c) + ".w";
}

inline std::string attention_bias_name(AttentionContext c, std::size_t layer) {
  auto n = attention_weight_name(c, layer);
  n.back() = 'b';
  return n;
}

/// Attention weights of `center` over `neighbors` for a 2d -> 1 linear score
/// F([center, neighbor]) = w . [center, neighbor] + b, softmaxed over neighbors.
/// No neighbors gives no weights.
inline std::vector<double> attention_row(std::span<const double> center,
                                         const std::vector<std::vector<double>>& neighbors,
                                         std::span<const double> w, double b) {
  const std::size_t d = center.size();
  require(w.size() == 2 * d, ErrorKind::shape, "attention_row: weight length must be 2d");
  std::vector<double> logits;
  for (const auto& n : neighbors) {
    require(n.size() == d, ErrorKind::shape, "attention_row: neighbor width mismatch");
    double z = b;
    for (std::size_t i = 0; i < d; ++i) z += w[i] * center[i] + w[d + i] * n[i];
    logits.push_back(z);
  }
  return softmax(logits);
}

/// Sparse pattern plus the index lists used to gather edge endpoints.
struct AttentionPattern {
  SparsePtr pattern;
  std::shared_ptr<const std::vector<std::size_t>> targets;
  std::shared_ptr<const std::vector<std::size_t>> sources;

  static AttentionPattern of(SparsePtr p) {
    AttentionPattern a;
    a.targets = std::make_shared<const std::vector<std::size_t>>(p->entry_rows());
    a.sources = std::make_shared<const std::vector<std::size_t>>(p->col_idx());
    a.pattern = std::move(p);
    return a;
  }
};

struct AttentionNodes {
  NodeId w;  // 2d x 1
  NodeId b;  // 1 x 1
};

/// sum over neighbors of softmax(F([x_t, x_s])) * x_s, for every target row.
inline NodeId attend(ExpressionGraph& g, const AttentionPattern& ap, NodeId targets, NodeId sources,
                     const AttentionNodes& att) {
  const NodeId pair = g.concat_cols(g.gather_rows(targets, ap.targets), g.gather_rows(sources, ap.sources));
  const NodeId logits = g.add(g.matmul(pair, att.w), att.b);
  const NodeId weights = g.segment_softmax(ap.pattern, logits);
  return g.edge_spmm(ap.pattern, weights, sources);
}

struct GatOptions {
  /// Test hook: drop every neighbor, leaving each layer as the residual identity.
  bool mask_all_neighbors = false;
};

struct ExerciseModuleNodes {
  NodeId w_e;  // M x d
  NodeId w_c;  // K x d
  std::vector<AttentionNodes> ec, ce, cc;  // one per layer
};

struct ExerciseModuleOutput {
  NodeId exercises;
  NodeId concepts;
};

/// L GAT layers over the relation graph:
///   e(l) = sum_k a_jk c_k(l-1) + e(l-1)
///   c(l) = sum_j a_kj e_j(l-1) + sum_m a_km c_m(l-1) + c(l-1)
inline ExerciseModuleOutput exercise_forward(ExpressionGraph& g, const RelationGraph& r,
                                             const ExerciseModuleNodes& p, std::size_t layers,
                                             const GatOptions& opts = {}) {
  require(p.ec.size() >= layers && p.ce.size() >= layers && p.cc.size() >= layers, ErrorKind::contract,
          "exercise module: missing attention parameters");
  const auto ke = AttentionPattern::of(r.a_ke);
  const auto ek = AttentionPattern::of(r.a_ek);
  const auto kk = AttentionPattern::of(r.a_kk);
  NodeId e = p.w_e;
  NodeId c = p.w_c;
  for (std::size_t l = 0; l < layers; ++l) {
    NodeId e_next = e;
    NodeId c_next = c;
    if (!opts.mask_all_neighbors) {
      if (!ke.pattern->empty()) e_next = g.add(e_next, attend(g, ke, e, c, p.ec[l]));
      if (!ek.pattern->empty()) c_next = g.add(c_next, attend(g, ek, c, e, p.ce[l]));
      if (!kk.pattern->empty()) c_next = g.add(c_next, attend(g, kk, c, c, p.cc[l]));
    }
    e = e_next;
    c = c_next;
  }
  return {e, c};
}

struct ConceptModuleNodes {
  NodeId w_c;  // K x d
  std::vector<AttentionNodes> dep;
};

/// L GAT layers over the dependency graph; the initial embedding when the
/// graph is unavailable.
inline NodeId concept_forward(ExpressionGraph& g, const DependencyGraph& d, const ConceptModuleNodes& p,
                              std::size_t layers, const GatOptions& opts = {}) {
  if (!d.available) return p.w_c;
  require(p.dep.size() >= layers, ErrorKind::contract, "concept module: missing attention parameters");
  const auto kk = AttentionPattern::of(d.a_kk);
  NodeId c = p.w_c;
  for (std::size_t l = 0; l < layers; ++l)
    if (!opts.mask_all_neighbors) c = g.add(c, attend(g, kk, c, c, p.dep[l]));
  return c;
}

}  // namespace disengcd
