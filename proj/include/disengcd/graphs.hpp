#pragma once

#include <memory>
#include <set>
#include <vector>

#include "disengcd/dataset.hpp"
#include "disengcd/numeric/matrix.hpp"

namespace disengcd {

using SparsePtr = std::shared_ptr<const SparseMatrix>;

// Adjacency naming: a_xy carries messages from node type x to node type y, so
// its rows are y nodes and its columns x nodes. s = students, e = exercises,
// k = concepts. All stored adjacencies are row-normalized (mean aggregation).

/// Exercise/concept structure with no student-derived data.
struct RelationGraph {
  SparsePtr a_ek;  // concepts <- exercises   (K x M)
  SparsePtr a_ke;  // exercises <- concepts   (M x K)
  SparsePtr a_kk;  // concepts <- prerequisite concepts (K x K)
};

/// Concept-only dependency structure.
struct DependencyGraph {
  SparsePtr a_kk;
  bool available = false;
};

/// Student-exercise-concept interaction graph.
struct InteractionGraph {
  std::size_t n_students = 0;
  std::size_t n_exercises = 0;
  std::size_t n_concepts = 0;
  SparsePtr a_se;  // exercises <- students   (M x N)
  SparsePtr a_es;  // students <- exercises   (N x M)
  RelationGraph relation;
};

inline InteractionGraph build_interaction_graph(const Dataset& d) {
  require(d.q_matrix != nullptr, ErrorKind::validation, "dataset has no Q-matrix");
  InteractionGraph g;
  g.n_students = d.n_students;
  g.n_exercises = d.n_exercises;
  g.n_concepts = d.n_concepts;

  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& l : d.logs) pairs.insert({l.student, l.exercise});
  std::vector<Triplet> es;
  es.reserve(pairs.size());
  for (const auto& [i, j] : pairs) es.push_back({i, j, 1.0});
  const SparseMatrix student_rows(d.n_students, d.n_exercises, std::move(es));
  g.a_es = std::make_shared<const SparseMatrix>(student_rows.row_normalized());
  g.a_se = std::make_shared<const SparseMatrix>(student_rows.transposed().row_normalized());

  std::vector<Triplet> q = d.q_matrix->triplets();
  for (auto& t : q) t.weight = 1.0;
  const SparseMatrix exercise_rows(d.n_exercises, d.n_concepts, std::move(q));
  g.relation.a_ke = std::make_shared<const SparseMatrix>(exercise_rows.row_normalized());
  g.relation.a_ek = std::make_shared<const SparseMatrix>(exercise_rows.transposed().row_normalized());

  std::vector<Triplet> dep;
  if (d.dependency) {
    dep = d.dependency->triplets();
    for (auto& t : dep) t.weight = 1.0;
  }
  g.relation.a_kk = std::make_shared<const SparseMatrix>(
      SparseMatrix(d.n_concepts, d.n_concepts, std::move(dep)).row_normalized());
  return g;
}

/// The relation graph: the interaction graph without students and their edges.
inline RelationGraph disentangle_relation_graph(const InteractionGraph& g) {
  require(g.relation.a_ke && g.relation.a_ke->nnz() > 0, ErrorKind::validation,
          "relation graph needs a non-empty Q-matrix");
  return g.relation;
}

/// The dependency graph: concepts and their reliance edges only.
inline DependencyGraph disentangle_dependency_graph(const RelationGraph& r) {
  return DependencyGraph{r.a_kk, r.a_kk && !r.a_kk->empty()};
}

}  // namespace disengcd
