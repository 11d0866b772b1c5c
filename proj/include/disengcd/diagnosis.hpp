#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "disengcd/dataset.hpp"
#include "disengcd/numeric/adam.hpp"
#include "disengcd/numeric/expression.hpp"

namespace disengcd {

// Diagnostic head:
//   c     = mean of C_k over the exercise's concepts
//   h_si  = F_si(S_i + c),  h_ej = F_ej(E_j + c)
//   h_sim = sigmoid(F_simi(h_si * h_ej))       (elementwise product)
//   r     = mean of h_sim over the exercise's concepts
// Each F is an affine d -> d map x W + b with W d x d and b 1 x d.

inline constexpr const char* kHeadLayers[] = {"diag.F_si", "diag.F_ej", "diag.F_simi"};

struct LinearNodes {
  NodeId w;
  NodeId b;
};

struct HeadNodes {
  LinearNodes si, ej, simi;
};

struct Batch {
  std::shared_ptr<const std::vector<std::size_t>> students;
  std::shared_ptr<const std::vector<std::size_t>> exercises;
  DenseMatrix labels;  // B x 1
};

inline Batch make_batch(const std::vector<ResponseLog>& logs, std::span<const std::size_t> picks) {
  std::vector<std::size_t> s, e;
  DenseMatrix y(picks.size(), 1);
  for (std::size_t t = 0; t < picks.size(); ++t) {
    const auto& l = logs[picks[t]];
    s.push_back(l.student);
    e.push_back(l.exercise);
    y[t] = l.response;
  }
  return {std::make_shared<const std::vector<std::size_t>>(std::move(s)),
          std::make_shared<const std::vector<std::size_t>>(std::move(e)), std::move(y)};
}

/// Row-normalized Q-matrix (each exercise row averages its concepts).
inline std::shared_ptr<const SparseMatrix> normalized_q(const SparseMatrix& q) {
  return std::make_shared<const SparseMatrix>(q.row_normalized());
}

/// Predicted probabilities (B x 1) for a batch, inside the expression graph.
inline NodeId predict_batch(ExpressionGraph& g, NodeId s_bar, NodeId e_bar, NodeId c_bar,
                            const std::shared_ptr<const SparseMatrix>& q_norm, const Batch& batch,
                            const HeadNodes& head) {
  const auto d = g.node(c_bar).cols;
  require(q_norm->cols() == d, ErrorKind::config,
          "diagnosis needs d equal to the concept count (d=" + std::to_string(d) +
              ", K=" + std::to_string(q_norm->cols()) + ")");
  const NodeId c_ex = g.spmm(q_norm, c_bar);
  const NodeId s_b = g.gather_rows(s_bar, batch.students);
  const NodeId e_b = g.gather_rows(e_bar, batch.exercises);
  const NodeId c_b = g.gather_rows(c_ex, batch.exercises);
  auto affine = [&](NodeId x, const LinearNodes& f) { return g.add(g.matmul(x, f.w), f.b); };
  const NodeId h_si = affine(g.add(s_b, c_b), head.si);
  const NodeId h_ej = affine(g.add(e_b, c_b), head.ej);
  const NodeId h_sim = g.sigmoid(affine(g.mul(h_si, h_ej), head.simi));

  DenseMatrix mask(batch.exercises->size(), d);
  for (std::size_t t = 0; t < batch.exercises->size(); ++t) {
    const auto j = (*batch.exercises)[t];
    for (auto e = q_norm->row_begin(j); e < q_norm->row_end(j); ++e) mask(t, q_norm->col(e)) = q_norm->weight(e);
  }
  return g.row_sum(g.mul(h_sim, g.constant(std::move(mask), "Q mask")));
}

struct Prediction {
  double probability = 0.0;
  std::vector<double> h_si;
  std::vector<double> h_simi;
};

namespace detail {

inline std::vector<double> affine(std::span<const double> x, const DenseMatrix& w, const DenseMatrix& b) {
  std::vector<double> out(b.values());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) continue;
    auto wr = w.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[i] * wr[j];
  }
  return out;
}

}  // namespace detail

/// Head parameters pulled out of a parameter set.
struct HeadParams {
  const DenseMatrix* w[3];
  const DenseMatrix* b[3];

  static HeadParams from(const ParamSet& p) {
    HeadParams h{};
    for (int i = 0; i < 3; ++i) {
      h.w[i] = &p.at(std::string(kHeadLayers[i]) + ".W");
      h.b[i] = &p.at(std::string(kHeadLayers[i]) + ".b");
    }
    return h;
  }
};

/// h_simi for given student/exercise/concept summary vectors.
inline std::vector<double> similarity(std::span<const double> s, std::span<const double> e,
                                      std::span<const double> c, const HeadParams& p,
                                      std::vector<double>* h_si_out = nullptr) {
  std::vector<double> sc(s.size()), ec(e.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    sc[i] = s[i] + c[i];
    ec[i] = e[i] + c[i];
  }
  auto h_si = detail::affine(sc, *p.w[0], *p.b[0]);
  const auto h_ej = detail::affine(ec, *p.w[1], *p.b[1]);
  std::vector<double> prod(h_si.size());
  for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = h_si[i] * h_ej[i];
  auto h_sim = detail::affine(prod, *p.w[2], *p.b[2]);
  for (auto& v : h_sim) v = sigmoid(v);
  if (h_si_out) *h_si_out = std::move(h_si);
  return h_sim;
}

/// Plain (non-graph) prediction for one (student, exercise) pair.
inline Prediction predict(std::span<const double> s_bar, std::span<const double> e_bar, const DenseMatrix& c_bar,
                          std::span<const std::size_t> exercise_concepts, const HeadParams& p) {
  require(!exercise_concepts.empty(), ErrorKind::contract, "predict: exercise has no concepts");
  require(c_bar.cols() == c_bar.rows(), ErrorKind::config, "diagnosis needs d equal to the concept count");
  std::vector<double> c(c_bar.cols(), 0.0);
  for (auto k : exercise_concepts)
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += c_bar(k, i);
  for (auto& v : c) v /= static_cast<double>(exercise_concepts.size());
  Prediction out;
  out.h_simi = similarity(s_bar, e_bar, c, p, &out.h_si);
  double acc = 0.0;
  for (auto k : exercise_concepts) acc += out.h_simi[k];
  out.probability = acc / static_cast<double>(exercise_concepts.size());
  return out;
}

/// Mean binary cross-entropy with probabilities clamped 1e-7 from 0 and 1.
inline double bce_loss(std::span<const double> predictions, std::span<const double> labels) {
  require(predictions.size() == labels.size() && !predictions.empty(), ErrorKind::contract,
          "bce_loss: predictions and labels must be equal-length and non-empty");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double q = std::clamp(predictions[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    total -= labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q);
  }
  return total / static_cast<double>(predictions.size());
}

struct MasteryReport {
  std::vector<double> mastery;              // length K
  std::vector<std::size_t> unexercised;     // concepts no exercise covers (reported as 0.5)
};

/// Per-concept mastery: entry k is h_simi[k] with the summary concept C_k and a
/// neutral exercise (mean of E over the exercises involving k).
inline MasteryReport mastery_report(std::span<const double> s_bar, const DenseMatrix& e_bar, const DenseMatrix& c_bar,
                                    const SparseMatrix& q_matrix, const HeadParams& p) {
  const std::size_t K = c_bar.rows();
  const std::size_t d = c_bar.cols();
  const auto by_concept = q_matrix.transposed();
  MasteryReport r{std::vector<double>(K, 0.5), {}};
  for (std::size_t k = 0; k < K; ++k) {
    if (by_concept.degree(k) == 0) {
      r.unexercised.push_back(k);
      continue;
    }
    std::vector<double> e(d, 0.0);
    for (auto t = by_concept.row_begin(k); t < by_concept.row_end(k); ++t) {
      auto row = e_bar.row(by_concept.col(t));
      for (std::size_t i = 0; i < d; ++i) e[i] += row[i];
    }
    for (auto& v : e) v /= static_cast<double>(by_concept.degree(k));
    r.mastery[k] = similarity(s_bar, e, c_bar.row(k), p)[k];
  }
  return r;
}

}  // namespace disengcd
