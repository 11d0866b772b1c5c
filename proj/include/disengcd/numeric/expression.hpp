#pragma once

#include <cmath>
#include <compare>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "disengcd/error.hpp"
#include "disengcd/numeric/matrix.hpp"

namespace disengcd {

struct NodeId {
  std::size_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

enum class OpKind {
  input,
  constant,
  matmul,
  spmm,             // constant sparse x dense
  edge_spmm,        // sparse pattern with per-entry weights from a node x dense
  add,              // broadcasting: rhs may be same shape, 1xc, rx1 or 1x1
  mul,              // same broadcasting as add
  reciprocal,
  concat_cols,
  row_softmax,
  segment_softmax,  // softmax over the entries of each sparse row
  sigmoid,
  scale,
  row_sum,
  col_sum,
  mean,
  masked_select,
  gather_rows,
  bce,              // mean binary cross-entropy against constant labels
};

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::spmm: return "spmm";
    case OpKind::edge_spmm: return "edge_spmm";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::reciprocal: return "reciprocal";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::row_softmax: return "row_softmax";
    case OpKind::segment_softmax: return "segment_softmax";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::scale: return "scale";
    case OpKind::row_sum: return "row_sum";
    case OpKind::col_sum: return "col_sum";
    case OpKind::mean: return "mean";
    case OpKind::masked_select: return "masked_select";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::bce: return "bce";
  }
  return "?";
}

/// Probabilities are clamped this far from 0 and 1 inside the bce op.
inline constexpr double kProbabilityClamp = 1e-7;

struct OpRecord {
  OpKind kind = OpKind::input;
  std::vector<NodeId> inputs;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string label;
  bool trainable = false;
  double scalar = 0.0;
  std::shared_ptr<const SparseMatrix> sparse;
  std::shared_ptr<const std::vector<std::size_t>> indices;
  std::shared_ptr<const DenseMatrix> data;  // constant value, mask, or labels
};

/// Non-owning input bindings. Bound matrices must outlive the evaluation.
class Bindings {
 public:
  void bind(NodeId id, const DenseMatrix& m) { map_[id.index] = &m; }
  void bind(NodeId, DenseMatrix&&) = delete;
  const DenseMatrix* find(NodeId id) const {
    auto it = map_.find(id.index);
    return it == map_.end() ? nullptr : it->second;
  }

 private:
  std::unordered_map<std::size_t, const DenseMatrix*> map_;
};

class Evaluation {
 public:
  explicit Evaluation(std::vector<DenseMatrix> values) : values_(std::move(values)) {}
  const DenseMatrix& operator[](NodeId id) const { return values_.at(id.index); }
  std::size_t size() const noexcept { return values_.size(); }

 private:
  std::vector<DenseMatrix> values_;
};

using GradientMap = std::map<NodeId, DenseMatrix>;

/// Define-then-run expression graph over dense matrices. Nodes are appended in
/// topological order, so the graph is acyclic by construction.
class ExpressionGraph {
 public:
  NodeId input(std::string name, std::size_t rows, std::size_t cols, bool trainable = false) {
    OpRecord op;
    op.kind = OpKind::input;
    op.rows = rows;
    op.cols = cols;
    op.label = std::move(name);
    op.trainable = trainable;
    return push(std::move(op));
  }

  NodeId parameter(std::string name, std::size_t rows, std::size_t cols) {
    return input(std::move(name), rows, cols, true);
  }

  NodeId constant(DenseMatrix value, std::string label = {}) {
    OpRecord op;
    op.kind = OpKind::constant;
    op.rows = value.rows();
    op.cols = value.cols();
    op.label = std::move(label);
    op.data = std::make_shared<const DenseMatrix>(std::move(value));
    return push(std::move(op));
  }

  NodeId matmul(NodeId a, NodeId b) {
    check(node(a).cols == node(b).rows, "matmul", a, b);
    return push(make(OpKind::matmul, {a, b}, node(a).rows, node(b).cols));
  }

  NodeId spmm(std::shared_ptr<const SparseMatrix> s, NodeId x) {
    require(s != nullptr, ErrorKind::contract, "spmm: null sparse operand");
    if (s->cols() != node(x).rows)
      shape_fail("spmm", "sparse " + std::to_string(s->rows()) + "x" + std::to_string(s->cols()) +
                             " against " + shape_of(x));
    auto op = make(OpKind::spmm, {x}, s->rows(), node(x).cols);
    op.sparse = std::move(s);
    return push(std::move(op));
  }

  /// out[r] = sum over entries e of row r: weights[e] * x[col(e)].
  NodeId edge_spmm(std::shared_ptr<const SparseMatrix> pattern, NodeId weights, NodeId x) {
    require(pattern != nullptr, ErrorKind::contract, "edge_spmm: null pattern");
    if (node(weights).rows != pattern->nnz() || node(weights).cols != 1)
      shape_fail("edge_spmm", "weights " + shape_of(weights) + " for " +
                                  std::to_string(pattern->nnz()) + " entries");
    if (pattern->cols() != node(x).rows)
      shape_fail("edge_spmm", "pattern cols " + std::to_string(pattern->cols()) + " against " +
                                  shape_of(x));
    auto op = make(OpKind::edge_spmm, {weights, x}, pattern->rows(), node(x).cols);
    op.sparse = std::move(pattern);
    return push(std::move(op));
  }

  NodeId add(NodeId a, NodeId b) {
    check(broadcastable(a, b), "add", a, b);
    return push(make(OpKind::add, {a, b}, node(a).rows, node(a).cols));
  }

  NodeId mul(NodeId a, NodeId b) {
    check(broadcastable(a, b), "mul", a, b);
    return push(make(OpKind::mul, {a, b}, node(a).rows, node(a).cols));
  }

  NodeId reciprocal(NodeId a) {
    return push(make(OpKind::reciprocal, {a}, node(a).rows, node(a).cols));
  }

  NodeId concat_cols(NodeId a, NodeId b) {
    check(node(a).rows == node(b).rows, "concat_cols", a, b);
    return push(make(OpKind::concat_cols, {a, b}, node(a).rows, node(a).cols + node(b).cols));
  }

  NodeId row_softmax(NodeId a) {
    return push(make(OpKind::row_softmax, {a}, node(a).rows, node(a).cols));
  }

  NodeId segment_softmax(std::shared_ptr<const SparseMatrix> pattern, NodeId logits) {
    require(pattern != nullptr, ErrorKind::contract, "segment_softmax: null pattern");
    if (node(logits).rows != pattern->nnz() || node(logits).cols != 1)
      shape_fail("segment_softmax", "logits " + shape_of(logits) + " for " +
                                        std::to_string(pattern->nnz()) + " entries");
    auto op = make(OpKind::segment_softmax, {logits}, pattern->nnz(), 1);
    op.sparse = std::move(pattern);
    return push(std::move(op));
  }

  NodeId sigmoid(NodeId a) { return push(make(OpKind::sigmoid, {a}, node(a).rows, node(a).cols)); }

  NodeId scale(NodeId a, double factor) {
    auto op = make(OpKind::scale, {a}, node(a).rows, node(a).cols);
    op.scalar = factor;
    return push(std::move(op));
  }

  NodeId row_sum(NodeId a) { return push(make(OpKind::row_sum, {a}, node(a).rows, 1)); }
  NodeId col_sum(NodeId a) { return push(make(OpKind::col_sum, {a}, 1, node(a).cols)); }
  NodeId mean(NodeId a) { return push(make(OpKind::mean, {a}, 1, 1)); }

  /// Entries of `a` where mask is nonzero, as a column in row-major order.
  NodeId masked_select(NodeId a, DenseMatrix mask) {
    if (mask.rows() != node(a).rows || mask.cols() != node(a).cols)
      shape_fail("masked_select", "mask " + mask.shape_string() + " against " + shape_of(a));
    std::size_t kept = 0;
    for (double v : mask.values()) kept += v != 0.0;
    auto op = make(OpKind::masked_select, {a}, kept, 1);
    op.data = std::make_shared<const DenseMatrix>(std::move(mask));
    return push(std::move(op));
  }

  NodeId gather_rows(NodeId a, std::shared_ptr<const std::vector<std::size_t>> rows) {
    require(rows != nullptr, ErrorKind::contract, "gather_rows: null index list");
    for (auto r : *rows)
      if (r >= node(a).rows)
        shape_fail("gather_rows", "row " + std::to_string(r) + " out of range for " + shape_of(a));
    auto op = make(OpKind::gather_rows, {a}, rows->size(), node(a).cols);
    op.indices = std::move(rows);
    return push(std::move(op));
  }

  NodeId gather_rows(NodeId a, std::vector<std::size_t> rows) {
    return gather_rows(a, std::make_shared<const std::vector<std::size_t>>(std::move(rows)));
  }

  NodeId bce(NodeId predictions, DenseMatrix labels) {
    if (node(predictions).cols != 1 || labels.rows() != node(predictions).rows || labels.cols() != 1)
      shape_fail("bce", "predictions " + shape_of(predictions) + " labels " + labels.shape_string());
    auto op = make(OpKind::bce, {predictions}, 1, 1);
    op.data = std::make_shared<const DenseMatrix>(std::move(labels));
    return push(std::move(op));
  }

  void set_loss(NodeId id) { loss_ = id; has_loss_ = true; }
  bool has_loss() const noexcept { return has_loss_; }
  NodeId loss() const {
    require(has_loss_, ErrorKind::contract, "expression graph has no loss node");
    return loss_;
  }

  /// Attach a label used in error messages.
  NodeId named(NodeId id, std::string label) {
    nodes_.at(id.index).label = std::move(label);
    return id;
  }

  const OpRecord& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::vector<NodeId> trainable() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].trainable) out.push_back({i});
    return out;
  }

  std::string describe(NodeId id) const {
    const auto& n = node(id);
    std::string s = "node #" + std::to_string(id.index) + " (" + to_string(n.kind);
    if (!n.label.empty()) s += " '" + n.label + "'";
    return s + ")";
  }

 private:
  NodeId push(OpRecord op) {
    nodes_.push_back(std::move(op));
    return {nodes_.size() - 1};
  }

  OpRecord make(OpKind kind, std::vector<NodeId> inputs, std::size_t rows, std::size_t cols) const {
    for (auto in : inputs)
      require(in.index < nodes_.size(), ErrorKind::contract, "expression graph: dangling input");
    OpRecord op;
    op.kind = kind;
    op.inputs = std::move(inputs);
    op.rows = rows;
    op.cols = cols;
    return op;
  }

  std::string shape_of(NodeId id) const {
    return std::to_string(node(id).rows) + "x" + std::to_string(node(id).cols);
  }

  bool broadcastable(NodeId a, NodeId b) const {
    const auto& x = node(a);
    const auto& y = node(b);
    return (y.rows == x.rows || y.rows == 1) && (y.cols == x.cols || y.cols == 1);
  }

  void check(bool ok, const char* what, NodeId a, NodeId b) const {
    if (!ok)
      shape_fail(what, describe(a) + " " + shape_of(a) + " vs " + describe(b) + " " + shape_of(b));
  }

  [[noreturn]] void shape_fail(const char* what, const std::string& detail) const {
    fail(ErrorKind::shape, std::string(what) + " at node #" + std::to_string(nodes_.size()) +
                               ": " + detail);
  }

  std::vector<OpRecord> nodes_;
  NodeId loss_{};
  bool has_loss_ = false;
};

namespace detail {

// Index into a broadcast operand for output coordinate (r, c).
inline double broadcast_at(const DenseMatrix& b, std::size_t r, std::size_t c) {
  return b(b.rows() == 1 ? 0 : r, b.cols() == 1 ? 0 : c);
}

inline double& broadcast_ref(DenseMatrix& b, std::size_t r, std::size_t c) {
  return b(b.rows() == 1 ? 0 : r, b.cols() == 1 ? 0 : c);
}

inline DenseMatrix forward_op(const OpRecord& op, const std::vector<DenseMatrix>& v) {
  auto in = [&](std::size_t k) -> const DenseMatrix& { return v[op.inputs[k].index]; };
  switch (op.kind) {
    case OpKind::input:
    case OpKind::constant:
      return {};  // handled by caller
    case OpKind::matmul:
      return disengcd::matmul(in(0), in(1));
    case OpKind::spmm:
      return disengcd::spmm(*op.sparse, in(0));
    case OpKind::edge_spmm: {
      const auto& p = *op.sparse;
      const auto& w = in(0);
      const auto& x = in(1);
      DenseMatrix out(p.rows(), x.cols());
      for (std::size_t r = 0; r < p.rows(); ++r) {
        auto orow = out.row(r);
        for (std::size_t e = p.row_begin(r); e < p.row_end(r); ++e) {
          auto xrow = x.row(p.col(e));
          for (std::size_t j = 0; j < x.cols(); ++j) orow[j] += w[e] * xrow[j];
        }
      }
      return out;
    }
    case OpKind::add:
    case OpKind::mul: {
      const auto& a = in(0);
      const auto& b = in(1);
      DenseMatrix out(a.rows(), a.cols());
      const bool is_add = op.kind == OpKind::add;
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
          out(r, c) = is_add ? a(r, c) + broadcast_at(b, r, c) : a(r, c) * broadcast_at(b, r, c);
      return out;
    }
    case OpKind::reciprocal: {
      DenseMatrix out = in(0);
      for (auto& x : out.values()) x = 1.0 / x;
      return out;
    }
    case OpKind::concat_cols: {
      const auto& a = in(0);
      const auto& b = in(1);
      DenseMatrix out(a.rows(), a.cols() + b.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto orow = out.row(r);
        std::copy(a.row(r).begin(), a.row(r).end(), orow.begin());
        std::copy(b.row(r).begin(), b.row(r).end(), orow.begin() + a.cols());
      }
      return out;
    }
    case OpKind::row_softmax: {
      const auto& a = in(0);
      DenseMatrix out(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) softmax_into(a.row(r), out.row(r));
      return out;
    }
    case OpKind::segment_softmax: {
      const auto& p = *op.sparse;
      const auto& x = in(0);
      DenseMatrix out(x.rows(), 1);
      for (std::size_t r = 0; r < p.rows(); ++r) {
        const auto b = p.row_begin(r);
        const auto n = p.degree(r);
        softmax_into({x.values().data() + b, n}, {out.values().data() + b, n});
      }
      return out;
    }
    case OpKind::sigmoid: {
      DenseMatrix out = in(0);
      for (auto& x : out.values()) x = disengcd::sigmoid(x);
      return out;
    }
    case OpKind::scale: {
      DenseMatrix out = in(0);
      for (auto& x : out.values()) x *= op.scalar;
      return out;
    }
    case OpKind::row_sum: {
      const auto& a = in(0);
      DenseMatrix out(a.rows(), 1);
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (double x : a.row(r)) out[r] += x;
      return out;
    }
    case OpKind::col_sum: {
      const auto& a = in(0);
      DenseMatrix out(1, a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out[c] += a(r, c);
      return out;
    }
    case OpKind::mean: {
      const auto& a = in(0);
      require(!a.empty(), ErrorKind::contract, "mean of an empty matrix");
      double total = 0.0;
      for (double x : a.values()) total += x;
      return DenseMatrix(1, 1, total / static_cast<double>(a.size()));
    }
    case OpKind::masked_select: {
      const auto& a = in(0);
      DenseMatrix out(op.rows, 1);
      std::size_t k = 0;
      for (std::size_t i = 0; i < a.size(); ++i)
        if ((*op.data)[i] != 0.0) out[k++] = a[i];
      return out;
    }
    case OpKind::gather_rows: {
      const auto& a = in(0);
      DenseMatrix out(op.indices->size(), a.cols());
      for (std::size_t i = 0; i < op.indices->size(); ++i) {
        auto src = a.row((*op.indices)[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
      }
      return out;
    }
    case OpKind::bce: {
      const auto& p = in(0);
      const auto& y = *op.data;
      double total = 0.0;
      for (std::size_t i = 0; i < p.rows(); ++i) {
        const double q = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        total -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
      }
      return DenseMatrix(1, 1, p.rows() ? total / static_cast<double>(p.rows()) : 0.0);
    }
  }
  return {};
}

inline void accumulate(DenseMatrix& into, const DenseMatrix& g) {
  if (into.empty()) {
    into = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

}  // namespace detail

/// Evaluate every node of the graph. Throws a shape error naming the node when
/// a binding disagrees with the declared shape, and a numeric error naming the
/// node when an intermediate becomes non-finite.
inline Evaluation evaluate(const ExpressionGraph& graph, const Bindings& bindings) {
  std::vector<DenseMatrix> values(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const NodeId id{i};
    const auto& op = graph.node(id);
    if (op.kind == OpKind::input) {
      const DenseMatrix* bound = bindings.find(id);
      require(bound != nullptr, ErrorKind::contract, graph.describe(id) + " is not bound");
      require(bound->rows() == op.rows && bound->cols() == op.cols, ErrorKind::shape,
              graph.describe(id) + " declared " + std::to_string(op.rows) + "x" +
                  std::to_string(op.cols) + " but bound to " + bound->shape_string());
      values[i] = *bound;
    } else if (op.kind == OpKind::constant) {
      values[i] = *op.data;
    } else {
      values[i] = detail::forward_op(op, values);
    }
    require(values[i].all_finite(), ErrorKind::numeric,
            "non-finite value produced at " + graph.describe(id));
  }
  return Evaluation(std::move(values));
}

/// Reverse-mode gradients of the scalar loss node with respect to every
/// trainable input. Parameters that do not reach the loss get zero matrices.
inline GradientMap gradients(const ExpressionGraph& graph, const Evaluation& values) {
  const NodeId loss = graph.loss();
  const auto& lop = graph.node(loss);
  require(lop.rows == 1 && lop.cols == 1, ErrorKind::contract,
          "loss " + graph.describe(loss) + " is not scalar");
  require(values.size() == graph.size(), ErrorKind::contract,
          "evaluation does not belong to this graph");

  // Which nodes lie on a path from a trainable input.
  std::vector<char> needs(graph.size(), 0);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto& op = graph.node({i});
    needs[i] = op.trainable;
    for (auto in : op.inputs) needs[i] |= needs[in.index];
  }

  std::vector<DenseMatrix> grad(graph.size());
  grad[loss.index] = DenseMatrix(1, 1, 1.0);

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (grad[i].empty() || !needs[i]) continue;
    const auto& op = graph.node({i});
    const DenseMatrix& g = grad[i];
    const DenseMatrix& y = values[{i}];
    auto in = [&](std::size_t k) -> const DenseMatrix& { return values[op.inputs[k]]; };
    auto wants = [&](std::size_t k) { return needs[op.inputs[k].index] != 0; };
    auto slot = [&](std::size_t k) -> DenseMatrix& {
      auto& s = grad[op.inputs[k].index];
      const auto& v = in(k);
      if (s.empty()) s = DenseMatrix(v.rows(), v.cols());
      return s;
    };

    switch (op.kind) {
      case OpKind::input:
      case OpKind::constant:
        break;
      case OpKind::matmul: {
        const auto& a = in(0);
        const auto& b = in(1);
        if (wants(0)) {
          auto& ga = slot(0);
          for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t k = 0; k < a.cols(); ++k) {
              double acc = 0.0;
              for (std::size_t c = 0; c < b.cols(); ++c) acc += g(r, c) * b(k, c);
              ga(r, k) += acc;
            }
        }
        if (wants(1)) {
          auto& gb = slot(1);
          for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t k = 0; k < a.cols(); ++k) {
              const double av = a(r, k);
              if (av == 0.0) continue;
              for (std::size_t c = 0; c < b.cols(); ++c) gb(k, c) += av * g(r, c);
            }
        }
        break;
      }
      case OpKind::spmm: {
        if (!wants(0)) break;
        const auto& s = *op.sparse;
        auto& gx = slot(0);
        for (std::size_t r = 0; r < s.rows(); ++r)
          for (std::size_t e = s.row_begin(r); e < s.row_end(r); ++e) {
            const double w = s.weight(e);
            auto grow = g.row(r);
            auto xrow = gx.row(s.col(e));
            for (std::size_t j = 0; j < g.cols(); ++j) xrow[j] += w * grow[j];
          }
        break;
      }
      case OpKind::edge_spmm: {
        const auto& p = *op.sparse;
        const auto& w = in(0);
        const auto& x = in(1);
        DenseMatrix* gw = wants(0) ? &slot(0) : nullptr;
        DenseMatrix* gx = wants(1) ? &slot(1) : nullptr;
        for (std::size_t r = 0; r < p.rows(); ++r) {
          auto grow = g.row(r);
          for (std::size_t e = p.row_begin(r); e < p.row_end(r); ++e) {
            const auto c = p.col(e);
            if (gw) {
              double acc = 0.0;
              auto xrow = x.row(c);
              for (std::size_t j = 0; j < x.cols(); ++j) acc += grow[j] * xrow[j];
              (*gw)[e] += acc;
            }
            if (gx) {
              auto xg = gx->row(c);
              for (std::size_t j = 0; j < x.cols(); ++j) xg[j] += w[e] * grow[j];
            }
          }
        }
        break;
      }
      case OpKind::add:
      case OpKind::mul: {
        const auto& a = in(0);
        const auto& b = in(1);
        const bool is_add = op.kind == OpKind::add;
        if (wants(0)) {
          auto& ga = slot(0);
          for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < a.cols(); ++c)
              ga(r, c) += is_add ? g(r, c) : g(r, c) * detail::broadcast_at(b, r, c);
        }
        if (wants(1)) {
          auto& gb = slot(1);
          for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < a.cols(); ++c)
              detail::broadcast_ref(gb, r, c) += is_add ? g(r, c) : g(r, c) * a(r, c);
        }
        break;
      }
      case OpKind::reciprocal: {
        auto& ga = slot(0);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] -= g[k] * y[k] * y[k];
        break;
      }
      case OpKind::concat_cols: {
        const auto ac = in(0).cols();
        const auto bc = in(1).cols();
        if (wants(0)) {
          auto& ga = slot(0);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < ac; ++c) ga(r, c) += g(r, c);
        }
        if (wants(1)) {
          auto& gb = slot(1);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < bc; ++c) gb(r, c) += g(r, ac + c);
        }
        break;
      }
      case OpKind::row_softmax: {
        auto& ga = slot(0);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
        }
        break;
      }
      case OpKind::segment_softmax: {
        const auto& p = *op.sparse;
        auto& ga = slot(0);
        for (std::size_t r = 0; r < p.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t e = p.row_begin(r); e < p.row_end(r); ++e) dot += g[e] * y[e];
          for (std::size_t e = p.row_begin(r); e < p.row_end(r); ++e) ga[e] += y[e] * (g[e] - dot);
        }
        break;
      }
      case OpKind::sigmoid: {
        auto& ga = slot(0);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * y[k] * (1.0 - y[k]);
        break;
      }
      case OpKind::scale: {
        auto& ga = slot(0);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * op.scalar;
        break;
      }
      case OpKind::row_sum: {
        auto& ga = slot(0);
        for (std::size_t r = 0; r < ga.rows(); ++r)
          for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[r];
        break;
      }
      case OpKind::col_sum: {
        auto& ga = slot(0);
        for (std::size_t r = 0; r < ga.rows(); ++r)
          for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[c];
        break;
      }
      case OpKind::mean: {
        auto& ga = slot(0);
        const double share = g[0] / static_cast<double>(ga.size());
        for (auto& x : ga.values()) x += share;
        break;
      }
      case OpKind::masked_select: {
        auto& ga = slot(0);
        std::size_t k = 0;
        for (std::size_t t = 0; t < ga.size(); ++t)
          if ((*op.data)[t] != 0.0) ga[t] += g[k++];
        break;
      }
      case OpKind::gather_rows: {
        auto& ga = slot(0);
        for (std::size_t t = 0; t < op.indices->size(); ++t) {
          auto dst = ga.row((*op.indices)[t]);
          auto src = g.row(t);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
        break;
      }
      case OpKind::bce: {
        const auto& p = in(0);
        const auto& lab = *op.data;
        auto& ga = slot(0);
        const double n = static_cast<double>(p.rows());
        for (std::size_t t = 0; t < p.rows(); ++t) {
          const double q = p[t];
          if (q <= kProbabilityClamp || q >= 1.0 - kProbabilityClamp) continue;
          ga[t] += g[0] * (-lab[t] / q + (1.0 - lab[t]) / (1.0 - q)) / n;
        }
        break;
      }
    }
  }

  GradientMap out;
  for (auto id : graph.trainable()) {
    const auto& op = graph.node(id);
    if (grad[id.index].empty())
      out.emplace(id, DenseMatrix(op.rows, op.cols));
    else
      out.emplace(id, std::move(grad[id.index]));
  }
  return out;
}

}  // namespace disengcd
