#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "disengcd/numeric/adam.hpp"
#include "disengcd/numeric/expression.hpp"
#include "disengcd/numeric/gradcheck.hpp"
#include "support.hpp"

using namespace disengcd;
using testing_support::error_kind_of;
using testing_support::random_matrix;

TEST(Evaluate, OneHotMatmulSelectsRow) {
  ExpressionGraph g;
  auto onehot = g.input("onehot", 1, 4);
  auto table = g.input("table", 4, 3);
  auto out = g.matmul(onehot, table);
  DenseMatrix pick{{0, 0, 1, 0}};
  Rng rng(3);
  auto t = random_matrix(4, 3, rng);
  Bindings b;
  b.bind(onehot, pick);
  b.bind(table, t);
  auto v = evaluate(g, b);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(v[out](0, c), t(2, c));
}

TEST(Evaluate, SigmoidOfZeroIsHalf) {
  ExpressionGraph g;
  auto x = g.input("x", 1, 1);
  auto y = g.sigmoid(x);
  DenseMatrix zero(1, 1);
  Bindings b;
  b.bind(x, zero);
  EXPECT_DOUBLE_EQ(evaluate(g, b)[y][0], 0.5);
}

TEST(Evaluate, RowSoftmaxOfEqualEntriesIsUniform) {
  ExpressionGraph g;
  auto x = g.constant(DenseMatrix{{1, 1, 1}});
  auto y = g.row_softmax(x);
  auto v = evaluate(g, {});
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(v[y](0, c), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, KnownValues) {
  const std::vector<double> in{1, 0, 0, 0};
  const auto out = softmax(in);
  const double z = std::exp(1.0) + 3.0;
  EXPECT_NEAR(out[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(out[1], 1.0 / z, 1e-15);
  EXPECT_NEAR(out[0], 0.4754, 1e-4);
  EXPECT_NEAR(out[1], 0.1749, 1e-4);
}

TEST(Softmax, RowsSumToOneAndAreNonnegative) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = 1 + rng.below(6), c = 1 + rng.below(9);
    ExpressionGraph g;
    auto x = g.constant(random_matrix(r, c, rng, -30.0, 30.0));
    auto y = g.row_softmax(x);
    auto v = evaluate(g, {});
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (double p : v[y].row(i)) {
        EXPECT_GE(p, 0.0);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Sparse, SpmmMatchesDenseExactly) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const auto r = 1 + rng.below(16), inner = 1 + rng.below(16), c = 1 + rng.below(16);
    std::vector<Triplet> t;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < inner; ++j)
        if (rng.bernoulli(0.3)) t.push_back({i, j, static_cast<double>(rng.below(5))});
    SparseMatrix s(r, inner, t);
    auto x = random_matrix(inner, c, rng);
    EXPECT_EQ(spmm(s, x).values(), matmul(s.to_dense(), x).values());
  }
}

TEST(Sparse, RejectsInvalidEntries) {
  EXPECT_EQ(error_kind_of([] { SparseMatrix(2, 2, {{2, 0, 1.0}}); }), ErrorKind::contract);
  EXPECT_EQ(error_kind_of([] { SparseMatrix(2, 2, {{0, 0, -1.0}}); }), ErrorKind::contract);
  EXPECT_EQ(error_kind_of([] { SparseMatrix(2, 2, {{0, 0, 1.0}, {0, 0, 2.0}}); }), ErrorKind::contract);
}

TEST(Sparse, RowNormalizedRowsSumToOne) {
  SparseMatrix s(3, 3, {{0, 0, 1}, {0, 2, 3}, {2, 1, 2}});
  auto n = s.row_normalized();
  EXPECT_DOUBLE_EQ(n.weight(0), 0.25);
  EXPECT_DOUBLE_EQ(n.weight(1), 0.75);
  EXPECT_DOUBLE_EQ(n.weight(2), 1.0);
  EXPECT_EQ(n.degree(1), 0u);
}

TEST(Gradients, SumOfParameterIsOnes) {
  ExpressionGraph g;
  auto p = g.parameter("p", 3, 4);
  g.set_loss(g.row_sum(g.col_sum(p)));
  Rng rng(1);
  auto val = random_matrix(3, 4, rng);
  Bindings b;
  b.bind(p, val);
  auto grads = gradients(g, evaluate(g, b));
  for (double v : grads.at(p).values()) EXPECT_EQ(v, 1.0);
}

TEST(Gradients, SigmoidSlopeAtZero) {
  ExpressionGraph g;
  auto x = g.parameter("x", 1, 1);
  g.set_loss(g.sigmoid(x));
  DenseMatrix zero(1, 1);
  Bindings b;
  b.bind(x, zero);
  EXPECT_DOUBLE_EQ(gradients(g, evaluate(g, b)).at(x)[0], 0.25);
}

TEST(Gradients, NonScalarLossIsContractError) {
  ExpressionGraph g;
  auto x = g.parameter("x", 2, 2);
  g.set_loss(g.sigmoid(x));
  DenseMatrix v(2, 2);
  Bindings b;
  b.bind(x, v);
  const auto values = evaluate(g, b);
  EXPECT_EQ(error_kind_of([&] { gradients(g, values); }), ErrorKind::contract);
}

TEST(Gradients, UnusedParameterGetsZeros) {
  ExpressionGraph g;
  auto used = g.parameter("used", 2, 2);
  auto unused = g.parameter("unused", 3, 1);
  g.set_loss(g.mean(used));
  DenseMatrix a(2, 2, 1.0), c(3, 1, 7.0);
  Bindings b;
  b.bind(used, a);
  b.bind(unused, c);
  auto grads = gradients(g, evaluate(g, b));
  ASSERT_EQ(grads.at(unused).rows(), 3u);
  for (double v : grads.at(unused).values()) EXPECT_EQ(v, 0.0);
}

TEST(Evaluate, ShapeMismatchNamesNode) {
  ExpressionGraph g;
  auto a = g.input("left_operand", 2, 3);
  auto b = g.input("right_operand", 2, 3);
  std::string msg;
  EXPECT_EQ(error_kind_of([&] { g.matmul(a, b); }, &msg), ErrorKind::shape);
  EXPECT_NE(msg.find("left_operand"), std::string::npos);

  auto c = g.input("bound_wrong", 2, 2);
  DenseMatrix wrong(3, 3);
  Bindings bind;
  bind.bind(c, wrong);
  DenseMatrix av(2, 3), bv(2, 3);
  bind.bind(a, av);
  bind.bind(b, bv);
  EXPECT_EQ(error_kind_of([&] { evaluate(g, bind); }, &msg), ErrorKind::shape);
  EXPECT_NE(msg.find("bound_wrong"), std::string::npos);
}

TEST(Evaluate, NonFiniteIsNumericError) {
  ExpressionGraph g;
  auto x = g.input("x", 1, 1);
  g.named(g.reciprocal(x), "inverse");
  DenseMatrix zero(1, 1);
  Bindings b;
  b.bind(x, zero);
  std::string msg;
  EXPECT_EQ(error_kind_of([&] { evaluate(g, b); }, &msg), ErrorKind::numeric);
  EXPECT_NE(msg.find("inverse"), std::string::npos);
}

TEST(Evaluate, UnboundInputIsContractError) {
  ExpressionGraph g;
  g.input("x", 1, 1);
  EXPECT_EQ(error_kind_of([&] { evaluate(g, {}); }), ErrorKind::contract);
}

namespace {

/// A graph builder returning the loss node, given one or two trainable inputs.
struct OpCase {
  std::string name;
  std::function<NodeId(ExpressionGraph&, NodeId, NodeId)> build;
  std::size_t rows_a, cols_a, rows_b, cols_b;
};

double check_case(const OpCase& c, std::uint64_t seed) {
  Rng rng(seed);
  ExpressionGraph g;
  auto a = g.parameter("a", c.rows_a, c.cols_a);
  auto b = g.parameter("b", c.rows_b, c.cols_b);
  // Weighted sum so that every output entry carries a distinct gradient.
  auto out = c.build(g, a, b);
  auto weights = g.constant(random_matrix(g.node(out).rows, g.node(out).cols, rng));
  g.set_loss(g.row_sum(g.col_sum(g.mul(out, weights))));
  auto va = random_matrix(c.rows_a, c.cols_a, rng, 0.2, 1.5);
  auto vb = random_matrix(c.rows_b, c.cols_b, rng, 0.2, 1.5);
  Bindings bind;
  bind.bind(a, va);
  bind.bind(b, vb);
  return finite_difference_check(g, bind);
}

std::shared_ptr<const SparseMatrix> ring_pattern(std::size_t n) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < n; ++i) {
    t.push_back({i, i, 1.0});
    t.push_back({i, (i + 1) % n, 0.5});
  }
  return std::make_shared<const SparseMatrix>(n, n, t);
}

}  // namespace

TEST(Gradients, EveryOpKindMatchesFiniteDifferences) {
  const auto pat = ring_pattern(4);
  const std::vector<OpCase> cases = {
      {"matmul", [](auto& g, auto a, auto b) { return g.matmul(a, b); }, 3, 4, 4, 2},
      {"spmm", [pat](auto& g, auto a, auto) { return g.spmm(pat, a); }, 4, 3, 1, 1},
      {"edge_spmm", [pat](auto& g, auto a, auto b) { return g.edge_spmm(pat, b, a); }, 4, 3, 8, 1},
      {"add", [](auto& g, auto a, auto b) { return g.add(a, b); }, 3, 4, 3, 4},
      {"add_row_broadcast", [](auto& g, auto a, auto b) { return g.add(a, b); }, 3, 4, 1, 4},
      {"mul", [](auto& g, auto a, auto b) { return g.mul(a, b); }, 3, 4, 3, 4},
      {"mul_col_broadcast", [](auto& g, auto a, auto b) { return g.mul(a, b); }, 3, 4, 3, 1},
      {"mul_scalar_broadcast", [](auto& g, auto a, auto b) { return g.mul(a, b); }, 3, 4, 1, 1},
      {"reciprocal", [](auto& g, auto a, auto) { return g.reciprocal(a); }, 3, 2, 1, 1},
      {"concat_cols", [](auto& g, auto a, auto b) { return g.concat_cols(a, b); }, 3, 2, 3, 4},
      {"row_softmax", [](auto& g, auto a, auto) { return g.row_softmax(a); }, 3, 5, 1, 1},
      {"segment_softmax", [pat](auto& g, auto, auto b) { return g.segment_softmax(pat, b); }, 1, 1, 8, 1},
      {"sigmoid", [](auto& g, auto a, auto) { return g.sigmoid(a); }, 3, 4, 1, 1},
      {"scale", [](auto& g, auto a, auto) { return g.scale(a, -2.5); }, 3, 4, 1, 1},
      {"row_sum", [](auto& g, auto a, auto) { return g.row_sum(a); }, 3, 4, 1, 1},
      {"col_sum", [](auto& g, auto a, auto) { return g.col_sum(a); }, 3, 4, 1, 1},
      {"mean", [](auto& g, auto a, auto) { return g.mean(a); }, 3, 4, 1, 1},
      {"masked_select",
       [](auto& g, auto a, auto) {
         return g.masked_select(a, DenseMatrix{{1, 0, 1, 1}, {0, 0, 1, 0}, {1, 1, 0, 0}});
       },
       3, 4, 1, 1},
      {"gather_rows", [](auto& g, auto a, auto) { return g.gather_rows(a, std::vector<std::size_t>{2, 0, 2}); },
       3, 4, 1, 1},
      {"bce",
       [](auto& g, auto a, auto) { return g.bce(g.sigmoid(a), DenseMatrix{{1}, {0}, {1}, {0}, {1}}); }, 5, 1,
       1, 1},
  };
  for (const auto& c : cases)
    for (std::uint64_t seed = 0; seed < 5; ++seed) EXPECT_LT(check_case(c, seed), 1e-4) << c.name << " seed " << seed;
}

TEST(Gradients, RandomFiveParameterGraphMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ExpressionGraph g;
    auto x = g.parameter("x", 4, 3);
    auto w1 = g.parameter("w1", 3, 3);
    auto b1 = g.parameter("b1", 1, 3);
    auto w2 = g.parameter("w2", 3, 1);
    auto gate = g.parameter("gate", 4, 1);
    auto h = g.sigmoid(g.add(g.matmul(x, w1), b1));
    auto att = g.row_softmax(h);
    auto z = g.mul(g.matmul(att, w2), g.sigmoid(gate));
    g.set_loss(g.bce(g.sigmoid(z), DenseMatrix{{1}, {0}, {0}, {1}}));
    std::vector<DenseMatrix> vals = {random_matrix(4, 3, rng), random_matrix(3, 3, rng), random_matrix(1, 3, rng),
                                     random_matrix(3, 1, rng), random_matrix(4, 1, rng)};
    Bindings b;
    const NodeId ids[] = {x, w1, b1, w2, gate};
    for (int i = 0; i < 5; ++i) b.bind(ids[i], vals[i]);
    EXPECT_LT(finite_difference_check(g, b), 1e-4) << "seed " << seed;
  }
}

TEST(Evaluate, Deterministic) {
  Rng rng(9);
  ExpressionGraph g;
  auto x = g.input("x", 5, 4);
  auto w = g.input("w", 4, 4);
  auto y = g.mean(g.row_softmax(g.matmul(x, w)));
  auto xv = random_matrix(5, 4, rng), wv = random_matrix(4, 4, rng);
  Bindings b;
  b.bind(x, xv);
  b.bind(w, wv);
  EXPECT_EQ(evaluate(g, b)[y].values(), evaluate(g, b)[y].values());
}

TEST(GradCheck, LinearLossIsExact) {
  ExpressionGraph g;
  auto x = g.parameter("x", 3, 3);
  g.set_loss(g.mean(g.mul(x, g.constant(DenseMatrix{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}))));
  DenseMatrix v(3, 3, 0.3);
  Bindings b;
  b.bind(x, v);
  EXPECT_LT(finite_difference_check(g, b), 1e-8);
}

TEST(GradCheck, ZeroEpsilonIsContractError) {
  ExpressionGraph g;
  auto x = g.parameter("x", 1, 1);
  g.set_loss(g.mean(x));
  DenseMatrix v(1, 1);
  Bindings b;
  b.bind(x, v);
  EXPECT_EQ(error_kind_of([&] { finite_difference_check(g, b, {.epsilon = 0.0}); }), ErrorKind::contract);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamSet p{{"w", DenseMatrix{{1, -2}}}};
  ParamSet g{{"w", DenseMatrix(1, 2)}};
  AdamState s;
  adam_update(p, g, s);
  EXPECT_EQ(p.at("w").values(), (std::vector<double>{1, -2}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParamSet p{{"w", DenseMatrix{{0.5, 0.5, 0.5}}}};
  ParamSet g{{"w", DenseMatrix{{3.0, -0.01, 1e-3}}}};
  AdamState s;
  s.learning_rate = 1e-3;
  adam_update(p, g, s);
  EXPECT_NEAR(p.at("w")[0], 0.5 - 1e-3, 1e-8);
  EXPECT_NEAR(p.at("w")[1], 0.5 + 1e-3, 1e-8);
  EXPECT_NEAR(p.at("w")[2], 0.5 - 1e-3, 1e-8);
}

TEST(Adam, MinimizesSquareAndMatchesScalarReference) {
  ParamSet p{{"x", DenseMatrix(1, 1, 1.0)}};
  AdamState s;
  s.learning_rate = 0.1;
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    ParamSet g{{"x", DenseMatrix(1, 1, 2.0 * p.at("x")[0])}};
    adam_update(p, g, s);
    const double gr = 2.0 * x;
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_LT(std::abs(p.at("x")[0]), 0.1);
  EXPECT_NEAR(p.at("x")[0], x, 1e-12);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamSet p{{"layer.weight", DenseMatrix(1, 1)}};
  ParamSet g{{"layer.weight", DenseMatrix(1, 1, std::nan(""))}};
  AdamState s;
  std::string msg;
  EXPECT_EQ(error_kind_of([&] { adam_update(p, g, s); }, &msg), ErrorKind::numeric);
  EXPECT_NE(msg.find("layer.weight"), std::string::npos);
  EXPECT_EQ(s.step, 0u);
}
