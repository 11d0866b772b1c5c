#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "disengcd/numeric/expression.hpp"
#include "disengcd/rng.hpp"

namespace disengcd {

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Entries sampled per parameter; 0 checks every entry.
  std::size_t max_entries_per_parameter = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients against central differences and returns
/// the largest |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double finite_difference_check(const ExpressionGraph& graph, const Bindings& point,
                                      const GradCheckOptions& opts = {}) {
  require(opts.epsilon > 0.0, ErrorKind::contract, "finite_difference_check: epsilon must be > 0");

  const auto analytic = gradients(graph, evaluate(graph, point));
  const NodeId loss = graph.loss();
  Rng rng(opts.seed);
  double worst = 0.0;

  for (auto id : graph.trainable()) {
    const DenseMatrix* bound = point.find(id);
    require(bound != nullptr, ErrorKind::contract, graph.describe(id) + " is not bound");
    DenseMatrix probe = *bound;
    Bindings local = point;
    local.bind(id, probe);

    std::vector<std::size_t> entries(probe.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (opts.max_entries_per_parameter && entries.size() > opts.max_entries_per_parameter) {
      rng.shuffle(entries);
      entries.resize(opts.max_entries_per_parameter);
    }

    const auto& g = analytic.at(id);
    for (auto idx : entries) {
      const double saved = probe[idx];
      probe[idx] = saved + opts.epsilon;
      const double up = evaluate(graph, local)[loss][0];
      probe[idx] = saved - opts.epsilon;
      const double down = evaluate(graph, local)[loss][0];
      probe[idx] = saved;
      const double numeric = (up - down) / (2.0 * opts.epsilon);
      const double a = g[idx];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace disengcd
