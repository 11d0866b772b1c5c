#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "disengcd/error.hpp"
#include "disengcd/numeric/matrix.hpp"

namespace disengcd {

/// Named trainable matrices. Ordered so that iteration (and serialization) is
/// deterministic.
using ParamSet = std::map<std::string, DenseMatrix>;

struct AdamMoments {
  DenseMatrix first;
  DenseMatrix second;
};

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam step over every parameter that has a gradient.
/// Parameters absent from `grads` are left untouched but the step counter is
/// shared, as in a single optimizer over the whole set.
inline void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    require(it != params.end(), ErrorKind::contract, "adam: gradient for unknown parameter '" + name + "'");
    require(it->second.same_shape(g), ErrorKind::shape,
            "adam: gradient for '" + name + "' is " + g.shape_string() + ", parameter is " +
                it->second.shape_string());
    require(g.all_finite(), ErrorKind::numeric, "adam: non-finite gradient for parameter '" + name + "'");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);

  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto& m = state.moments[name];
    if (m.first.empty() && !p.empty()) {
      m.first = DenseMatrix(p.rows(), p.cols());
      m.second = DenseMatrix(p.rows(), p.cols());
    }
    require(m.first.same_shape(p), ErrorKind::shape, "adam: moment shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.first[i] = state.beta1 * m.first[i] + (1.0 - state.beta1) * g[i];
      m.second[i] = state.beta2 * m.second[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m.first[i] / c1;
      const double vhat = m.second[i] / c2;
      p[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace disengcd
