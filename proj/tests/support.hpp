#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "disengcd/dataset.hpp"
#include "disengcd/numeric/matrix.hpp"
#include "disengcd/rng.hpp"

namespace testing_support {

using namespace disengcd;

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  DenseMatrix m(r, c);
  for (auto& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

/// Dataset from raw parts; ids are "s0", "e0", "c0", ...
inline Dataset make_dataset(std::size_t n, std::size_t m, std::size_t k, std::vector<ResponseLog> logs,
                            std::vector<Triplet> q, std::vector<Triplet> dep = {}) {
  Dataset d;
  d.n_students = n;
  d.n_exercises = m;
  d.n_concepts = k;
  d.logs = std::move(logs);
  d.q_matrix = std::make_shared<const SparseMatrix>(m, k, std::move(q));
  d.dependency = std::make_shared<const SparseMatrix>(k, k, std::move(dep));
  auto ids = std::make_shared<IdMap>();
  for (std::size_t i = 0; i < n; ++i) ids->students.push_back("s" + std::to_string(i));
  for (std::size_t j = 0; j < m; ++j) ids->exercises.push_back("e" + std::to_string(j));
  for (std::size_t c = 0; c < k; ++c) ids->concepts.push_back("c" + std::to_string(c));
  d.ids = std::move(ids);
  validate(d);
  return d;
}

/// 4 students, 3 exercises, 2 concepts, one dependency edge.
inline Dataset toy_dataset() {
  std::vector<ResponseLog> logs = {{0, 0, 1}, {0, 1, 0}, {0, 2, 1}, {1, 0, 0}, {1, 2, 1}, {2, 1, 1},
                                   {2, 2, 0}, {3, 0, 1}, {3, 1, 1}, {3, 2, 0}};
  return make_dataset(4, 3, 2, std::move(logs), {{0, 0, 1}, {1, 1, 1}, {2, 0, 1}, {2, 1, 1}}, {{1, 0, 1}});
}

/// A fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("disengcd_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support

namespace testing_support {

/// Runs `f` and returns the kind of the disengcd::Error it throws; fails the
/// test when nothing (or something else) is thrown.
template <class F>
std::optional<disengcd::ErrorKind> error_kind_of(F&& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const disengcd::Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace testing_support
