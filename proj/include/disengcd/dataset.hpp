#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "disengcd/error.hpp"
#include "disengcd/numeric/matrix.hpp"
#include "disengcd/rng.hpp"

namespace disengcd {

struct ResponseLog {
  std::size_t student = 0;
  std::size_t exercise = 0;
  int response = 0;

  friend bool operator==(const ResponseLog&, const ResponseLog&) = default;
};

/// External ids in index order, kept so reports can name things.
struct IdMap {
  std::vector<std::string> students;
  std::vector<std::string> exercises;
  std::vector<std::string> concepts;
};

/// Students, exercises and concepts with response logs, the exercise x concept
/// Q-matrix (entry (j,k) present iff exercise j involves concept k) and the
/// concept x concept dependency matrix (entry (k,m) iff k relies on m).
/// Splits share Q, D and the id map.
struct Dataset {
  std::size_t n_students = 0;
  std::size_t n_exercises = 0;
  std::size_t n_concepts = 0;
  std::vector<ResponseLog> logs;
  std::shared_ptr<const SparseMatrix> q_matrix;
  std::shared_ptr<const SparseMatrix> dependency;
  std::shared_ptr<const IdMap> ids;
  std::vector<std::string> warnings;

  Dataset with_logs(std::vector<ResponseLog> new_logs) const {
    Dataset d = *this;
    d.logs = std::move(new_logs);
    d.warnings.clear();
    return d;
  }

  /// Concepts of exercise j, ascending.
  std::vector<std::size_t> concepts_of(std::size_t exercise) const {
    std::vector<std::size_t> out;
    for (auto e = q_matrix->row_begin(exercise); e < q_matrix->row_end(exercise); ++e)
      out.push_back(q_matrix->col(e));
    return out;
  }

  std::vector<std::vector<std::size_t>> logs_by_student() const {
    std::vector<std::vector<std::size_t>> out(n_students);
    for (std::size_t t = 0; t < logs.size(); ++t) out[logs[t].student].push_back(t);
    return out;
  }
};

/// Checks every Dataset invariant, throwing a validation error that lists the
/// offenders.
inline void validate(const Dataset& d) {
  require(d.q_matrix != nullptr, ErrorKind::validation, "dataset has no Q-matrix");
  require(d.q_matrix->rows() == d.n_exercises && d.q_matrix->cols() == d.n_concepts,
          ErrorKind::validation, "Q-matrix shape does not match exercise/concept counts");
  if (d.dependency) {
    require(d.dependency->rows() == d.n_concepts && d.dependency->cols() == d.n_concepts,
            ErrorKind::validation, "dependency matrix shape does not match concept count");
    for (std::size_t k = 0; k < d.n_concepts; ++k)
      for (auto e = d.dependency->row_begin(k); e < d.dependency->row_end(k); ++e)
        require(d.dependency->col(e) != k, ErrorKind::validation,
                "concept " + std::to_string(k) + " depends on itself");
  }

  std::set<std::size_t> conceptless;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& l : d.logs) {
    require(l.student < d.n_students && l.exercise < d.n_exercises, ErrorKind::validation,
            "log index out of range: student " + std::to_string(l.student) + ", exercise " +
                std::to_string(l.exercise));
    require(l.response == 0 || l.response == 1, ErrorKind::validation,
            "response must be 0 or 1, got " + std::to_string(l.response));
    require(seen.insert({l.student, l.exercise}).second, ErrorKind::validation,
            "duplicate log for student " + std::to_string(l.student) + ", exercise " +
                std::to_string(l.exercise));
    if (d.q_matrix->degree(l.exercise) == 0) conceptless.insert(l.exercise);
  }
  if (!conceptless.empty()) {
    std::string msg = "exercises without any concept:";
    for (auto j : conceptless)
      msg += " " + (d.ids && j < d.ids->exercises.size() ? d.ids->exercises[j] : std::to_string(j));
    fail(ErrorKind::validation, msg);
  }
}

namespace csv {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && ws(s[b])) ++b;
  return s.substr(b);
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Reads a headed CSV file, checking the header and the field count of every row.
inline std::vector<std::vector<std::string>> read(const std::filesystem::path& path,
                                                  const std::vector<std::string>& header) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::config, "cannot open file: " + path.string());
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool have_header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);
      require(fields == header, ErrorKind::validation,
              path.string() + ": expected header '" + [&] {
                std::string h;
                for (const auto& f : header) h += (h.empty() ? "" : ",") + f;
                return h;
              }() + "'");
      have_header = true;
      continue;
    }
    require(fields.size() == header.size(), ErrorKind::validation,
            path.string() + ":" + std::to_string(lineno) + ": expected " +
                std::to_string(header.size()) + " fields");
    rows.push_back(std::move(fields));
  }
  require(have_header, ErrorKind::validation, path.string() + ": empty file");
  return rows;
}

}  // namespace csv

namespace detail {

struct Interner {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> names;

  std::size_t intern(const std::string& s) {
    auto [it, fresh] = index.try_emplace(s, names.size());
    if (fresh) names.push_back(s);
    return it->second;
  }
  std::optional<std::size_t> find(const std::string& s) const {
    auto it = index.find(s);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

}  // namespace detail

/// Loads logs, Q-matrix and optional dependency CSVs. Exercise indices follow
/// first appearance in the Q file, concept indices first appearance in Q then
/// D, student indices first appearance in the logs. A duplicate (student,
/// exercise) log keeps its first occurrence and records a warning.
inline Dataset load_dataset(const std::filesystem::path& logs_path, const std::filesystem::path& q_path,
                            const std::optional<std::filesystem::path>& dep_path = std::nullopt) {
  detail::Interner students, exercises, concepts;

  std::vector<Triplet> q_entries;
  std::set<std::pair<std::size_t, std::size_t>> q_seen;
  for (const auto& row : csv::read(q_path, {"exercise_id", "concept_id"})) {
    const auto j = exercises.intern(row[0]);
    const auto k = concepts.intern(row[1]);
    if (q_seen.insert({j, k}).second) q_entries.push_back({j, k, 1.0});
  }

  std::vector<Triplet> d_entries;
  if (dep_path) {
    std::set<std::pair<std::size_t, std::size_t>> d_seen;
    for (const auto& row : csv::read(*dep_path, {"concept_id", "prerequisite_concept_id"})) {
      require(row[0] != row[1], ErrorKind::validation,
              "dependency file: concept '" + row[0] + "' cannot rely on itself");
      const auto k = concepts.intern(row[0]);
      const auto m = concepts.intern(row[1]);
      if (d_seen.insert({k, m}).second) d_entries.push_back({k, m, 1.0});
    }
  }

  Dataset d;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::set<std::string> unknown;
  for (const auto& row : csv::read(logs_path, {"student_id", "exercise_id", "response"})) {
    const auto j = exercises.find(row[1]);
    if (!j) {
      unknown.insert(row[1]);
      continue;
    }
    require(row[2] == "0" || row[2] == "1", ErrorKind::validation,
            "response for student '" + row[0] + "', exercise '" + row[1] + "' must be 0 or 1, got '" +
                row[2] + "'");
    const auto i = students.intern(row[0]);
    if (!seen.insert({i, *j}).second) {
      d.warnings.push_back("duplicate log for student '" + row[0] + "', exercise '" + row[1] +
                           "' ignored");
      continue;
    }
    d.logs.push_back({i, *j, row[2] == "1" ? 1 : 0});
  }
  if (!unknown.empty()) {
    std::string msg = "logs reference exercises without any concept in the Q-matrix:";
    for (const auto& u : unknown) msg += " " + u;
    fail(ErrorKind::validation, msg);
  }

  d.n_students = students.names.size();
  d.n_exercises = exercises.names.size();
  d.n_concepts = concepts.names.size();
  d.q_matrix = std::make_shared<const SparseMatrix>(d.n_exercises, d.n_concepts, std::move(q_entries));
  d.dependency = std::make_shared<const SparseMatrix>(d.n_concepts, d.n_concepts, std::move(d_entries));
  d.ids = std::make_shared<const IdMap>(
      IdMap{std::move(students.names), std::move(exercises.names), std::move(concepts.names)});
  validate(d);
  return d;
}

/// Writes the dataset back out in the loader's CSV formats.
inline void write_dataset(const Dataset& d, const std::filesystem::path& logs_path,
                          const std::filesystem::path& q_path,
                          const std::optional<std::filesystem::path>& dep_path) {
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::config, "cannot write file: " + p.string());
    return out;
  };
  const IdMap& ids = *d.ids;
  {
    auto out = open(logs_path);
    out << "student_id,exercise_id,response\n";
    for (const auto& l : d.logs)
      out << ids.students[l.student] << ',' << ids.exercises[l.exercise] << ',' << l.response << '\n';
  }
  {
    auto out = open(q_path);
    out << "exercise_id,concept_id\n";
    for (const auto& t : d.q_matrix->triplets()) out << ids.exercises[t.row] << ',' << ids.concepts[t.col] << '\n';
  }
  if (dep_path) {
    auto out = open(*dep_path);
    out << "concept_id,prerequisite_concept_id\n";
    if (d.dependency)
      for (const auto& t : d.dependency->triplets())
        out << ids.concepts[t.row] << ',' << ids.concepts[t.col] << '\n';
  }
}

/// Drops students with fewer than `min_logs` logs (dataset preparation filter).
inline Dataset filter_min_logs(const Dataset& d, std::size_t min_logs) {
  const auto by_student = d.logs_by_student();
  std::vector<ResponseLog> kept;
  for (const auto& l : d.logs)
    if (by_student[l.student].size() >= min_logs) kept.push_back(l);
  return d.with_logs(std::move(kept));
}

struct SplitSpec {
  double train = 0.6;
  double val = 0.1;
  double test = 0.3;
  std::uint64_t seed = 0;

  void check() const {
    for (double f : {train, val, test})
      require(f > 0.0 && f < 1.0, ErrorKind::contract, "split fractions must each lie in (0,1)");
    require(std::abs(train + val + test - 1.0) <= 1e-9, ErrorKind::contract,
            "split fractions must sum to 1");
  }
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::string> warnings;
};

/// Per-student split after a seeded shuffle of each student's logs. Students
/// with fewer than three logs go entirely to train.
inline SplitResult split(const Dataset& d, const SplitSpec& spec) {
  spec.check();
  Rng rng(spec.seed);
  std::vector<ResponseLog> tr, va, te;
  std::vector<std::string> warnings;
  for (auto& idx : d.logs_by_student()) {
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    if (n == 0) continue;
    if (n < 3) {
      for (auto t : idx) tr.push_back(d.logs[t]);
      warnings.push_back("student " + std::to_string(d.logs[idx[0]].student) + " has " +
                         std::to_string(n) + " logs; all assigned to train");
      continue;
    }
    const double nd = static_cast<double>(n);
    std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.val * nd)));
    std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.test * nd)));
    while (n_val + n_test + 1 > n) (n_test >= n_val ? n_test : n_val) -= 1;
    const std::size_t n_train = n - n_val - n_test;
    for (std::size_t t = 0; t < n; ++t) {
      auto& dst = t < n_train ? tr : (t < n_train + n_val ? va : te);
      dst.push_back(d.logs[idx[t]]);
    }
  }
  SplitResult out{d.with_logs(std::move(tr)), d.with_logs(std::move(va)), d.with_logs(std::move(te)),
                  std::move(warnings)};
  return out;
}

/// Appends ceil(ratio * n) random interactions per student: exercises the
/// student has not answered in this split, responses Bernoulli(0.5).
/// Original logs are never modified.
inline Dataset inject_noise(const Dataset& d, double ratio, std::uint64_t seed) {
  require(ratio >= 0.0 && ratio <= 1.0, ErrorKind::contract, "noise ratio must lie in [0,1]");
  Dataset out = d.with_logs(d.logs);
  if (ratio == 0.0) return out;
  Rng rng(seed);
  const auto by_student = d.logs_by_student();
  for (std::size_t i = 0; i < d.n_students; ++i) {
    const auto n = by_student[i].size();
    if (n == 0) continue;
    // Guard against ratio * n landing a hair above an integer.
    const auto want = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
    std::vector<char> answered(d.n_exercises, 0);
    for (auto t : by_student[i]) answered[d.logs[t].exercise] = 1;
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < d.n_exercises; ++j)
      if (!answered[j]) pool.push_back(j);
    if (pool.empty()) {
      out.warnings.push_back("student " + std::to_string(i) + " answered every exercise; no noise added");
      continue;
    }
    if (pool.size() < want)
      out.warnings.push_back("student " + std::to_string(i) + ": only " + std::to_string(pool.size()) +
                             " unanswered exercises for " + std::to_string(want) + " noise logs");
    const auto take = std::min(want, pool.size());
    for (std::size_t s = 0; s < take; ++s) {
      const auto pick = s + rng.below(pool.size() - s);
      std::swap(pool[s], pool[pick]);
      out.logs.push_back({i, pool[s], rng.bernoulli(0.5) ? 1 : 0});
    }
  }
  return out;
}

/// Seeded uniform deletion of round(fraction * |logs|) logs, never taking a
/// student below one log.
inline Dataset delete_records(const Dataset& d, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction < 1.0, ErrorKind::contract, "delete fraction must lie in [0,1)");
  if (fraction == 0.0) return d.with_logs(d.logs);
  Rng rng(seed);
  std::vector<std::size_t> order(d.logs.size());
  for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
  rng.shuffle(order);
  std::vector<std::size_t> remaining(d.n_students, 0);
  for (const auto& l : d.logs) ++remaining[l.student];
  auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d.logs.size())));
  std::vector<char> drop(d.logs.size(), 0);
  for (auto t : order) {
    if (target == 0) break;
    auto& left = remaining[d.logs[t].student];
    if (left <= 1) continue;
    --left;
    drop[t] = 1;
    --target;
  }
  std::vector<ResponseLog> kept;
  for (std::size_t t = 0; t < d.logs.size(); ++t)
    if (!drop[t]) kept.push_back(d.logs[t]);
  return d.with_logs(std::move(kept));
}

struct SyntheticTruth {
  DenseMatrix mastery;     // students x concepts, in [0,1]
  DenseMatrix difficulty;  // exercises x concepts, in [0,1]
};

struct SyntheticData {
  Dataset dataset;
  SyntheticTruth truth;
};

/// Logit slope of the synthetic response model.
inline constexpr double kSyntheticSlope = 5.0;

/// Probability of a correct response under the generating model:
/// sigmoid(5 * mean over the exercise's concepts of (mastery - difficulty)).
inline double synthetic_probability(const Dataset& d, const SyntheticTruth& truth, std::size_t student,
                                    std::size_t exercise) {
  double acc = 0.0;
  std::size_t n = 0;
  for (auto e = d.q_matrix->row_begin(exercise); e < d.q_matrix->row_end(exercise); ++e, ++n) {
    const auto k = d.q_matrix->col(e);
    acc += truth.mastery(student, k) - truth.difficulty(exercise, k);
  }
  return sigmoid(kSyntheticSlope * acc / static_cast<double>(n));
}

/// Draws logs (distinct exercises per student) with responses from the
/// generating model. Used both by generate_synthetic and by tests that need
/// a fixed truth.
inline std::vector<ResponseLog> sample_synthetic_logs(const Dataset& shape, const SyntheticTruth& truth,
                                                      std::size_t logs_per_student, Rng& rng) {
  std::vector<ResponseLog> logs;
  const auto per = std::min(logs_per_student, shape.n_exercises);
  std::vector<std::size_t> pool(shape.n_exercises);
  for (std::size_t i = 0; i < shape.n_students; ++i) {
    for (std::size_t j = 0; j < pool.size(); ++j) pool[j] = j;
    for (std::size_t s = 0; s < per; ++s) {
      const auto pick = s + rng.below(pool.size() - s);
      std::swap(pool[s], pool[pick]);
      const auto j = pool[s];
      const int r = rng.bernoulli(synthetic_probability(shape, truth, i, j)) ? 1 : 0;
      logs.push_back({i, j, r});
    }
  }
  return logs;
}

inline SyntheticData generate_synthetic(std::size_t n_students, std::size_t n_exercises,
                                        std::size_t n_concepts, std::size_t logs_per_student,
                                        std::uint64_t seed) {
  require(n_students >= 1 && n_exercises >= 1 && n_concepts >= 1 && logs_per_student >= 1,
          ErrorKind::contract, "generate_synthetic: all counts must be >= 1");
  Rng rng(seed);
  SyntheticTruth truth{DenseMatrix(n_students, n_concepts), DenseMatrix(n_exercises, n_concepts)};
  for (auto& v : truth.mastery.values()) v = rng.uniform();
  for (auto& v : truth.difficulty.values()) v = rng.uniform();

  std::vector<Triplet> q;
  std::vector<std::size_t> cpool(n_concepts);
  for (std::size_t j = 0; j < n_exercises; ++j) {
    const auto count = std::min<std::size_t>(1 + rng.below(3), n_concepts);
    for (std::size_t k = 0; k < n_concepts; ++k) cpool[k] = k;
    for (std::size_t s = 0; s < count; ++s) {
      const auto pick = s + rng.below(n_concepts - s);
      std::swap(cpool[s], cpool[pick]);
      q.push_back({j, cpool[s], 1.0});
    }
  }

  // Random DAG: a random topological order, each forward pair linked with
  // probability 0.1; the later concept relies on the earlier one.
  std::vector<std::size_t> order(n_concepts);
  for (std::size_t k = 0; k < n_concepts; ++k) order[k] = k;
  rng.shuffle(order);
  std::vector<Triplet> dep;
  for (std::size_t a = 0; a < n_concepts; ++a)
    for (std::size_t b = a + 1; b < n_concepts; ++b)
      if (rng.bernoulli(0.1)) dep.push_back({order[b], order[a], 1.0});

  Dataset d;
  d.n_students = n_students;
  d.n_exercises = n_exercises;
  d.n_concepts = n_concepts;
  d.q_matrix = std::make_shared<const SparseMatrix>(n_exercises, n_concepts, std::move(q));
  d.dependency = std::make_shared<const SparseMatrix>(n_concepts, n_concepts, std::move(dep));
  auto ids = std::make_shared<IdMap>();
  for (std::size_t i = 0; i < n_students; ++i) ids->students.push_back("s" + std::to_string(i));
  for (std::size_t j = 0; j < n_exercises; ++j) ids->exercises.push_back("e" + std::to_string(j));
  for (std::size_t k = 0; k < n_concepts; ++k) ids->concepts.push_back("c" + std::to_string(k));
  d.ids = std::move(ids);
  d.logs = sample_synthetic_logs(d, truth, logs_per_student, rng);
  validate(d);
  return {std::move(d), std::move(truth)};
}

}  // namespace disengcd
