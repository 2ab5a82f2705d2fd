#pragma once

// Synthetic domains with controllable covariate shift, label shift and
// adversarial label permutation, plus the plain-text dataset format.

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "shiftlab/common.hpp"

namespace shiftlab {

struct Dataset {
  Matrix features;                        // n x d
  std::optional<std::vector<int>> labels; // -1 never stored; absent means unlabeled
  int num_classes = 2;
  std::string domain_id = "domain";

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool labeled() const { return labels.has_value(); }

  /// Throws ParameterError if any invariant is broken.
  void validate() const {
    if (features.rows() < 1 || features.cols() < 1)
      throw ParameterError("dataset must have n >= 1 and d >= 1");
    if (num_classes < 2) throw ParameterError("dataset must have K >= 2");
    if (!features.allFinite()) throw ParameterError("dataset features must be finite");
    if (domain_id.empty() || domain_id.find_first_of(" \t\r\n,=") != std::string::npos)
      throw ParameterError("domain id must be non-empty without whitespace, ',' or '='");
    if (labels) {
      if (labels->size() != size()) throw ParameterError("label count differs from sample count");
      for (int y : *labels)
        if (y < 0 || y >= num_classes)
          throw ParameterError("label " + std::to_string(y) + " outside [0, K)");
    }
  }

  Dataset unlabeled() const {
    Dataset out = *this;
    out.labels.reset();
    return out;
  }

  /// Rows selected by `idx`, in the given order.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.num_classes = num_classes;
    out.domain_id = domain_id;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    if (labels) out.labels.emplace();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
      if (labels) out.labels->push_back((*labels)[idx[i]]);
    }
    return out;
  }
};

inline bool operator==(const Dataset& a, const Dataset& b) {
  return a.num_classes == b.num_classes && a.domain_id == b.domain_id && a.labels == b.labels &&
         a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
         a.features == b.features;
}

enum class ShiftKind { rotation, translation, label_prior, label_permutation };

struct ShiftSpec {
  ShiftKind kind = ShiftKind::rotation;
  // Degrees for rotation (one entry), per-coordinate offsets for translation
  // (one entry broadcasts), a probability vector for label-prior.
  std::vector<double> magnitude{0.0};
  std::uint64_t seed = 0;

  static ShiftSpec rotate(double degrees) { return {ShiftKind::rotation, {degrees}, 0}; }
  static ShiftSpec translate(std::vector<double> offset) {
    return {ShiftKind::translation, std::move(offset), 0};
  }
  static ShiftSpec label_prior(std::vector<double> priors, std::uint64_t seed) {
    return {ShiftKind::label_prior, std::move(priors), seed};
  }
  static ShiftSpec permute_labels(std::uint64_t seed) {
    return {ShiftKind::label_permutation, {}, seed};
  }
};

namespace detail {

inline void check_priors(const std::vector<double>& priors, int K) {
  if (static_cast<int>(priors.size()) != K)
    throw ParameterError("priors must have exactly K = " + std::to_string(K) + " entries");
  double sum = 0.0;
  for (double p : priors) {
    if (!std::isfinite(p) || p < 0.0) throw ParameterError("priors must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSimplexTol) throw ParameterError("priors must sum to 1");
}

inline void check_shift(const ShiftSpec& s) {
  switch (s.kind) {
    case ShiftKind::rotation:
      if (s.magnitude.size() != 1) throw ParameterError("rotation takes a single angle");
      if (!(s.magnitude[0] >= 0.0 && s.magnitude[0] < 360.0))
        throw ParameterError("rotation must lie in [0, 360) degrees");
      break;
    case ShiftKind::translation:
      if (s.magnitude.empty()) throw ParameterError("translation needs at least one offset");
      for (double m : s.magnitude)
        if (!std::isfinite(m)) throw ParameterError("translation offsets must be finite");
      break;
    case ShiftKind::label_prior:
      check_priors(s.magnitude, static_cast<int>(s.magnitude.size()));
      break;
    case ShiftKind::label_permutation:
      break;
  }
}

/// Seeded permutation of [0, K) without fixed points (rejection sampling).
inline std::vector<int> derangement(int K, std::uint64_t seed) {
  std::vector<int> perm(static_cast<std::size_t>(K));
  std::mt19937_64 rng(derive_seed(seed, 0xde));
  while (true) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    bool fixed = false;
    for (int k = 0; k < K; ++k) fixed = fixed || perm[static_cast<std::size_t>(k)] == k;
    if (!fixed) return perm;
  }
}

inline std::vector<int> draw_labels(std::size_t n, const std::vector<double>& priors, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x1ab));
  std::discrete_distribution<int> dist(priors.begin(), priors.end());
  std::vector<int> labels(n);
  for (auto& y : labels) y = dist(rng);
  return labels;
}

inline void rotate_about(Matrix& X, double cx, double cy, double degrees) {
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double x = X(i, 0) - cx, y = X(i, 1) - cy;
    X(i, 0) = cx + c * x - s * y;
    X(i, 1) = cy + s * x + c * y;
  }
}

}  // namespace detail

/// Centroid of the two noiseless canonical half circles.
inline constexpr double kMoonsCentroidX = 0.5;
inline constexpr double kMoonsCentroidY = 0.25;

/// Rotates a two-dimensional dataset about the canonical moons centroid.
inline Dataset rotate_dataset(Dataset ds, double degrees) {
  if (ds.dim() != 2) throw ParameterError("rotation requires d = 2");
  detail::rotate_about(ds.features, kMoonsCentroidX, kMoonsCentroidY, degrees);
  return ds;
}

/// Two interleaving half circles. Class 0 is the upper arc (cos t, sin t),
/// class 1 the lower arc (1 - cos t, 0.5 - sin t), t ~ U[0, pi].
/// Without a label-prior shift the class sizes are (n - n/2, n/2).
inline Dataset gen_two_moons(std::size_t n, double noise, const ShiftSpec& shift, std::uint64_t seed) {
  if (n < 2) throw ParameterError("two-moons needs n >= 2");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ParameterError("noise must be a non-negative stddev");
  detail::check_shift(shift);

  std::vector<int> labels(n);
  if (shift.kind == ShiftKind::label_prior) {
    detail::check_priors(shift.magnitude, 2);
    labels = detail::draw_labels(n, shift.magnitude, shift.seed);
  } else {
    const std::size_t n_lower = n / 2;
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < n - n_lower ? 0 : 1;
  }

  std::mt19937_64 angle_rng(detail::derive_seed(seed, 1));
  std::mt19937_64 noise_rng(detail::derive_seed(seed, 2));
  std::uniform_real_distribution<double> angle(0.0, M_PI);
  std::normal_distribution<double> jitter(0.0, 1.0);

  Dataset ds;
  ds.num_classes = 2;
  ds.domain_id = "moons";
  ds.features.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = angle(angle_rng);
    const auto r = static_cast<Eigen::Index>(i);
    if (labels[i] == 0) {
      ds.features(r, 0) = std::cos(t);
      ds.features(r, 1) = std::sin(t);
    } else {
      ds.features(r, 0) = 1.0 - std::cos(t);
      ds.features(r, 1) = 0.5 - std::sin(t);
    }
  }
  if (noise > 0.0) {
    for (Eigen::Index i = 0; i < ds.features.rows(); ++i)
      for (Eigen::Index j = 0; j < 2; ++j) ds.features(i, j) += noise * jitter(noise_rng);
  }

  switch (shift.kind) {
    case ShiftKind::rotation:
      if (shift.magnitude[0] != 0.0)
        detail::rotate_about(ds.features, kMoonsCentroidX, kMoonsCentroidY, shift.magnitude[0]);
      break;
    case ShiftKind::translation:
      for (Eigen::Index j = 0; j < 2; ++j)
        ds.features.col(j).array() += shift.magnitude.size() == 1
                                          ? shift.magnitude[0]
                                          : shift.magnitude.at(static_cast<std::size_t>(j));
      break;
    case ShiftKind::label_permutation: {
      const auto perm = detail::derangement(2, shift.seed);
      for (auto& y : labels) y = perm[static_cast<std::size_t>(y)];
      break;
    }
    case ShiftKind::label_prior:
      break;
  }
  ds.labels = std::move(labels);
  return ds;
}

/// Isotropic unit-variance Gaussian classes. Class k is centred at distance
/// `separation` from the origin along +e_k (k < d), -e_{k-d} (d <= k < 2d),
/// or a seeded random unit direction beyond that.
inline Dataset gen_gaussian_blobs(std::size_t n, int K, int d, double separation,
                                  const std::vector<double>& priors, std::uint64_t seed) {
  if (n < 1) throw ParameterError("blobs needs n >= 1");
  if (K < 2) throw ParameterError("blobs needs K >= 2");
  if (d < 1) throw ParameterError("blobs needs d >= 1");
  if (!std::isfinite(separation)) throw ParameterError("separation must be finite");
  detail::check_priors(priors, K);

  Matrix means = Matrix::Zero(K, d);
  std::mt19937_64 dir_rng(detail::derive_seed(seed, 3));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < K; ++k) {
    if (k < d) {
      means(k, k) = separation;
    } else if (k < 2 * d) {
      means(k, k - d) = -separation;
    } else {
      Vector u(d);
      do {
        for (int j = 0; j < d; ++j) u(j) = gauss(dir_rng);
      } while (u.norm() == 0.0);
      means.row(k) = separation * u.transpose() / u.norm();
    }
  }

  auto labels = detail::draw_labels(n, priors, seed);
  std::mt19937_64 noise_rng(detail::derive_seed(seed, 4));
  Dataset ds;
  ds.num_classes = K;
  ds.domain_id = "blobs";
  ds.features.resize(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      ds.features(static_cast<Eigen::Index>(i), j) = means(labels[i], j) + gauss(noise_rng);
  ds.labels = std::move(labels);
  return ds;
}

/// Copy of `base` whose labels are relabelled through a seeded derangement.
inline Dataset make_adversarial_source(const Dataset& base, std::uint64_t seed) {
  if (!base.labeled()) throw ParameterError("adversarial source needs a labeled dataset");
  Dataset out = base;
  const auto perm = detail::derangement(base.num_classes, seed);
  for (auto& y : *out.labels) y = perm[static_cast<std::size_t>(y)];
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified (when labeled) seeded partition. The train part holds
/// round(n * f) samples; per-class quotas use largest remainders.
inline SplitIndices split_indices(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ParameterError("train fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  std::mt19937_64 rng(detail::derive_seed(seed, 5));

  std::vector<std::vector<std::size_t>> groups;
  if (ds.labeled()) {
    groups.resize(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < n; ++i) groups[static_cast<std::size_t>((*ds.labels)[i])].push_back(i);
  } else {
    groups.resize(1);
    groups[0].resize(n);
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }

  std::vector<std::size_t> quota(groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double exact = static_cast<double>(groups[g].size()) * train_fraction;
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[g];
    remainders.emplace_back(exact - std::floor(exact), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n_train && r < remainders.size(); ++r) {
    const auto g = remainders[r].second;
    if (quota[g] < groups[g].size()) {
      ++quota[g];
      ++assigned;
    }
  }

  SplitIndices out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto members = groups[g];
    std::shuffle(members.begin(), members.end(), rng);
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[g]));
    out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(quota[g]), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  const auto idx = split_indices(ds, train_fraction, seed);
  return {ds.subset(idx.train), ds.subset(idx.test)};
}

// ---------------------------------------------------------------------------
// File format:
//   #shiftlab-dataset v1 n=<n> d=<d> K=<K> domain=<id>
//   x_1,...,x_d,label      (label -1 marks an unlabeled sample)

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  ds.validate();
  os << "#shiftlab-dataset v1 n=" << ds.size() << " d=" << ds.dim() << " K=" << ds.num_classes
     << " domain=" << ds.domain_id << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.dim(); ++j)
      os << detail::format_double(ds.features(static_cast<Eigen::Index>(i), j)) << ',';
    os << (ds.labels ? (*ds.labels)[i] : -1) << '\n';
  }
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty dataset file");
  std::istringstream header(line);
  std::string magic, version;
  header >> magic >> version;
  if (magic != "#shiftlab-dataset") throw FormatError("not a shiftlab dataset file");
  if (version != "v1") throw FormatError("unsupported dataset version '" + version + "'");

  long long n = -1, d = -1, K = -1;
  std::string domain;
  for (std::string field; header >> field;) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("malformed header field '" + field + "'");
    const auto key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "n") n = detail::parse_int(value);
    else if (key == "d") d = detail::parse_int(value);
    else if (key == "K") K = detail::parse_int(value);
    else if (key == "domain") domain = value;
    else throw FormatError("unknown header field '" + key + "'");
  }
  if (n < 1 || d < 1 || K < 2 || domain.empty()) throw FormatError("incomplete or invalid dataset header");

  Dataset ds;
  ds.num_classes = static_cast<int>(K);
  ds.domain_id = domain;
  ds.features.resize(n, d);
  std::vector<int> labels(static_cast<std::size_t>(n));
  bool any_labeled = false, any_unlabeled = false;
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw FormatError("dataset truncated at row " + std::to_string(i));
    const auto fields = detail::split(line, ',');
    if (static_cast<long long>(fields.size()) != d + 1)
      throw FormatError("row " + std::to_string(i) + " has the wrong field count");
    for (long long j = 0; j < d; ++j) ds.features(i, j) = detail::parse_double(fields[static_cast<std::size_t>(j)]);
    const auto y = detail::parse_int(fields.back());
    if (y == -1) {
      any_unlabeled = true;
    } else if (y < 0 || y >= K) {
      throw FormatError("label " + std::to_string(y) + " out of range on row " + std::to_string(i));
    } else {
      any_labeled = true;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(y);
  }
  if (std::getline(is, line) && !line.empty()) throw FormatError("trailing content after dataset rows");
  if (any_labeled && any_unlabeled) throw FormatError("dataset mixes labeled and unlabeled rows");
  if (any_labeled) ds.labels = std::move(labels);
  if (!ds.features.allFinite()) throw FormatError("dataset contains non-finite features");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_dataset(is);
}

}  // namespace shiftlab
