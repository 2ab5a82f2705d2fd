#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cerrno>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace shiftlab {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Guard added inside every logarithm of a probability.
inline constexpr double kLogEps = 1e-6;

/// Tolerance used for "sums to one" checks on probability vectors.
inline constexpr double kSimplexTol = 1e-9;

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite loss or gradient encountered during training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed, inconsistent or version-mismatched file content.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A model was scored on the domain it was trained on.
struct ExclusionViolation : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {

// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1342543de82ef95ULL));
}

/// Shortest-safe decimal form: 17 significant digits round-trips a double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& s) {
  if (s.empty()) throw FormatError("empty numeric field");
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw FormatError("malformed number '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  if (s.empty()) throw FormatError("empty integer field");
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) throw FormatError("malformed integer '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint64(const std::string& s) {
  if (s.empty() || s[0] == '-') throw FormatError("malformed unsigned integer '" + s + "'");
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE) throw FormatError("malformed unsigned integer '" + s + "'");
  return v;
}

inline std::string join(const std::vector<double>& v, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace detail
}  // namespace shiftlab
