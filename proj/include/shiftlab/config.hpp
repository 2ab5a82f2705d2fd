#pragma once

// Run configuration: flat `key = value` text with [section] headers.
//
//   [source]  training of per-party source models
//   [uda]     UDA runs
//   [sfda]    SFDA / MSFDA / expanded-base runs
//   [mea]     weight estimation
//   [bench]   suite parameters
//   [paths]   default input/output locations
//
// Unknown sections or keys are rejected. Comments start with ';'.

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "shiftlab/bench.hpp"

namespace shiftlab {

struct PathConfig {
  std::string source;  // labeled source dataset
  std::string target;  // target dataset (labels, if any, are stripped before training)
  std::string out = "shiftlab-out";
};

struct RunConfig {
  BenchConfig bench;
  PathConfig paths;

  double mea_lambda() const { return bench.sfda_cfg.lambda_mea; }
};

/// One configurable field. `get` renders the current value; `set` parses.
struct ConfigKey {
  std::string section;
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

namespace detail {

inline std::string render(long long v) { return std::to_string(v); }
inline std::string render(int v) { return std::to_string(v); }
inline std::string render(std::size_t v) { return std::to_string(v); }
inline std::string render(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
inline std::string render(const std::string& v) { return v; }

inline void assign(long long& dst, const std::string& s) { dst = parse_int(s); }
inline void assign(int& dst, const std::string& s) { dst = static_cast<int>(parse_int(s)); }
inline void assign(std::size_t& dst, const std::string& s) {
  const auto v = parse_int(s);
  if (v < 0) throw ParameterError("expected a non-negative count, got '" + s + "'");
  dst = static_cast<std::size_t>(v);
}
inline void assign(double& dst, const std::string& s) { dst = parse_double(s); }
inline void assign(std::string& dst, const std::string& s) { dst = s; }

template <class Member>
ConfigKey field(std::string section, std::string key, std::string help, Member member) {
  return {std::move(section), std::move(key), std::move(help),
          [member](const RunConfig& c) { return render(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& v) { assign(member(c), v); }};
}

inline void add_adaptation_keys(std::vector<ConfigKey>& keys, const std::string& section,
                                AdaptationConfig BenchConfig::*cfg, bool with_uda, bool with_source_free) {
  auto f = [&](const char* key, const char* help, auto proj) {
    keys.push_back(field(section, key, help, [cfg, proj](RunConfig& c) -> auto& { return proj(c.bench.*cfg); }));
  };
  f("iterations", "mini-batch steps", [](AdaptationConfig& a) -> auto& { return a.iterations; });
  f("batch_size", "samples per mini-batch", [](AdaptationConfig& a) -> auto& { return a.batch_size; });
  f("learning_rate", "SGD step size", [](AdaptationConfig& a) -> auto& { return a.learning_rate; });
  f("momentum", "SGD momentum in [0,1)", [](AdaptationConfig& a) -> auto& { return a.momentum; });
  f("eval_every", "accuracy logging interval", [](AdaptationConfig& a) -> auto& { return a.eval_every; });
  f("hidden_dim", "extractor width", [](AdaptationConfig& a) -> auto& { return a.hidden_dim; });
  f("depth", "extractor layers", [](AdaptationConfig& a) -> auto& { return a.depth; });
  if (with_uda) f("lambda_uda", "MMD weight in the UDA objective", [](AdaptationConfig& a) -> auto& { return a.lambda_uda; });
  if (with_source_free) {
    f("beta_pseudo", "pseudo-label cross-entropy weight", [](AdaptationConfig& a) -> auto& { return a.beta_pseudo; });
    f("pseudo_refresh", "pseudo-label refresh interval", [](AdaptationConfig& a) -> auto& { return a.pseudo_refresh; });
    f("lambda_uda", "MMD weight of the expanded-base ce+mmd mode",
      [](AdaptationConfig& a) -> auto& { return a.lambda_uda; });
  }
}

}  // namespace detail

/// Every configurable key, in the order `defaults` prints them.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    detail::add_adaptation_keys(k, "source", &BenchConfig::source_cfg, false, false);
    detail::add_adaptation_keys(k, "uda", &BenchConfig::uda_cfg, true, false);
    detail::add_adaptation_keys(k, "sfda", &BenchConfig::sfda_cfg, false, true);
    using detail::field;
    k.push_back(field("mea", "lambda", "balance of proxy-accuracy vs confidence weights",
                      [](RunConfig& c) -> auto& { return c.bench.sfda_cfg.lambda_mea; }));
    k.push_back({"bench", "seeds", "number of seeds per suite (seeds start at --seed)",
                 [](const RunConfig& c) { return std::to_string(c.bench.seeds.size()); },
                 [](RunConfig& c, const std::string& v) {
                   std::size_t n = 0;
                   detail::assign(n, v);
                   if (n < 1) throw ParameterError("must be >= 1");
                   const auto first = c.bench.seeds.empty() ? 0 : c.bench.seeds.front();
                   c.bench.seeds.clear();
                   for (std::size_t i = 0; i < n; ++i) c.bench.seeds.push_back(first + i);
                 }});
    k.push_back(field("bench", "domain_size", "samples per generated domain",
                      [](RunConfig& c) -> auto& { return c.bench.domain_size; }));
    k.push_back(field("bench", "noise", "two-moons noise stddev", [](RunConfig& c) -> auto& { return c.bench.noise; }));
    k.push_back(field("bench", "convergence_window", "evaluations that must stay settled",
                      [](RunConfig& c) -> auto& { return c.bench.convergence_window; }));
    k.push_back(field("bench", "convergence_tolerance", "accuracy band around the final value",
                      [](RunConfig& c) -> auto& { return c.bench.convergence_tolerance; }));
    k.push_back(field("bench", "convergence_ratio", "required SFDA/UDA convergence ratio",
                      [](RunConfig& c) -> auto& { return c.bench.convergence_ratio; }));
    k.push_back(field("bench", "negative_transfer_margin", "required expanded-base accuracy drop",
                      [](RunConfig& c) -> auto& { return c.bench.negative_transfer_margin; }));
    k.push_back(field("bench", "overfitting_max_gap", "allowed train/test accuracy gap",
                      [](RunConfig& c) -> auto& { return c.bench.overfitting_max_gap; }));
    k.push_back(field("bench", "overfitting_target_size", "target samples before the split",
                      [](RunConfig& c) -> auto& { return c.bench.overfitting_target_size; }));
    k.push_back(field("bench", "overfitting_min_target", "smallest accepted target",
                      [](RunConfig& c) -> auto& { return c.bench.overfitting_min_target; }));
    k.push_back(field("bench", "overfitting_train_fraction", "adaptation share of the target",
                      [](RunConfig& c) -> auto& { return c.bench.overfitting_train_fraction; }));
    k.push_back(field("paths", "source", "labeled source dataset", [](RunConfig& c) -> auto& { return c.paths.source; }));
    k.push_back(field("paths", "target", "target dataset", [](RunConfig& c) -> auto& { return c.paths.target; }));
    k.push_back(field("paths", "out", "output location", [](RunConfig& c) -> auto& { return c.paths.out; }));
    return k;
  }();
  return keys;
}

inline void validate(const RunConfig& c) {
  c.bench.source_cfg.validate();
  c.bench.uda_cfg.validate();
  c.bench.sfda_cfg.validate();
  if (c.bench.domain_size < 2) throw ParameterError("bench.domain_size must be >= 2");
  if (c.bench.noise < 0.0) throw ParameterError("bench.noise must be >= 0");
  if (c.bench.convergence_window < 1) throw ParameterError("bench.convergence_window must be >= 1");
  const double f = c.bench.overfitting_train_fraction;
  if (!(f > 0.0 && f < 1.0)) throw ParameterError("bench.overfitting_train_fraction must lie in (0, 1)");
}

/// Applies `section.key = value`; throws ParameterError on unknown keys.
inline void set_config_value(RunConfig& c, const std::string& section, const std::string& key,
                             const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.section == section && k.key == key) {
      try {
        k.set(c, value);
      } catch (const std::exception& e) {
        throw ParameterError(section + "." + key + ": " + e.what());
      }
      return;
    }
  }
  throw ParameterError("unknown config key '" + section + "." + key + "'");
}

inline RunConfig read_config(std::istream& is, RunConfig base = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ParameterError("config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, node] : body) set_config_value(base, section, key, node.get_value<std::string>());
  }
  validate(base);
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  return read_config(is, std::move(base));
}

inline void write_config(std::ostream& os, const RunConfig& c) {
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << "; " << k.help << '\n' << k.key << " = " << k.get(c) << '\n';
  }
}

}  // namespace shiftlab
