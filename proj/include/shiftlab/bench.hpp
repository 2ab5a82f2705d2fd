#pragma once

// Experiment harness: seeded scenarios over synthetic domains, the four
// analysis suites (convergence, negative transfer, overfitting, fusion) and
// report emission.
//
// Iterations are counted in mini-batch steps throughout.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "shiftlab/adapt.hpp"
#include "shiftlab/datagen.hpp"
#include "shiftlab/mea.hpp"
#include "shiftlab/record.hpp"

namespace shiftlab {

// ---------------------------------------------------------------------------
// Convergence

inline constexpr std::size_t kDefaultConvergenceWindow = 50;
inline constexpr double kDefaultConvergenceTolerance = 0.005;

/// Smallest logged iteration t such that the `window` evaluations following
/// it (inclusive of t, window + 1 points) all lie within `tolerance` of the
/// final logged accuracy. The initial accuracy, when recorded, counts as the
/// evaluation at iteration 0. Returns nullopt if no such window fits.
inline std::optional<long long> iterations_to_convergence(const ExperimentRecord& record,
                                                          std::size_t window = kDefaultConvergenceWindow,
                                                          double tolerance = kDefaultConvergenceTolerance) {
  if (window < 1) throw ParameterError("convergence window must be >= 1");
  std::vector<std::pair<long long, double>> series;
  if (record.summary.initial_accuracy) series.emplace_back(0, *record.summary.initial_accuracy);
  for (const auto& row : record.rows)
    if (row.acc_target) series.emplace_back(row.iteration, *row.acc_target);
  if (series.empty()) throw ParameterError("record has an empty accuracy trajectory");

  const double final_acc = series.back().second;
  const std::size_t count = series.size();
  // good_run[i]: length of the run of in-tolerance points starting at i.
  std::vector<std::size_t> good_run(count + 1, 0);
  for (std::size_t i = count; i-- > 0;)
    good_run[i] = std::abs(series[i].second - final_acc) <= tolerance ? good_run[i + 1] + 1 : 0;
  for (std::size_t i = 0; i + window < count; ++i)
    if (good_run[i] >= window + 1) return series[i].first;
  return std::nullopt;
}

inline void summarise(ExperimentRecord& record, std::size_t window, double tolerance) {
  if (!record.summary.final_accuracy) return;
  record.summary.iterations_to_convergence = iterations_to_convergence(record, window, tolerance);
  record.summary.converged = record.summary.iterations_to_convergence.has_value();
}

// ---------------------------------------------------------------------------
// Scenarios

enum class Paradigm { source_only, uda, sfda, msfda_uniform, msfda_mea, expanded_base };

inline std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::source_only: return "source-only";
    case Paradigm::uda: return "uda";
    case Paradigm::sfda: return "sfda";
    case Paradigm::msfda_uniform: return "msfda-uniform";
    case Paradigm::msfda_mea: return "msfda-mea";
    case Paradigm::expanded_base: return "expanded-base";
  }
  return "unknown";
}

inline Paradigm parse_paradigm(const std::string& s) {
  for (auto p : {Paradigm::source_only, Paradigm::uda, Paradigm::sfda, Paradigm::msfda_uniform, Paradigm::msfda_mea,
                 Paradigm::expanded_base})
    if (to_string(p) == s) return p;
  throw ParameterError("unknown paradigm '" + s + "'");
}

/// Generator recipe for one synthetic domain.
struct DomainRecipe {
  enum class Kind { two_moons, blobs };

  std::string id = "domain";
  Kind kind = Kind::two_moons;
  std::size_t n = 500;
  double noise = 0.1;
  double rotation = 0.0;
  int classes = 2;
  int dim = 2;
  double separation = 4.0;
  std::vector<double> priors;  // blobs; empty means uniform
  bool adversarial = false;    // labels relabelled through a derangement
  std::uint64_t salt = 0;
};

inline Dataset make_domain(const DomainRecipe& r, std::uint64_t run_seed) {
  const auto seed = detail::derive_seed(run_seed, 0x5000 + r.salt);
  Dataset ds;
  if (r.kind == DomainRecipe::Kind::two_moons) {
    ds = gen_two_moons(r.n, r.noise, ShiftSpec::rotate(r.rotation), seed);
  } else {
    auto priors = r.priors;
    if (priors.empty()) priors.assign(static_cast<std::size_t>(r.classes), 1.0 / r.classes);
    ds = gen_gaussian_blobs(r.n, r.classes, r.dim, r.separation, priors, seed);
  }
  if (r.adversarial) ds = make_adversarial_source(ds, detail::derive_seed(seed, 0xad));
  ds.domain_id = r.id;
  return ds;
}

inline DomainRecipe moons(std::string id, double rotation, std::uint64_t salt, std::size_t n = 500,
                          bool adversarial = false) {
  DomainRecipe r;
  r.id = std::move(id);
  r.rotation = rotation;
  r.salt = salt;
  r.n = n;
  r.adversarial = adversarial;
  return r;
}

struct ScenarioSpec {
  std::string tag = "scenario";
  std::vector<DomainRecipe> sources;
  DomainRecipe target;
  std::vector<Visibility> visibility;  // per source; empty means every source is data-visible
  Paradigm paradigm = Paradigm::sfda;
  AdaptationConfig source_cfg;  // training of the per-party source models
  AdaptationConfig cfg;         // the adaptation run itself
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::size_t> expanded_visible;  // source indices injected by expanded-base
  ExpandedMode expanded_mode = ExpandedMode::ce_only;
  std::size_t window = kDefaultConvergenceWindow;
  double tolerance = kDefaultConvergenceTolerance;

  void validate() const {
    if (seeds.empty()) throw ParameterError("scenario needs at least one seed");
    if (sources.empty()) throw ParameterError("scenario needs at least one source domain");
    if (!visibility.empty() && visibility.size() != sources.size())
      throw ParameterError("visibility must list every source");
    if (paradigm == Paradigm::expanded_base && expanded_visible.empty())
      throw ParameterError("expanded-base scenario needs at least one visible source");
    for (auto i : expanded_visible)
      if (i >= sources.size()) throw ParameterError("expanded-base visible index out of range");
    source_cfg.validate();
    cfg.validate();
  }
};

struct RunOutcome {
  ExperimentRecord record;
  std::vector<double> weights;
  std::optional<WeightEstimate> estimate;
  TrainerOutput trained;
};

inline std::string run_id(const ScenarioSpec& spec, std::uint64_t seed) {
  return spec.tag + "__" + spec.target.id + "__" + to_string(spec.paradigm) + "__s" + std::to_string(seed);
}

inline std::vector<SourceModel> train_source_models(const std::vector<Dataset>& sources, const AdaptationConfig& base,
                                                    std::uint64_t seed) {
  std::vector<SourceModel> models;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    AdaptationConfig c = base;
    c.seed = detail::derive_seed(seed, 0x100 + i);
    models.push_back(train_source(sources[i], c).model());
  }
  return models;
}

/// One seeded run. Target labels stay with the harness (probe only).
inline RunOutcome run_one(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<Dataset> sources;
  for (const auto& r : spec.sources) sources.push_back(make_domain(r, seed));
  const Dataset target_eval = make_domain(spec.target, seed);
  const Dataset target = target_eval.unlabeled();
  const AccuracyProbe probe = make_probe(target_eval);

  AdaptationConfig cfg = spec.cfg;
  cfg.seed = detail::derive_seed(seed, 0x200);
  const std::size_t m = sources.size();
  const std::vector<double> uniform(m, 1.0 / static_cast<double>(m));

  RunOutcome out;
  switch (spec.paradigm) {
    case Paradigm::source_only: {
      AdaptationConfig c = spec.source_cfg;
      c.seed = detail::derive_seed(seed, 0x100);
      out.trained = train_source(sources.front(), c, probe);
      break;
    }
    case Paradigm::uda:
      out.trained = train_uda(sources.front(), target, cfg, probe);
      break;
    case Paradigm::sfda: {
      const auto models = train_source_models({sources.front()}, spec.source_cfg, seed);
      out.trained = train_sfda(models.front(), target, cfg, probe);
      break;
    }
    case Paradigm::msfda_uniform: {
      const auto models = train_source_models(sources, spec.source_cfg, seed);
      out.trained = train_msfda(models, uniform, target, cfg, probe);
      break;
    }
    case Paradigm::msfda_mea: {
      const auto models = train_source_models(sources, spec.source_cfg, seed);
      VisibilitySpec vis;
      std::vector<Dataset> visible;
      for (std::size_t i = 0; i < m; ++i) {
        const auto v = spec.visibility.empty() ? Visibility::data_visible : spec.visibility[i];
        vis.parties.push_back({sources[i].domain_id, v});
        if (v == Visibility::data_visible) visible.push_back(sources[i]);
      }
      out.estimate = estimate(models, vis, visible, target, cfg.lambda_mea);
      out.trained = train_msfda(models, out.estimate->w_final, target, cfg, probe);
      break;
    }
    case Paradigm::expanded_base: {
      const auto models = train_source_models(sources, spec.source_cfg, seed);
      std::vector<Dataset> visible;
      for (auto i : spec.expanded_visible) visible.push_back(sources[i]);
      out.trained = train_expanded_base(models, uniform, target, visible, spec.expanded_mode, cfg, probe);
      break;
    }
  }
  out.weights = out.trained.weights;
  out.record = out.trained.record;
  out.record.run_id = run_id(spec, seed);
  out.record.scenario = spec.target.id;
  out.record.paradigm = to_string(spec.paradigm);
  summarise(out.record, spec.window, spec.tolerance);
  return out;
}

/// Reads SHIFTLAB_THREADS (default 1).
inline int threads_from_env() {
  const char* v = std::getenv("SHIFTLAB_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ParameterError("SHIFTLAB_THREADS must be a positive integer");
  return static_cast<int>(n);
}

/// Applies fn to 0..n-1 on up to `threads` workers; results stay in index order.
template <class Fn>
auto parallel_map(std::size_t n, int threads, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) slots[i].emplace(fn(i));
  } else {
    std::mutex err_mu;
    std::exception_ptr err;
    std::vector<std::thread> pool;
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            slots[i].emplace(fn(i));
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!err) err = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
  }
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::vector<RunOutcome> run_outcomes(const ScenarioSpec& spec, int threads = 1) {
  spec.validate();
  auto context = [&spec](std::size_t i) {
    return "scenario '" + spec.tag + "' (" + to_string(spec.paradigm) + ", seed " + std::to_string(spec.seeds[i]) +
           "): ";
  };
  return parallel_map(spec.seeds.size(), threads, [&spec, &context](std::size_t i) {
    try {
      return run_one(spec, spec.seeds[i]);
    } catch (const NumericError& e) {
      throw NumericError(context(i) + e.what());
    } catch (const ParameterError& e) {
      throw ParameterError(context(i) + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error(context(i) + e.what());
    }
  });
}

/// One record per seed, in seed order.
inline std::vector<ExperimentRecord> run_scenario(const ScenarioSpec& spec, int threads = 1) {
  std::vector<ExperimentRecord> out;
  for (auto& o : run_outcomes(spec, threads)) out.push_back(std::move(o.record));
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kTrajectoryHeader = "iteration,loss_total,loss_ce,loss_mmd,loss_im,acc_target,ms";

inline void write_trajectory_csv(std::ostream& os, const ExperimentRecord& r) {
  os << kTrajectoryHeader << '\n';
  for (const auto& row : r.rows) {
    os << row.iteration << ',' << detail::format_double(row.loss_total) << ',' << detail::format_double(row.loss_ce)
       << ',' << detail::format_double(row.loss_mmd) << ',' << detail::format_double(row.loss_im) << ',';
    if (row.acc_target) os << detail::format_double(*row.acc_target);
    char ms[32];
    std::snprintf(ms, sizeof ms, "%.3f", row.ms);
    os << ',' << ms << '\n';
  }
}

struct SummaryTable {
  std::vector<std::string> paradigms;
  std::vector<std::string> scenarios;
  // cells[p][s]: mean final accuracy, NaN when the pair never ran
  std::vector<std::vector<double>> cells;
  std::vector<double> average;
};

inline SummaryTable summary_table(const std::vector<ExperimentRecord>& records) {
  SummaryTable t;
  auto index_of = [](std::vector<std::string>& v, const std::string& s) {
    auto it = std::find(v.begin(), v.end(), s);
    if (it != v.end()) return static_cast<std::size_t>(it - v.begin());
    v.push_back(s);
    return v.size() - 1;
  };
  for (const auto& r : records) {
    index_of(t.paradigms, r.paradigm);
    index_of(t.scenarios, r.scenario);
  }
  std::vector<std::vector<double>> sum(t.paradigms.size(), std::vector<double>(t.scenarios.size(), 0.0));
  std::vector<std::vector<int>> count(t.paradigms.size(), std::vector<int>(t.scenarios.size(), 0));
  for (const auto& r : records) {
    if (!r.summary.final_accuracy) continue;
    const auto p = index_of(t.paradigms, r.paradigm), s = index_of(t.scenarios, r.scenario);
    sum[p][s] += *r.summary.final_accuracy;
    ++count[p][s];
  }
  t.cells.assign(t.paradigms.size(), std::vector<double>(t.scenarios.size(), std::nan("")));
  for (std::size_t p = 0; p < t.paradigms.size(); ++p) {
    double acc = 0.0;
    int present = 0;
    for (std::size_t s = 0; s < t.scenarios.size(); ++s) {
      if (count[p][s] == 0) continue;
      t.cells[p][s] = sum[p][s] / count[p][s];
      acc += t.cells[p][s];
      ++present;
    }
    t.average.push_back(present ? acc / present : std::nan(""));
  }
  return t;
}

inline void write_summary_table(std::ostream& os, const SummaryTable& t) {
  os << "paradigm";
  for (const auto& s : t.scenarios) os << ',' << s;
  os << ",average\n";
  auto cell = [&os](double v) {
    if (std::isnan(v)) os << "NA";
    else os << detail::format_double(v);
  };
  for (std::size_t p = 0; p < t.paradigms.size(); ++p) {
    os << t.paradigms[p];
    for (double v : t.cells[p]) {
      os << ',';
      cell(v);
    }
    os << ',';
    cell(t.average[p]);
    os << '\n';
  }
}

inline void write_summary(std::ostream& os, const std::vector<ExperimentRecord>& records) {
  os << "#shiftlab-report v1\n";
  os << "iteration_unit=minibatch-step\n";
  os << "records=" << records.size() << '\n';
  for (const auto& r : records) {
    os << "run id=" << r.run_id << " scenario=" << r.scenario << " paradigm=" << r.paradigm
       << " iterations=" << r.iterations();
    os << " initial_accuracy="
       << (r.summary.initial_accuracy ? detail::format_double(*r.summary.initial_accuracy) : std::string("NA"));
    os << " final_accuracy="
       << (r.summary.final_accuracy ? detail::format_double(*r.summary.final_accuracy) : std::string("NA"));
    os << " converged=" << (r.summary.converged ? 1 : 0) << " iterations_to_convergence="
       << (r.summary.iterations_to_convergence ? std::to_string(*r.summary.iterations_to_convergence)
                                               : std::string("NA"))
       << '\n';
  }
}

/// Writes <dir>/trajectories/<run_id>.csv, <dir>/summary_table.csv and
/// <dir>/summary.txt. Output bytes depend only on the records.
inline void emit_report(const std::vector<ExperimentRecord>& records, const std::filesystem::path& dir) {
  if (records.empty()) throw ParameterError("cannot emit a report without records");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "trajectories", ec);
  if (ec) throw IoError("cannot create report directory '" + dir.string() + "': " + ec.message());
  auto open = [](const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
    return os;
  };
  for (const auto& r : records) {
    auto os = open(dir / "trajectories" / (r.run_id + ".csv"));
    write_trajectory_csv(os, r);
  }
  {
    auto os = open(dir / "summary_table.csv");
    write_summary_table(os, summary_table(records));
  }
  auto os = open(dir / "summary.txt");
  write_summary(os, records);
}

// ---------------------------------------------------------------------------
// Suites

struct BenchConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int threads = 1;
  AdaptationConfig source_cfg = [] {
    AdaptationConfig c;
    c.iterations = 1000;
    return c;
  }();
  AdaptationConfig uda_cfg = [] {
    AdaptationConfig c;
    c.iterations = 2000;
    return c;
  }();
  AdaptationConfig sfda_cfg;  // iterations 300
  std::size_t domain_size = 500;
  double noise = 0.1;
  // Convergence suite: window in evaluations, tolerance in accuracy units.
  std::size_t convergence_window = 10;
  double convergence_tolerance = 0.01;
  double convergence_ratio = 0.5;
  double negative_transfer_margin = 0.05;
  double overfitting_max_gap = 0.03;
  std::size_t overfitting_target_size = 4000;
  std::size_t overfitting_min_target = 100;
  double overfitting_train_fraction = 0.9;
};

struct SuiteRule {
  std::string name;
  int passed = 0;
  int total = 0;
  bool pass = false;
};

struct SuiteReport {
  std::string suite;
  std::vector<std::string> lines;  // per-seed details, deterministic
  std::vector<SuiteRule> rules;
  std::vector<ExperimentRecord> records;
  bool pass = false;
};

inline bool majority(int passed, int total) { return 2 * passed > total; }

inline SuiteRule majority_rule(std::string name, const std::vector<bool>& outcomes) {
  SuiteRule r{std::move(name), 0, static_cast<int>(outcomes.size()), false};
  for (bool b : outcomes) r.passed += b;
  r.pass = majority(r.passed, r.total);
  return r;
}

inline SuiteRule unanimous_rule(std::string name, const std::vector<bool>& outcomes) {
  SuiteRule r = majority_rule(std::move(name), outcomes);
  r.pass = r.passed == r.total;
  return r;
}

inline void finalise(SuiteReport& rep) {
  rep.pass = !rep.rules.empty();
  for (const auto& r : rep.rules) rep.pass = rep.pass && r.pass;
}

inline void write_suite_report(std::ostream& os, const SuiteReport& rep) {
  os << "#shiftlab-report v1\n";
  os << "suite=" << rep.suite << '\n';
  os << "iteration_unit=minibatch-step\n";
  for (const auto& l : rep.lines) os << l << '\n';
  for (const auto& r : rep.rules)
    os << "rule name=" << r.name << " passed=" << r.passed << '/' << r.total << " pass=" << (r.pass ? 1 : 0) << '\n';
  os << "pass=" << (rep.pass ? 1 : 0) << '\n';
}

/// Suite report plus the underlying records under `dir`.
inline void emit_suite(const SuiteReport& rep, const std::filesystem::path& dir) {
  emit_report(rep.records, dir);
  std::ofstream os(dir / "suite.txt", std::ios::binary);
  if (!os) throw IoError("cannot write suite report under '" + dir.string() + "'");
  write_suite_report(os, rep);
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string fmt(double v) { return format_double(v); }

inline std::string fmt_iters(const std::optional<long long>& v) { return v ? std::to_string(*v) : "NA"; }

}  // namespace detail

/// SFDA vs UDA on 30-degree rotated moons: iterations until each method's
/// accuracy settles within tolerance of its own final accuracy.
inline SuiteReport convergence_suite(const BenchConfig& bc) {
  ScenarioSpec base;
  base.tag = "convergence";
  base.sources = {moons("moons-0", 0.0, 1, bc.domain_size)};
  base.target = moons("moons-30", 30.0, 2, bc.domain_size);
  for (auto* r : {&base.sources[0], &base.target}) r->noise = bc.noise;
  base.source_cfg = bc.source_cfg;
  base.seeds = bc.seeds;
  base.window = bc.convergence_window;
  base.tolerance = bc.convergence_tolerance;

  ScenarioSpec sfda = base, uda = base;
  sfda.paradigm = Paradigm::sfda;
  sfda.cfg = bc.sfda_cfg;
  uda.paradigm = Paradigm::uda;
  uda.cfg = bc.uda_cfg;
  const auto rs = run_scenario(sfda, bc.threads);
  const auto ru = run_scenario(uda, bc.threads);

  SuiteReport rep;
  rep.suite = "convergence";
  std::vector<bool> faster;
  std::vector<double> conv_s, conv_u;
  for (std::size_t i = 0; i < bc.seeds.size(); ++i) {
    const auto cs = rs[i].summary.iterations_to_convergence;
    const auto cu = ru[i].summary.iterations_to_convergence;
    // A method that never settles counts as one step past its horizon.
    const double vs = cs ? static_cast<double>(*cs) : static_cast<double>(rs[i].iterations() + 1);
    const double vu = cu ? static_cast<double>(*cu) : static_cast<double>(ru[i].iterations() + 1);
    conv_s.push_back(vs);
    conv_u.push_back(vu);
    const bool ok = cs.has_value() && vs <= bc.convergence_ratio * vu;
    faster.push_back(ok);
    rep.lines.push_back("seed=" + std::to_string(bc.seeds[i]) + " sfda_convergence=" + detail::fmt_iters(cs) +
                        " uda_convergence=" + detail::fmt_iters(cu) +
                        " sfda_final=" + detail::fmt(*rs[i].summary.final_accuracy) +
                        " uda_final=" + detail::fmt(*ru[i].summary.final_accuracy) + " ok=" + (ok ? "1" : "0"));
  }
  const double ms = detail::median(conv_s), mu = detail::median(conv_u);
  rep.lines.push_back("median_sfda_convergence=" + detail::fmt(ms) + " median_uda_convergence=" + detail::fmt(mu) +
                      " window=" + std::to_string(bc.convergence_window) +
                      " tolerance=" + detail::fmt(bc.convergence_tolerance));
  rep.rules.push_back(majority_rule("sfda_converges_within_ratio_of_uda", faster));
  rep.rules.push_back({"median_ratio", ms <= bc.convergence_ratio * mu ? 1 : 0, 1, ms <= bc.convergence_ratio * mu});
  rep.records = rs;
  rep.records.insert(rep.records.end(), ru.begin(), ru.end());
  finalise(rep);
  return rep;
}

inline ScenarioSpec negative_transfer_scenario(const BenchConfig& bc) {
  ScenarioSpec s;
  s.tag = "negative-transfer";
  s.sources = {moons("mild-a", 10.0, 11, bc.domain_size), moons("mild-b", 50.0, 12, bc.domain_size),
               moons("adversarial", 10.0, 13, bc.domain_size, true)};
  s.target = moons("target-30", 30.0, 14, bc.domain_size);
  for (auto& r : s.sources) r.noise = bc.noise;
  s.target.noise = bc.noise;
  s.source_cfg = bc.source_cfg;
  s.cfg = bc.sfda_cfg;
  s.seeds = bc.seeds;
  s.expanded_visible = {2};
  return s;
}

/// Two mildly shifted sources and one label-permuted source: uniform MSFDA,
/// MEA-weighted MSFDA and the expanded base with the adversarial data visible.
inline SuiteReport negative_transfer_suite(const BenchConfig& bc) {
  ScenarioSpec uni = negative_transfer_scenario(bc), mea = uni, exp = uni;
  uni.paradigm = Paradigm::msfda_uniform;
  mea.paradigm = Paradigm::msfda_mea;
  exp.paradigm = Paradigm::expanded_base;
  const auto ou = run_outcomes(uni, bc.threads);
  const auto om = run_outcomes(mea, bc.threads);
  const auto oe = run_outcomes(exp, bc.threads);

  SuiteReport rep;
  rep.suite = "negative-transfer";
  std::vector<bool> degrade, mea_ge, adv_min;
  for (std::size_t i = 0; i < bc.seeds.size(); ++i) {
    const double au = *ou[i].record.summary.final_accuracy;
    const double am = *om[i].record.summary.final_accuracy;
    const double ae = *oe[i].record.summary.final_accuracy;
    const auto& w = om[i].estimate->w_final;
    const auto argmin = static_cast<std::size_t>(std::min_element(w.begin(), w.end()) - w.begin());
    degrade.push_back(ae <= au - bc.negative_transfer_margin);
    mea_ge.push_back(am >= au);
    adv_min.push_back(argmin == 2);
    rep.lines.push_back("seed=" + std::to_string(bc.seeds[i]) + " msfda_uniform=" + detail::fmt(au) +
                        " msfda_mea=" + detail::fmt(am) + " expanded_base=" + detail::fmt(ae) +
                        " delta_expanded=" + detail::fmt(ae - au) + " delta_mea=" + detail::fmt(am - au) +
                        " w_final=" + detail::join(w) + " adversarial_min=" + (argmin == 2 ? "1" : "0"));
  }
  rep.rules.push_back(majority_rule("expanded_base_degrades", degrade));
  rep.rules.push_back(unanimous_rule("mea_downweights_adversarial", adv_min));
  rep.rules.push_back(majority_rule("mea_not_below_uniform", mea_ge));
  for (const auto* set : {&ou, &om, &oe})
    for (const auto& o : *set) rep.records.push_back(o.record);
  finalise(rep);
  return rep;
}

/// Adapts on 90% of the target and compares accuracy on the adapted part
/// with the untouched 10%.
inline SuiteReport overfitting_suite(const BenchConfig& bc) {
  if (bc.overfitting_target_size < bc.overfitting_min_target)
    throw ParameterError("overfitting suite needs a target of at least " + std::to_string(bc.overfitting_min_target) +
                         " samples");
  SuiteReport rep;
  rep.suite = "overfitting";
  std::vector<bool> small_gap;
  const auto source_recipe = [&] {
    auto r = moons("moons-0", 0.0, 21, bc.domain_size);
    r.noise = bc.noise;
    return r;
  }();
  const auto target_recipe = [&] {
    auto r = moons("moons-30", 30.0, 22, bc.overfitting_target_size);
    r.noise = bc.noise;
    return r;
  }();

  struct SeedResult {
    ExperimentRecord record;
    std::string line;
    bool ok;
  };
  auto results = parallel_map(bc.seeds.size(), bc.threads, [&](std::size_t i) {
    const auto seed = bc.seeds[i];
    const Dataset source = make_domain(source_recipe, seed);
    const Dataset target_eval = make_domain(target_recipe, seed);
    const auto idx = split_indices(target_eval, bc.overfitting_train_fraction, detail::derive_seed(seed, 0x300));
    std::vector<std::size_t> overlap;
    std::set_intersection(idx.train.begin(), idx.train.end(), idx.test.begin(), idx.test.end(),
                          std::back_inserter(overlap));
    const bool isolated = overlap.empty() && idx.train.size() + idx.test.size() == target_eval.size();
    if (!isolated) throw std::logic_error("overfitting split leaks test indices into adaptation");
    const Dataset train_eval = target_eval.subset(idx.train);
    const Dataset test_eval = target_eval.subset(idx.test);

    const auto model = train_source_models({source}, bc.source_cfg, seed).front();
    AdaptationConfig cfg = bc.sfda_cfg;
    cfg.seed = detail::derive_seed(seed, 0x200);
    auto out = train_sfda(model, train_eval.unlabeled(), cfg, make_probe(train_eval));
    const double train_acc = accuracy(predict_probs(out.model(), train_eval.features), *train_eval.labels);
    const double test_acc = accuracy(predict_probs(out.model(), test_eval.features), *test_eval.labels);
    const double gap = std::abs(train_acc - test_acc);
    out.record.run_id = "overfitting__" + target_recipe.id + "__sfda__s" + std::to_string(seed);
    out.record.scenario = target_recipe.id;
    out.record.paradigm = "sfda";
    summarise(out.record, kDefaultConvergenceWindow, kDefaultConvergenceTolerance);
    const bool ok = gap <= bc.overfitting_max_gap;
    return SeedResult{std::move(out.record),
                      "seed=" + std::to_string(seed) + " train_size=" + std::to_string(idx.train.size()) +
                          " test_size=" + std::to_string(idx.test.size()) + " isolated=1 train_accuracy=" +
                          detail::fmt(train_acc) + " test_accuracy=" + detail::fmt(test_acc) +
                          " gap=" + detail::fmt(gap) + " ok=" + (ok ? "1" : "0"),
                      ok};
  });
  for (auto& r : results) {
    rep.lines.push_back(r.line);
    small_gap.push_back(r.ok);
    rep.records.push_back(std::move(r.record));
  }
  rep.rules.push_back(majority_rule("train_test_gap_small", small_gap));
  finalise(rep);
  return rep;
}

/// Data-model fusion: three rotated domains take turns as the target; the
/// remaining two plus a label-permuted party act as sources. Good sources
/// share data, the permuted party shares only its model.
inline SuiteReport fusion_suite(const BenchConfig& bc) {
  const std::vector<DomainRecipe> domains = {moons("rot-0", 0.0, 31, bc.domain_size),
                                             moons("rot-20", 20.0, 32, bc.domain_size),
                                             moons("rot-40", 40.0, 33, bc.domain_size)};
  auto adversarial = moons("permuted", 20.0, 34, bc.domain_size, true);

  SuiteReport rep;
  rep.suite = "fusion";
  std::vector<double> avg_uniform(bc.seeds.size(), 0.0), avg_mea(bc.seeds.size(), 0.0);
  for (std::size_t t = 0; t < domains.size(); ++t) {
    ScenarioSpec s;
    s.tag = "fusion";
    for (std::size_t j = 0; j < domains.size(); ++j)
      if (j != t) {
        s.sources.push_back(domains[j]);
        s.visibility.push_back(Visibility::data_visible);
      }
    s.sources.push_back(adversarial);
    s.visibility.push_back(Visibility::model_only);
    s.target = domains[t];
    for (auto& r : s.sources) r.noise = bc.noise;
    s.target.noise = bc.noise;
    s.source_cfg = bc.source_cfg;
    s.cfg = bc.sfda_cfg;
    s.seeds = bc.seeds;

    ScenarioSpec uni = s, mea = s;
    uni.paradigm = Paradigm::msfda_uniform;
    mea.paradigm = Paradigm::msfda_mea;
    const auto ou = run_outcomes(uni, bc.threads);
    const auto om = run_outcomes(mea, bc.threads);
    for (std::size_t i = 0; i < bc.seeds.size(); ++i) {
      const double au = *ou[i].record.summary.final_accuracy, am = *om[i].record.summary.final_accuracy;
      avg_uniform[i] += au / static_cast<double>(domains.size());
      avg_mea[i] += am / static_cast<double>(domains.size());
      rep.lines.push_back("target=" + domains[t].id + " seed=" + std::to_string(bc.seeds[i]) +
                          " msfda_uniform=" + detail::fmt(au) + " msfda_mea=" + detail::fmt(am) +
                          " w_final=" + detail::join(om[i].estimate->w_final));
      rep.records.push_back(ou[i].record);
      rep.records.push_back(om[i].record);
    }
  }
  std::vector<bool> mea_ge;
  for (std::size_t i = 0; i < bc.seeds.size(); ++i) {
    mea_ge.push_back(avg_mea[i] >= avg_uniform[i]);
    rep.lines.push_back("seed=" + std::to_string(bc.seeds[i]) + " average_uniform=" + detail::fmt(avg_uniform[i]) +
                        " average_mea=" + detail::fmt(avg_mea[i]));
  }
  rep.rules.push_back(majority_rule("mea_average_not_below_uniform", mea_ge));
  finalise(rep);
  return rep;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"convergence", "negative-transfer", "overfitting", "fusion"};
  return names;
}

inline SuiteReport run_suite(const std::string& name, const BenchConfig& bc) {
  if (name == "convergence") return convergence_suite(bc);
  if (name == "negative-transfer") return negative_transfer_suite(bc);
  if (name == "overfitting") return overfitting_suite(bc);
  if (name == "fusion") return fusion_suite(bc);
  throw ParameterError("unknown suite '" + name + "'");
}

}  // namespace shiftlab
