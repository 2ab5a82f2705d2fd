// shiftlab command-line front end.
//
// Exit codes: 0 success, 1 acceptance or verification failure,
// 2 usage/config error, 3 numeric failure.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "shiftlab/config.hpp"
#include "shiftlab/shiftlab.hpp"

namespace fs = std::filesystem;
using namespace shiftlab;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

/// Verification failure (exit 1), as opposed to a usage error.
struct VerifyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed for '" + path + "'");
  std::string hex;
  char h[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(h, sizeof h, "%02x", md[i]);
    hex += h;
  }
  return hex;
}

void report_written(const std::string& path) { std::cout << path << " sha256=" << sha256_file(path) << '\n'; }

std::string defaults_text(const RunConfig& c) {
  std::ostringstream os;
  write_config(os, c);
  return os.str();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void save_trajectory(const ExperimentRecord& rec, const std::string& path) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_trajectory_csv(os, rec);
}

std::string fmt_opt(const std::optional<double>& v) { return v ? detail::format_double(*v) : "NA"; }

void print_record_summary(ExperimentRecord& r) {
  summarise(r, kDefaultConvergenceWindow, kDefaultConvergenceTolerance);
  const auto& c = r.summary.iterations_to_convergence;
  std::cout << "iterations=" << r.iterations() << " initial_accuracy=" << fmt_opt(r.summary.initial_accuracy)
            << " final_accuracy=" << fmt_opt(r.summary.final_accuracy) << " converged=" << (r.summary.converged ? 1 : 0)
            << " iterations_to_convergence=" << (c ? std::to_string(*c) : std::string("NA")) << '\n';
}

// Manifest:
//   #shiftlab-manifest v1
//   source model=<path> [data=<path>]
// Relative paths resolve against the manifest's directory. A party is
// data-visible exactly when it lists data.
struct ManifestEntry {
  std::string model;
  std::optional<std::string> data;
};

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != "#shiftlab-manifest v1")
    throw ParameterError("'" + path + "' is not a shiftlab v1 manifest");
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&base](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };
  std::vector<ManifestEntry> out;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word != "source") throw ParameterError("manifest line must start with 'source': '" + line + "'");
    ManifestEntry e;
    while (ls >> word) {
      const auto eq = word.find('=');
      const auto key = word.substr(0, eq);
      const auto value = eq == std::string::npos ? std::string() : word.substr(eq + 1);
      if (key == "model") e.model = resolve(value);
      else if (key == "data") e.data = resolve(value);
      else throw ParameterError("unknown manifest field '" + key + "'");
    }
    if (e.model.empty()) throw ParameterError("manifest entry without model: '" + line + "'");
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ParameterError("manifest lists no sources");
  return out;
}

struct LoadedManifest {
  std::vector<SourceModel> models;
  VisibilitySpec visibility;
  std::vector<Dataset> datasets;
};

LoadedManifest load_manifest(const std::string& path) {
  LoadedManifest out;
  for (const auto& e : read_manifest(path)) {
    out.models.push_back(load_model(e.model));
    const auto& domain = out.models.back().meta.domain_id;
    if (!e.data) {
      out.visibility.parties.push_back({domain, Visibility::model_only});
      continue;
    }
    Dataset ds = load_dataset(*e.data);
    if (ds.domain_id != domain)
      throw ParameterError("manifest mismatch: model '" + e.model + "' was trained on '" + domain + "' but data '" +
                           *e.data + "' is domain '" + ds.domain_id + "'");
    if (!ds.labeled()) throw ParameterError("data-visible domain '" + domain + "' must be labeled");
    out.visibility.parties.push_back({domain, Visibility::data_visible});
    out.datasets.push_back(std::move(ds));
  }
  return out;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& f : detail::split(s, ',')) out.push_back(detail::parse_double(f));
  return out;
}

// ---------------------------------------------------------------------------

struct Options {
  std::string config;
  std::uint64_t seed = 0;

  // gen
  std::size_t n = 1000;
  double noise = 0.1;
  double rotation = 0.0;
  int classes = 2;
  int dim = 2;
  double separation = 4.0;
  std::string priors;
  std::string domain;
  std::string in;
  std::string out;
  double fraction = 0.9;
  std::string train_out, test_out;

  // train-source / adapt / estimate
  std::string data;
  std::string trajectory;
  std::string eval;
  std::string paradigm;
  std::string source;
  std::string target;
  std::vector<std::string> models;
  std::string weights = "uniform";
  std::string weights_file;
  std::string manifest;
  std::vector<std::string> visible;
  std::string mode = "ce";
  std::optional<double> lambda;
  std::string provenance;

  // bench / verify
  std::string suite;
  std::optional<std::size_t> seeds;
  std::vector<std::string> files;
};

RunConfig load_run_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  return c;
}

AccuracyProbe probe_from(const std::string& eval_path) {
  if (eval_path.empty()) return {};
  Dataset ev = load_dataset(eval_path);
  if (!ev.labeled()) throw ParameterError("evaluation data '" + eval_path + "' must be labeled");
  return make_probe(ev);
}

int cmd_gen_two_moons(const Options& o) {
  if (o.n < 2) throw ParameterError("--n must be >= 2");
  Dataset ds = gen_two_moons(o.n, o.noise, ShiftSpec::rotate(o.rotation), o.seed);
  ds.domain_id = o.domain.empty() ? "two-moons" : o.domain;
  ensure_parent(o.out);
  save_dataset(ds, o.out);
  report_written(o.out);
  return 0;
}

int cmd_gen_blobs(const Options& o) {
  std::vector<double> priors = o.priors.empty() ? std::vector<double>(o.classes, 1.0 / o.classes) : parse_list(o.priors);
  Dataset ds = gen_gaussian_blobs(o.n, o.classes, o.dim, o.separation, priors, o.seed);
  ds.domain_id = o.domain.empty() ? "blobs" : o.domain;
  ensure_parent(o.out);
  save_dataset(ds, o.out);
  report_written(o.out);
  return 0;
}

int cmd_gen_adversarial(const Options& o) {
  Dataset ds = make_adversarial_source(load_dataset(o.in), o.seed);
  if (!o.domain.empty()) ds.domain_id = o.domain;
  ensure_parent(o.out);
  save_dataset(ds, o.out);
  report_written(o.out);
  return 0;
}

int cmd_gen_split(const Options& o) {
  auto [train, test] = split(load_dataset(o.in), o.fraction, o.seed);
  ensure_parent(o.train_out);
  ensure_parent(o.test_out);
  save_dataset(train, o.train_out);
  save_dataset(test, o.test_out);
  report_written(o.train_out);
  report_written(o.test_out);
  return 0;
}

int cmd_train_source(const Options& o) {
  RunConfig rc = load_run_config(o);
  const std::string data_path = o.data.empty() ? rc.paths.source : o.data;
  if (data_path.empty()) throw ParameterError("train-source needs --data (or paths.source in the config)");
  const Dataset ds = load_dataset(data_path);
  AdaptationConfig cfg = rc.bench.source_cfg;
  cfg.seed = o.seed;
  auto out = train_source(ds, cfg, probe_from(o.eval.empty() ? data_path : o.eval));
  ensure_parent(o.out);
  save_model(out.model(), o.out);
  save_trajectory(out.record, o.trajectory.empty() ? o.out + ".csv" : o.trajectory);
  report_written(o.out);
  print_record_summary(out.record);
  return 0;
}

int cmd_adapt(const Options& o) {
  RunConfig rc = load_run_config(o);
  const std::string& p = o.paradigm;
  const bool source_free = p == "sfda" || p == "msfda" || p == "expanded";
  if (source_free && !o.source.empty()) throw ParameterError("source-free paradigm accepts no source data");
  if (p != "expanded" && !o.visible.empty()) throw ParameterError("--visible applies to the expanded paradigm only");

  const std::string source_path = o.source.empty() ? rc.paths.source : o.source;
  const std::string target_path = o.target.empty() ? rc.paths.target : o.target;
  const fs::path out_dir = o.out.empty() ? fs::path(rc.paths.out) : fs::path(o.out);
  const AccuracyProbe probe = probe_from(o.eval);

  auto need_source = [&]() {
    if (source_path.empty()) throw ParameterError("paradigm '" + p + "' requires source data (--source)");
    return load_dataset(source_path);
  };
  auto need_target = [&]() {
    if (target_path.empty()) throw ParameterError("paradigm '" + p + "' requires target data (--target)");
    return load_dataset(target_path).unlabeled();
  };
  std::optional<LoadedManifest> manifest;
  if (!o.manifest.empty()) manifest = load_manifest(o.manifest);
  auto need_models = [&](bool exactly_one) {
    std::vector<SourceModel> ms;
    for (const auto& path : o.models) ms.push_back(load_model(path));
    if (ms.empty() && manifest) ms = manifest->models;
    if (ms.empty()) throw ParameterError("paradigm '" + p + "' requires at least one --model (or --manifest)");
    if (exactly_one && ms.size() != 1) throw ParameterError("paradigm 'sfda' takes exactly one model");
    return ms;
  };

  TrainerOutput out;
  std::optional<WeightEstimate> est;
  if (p == "source") {
    AdaptationConfig cfg = rc.bench.source_cfg;
    cfg.seed = o.seed;
    out = train_source(need_source(), cfg, probe);
  } else if (p == "uda") {
    AdaptationConfig cfg = rc.bench.uda_cfg;
    cfg.seed = o.seed;
    const Dataset source = need_source();
    out = train_uda(source, need_target(), cfg, probe);
  } else if (source_free) {
    AdaptationConfig cfg = rc.bench.sfda_cfg;
    cfg.seed = o.seed;
    const auto models = need_models(p == "sfda");
    const Dataset target = need_target();
    std::vector<double> w(models.size(), 1.0 / static_cast<double>(models.size()));
    if (o.weights == "mea") {
      if (!manifest) throw ParameterError("--weights mea requires --manifest");
      if (manifest->models.size() != models.size())
        throw ParameterError("manifest lists " + std::to_string(manifest->models.size()) + " sources for " +
                             std::to_string(models.size()) + " models");
      est = estimate(models, manifest->visibility, manifest->datasets, target, o.lambda.value_or(rc.mea_lambda()));
      w = est->w_final;
    } else if (o.weights == "file") {
      if (o.weights_file.empty()) throw ParameterError("--weights file requires --weights-file");
      w = load_weights(o.weights_file).w_final;
      if (w.size() != models.size()) throw ParameterError("weight file length differs from the number of models");
    }
    if (p == "sfda") {
      out = train_sfda(models.front(), target, cfg, probe);
    } else if (p == "msfda") {
      out = train_msfda(models, w, target, cfg, probe);
    } else {
      std::vector<Dataset> visible;
      for (const auto& v : o.visible) visible.push_back(load_dataset(v));
      if (visible.empty()) throw ParameterError("paradigm 'expanded' requires at least one --visible dataset");
      out = train_expanded_base(models, w, target, visible, o.mode == "ce-mmd" ? ExpandedMode::ce_mmd : ExpandedMode::ce_only,
                                cfg, probe);
    }
  } else {
    throw ParameterError("unknown paradigm '" + p + "'");
  }

  fs::create_directories(out_dir);
  if (out.models.size() == 1) {
    save_model(out.model(), (out_dir / "model.txt").string());
  } else {
    for (std::size_t i = 0; i < out.models.size(); ++i)
      save_model(out.models[i], (out_dir / ("model_" + std::to_string(i) + ".txt")).string());
  }
  if (est) save_weights(*est, (out_dir / "weights.txt").string());
  out.record.paradigm = p;
  out.record.run_id = p + "__s" + std::to_string(o.seed);
  save_trajectory(out.record, (out_dir / "trajectory.csv").string());
  std::cout << "wrote " << out_dir.string() << '\n';
  if (!out.weights.empty()) std::cout << "weights=" << detail::join(out.weights) << '\n';
  print_record_summary(out.record);
  return 0;
}

int cmd_estimate(const Options& o) {
  RunConfig rc = load_run_config(o);
  const auto m = load_manifest(o.manifest);
  const std::string target_path = o.target.empty() ? rc.paths.target : o.target;
  if (target_path.empty()) throw ParameterError("estimate requires --target");
  const Dataset target = load_dataset(target_path).unlabeled();
  const auto est = estimate(m.models, m.visibility, m.datasets, target, o.lambda.value_or(rc.mea_lambda()));
  ensure_parent(o.out);
  save_weights(est, o.out);
  const std::string prov = o.provenance.empty() ? o.out + ".provenance" : o.provenance;
  ensure_parent(prov);
  {
    std::ofstream os(prov, std::ios::binary);
    if (!os) throw IoError("cannot open '" + prov + "' for writing");
    write_provenance(os, est);
  }
  std::cout << "fallback=" << (est.fallback ? 1 : 0) << " w_final=" << detail::join(est.w_final) << '\n';
  report_written(o.out);
  report_written(prov);
  return 0;
}

int cmd_bench(const Options& o) {
  const auto& names = suite_names();
  if (std::find(names.begin(), names.end(), o.suite) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ParameterError("unknown suite '" + o.suite + "'; valid suites: " + list);
  }
  RunConfig rc = load_run_config(o);
  const std::size_t count = o.seeds.value_or(rc.bench.seeds.size());
  if (count < 1) throw ParameterError("--seeds must be >= 1");
  rc.bench.seeds.clear();
  for (std::size_t i = 0; i < count; ++i) rc.bench.seeds.push_back(o.seed + i);
  rc.bench.threads = threads_from_env();
  const SuiteReport rep = run_suite(o.suite, rc.bench);
  const fs::path dir = fs::path(o.out.empty() ? rc.paths.out : o.out) / o.suite;
  emit_suite(rep, dir);
  write_suite_report(std::cout, rep);
  std::cout << "report=" << (dir / "suite.txt").string() << '\n';
  return rep.pass ? 0 : kExitFailure;
}

// ---------------------------------------------------------------------------
// verify

std::string first_line(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::getline(is, line);
  return line;
}

void verify_weights(const WeightEstimate& est) {
  const auto m = est.w_t.size();
  auto check = [m](const std::vector<double>& v, double expected, const char* name) {
    if (v.size() != m) throw VerifyFailure(std::string(name) + " has length " + std::to_string(v.size()));
    double sum = 0.0;
    for (double x : v) {
      if (!std::isfinite(x) || x < 0.0) throw VerifyFailure(std::string(name) + " has a negative or non-finite entry");
      sum += x;
    }
    if (std::abs(sum - expected) > kSimplexTol)
      throw VerifyFailure(std::string(name) + " sums to " + detail::format_double(sum) + ", expected " +
                          detail::format_double(expected));
  };
  check(est.w_t, 1.0, "w_t");
  check(est.w_final, 1.0, "w_final");
  if (est.w_s) check(*est.w_s, 1.0, "w_s");
  if (est.fallback != !est.w_s.has_value()) throw VerifyFailure("fallback flag disagrees with w_s presence");
  if (!est.w_raw.empty()) {
    check(est.w_raw, est.fallback ? 1.0 : 1.0 + est.lambda, "w_raw");
    const auto a = std::max_element(est.w_raw.begin(), est.w_raw.end()) - est.w_raw.begin();
    const auto b = std::max_element(est.w_final.begin(), est.w_final.end()) - est.w_final.begin();
    if (a != b) throw VerifyFailure("argmax(w_final) differs from argmax(w_raw)");
  }
}

// Header must match exactly; every row needs seven fields, consecutive
// iterations from 1 and finite losses.
void verify_trajectory(const std::string& path) {
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  if (line != kTrajectoryHeader) throw VerifyFailure("trajectory header differs from '" + std::string(kTrajectoryHeader) + "'");
  long long expected = 1;
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    const std::string at = "row " + std::to_string(expected) + ": ";
    if (f.size() != 7) throw VerifyFailure(at + "expected 7 fields, found " + std::to_string(f.size()));
    try {
      if (std::stoll(f[0]) != expected) throw VerifyFailure(at + "iteration " + f[0] + " out of sequence");
      for (int i = 1; i <= 4; ++i)
        if (!std::isfinite(std::stod(f[i]))) throw VerifyFailure(at + "non-finite loss");
      if (!f[5].empty()) {
        const double a = std::stod(f[5]);
        if (!(a >= 0.0 && a <= 1.0)) throw VerifyFailure(at + "accuracy outside [0, 1]");
      }
    } catch (const std::logic_error&) {
      throw VerifyFailure(at + "malformed number");
    }
    ++expected;
  }
}

void verify_report(const std::string& path) {
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line))
    if (line == "pass=0") throw VerifyFailure("report records a failed suite");
}

int cmd_verify(const Options& o) {
  int failures = 0;
  for (const auto& f : o.files) {
    try {
      const std::string head = first_line(f);
      std::string kind;
      if (head.rfind("#shiftlab-weights", 0) == 0) {
        kind = "weights";
        verify_weights(load_weights(f));
      } else if (head.rfind("#shiftlab-dataset", 0) == 0) {
        kind = "dataset";
        load_dataset(f);
      } else if (head.rfind("#shiftlab-model", 0) == 0) {
        kind = "model";
        load_model(f);
      } else if (head.rfind("iteration,", 0) == 0) {
        kind = "trajectory";
        verify_trajectory(f);
      } else if (head.rfind("#shiftlab-report", 0) == 0) {
        kind = "report";
        verify_report(f);
      } else {
        throw VerifyFailure("unrecognised file header");
      }
      std::cout << "ok " << f << " (" << kind << ")\n";
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      std::cout << "FAIL " << f << ": " << e.what() << '\n';
      ++failures;
    }
  }
  return failures ? kExitFailure : 0;
}

int cmd_defaults(const Options& o) {
  std::cout << "; base seed = " << o.seed << '\n' << defaults_text(RunConfig{});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shiftlab: domain adaptation on synthetic domains"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 acceptance/verification failure, 2 usage or config error, "
             "3 numeric failure.\nEnvironment: SHIFTLAB_THREADS (default 1) sets bench parallelism.\n\n"
             "Configuration defaults (override with --config FILE):\n\n" +
             defaults_text(RunConfig{}));

  Options o;
  std::function<int()> action;
  auto common = [&o](CLI::App* sub, bool with_config = true) {
    sub->add_option("--seed", o.seed, "random seed");
    if (with_config) sub->add_option("--config", o.config, "configuration file")->check(CLI::ExistingFile);
  };

  auto* gen = app.add_subcommand("gen", "generate datasets");
  gen->require_subcommand(1);
  auto* moons = gen->add_subcommand("two-moons", "two interleaved half circles");
  common(moons, false);
  moons->add_option("--n", o.n, "sample count");
  moons->add_option("--noise", o.noise, "Gaussian noise stddev");
  moons->add_option("--rotation", o.rotation, "rotation in degrees, [0, 360)");
  moons->add_option("--domain", o.domain, "domain id (default two-moons)");
  moons->add_option("--out", o.out, "output file")->required();
  moons->callback([&] { action = [&] { return cmd_gen_two_moons(o); }; });

  auto* blobs = gen->add_subcommand("blobs", "isotropic Gaussian classes");
  common(blobs, false);
  blobs->add_option("--n", o.n, "sample count");
  blobs->add_option("--classes", o.classes, "number of classes");
  blobs->add_option("--dim", o.dim, "feature dimension");
  blobs->add_option("--separation", o.separation, "distance of class means from the origin");
  blobs->add_option("--priors", o.priors, "comma-separated class priors (default uniform)");
  blobs->add_option("--domain", o.domain, "domain id (default blobs)");
  blobs->add_option("--out", o.out, "output file")->required();
  blobs->callback([&] { action = [&] { return cmd_gen_blobs(o); }; });

  auto* adv = gen->add_subcommand("adversarial", "relabel a dataset through a seeded derangement");
  common(adv, false);
  adv->add_option("--in", o.in, "labeled input dataset")->required()->check(CLI::ExistingFile);
  adv->add_option("--domain", o.domain, "domain id of the output (default: keep)");
  adv->add_option("--out", o.out, "output file")->required();
  adv->callback([&] { action = [&] { return cmd_gen_adversarial(o); }; });

  auto* spl = gen->add_subcommand("split", "stratified train/test split");
  common(spl, false);
  spl->add_option("--in", o.in, "input dataset")->required()->check(CLI::ExistingFile);
  spl->add_option("--fraction", o.fraction, "train share, (0, 1)");
  spl->add_option("--train-out", o.train_out, "train split file")->required();
  spl->add_option("--test-out", o.test_out, "test split file")->required();
  spl->callback([&] { action = [&] { return cmd_gen_split(o); }; });

  auto* ts = app.add_subcommand("train-source", "supervised training of a source model");
  common(ts);
  ts->add_option("--data", o.data, "labeled source dataset");
  ts->add_option("--eval", o.eval, "labeled data for the accuracy trajectory (default: training data)");
  ts->add_option("--out", o.out, "model file")->required();
  ts->add_option("--trajectory", o.trajectory, "trajectory CSV (default <out>.csv)");
  ts->callback([&] { action = [&] { return cmd_train_source(o); }; });

  auto* ad = app.add_subcommand("adapt", "adapt to an unlabeled target");
  common(ad);
  ad->add_option("--paradigm", o.paradigm, "source|uda|sfda|msfda|expanded")
      ->required()
      ->check(CLI::IsMember({"source", "uda", "sfda", "msfda", "expanded"}));
  ad->add_option("--source", o.source, "labeled source dataset (source, uda)");
  ad->add_option("--target", o.target, "target dataset; labels are ignored");
  ad->add_option("--model", o.models, "source model file (repeatable)");
  ad->add_option("--weights", o.weights, "uniform|mea|file")->check(CLI::IsMember({"uniform", "mea", "file"}));
  ad->add_option("--weights-file", o.weights_file, "weight file for --weights file");
  ad->add_option("--manifest", o.manifest, "source manifest; supplies models and data visibility for --weights mea")
      ->check(CLI::ExistingFile);
  ad->add_option("--lambda", o.lambda, "MEA balance (default from config: mea.lambda)");
  ad->add_option("--visible", o.visible, "visible labeled source data for expanded (repeatable)");
  ad->add_option("--mode", o.mode, "expanded objective: ce|ce-mmd")->check(CLI::IsMember({"ce", "ce-mmd"}));
  ad->add_option("--eval", o.eval, "labeled copy of the target, used only for the accuracy trajectory");
  ad->add_option("--out", o.out, "output directory (default paths.out)");
  ad->callback([&] { action = [&] { return cmd_adapt(o); }; });

  auto* es = app.add_subcommand("estimate", "estimate source-model weights");
  common(es);
  es->add_option("--manifest", o.manifest, "source manifest")->required()->check(CLI::ExistingFile);
  es->add_option("--target", o.target, "target dataset; labels are ignored");
  es->add_option("--lambda", o.lambda, "balance of proxy accuracy vs confidence (default from config: mea.lambda)");
  es->add_option("--out", o.out, "weight file")->required();
  es->add_option("--provenance", o.provenance, "provenance log (default <out>.provenance)");
  es->callback([&] { action = [&] { return cmd_estimate(o); }; });

  auto* be = app.add_subcommand("bench", "run an analysis suite");
  common(be);
  be->add_option("suite", o.suite, "convergence|negative-transfer|overfitting|fusion")->required();
  be->add_option("--seeds", o.seeds, "number of seeds (default from config: bench.seeds)");
  be->add_option("--out", o.out, "report directory (default paths.out)");
  be->callback([&] { action = [&] { return cmd_bench(o); }; });

  auto* ve = app.add_subcommand("verify", "check dataset, model, weight, trajectory or report files");
  common(ve, false);
  ve->add_option("files", o.files, "files to check")->required();
  ve->callback([&] { action = [&] { return cmd_verify(o); }; });

  auto* de = app.add_subcommand("defaults", "print the default configuration");
  common(de, false);
  de->callback([&] { action = [&] { return cmd_defaults(o); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const VerifyFailure& e) {
    std::cerr << "verification failed: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
