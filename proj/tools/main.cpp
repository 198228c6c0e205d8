// lowfr command-line tool: simulate datasets, fit models, summarize fits,
// validate data files, and run benchmark grids.
//
// Exit codes: 0 success, 2 usage or validation, 3 file IO, 4 inference
// failure.  Every command writes a config.resolved next to its outputs
// holding the fully resolved settings as `key = value` lines under a
// [command] section; a directory that receives several commands accumulates
// one section per command.  All randomness derives from --seed; benchmark
// replicate r draws its data with mix(seed, 0xDA7A00 + r) and fits model m
// with mix(seed, 0xF17000 + 64 r + m), where mix is a splitmix64 hash.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lowfr/csv.hpp"

namespace fs = std::filesystem;
using namespace lowfr;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(tag));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// config.resolved: ordered sections of ordered key/value pairs.

using KvList = std::vector<std::pair<std::string, std::string>>;

struct IniDoc {
  std::vector<std::pair<std::string, KvList>> sections;
};

IniDoc read_ini_if_present(const std::string& path) {
  IniDoc doc;
  std::ifstream f(path);
  if (!f) return doc;
  std::string line;
  std::string current;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string s = csv_detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[' && s.back() == ']') {
      current = csv_detail::trim(s.substr(1, s.size() - 2));
      doc.sections.emplace_back(current, KvList{});
      continue;
    }
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ": malformed line '" + s + "'");
    if (doc.sections.empty()) doc.sections.emplace_back("", KvList{});
    doc.sections.back().second.emplace_back(csv_detail::trim(s.substr(0, eq)),
                                            csv_detail::trim(s.substr(eq + 1)));
  }
  return doc;
}

void write_resolved_config(const std::string& dir, const std::string& section,
                           const KvList& kv) {
  const std::string path = dir + "/config.resolved";
  IniDoc doc = read_ini_if_present(path);
  bool replaced = false;
  for (auto& [name, list] : doc.sections)
    if (name == section) {
      list = kv;
      replaced = true;
    }
  if (!replaced) doc.sections.emplace_back(section, kv);
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < doc.sections.size(); ++i) {
    if (i) f << "\n";
    f << "[" << doc.sections[i].first << "]\n";
    for (const auto& [k, v] : doc.sections[i].second) f << k << " = " << v << "\n";
  }
  f.flush();
  if (!f) throw IoError("write failed for " + path);
}

std::map<std::string, std::string> section_map(const IniDoc& doc,
                                               const std::string& section,
                                               const std::string& path) {
  for (const auto& [name, list] : doc.sections)
    if (name == section) {
      std::map<std::string, std::string> out;
      for (const auto& [k, v] : list) out[k] = v;
      return out;
    }
  throw UsageError(path + ": no [" + section + "] section; not a " + section +
                   " output directory");
}

const std::string& meta_get(const std::map<std::string, std::string>& meta,
                            const std::string& key, const std::string& path) {
  const auto it = meta.find(key);
  if (it == meta.end())
    throw UsageError(path + ": missing key '" + key + "' in [fit] section");
  return it->second;
}

// ---------------------------------------------------------------------------
// Shared model/kind plumbing.

ModelKind kind_from_token(const std::string& model, bool sex_interactions) {
  if (model == "lowfr") return sex_interactions ? ModelKind::LowfrSexInt : ModelKind::Lowfr;
  if (sex_interactions)
    throw UsageError("--sex-interactions requires --model lowfr");
  if (model == "cqr") return ModelKind::Cqr;
  if (model == "direct") return ModelKind::DirectRank;
  if (model == "direct-full") return ModelKind::DirectFull;
  throw UsageError("unknown model '" + model + "'");
}

int parse_k(const std::string& k_str) {
  if (k_str == "auto") return 0;
  const long k = csv_detail::parse_int(k_str, "--k");
  if (k < 1) throw UsageError("--k must be 'auto' or a positive integer");
  return int(k);
}

std::pair<ExposureDataset, SimTruth> generate(const std::string& scenario,
                                              std::uint64_t seed, int n, int p,
                                              int T, int k_true) {
  if (scenario == "intro1") return gen_intro(1, n, seed);
  if (scenario == "intro2") return gen_intro(2, n, seed);
  const int s = scenario == "s1" ? 1 : scenario == "s2" ? 2 : 3;
  return gen_scenario(s, seed, n, p, T, k_true);
}

struct SamplerFlags {
  int chains = 4, warmup = 1000, samples = 1000;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_treedepth = 10;
  int jobs = 1;

  SamplerConfig config() const {
    SamplerConfig c;
    c.chains = chains;
    c.warmup = warmup;
    c.samples = samples;
    c.seed = seed;
    c.target_accept = target_accept;
    c.max_treedepth = max_treedepth;
    c.jobs = jobs;
    return c;
  }
};

void add_sampler_flags(CLI::App* cmd, SamplerFlags* s) {
  cmd->add_option("--chains", s->chains, "Number of chains")->capture_default_str();
  cmd->add_option("--warmup", s->warmup, "Warmup iterations per chain")
      ->capture_default_str();
  cmd->add_option("--samples", s->samples, "Post-warmup draws per chain")
      ->capture_default_str();
  cmd->add_option("--seed", s->seed, "Random seed")->capture_default_str();
  cmd->add_option("--target-accept", s->target_accept, "Dual-averaging target")
      ->capture_default_str();
  cmd->add_option("--max-treedepth", s->max_treedepth, "Trajectory doubling cap")
      ->capture_default_str();
  cmd->add_option("--jobs", s->jobs, "Worker threads for chains")
      ->envname("LOWFR_JOBS")
      ->capture_default_str();
}

KvList sampler_kv(const SamplerFlags& s) {
  return {{"chains", std::to_string(s.chains)},
          {"warmup", std::to_string(s.warmup)},
          {"samples", std::to_string(s.samples)},
          {"seed", std::to_string(s.seed)},
          {"target-accept", csv_detail::fmt(s.target_accept)},
          {"max-treedepth", std::to_string(s.max_treedepth)},
          {"jobs", std::to_string(s.jobs)}};
}

// Convergence rows for the induced intercept and main effects; ics is in
// chain-major draw order, as produced by induced_draws.
std::vector<ParamDiagnostics> induced_main_diagnostics(
    const FitResult& fit, const std::vector<InducedCoefficients>& ics) {
  const int C = fit.draws.n_chains();
  const int S = fit.draws.n_samples();
  const int T = fit.data_std.T;
  const auto& ex = fit.data_std.exposure_names;
  std::vector<ParamDiagnostics> rows;
  auto add = [&](const std::string& name, auto getter) {
    ParamDiagnostics d;
    d.name = name;
    if (C >= 2 && S >= 4) {
      std::vector<Vec> per_chain;
      for (int c = 0; c < C; ++c) {
        Vec v(S);
        for (int s = 0; s < S; ++s) v[s] = getter(ics[std::size_t(c) * S + s]);
        per_chain.push_back(std::move(v));
      }
      d.rhat = split_rhat(per_chain);
      d.ess_bulk = ess_bulk(per_chain);
      d.ess_tail = ess_tail(per_chain);
    } else {
      d.rhat = d.ess_bulk = d.ess_tail = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(std::move(d));
  };
  add("alpha0", [](const InducedCoefficients& ic) { return ic.alpha0; });
  for (int j = 0; j < fit.data_std.p; ++j)
    for (int t = 0; t < T; ++t)
      add("alpha[" + label_main(ex[std::size_t(j)], t) + "]",
          [j, t, T](const InducedCoefficients& ic) { return ic.alpha[j * T + t]; });
  return rows;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string scenario, out;
  std::uint64_t seed = 1;
  int n = 200, p = 10, T = 3, k_true = 5;
  CLI::Option* opt_p = nullptr;
  CLI::Option* opt_T = nullptr;
  CLI::Option* opt_k = nullptr;
};

int run_simulate(const SimulateArgs& a) {
  if (a.scenario.rfind("intro", 0) == 0 &&
      (a.opt_p->count() || a.opt_T->count() || a.opt_k->count()))
    throw UsageError("--p/--T/--k-true apply only to scenarios s1, s2, s3");
  auto [data, truth] = generate(a.scenario, a.seed, a.n, a.p, a.T, a.k_true);
  ensure_dir(a.out);
  write_csv_file(a.out + "/data.csv",
                 [&](std::ostream& os) { write_data_csv(os, data); });
  write_csv_file(a.out + "/truth.csv", [&](std::ostream& os) {
    write_truth_csv(os, truth, data.exposure_names);
  });
  KvList kv = {{"scenario", a.scenario}, {"seed", std::to_string(a.seed)},
               {"n", std::to_string(a.n)}};
  if (a.scenario.rfind("intro", 0) != 0) {
    kv.emplace_back("p", std::to_string(a.p));
    kv.emplace_back("T", std::to_string(a.T));
    kv.emplace_back("k-true", std::to_string(a.k_true));
  }
  kv.emplace_back("out", a.out);
  write_resolved_config(a.out, "simulate", kv);
  std::cout << "wrote " << a.out << "/data.csv (n=" << data.n << ", p=" << data.p
            << ", T=" << data.T << ", missing=" << data.mask.size() << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string data, model = "lowfr", k_str = "auto", sex_col, out;
  int rank = 1;
  bool sex_interactions = false;
  SamplerFlags sampler;
};

int run_fit(const FitArgs& a) {
  const ExposureDataset raw = read_data_csv_file(a.data);
  FitOptions opt;
  opt.kind = kind_from_token(a.model, a.sex_interactions);
  opt.k = parse_k(a.k_str);
  opt.rank = a.rank;
  opt.sex_col = a.sex_col;
  opt.sampler = a.sampler.config();

  const FitResult fit = fit_model(raw, opt);
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";

  ensure_dir(a.out);
  write_csv_file(a.out + "/draws.csv",
                 [&](std::ostream& os) { write_draws_csv(os, fit.draws); });

  const std::vector<InducedCoefficients> ics = induced_draws(fit, true);
  write_csv_file(a.out + "/induced.csv", [&](std::ostream& os) {
    write_induced_csv(os, ics, raw.exposure_names, raw.T);
  });

  std::vector<ParamDiagnostics> rows = fit_diagnostics(fit);
  const std::vector<ParamDiagnostics> extra = induced_main_diagnostics(fit, ics);
  rows.insert(rows.end(), extra.begin(), extra.end());
  write_csv_file(a.out + "/diagnostics.csv", [&](std::ostream& os) {
    write_diagnostics_csv(os, rows, fit.draws.total_divergent());
  });

  if (!raw.mask.empty() && fit.kind != ModelKind::Cqr && !fit.spec.is_direct()) {
    const std::vector<ImputedCell> cells = summarize_imputations(fit);
    write_csv_file(a.out + "/imputed.csv", [&](std::ostream& os) {
      write_imputed_csv(os, cells, raw.exposure_names);
    });
  }

  const int resolved_k =
      (opt.kind == ModelKind::Lowfr || opt.kind == ModelKind::LowfrSexInt)
          ? fit.spec.k
          : opt.k;
  KvList kv = {{"data", a.data},
               {"model", a.model},
               {"k", std::to_string(resolved_k)},
               {"rank", std::to_string(a.rank)},
               {"sex-col", a.sex_col},
               {"sex-interactions", a.sex_interactions ? "true" : "false"}};
  const KvList skv = sampler_kv(a.sampler);
  kv.insert(kv.end(), skv.begin(), skv.end());
  kv.emplace_back("out", a.out);
  write_resolved_config(a.out, "fit", kv);

  double max_rhat = 0.0;
  for (const auto& r : rows)
    if (!std::isnan(r.rhat)) max_rhat = std::max(max_rhat, r.rhat);
  std::cout << "fit complete: " << fit.draws.n_chains() << " chains x "
            << fit.draws.n_samples() << " draws, max rhat "
            << csv_detail::fmt(max_rhat) << ", divergences "
            << fit.draws.total_divergent() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit-directory reload shared by effects/ppc/crossval.

struct FitMeta {
  std::string data;
  std::string model;
  FitOptions opt;
};

FitMeta load_fit_meta(const std::string& fitdir) {
  const std::string path = fitdir + "/config.resolved";
  std::ifstream probe(path);
  if (!probe) throw IoError("cannot open " + path);
  probe.close();
  const auto meta = section_map(read_ini_if_present(path), "fit", path);

  FitMeta out;
  out.data = meta_get(meta, "data", path);
  out.model = meta_get(meta, "model", path);
  const bool sexint = meta_get(meta, "sex-interactions", path) == "true";
  out.opt.kind = kind_from_token(out.model, sexint);
  out.opt.k = int(csv_detail::parse_int(meta_get(meta, "k", path), path));
  out.opt.rank = int(csv_detail::parse_int(meta_get(meta, "rank", path), path));
  out.opt.sex_col = meta_get(meta, "sex-col", path);
  out.opt.sampler.chains =
      int(csv_detail::parse_int(meta_get(meta, "chains", path), path));
  out.opt.sampler.warmup =
      int(csv_detail::parse_int(meta_get(meta, "warmup", path), path));
  out.opt.sampler.samples =
      int(csv_detail::parse_int(meta_get(meta, "samples", path), path));
  out.opt.sampler.seed = std::uint64_t(
      csv_detail::parse_int(meta_get(meta, "seed", path), path));
  out.opt.sampler.target_accept =
      csv_detail::parse_double(meta_get(meta, "target-accept", path), path);
  out.opt.sampler.max_treedepth =
      int(csv_detail::parse_int(meta_get(meta, "max-treedepth", path), path));
  return out;
}

// Rebuild the in-memory fit around persisted draws, verifying that the
// reread data still matches the draw columns.
FitResult reload_fit(const std::string& fitdir, const FitMeta& meta,
                     const ExposureDataset& raw) {
  FitResult fit = prepare_fit(raw, meta.opt);
  fit.draws = read_draws_csv_file(fitdir + "/draws.csv");
  const std::vector<std::string> expect = fit_target(fit).names;
  if (fit.draws.names != expect)
    throw UsageError(fitdir + "/draws.csv: parameter columns do not match the "
                              "model implied by config.resolved and the data file");
  return fit;
}

// ---------------------------------------------------------------------------
// effects

struct EffectsArgs {
  std::string fitdir, groups, surface, out;
};

int run_effects(const EffectsArgs& a) {
  const std::string out = a.out.empty() ? a.fitdir : a.out;
  const InducedTable tbl = read_induced_csv_file(a.fitdir + "/induced.csv");

  std::vector<EffectSummary> effects = all_effects(tbl.draws, tbl.exposure_names, tbl.T);
  for (int j = 0; j < tbl.p; ++j) {
    std::vector<std::pair<int, int>> subset;
    for (int t = 0; t < tbl.T; ++t) subset.emplace_back(j, t);
    effects.push_back(cumulative_effect(tbl.draws, subset, tbl.p, tbl.T,
                                        "cum:" + tbl.exposure_names[std::size_t(j)]));
  }
  KvList kv = {{"fit", a.fitdir}};
  if (!a.groups.empty()) {
    auto f = csv_detail::open_in(a.groups);
    const auto groups = parse_groups(f, tbl.exposure_names, tbl.T);
    for (const auto& g : groups) {
      const std::string label = "cum:" + g.label;
      bool dup = false;
      for (const auto& e : effects) dup = dup || e.label == label;
      if (!dup)
        effects.push_back(
            cumulative_effect(tbl.draws, g.subset, tbl.p, tbl.T, label));
    }
    kv.emplace_back("groups", a.groups);
  }
  ensure_dir(out);
  write_csv_file(out + "/effects.csv",
                 [&](std::ostream& os) { write_effects_csv(os, effects); });

  if (!a.surface.empty()) {
    const SurfaceRequest req =
        parse_surface_spec(a.surface, tbl.exposure_names, tbl.T);
    const std::vector<SurfaceCell> cells =
        regression_surface(tbl.draws, req.axis1, req.axis2, req.grid, tbl.p, tbl.T);
    write_csv_file(out + "/surface.csv",
                   [&](std::ostream& os) { write_surface_csv(os, cells); });
    kv.emplace_back("surface", a.surface);
  }
  kv.emplace_back("out", out);
  write_resolved_config(out, "effects", kv);
  std::cout << "wrote " << out << "/effects.csv (" << effects.size() << " rows)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ppc

struct PpcArgs {
  std::string fitdir, data, out;
  std::uint64_t seed = 0;
  CLI::Option* opt_seed = nullptr;
};

int run_ppc(const PpcArgs& a) {
  const std::string out = a.out.empty() ? a.fitdir : a.out;
  const FitMeta meta = load_fit_meta(a.fitdir);
  const std::string data_path = a.data.empty() ? meta.data : a.data;
  const ExposureDataset raw = read_data_csv_file(data_path);
  const FitResult fit = reload_fit(a.fitdir, meta, raw);
  const std::uint64_t seed = a.opt_seed->count() ? a.seed : meta.opt.sampler.seed;

  const std::vector<PpcSubject> rows = ppc_per_subject(fit, raw, seed);
  ensure_dir(out);
  write_csv_file(out + "/ppc.csv",
                 [&](std::ostream& os) { write_ppc_csv(os, rows); });
  write_resolved_config(out, "ppc",
                        {{"fit", a.fitdir},
                         {"data", data_path},
                         {"seed", std::to_string(seed)},
                         {"out", out}});
  int inside = 0;
  for (const auto& r : rows) inside += r.inside ? 1 : 0;
  std::cout << "ppc coverage: " << inside << "/" << rows.size()
            << " observed outcomes inside 95% predictive intervals\n";
  return 0;
}

// ---------------------------------------------------------------------------
// crossval

struct CrossvalArgs {
  std::string fitdir, data, out;
  int folds = 10;
  std::uint64_t seed = 0;
  int jobs = 1;
  CLI::Option* opt_seed = nullptr;
};

int run_crossval(const CrossvalArgs& a) {
  const std::string out = a.out.empty() ? a.fitdir : a.out;
  const FitMeta meta = load_fit_meta(a.fitdir);
  const std::string data_path = a.data.empty() ? meta.data : a.data;
  const ExposureDataset raw = read_data_csv_file(data_path);
  const std::uint64_t seed = a.opt_seed->count() ? a.seed : meta.opt.sampler.seed;

  int fold_counter = 0;
  FitOptions base = meta.opt;
  base.sampler.jobs = a.jobs;
  const CvResult cv = crossval(
      raw, a.folds, seed,
      [&](const ExposureDataset& train, const ExposureDataset& test) {
        FitOptions o = base;
        o.sampler.seed = mix_seed(seed, 0xCF0000 + std::uint64_t(fold_counter++));
        const FitResult f = fit_model(train, o);
        return predict_mean(f, test);
      });

  ensure_dir(out);
  write_csv_file(out + "/cv.csv", [&](std::ostream& os) { write_cv_csv(os, cv); });
  write_resolved_config(out, "crossval",
                        {{"fit", a.fitdir},
                         {"data", data_path},
                         {"folds", std::to_string(a.folds)},
                         {"seed", std::to_string(seed)},
                         {"jobs", std::to_string(a.jobs)},
                         {"out", out}});
  std::cout << "cross-validation mse: " << csv_detail::fmt(cv.mse) << " ("
            << a.folds << " folds)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkArgs {
  std::string scenario, models = "lowfr", k_str = "auto", out;
  int reps = 3, n = 200, p = 10, T = 3, k_true = 5, rank = 1;
  std::uint64_t seed = 1;
  SamplerFlags sampler;
  CLI::Option* opt_p = nullptr;
  CLI::Option* opt_T = nullptr;
  CLI::Option* opt_k = nullptr;
};

std::vector<std::string> parse_models(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const std::string m = csv_detail::trim(tok);
    if (m != "lowfr" && m != "cqr" && m != "direct" && m != "direct-full")
      throw UsageError("--models: unknown model '" + m + "'");
    for (const auto& seen : out)
      if (seen == m) throw UsageError("--models: duplicate model '" + m + "'");
    out.push_back(m);
  }
  if (out.empty()) throw UsageError("--models: empty list");
  return out;
}

int run_benchmark(const BenchmarkArgs& a) {
  if (a.scenario.rfind("intro", 0) == 0 &&
      (a.opt_p->count() || a.opt_T->count() || a.opt_k->count()))
    throw UsageError("--p/--T/--k-true apply only to scenarios s1, s2, s3");
  if (a.reps < 1) throw UsageError("--reps must be >= 1");
  const std::vector<std::string> models = parse_models(a.models);

  std::vector<MetricsRecord> records;
  std::map<std::string, std::vector<MetricsRow>> ok_rows;
  int failures = 0;
  for (int rep = 0; rep < a.reps; ++rep) {
    const std::uint64_t dseed = mix_seed(a.seed, 0xDA7A00 + std::uint64_t(rep));
    auto [data, truth] = generate(a.scenario, dseed, a.n, a.p, a.T, a.k_true);
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      const std::string& model = models[mi];
      FitOptions opt;
      opt.kind = kind_from_token(model, false);
      opt.k = parse_k(a.k_str);
      opt.rank = a.rank;
      opt.sampler = a.sampler.config();
      opt.sampler.seed =
          mix_seed(a.seed, 0xF17000 + 64 * std::uint64_t(rep) + mi);
      MetricsRecord rec;
      rec.rep = std::to_string(rep + 1);
      rec.row.model = model;
      try {
        const FitResult fit = fit_model(data, opt);
        const std::vector<InducedCoefficients> ics = induced_draws(fit, true);
        const std::vector<EffectSummary> all =
            all_effects(ics, data.exposure_names, data.T);
        CoefEstimates est;
        const std::size_t n_main = std::size_t(data.p) * data.T;
        est.mains.assign(all.begin(), all.begin() + long(n_main));
        est.interactions.assign(all.begin() + long(n_main), all.end());
        for (int j = 0; j < data.p; ++j) {
          std::vector<std::pair<int, int>> subset;
          for (int t = 0; t < data.T; ++t) subset.emplace_back(j, t);
          est.cumulative.push_back(cumulative_effect(
              ics, subset, data.p, data.T, data.exposure_names[std::size_t(j)]));
        }
        rec.row = evaluate_metrics(model, est, truth, data.exposure_names);
        rec.status = "ok";
        ok_rows[model].push_back(rec.row);
      } catch (const Error& e) {
        std::cerr << "replicate " << rep + 1 << " model " << model
                  << " failed: " << e.what() << "\n";
        rec.status = "failed";
        const double nan = std::numeric_limits<double>::quiet_NaN();
        rec.row.main_mse = rec.row.int_mse = rec.row.main_cov = rec.row.int_cov =
            rec.row.main_tp = rec.row.main_tn = rec.row.ce_mse = rec.row.ce_cov =
                rec.row.ce_tp = rec.row.ce_tn = nan;
        ++failures;
      }
      records.push_back(std::move(rec));
    }
  }

  // Averages over the successful replicates, one row per model.
  for (const auto& model : models) {
    MetricsRecord avg;
    avg.rep = "avg";
    avg.row.model = model;
    const auto it = ok_rows.find(model);
    if (it == ok_rows.end() || it->second.empty()) {
      avg.status = "failed";
      const double nan = std::numeric_limits<double>::quiet_NaN();
      avg.row.main_mse = avg.row.int_mse = avg.row.main_cov = avg.row.int_cov =
          avg.row.main_tp = avg.row.main_tn = avg.row.ce_mse = avg.row.ce_cov =
              avg.row.ce_tp = avg.row.ce_tn = nan;
    } else {
      avg.status = "ok";
      const double m = double(it->second.size());
      for (const MetricsRow& r : it->second) {
        avg.row.main_mse += r.main_mse / m;
        avg.row.int_mse += r.int_mse / m;
        avg.row.main_cov += r.main_cov / m;
        avg.row.int_cov += r.int_cov / m;
        avg.row.main_tp += r.main_tp / m;
        avg.row.main_tn += r.main_tn / m;
        avg.row.ce_mse += r.ce_mse / m;
        avg.row.ce_cov += r.ce_cov / m;
        avg.row.ce_tp += r.ce_tp / m;
        avg.row.ce_tn += r.ce_tn / m;
      }
    }
    records.push_back(std::move(avg));
  }

  ensure_dir(a.out);
  write_csv_file(a.out + "/metrics.csv",
                 [&](std::ostream& os) { write_metrics_csv(os, records); });
  KvList kv = {{"scenario", a.scenario},
               {"reps", std::to_string(a.reps)},
               {"models", a.models},
               {"n", std::to_string(a.n)}};
  if (a.scenario.rfind("intro", 0) != 0) {
    kv.emplace_back("p", std::to_string(a.p));
    kv.emplace_back("T", std::to_string(a.T));
    kv.emplace_back("k-true", std::to_string(a.k_true));
  }
  kv.emplace_back("k", a.k_str);
  kv.emplace_back("rank", std::to_string(a.rank));
  const KvList skv = sampler_kv(a.sampler);
  kv.insert(kv.end(), skv.begin(), skv.end());
  kv.emplace_back("out", a.out);
  write_resolved_config(a.out, "benchmark", kv);

  const int total = a.reps * int(models.size());
  std::cout << "benchmark complete: " << total - failures << "/" << total
            << " fits succeeded; wrote " << a.out << "/metrics.csv\n";
  if (double(failures) > 0.2 * double(total)) {
    std::cerr << "error: " << failures << "/" << total
              << " replicate fits failed (over 20%)\n";
    return 4;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// validate

int run_validate(const std::string& path) {
  const ExposureDataset data = read_data_csv_file(path);
  std::cout << path << ": n=" << data.n << ", p=" << data.p << ", T=" << data.T
            << ", covariates=" << data.n_cov() << ", missing=" << data.mask.size()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank longitudinal factor regression toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI file ([command] sections)");
  app.allow_config_extras(false);

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  c_sim->add_option("--scenario", sim.scenario, "intro1|intro2|s1|s2|s3")
      ->required()
      ->check(CLI::IsMember({"intro1", "intro2", "s1", "s2", "s3"}));
  c_sim->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  c_sim->add_option("--n", sim.n, "Subjects")->capture_default_str();
  sim.opt_p = c_sim->add_option("--p", sim.p, "Exposures (s1-s3)")
                  ->capture_default_str();
  sim.opt_T = c_sim->add_option("--T", sim.T, "Time points (s1-s3)")
                  ->capture_default_str();
  sim.opt_k = c_sim->add_option("--k-true", sim.k_true, "Generating factors (s1-s3)")
                  ->capture_default_str();
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  FitArgs fita;
  CLI::App* c_fit = app.add_subcommand("fit", "Fit a model to a data file");
  c_fit->add_option("--data", fita.data, "data.csv path")->required();
  c_fit->add_option("--model", fita.model, "lowfr|cqr|direct|direct-full")
      ->capture_default_str()
      ->check(CLI::IsMember({"lowfr", "cqr", "direct", "direct-full"}));
  c_fit->add_option("--rank", fita.rank, "Rank of the direct variant")
      ->capture_default_str();
  c_fit->add_option("--k", fita.k_str, "Latent factors: auto or a positive integer")
      ->capture_default_str();
  c_fit->add_option("--sex-col", fita.sex_col,
                    "Covariate carrying the binary group indicator");
  c_fit->add_flag("--sex-interactions", fita.sex_interactions,
                  "Group-specific main effects (lowfr only)");
  add_sampler_flags(c_fit, &fita.sampler);
  c_fit->add_option("--out", fita.out, "Output directory")->required();

  EffectsArgs eff;
  CLI::App* c_eff = app.add_subcommand("effects", "Summarize a fit directory");
  c_eff->add_option("--fit", eff.fitdir, "Fit output directory")->required();
  c_eff->add_option("--groups", eff.groups,
                    "Group definitions file (LABEL = member, member, ...)");
  c_eff->add_option("--surface", eff.surface,
                    "axis1=<members>;axis2=<members>;grid=lo:hi:step");
  c_eff->add_option("--out", eff.out, "Output directory (default: fit dir)");

  PpcArgs ppc;
  CLI::App* c_ppc = app.add_subcommand("ppc", "Posterior predictive checks");
  c_ppc->add_option("--fit", ppc.fitdir, "Fit output directory")->required();
  c_ppc->add_option("--data", ppc.data, "Override the data path stored in the fit");
  ppc.opt_seed = c_ppc->add_option("--seed", ppc.seed,
                                   "Predictive noise seed (default: fit seed)");
  c_ppc->add_option("--out", ppc.out, "Output directory (default: fit dir)");

  CrossvalArgs cva;
  CLI::App* c_cv = app.add_subcommand("crossval", "K-fold cross-validation");
  c_cv->add_option("--fit", cva.fitdir, "Fit output directory")->required();
  c_cv->add_option("--data", cva.data, "Override the data path stored in the fit");
  c_cv->add_option("--folds", cva.folds, "Folds")->capture_default_str();
  cva.opt_seed = c_cv->add_option("--seed", cva.seed,
                                  "Fold-assignment seed (default: fit seed)");
  c_cv->add_option("--jobs", cva.jobs, "Worker threads for chains")
      ->envname("LOWFR_JOBS")
      ->capture_default_str();
  c_cv->add_option("--out", cva.out, "Output directory (default: fit dir)");

  BenchmarkArgs bm;
  CLI::App* c_bm = app.add_subcommand("benchmark",
                                      "Simulate, fit, and score model grids");
  c_bm->add_option("--scenario", bm.scenario, "intro1|intro2|s1|s2|s3")
      ->required()
      ->check(CLI::IsMember({"intro1", "intro2", "s1", "s2", "s3"}));
  c_bm->add_option("--reps", bm.reps, "Replicates")->capture_default_str();
  c_bm->add_option("--models", bm.models,
                   "Comma list of lowfr,cqr,direct,direct-full")
      ->capture_default_str();
  c_bm->add_option("--n", bm.n, "Subjects per replicate")->capture_default_str();
  bm.opt_p = c_bm->add_option("--p", bm.p, "Exposures (s1-s3)")
                 ->capture_default_str();
  bm.opt_T = c_bm->add_option("--T", bm.T, "Time points (s1-s3)")
                 ->capture_default_str();
  bm.opt_k = c_bm->add_option("--k-true", bm.k_true, "Generating factors (s1-s3)")
                 ->capture_default_str();
  c_bm->add_option("--k", bm.k_str, "Fitted factors: auto or a positive integer")
      ->capture_default_str();
  c_bm->add_option("--rank", bm.rank, "Rank of the direct variant")
      ->capture_default_str();
  add_sampler_flags(c_bm, &bm.sampler);
  c_bm->add_option("--out", bm.out, "Output directory")->required();

  std::string validate_path;
  CLI::App* c_val = app.add_subcommand("validate", "Check that a data file parses");
  c_val->add_option("--data", validate_path, "data.csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_fit->parsed()) return run_fit(fita);
    if (c_eff->parsed()) return run_effects(eff);
    if (c_ppc->parsed()) return run_ppc(ppc);
    if (c_cv->parsed()) return run_crossval(cva);
    if (c_bm->parsed()) return run_benchmark(bm);
    if (c_val->parsed()) return run_validate(validate_path);
    std::cerr << "error: no command\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const InferenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
