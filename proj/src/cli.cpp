#include "scrmed/cli.hpp"

#include "scrmed/effects.hpp"
#include "scrmed/em.hpp"
#include "scrmed/errors.hpp"
#include "scrmed/inference.hpp"
#include "scrmed/io.hpp"
#include "scrmed/likelihood.hpp"
#include "scrmed/simulate.hpp"
#include "scrmed/study.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace scrmed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string input;
  std::string out_dir;
  std::string fit_dir;
  std::string warm_start;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  std::size_t max_iters = 5000;
  std::size_t starts = 1;
  std::size_t base_starts = 5;
  std::size_t bootstrap_n = 100;
  std::string grid;
  std::vector<std::string> profiles;
  std::vector<std::string> effects;
  std::size_t threads = 0;
  bool standardize = false;
  bool accelerate = false;
  bool percentile = false;
  // simulate / reproduce
  std::size_t n = 2000;
  double censor_max = 15.0;
  bool no_censoring = false;
  std::string table = "both";
  std::size_t replicates = 200;
};

EmConfig em_config(const Options& o) {
  EmConfig c;
  c.tol = o.tol;
  c.max_outer_iters = o.max_iters;
  c.n_starts = o.starts;
  c.seed = o.seed;
  c.accelerate = o.accelerate;
  c.validate();
  return c;
}

void require_dir(const std::string& dir) {
  if (dir.empty()) throw InvalidInput("--out-dir is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InvalidInput("cannot create output directory '" + dir + "'");
}

Dataset load_input(const Options& o) {
  if (o.input.empty()) throw InvalidInput("--input is required");
  if (!fs::exists(o.input)) throw InvalidInput("input file '" + o.input + "' does not exist");
  return io::read_dataset(o.input);
}

io::FitArtifacts load_fit(const Options& o) {
  if (o.fit_dir.empty()) throw InvalidInput("--fit-dir is required");
  if (!fs::exists(fs::path(o.fit_dir) / "fit.json")) throw InvalidInput("no fit.json in '" + o.fit_dir + "'");
  return io::read_fit_dir(o.fit_dir);
}

Vector parse_profile(const std::string& spec, const std::vector<std::string>& names) {
  Vector x = Vector::Constant(static_cast<Eigen::Index>(names.size()), std::nan(""));
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidInput("profile entry '" + item + "' must be name=value");
    const std::string key = item.substr(0, eq);
    const auto it = std::find(names.begin(), names.end(), key);
    if (it == names.end()) throw InvalidInput("profile names unknown covariate '" + key + "'");
    const auto v = io::parse_double(item.substr(eq + 1));
    if (!v || !std::isfinite(*v)) throw InvalidInput("profile value for '" + key + "' is not a finite number");
    x[it - names.begin()] = *v;
  }
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (std::isnan(x[j]))
      throw InvalidInput("profile has " + std::to_string(x.size()) + " covariates; '" +
                         names[static_cast<std::size_t>(j)] + "' is missing");
  return x;
}

void check_fit_matches(const io::FitArtifacts& a, const Dataset& data) {
  if (a.covariate_names != data.covariate_names())
    throw InvalidInput("input covariates do not match the fitted model's covariates");
}

void report_fit(std::ostream& out, const FittedModel& f) {
  out << "converged: " << (f.converged ? "yes" : "no") << ", iterations: " << f.n_iters
      << ", loglik: " << io::format_double(f.loglik_trace.empty() ? std::nan("") : f.loglik_trace.back()) << '\n';
  for (const auto& w : f.warnings) out << "warning: " << w << '\n';
}

int cmd_fit(const Options& o, std::ostream& out) {
  const Dataset data = load_input(o);
  require_dir(o.out_dir);
  const EmConfig cfg = em_config(o);
  std::optional<WarmStart> warm;
  if (!o.warm_start.empty()) {
    Options w = o;
    w.fit_dir = o.warm_start;
    const auto prev = load_fit(w);
    check_fit_matches(prev, data);
    warm = WarmStart{prev.fit.params, prev.fit.hazards};
  }
  io::FitArtifacts a;
  a.covariate_names = data.covariate_names();
  a.config = cfg;
  a.n_subjects = data.size();
  if (o.standardize) {
    const auto st = Standardization::of(data.x());
    std::optional<WarmStart> sw;
    if (warm) throw InvalidInput("--warm-start cannot be combined with --standardize");
    a.fit = st.restore(fit(st.apply(data), cfg, sw));
    a.standardization = st;
  } else {
    a.fit = fit(data, cfg, warm);
  }
  io::write_fit_dir(o.out_dir, a, data);
  report_fit(out, a.fit);
  return a.fit.converged ? 0 : 1;
}

std::vector<double> grid_for(const Options& o, const Dataset& data) {
  return o.grid.empty() ? default_grid(data) : parse_grid(o.grid);
}

int cmd_effects(const Options& o, std::ostream& out) {
  const auto art = load_fit(o);
  const Dataset data = load_input(o);
  check_fit_matches(art, data);
  if (!art.fit.converged) throw InvalidInput("the stored fit did not converge");
  require_dir(o.out_dir);
  const auto grid = grid_for(o, data);

  std::vector<Vector> profiles;
  for (const auto& p : o.profiles) profiles.push_back(parse_profile(p, data.covariate_names()));
  if (profiles.empty()) profiles.push_back(data.x().colwise().mean().transpose());
  std::vector<EffectName> names;
  if (o.effects.empty()) {
    names = {EffectName::NIE1, EffectName::NDE1, EffectName::TE2, EffectName::TE3,
             EffectName::NIE1_marginal, EffectName::NDE1_marginal};
  } else {
    for (const auto& e : o.effects) names.push_back(parse_effect_name(e));
  }
  std::vector<EffectRequest> reqs;
  for (auto e : names) {
    if (is_marginal(e)) {
      reqs.push_back({e, std::nullopt});
    } else {
      for (const auto& x : profiles) reqs.push_back({e, x});
    }
  }

  std::vector<EffectCurve> curves;
  std::size_t n_failed = 0;
  if (o.bootstrap_n > 0) {
    BootstrapConfig bc;
    bc.n_resamples = o.bootstrap_n;
    bc.seed = o.seed;
    bc.threads = o.threads;
    bc.em = art.config;
    bc.em.accelerate = bc.em.accelerate || o.accelerate;
    bc.percentile = o.percentile;
    bc.grid = grid;
    bc.effects = reqs;
    auto br = bootstrap(data, art.fit, bc);
    curves = std::move(br.curves);
    n_failed = br.n_failed;
  } else {
    for (const auto& r : reqs) curves.push_back(effect_curve(r.name, art.fit, grid, r.profile, &data));
  }
  std::ofstream f(fs::path(o.out_dir) / "effects.csv");
  if (!f) throw InvalidInput("cannot write effects.csv");
  io::write_effects(f, curves, data.covariate_names());
  std::size_t truncated = 0;
  for (const auto& c : curves) truncated += c.truncated;
  out << "wrote " << curves.size() << " curves";
  if (o.bootstrap_n > 0) out << " (" << o.bootstrap_n << " resamples, " << n_failed << " failed)";
  out << '\n';
  if (truncated > 0) out << "warning: " << truncated << " grid point(s) beyond the estimated support were dropped\n";
  return 0;
}

int cmd_diagnose(const Options& o, std::ostream& out) {
  const auto art = load_fit(o);
  const Dataset data = load_input(o);
  check_fit_matches(art, data);
  if (!art.fit.converged) throw InvalidInput("the stored fit did not converge");
  require_dir(o.out_dir);
  const auto grid = grid_for(o, data);
  std::ofstream f(fs::path(o.out_dir) / "survival_overlay.csv");
  if (!f) throw InvalidInput("cannot write survival_overlay.csv");
  f << "arm,t,model_avg,km\n";
  for (int arm : {0, 1}) {
    std::vector<double> t;
    std::vector<int> ev;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (data.a()[ii] != arm) continue;
      t.push_back(data.y()[ii]);
      ev.push_back(data.delta_t()[ii]);
    }
    if (t.empty()) continue;
    const KaplanMeier km(t, ev);
    const auto curve = population_average_survival(art.fit, data, arm, grid);
    for (std::size_t g = 0; g < curve.grid.size(); ++g)
      f << arm << ',' << io::format_double(curve.grid[g]) << ',' << io::format_double(curve.values[g]) << ','
        << io::format_double(km(curve.grid[g])) << '\n';
    if (curve.truncated > 0)
      out << "warning: arm " << arm << ": " << curve.truncated << " grid point(s) beyond the estimated support dropped\n";
  }
  out << "wrote survival_overlay.csv\n";
  return 0;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  require_dir(o.out_dir);
  auto spec = GenerativeSpec::reference_design(o.n, o.seed);
  if (o.no_censoring) spec.censor_max = std::numeric_limits<double>::infinity();
  else spec.censor_max = o.censor_max;
  const auto sim = generate(spec);
  io::write_dataset(fs::path(o.out_dir) / "data.csv", sim.data);
  io::write_truth(fs::path(o.out_dir) / "truth.csv", sim.data, sim.truth);
  out << "wrote " << sim.data.size() << " subjects to data.csv (hidden truth in truth.csv)\n";
  return 0;
}

int cmd_reproduce(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.table != "table1" && o.table != "table2" && o.table != "both")
    throw InvalidInput("--table must be table1, table2 or both");
  require_dir(o.out_dir);
  StudyConfig sc;
  sc.n = o.n;
  sc.replicates = o.replicates;
  sc.seed = o.seed;
  sc.bootstrap_n = o.bootstrap_n;
  sc.threads = o.threads;
  sc.em.tol = o.tol;
  sc.em.max_outer_iters = o.max_iters;
  sc.em.accelerate = o.accelerate;
  sc.em.n_starts = o.starts;
  sc.base_starts = o.base_starts;
  sc.progress = [&](std::size_t d, std::size_t total) {
    if (d % 10 == 0 || d == total) err << "replicate " << d << "/" << total << '\n';
  };
  const StudyResult res = run_study(sc);
  if (o.table != "table2") {
    std::ofstream f(fs::path(o.out_dir) / "table1.csv");
    write_summary(f, res.table1);
  }
  if (o.table != "table1") {
    std::ofstream f(fs::path(o.out_dir) / "table2.csv");
    write_summary(f, res.table2);
  }
  for (std::size_t r = 0; r < res.replicates.size(); ++r)
    if (!res.replicates[r].error.empty()) err << "replicate " << r << ": " << res.replicates[r].error << '\n';
  out << "replicates: " << sc.replicates << ", fit failures: " << res.n_fit_failed
      << ", bootstrap failures: " << res.n_boot_failed << '\n';
  return res.n_fit_failed == sc.replicates ? 1 : 0;
}

int cmd_sensitivity(const Options& o, std::ostream& out) {
  const Dataset data = load_input(o);
  require_dir(o.out_dir);
  const auto s = label_swap_sensitivity(data, em_config(o));
  json j;
  j["schema_version"] = io::kSchemaVersion;
  j["original"] = {{"average_w2", s.original_avg_w2}, {"converged", s.original_converged},
                   {"loglik", s.original_loglik}, {"n_iters", s.original_iters}};
  j["swapped"] = {{"average_w2", s.swapped_avg_w2}, {"converged", s.swapped_converged},
                  {"loglik", s.swapped_loglik}, {"n_iters", s.swapped_iters}};
  if (!s.swapped_error.empty()) j["swapped"]["error"] = s.swapped_error;
  io::write_text(fs::path(o.out_dir) / "sensitivity.json", j.dump(2) + "\n");
  out << "average w2: original " << io::format_double(s.original_avg_w2) << ", swapped "
      << (s.swapped_error.empty() ? io::format_double(s.swapped_avg_w2) : "unavailable") << '\n';
  if (!s.swapped_error.empty()) out << "swapped refit broke down: " << s.swapped_error << '\n';
  return s.original_converged && (s.swapped_converged || !s.swapped_error.empty()) ? 0 : 1;
}

int cmd_bootstrap(const Options& o, std::ostream& out) {
  const Dataset data = load_input(o);
  require_dir(o.out_dir);
  if (o.bootstrap_n < 1) throw InvalidInput("--bootstrap-n must be at least 1");
  BootstrapConfig bc;
  bc.n_resamples = o.bootstrap_n;
  bc.seed = o.seed;
  bc.threads = o.threads;
  bc.em = em_config(o);
  bc.percentile = o.percentile;
  FittedModel base;
  if (!o.fit_dir.empty()) {
    const auto art = load_fit(o);
    check_fit_matches(art, data);
    base = art.fit;
  } else {
    base = fit(data, bc.em);
    if (!base.converged) throw NumericalError("base fit did not converge");
  }
  const auto br = bootstrap(data, base, bc);
  {
    std::ofstream f(fs::path(o.out_dir) / "bootstrap.csv");
    if (!f) throw InvalidInput("cannot write bootstrap.csv");
    io::write_bootstrap(f, br);
  }
  json j;
  j["schema_version"] = io::kSchemaVersion;
  j["n_resamples"] = br.n_resamples;
  j["n_failed_resamples"] = br.n_failed;
  j["seed"] = br.seed;
  j["interval"] = o.percentile ? "percentile" : "wald";
  io::write_text(fs::path(o.out_dir) / "bootstrap.json", j.dump(2) + "\n");
  out << "bootstrap: " << br.n_resamples << " resamples, " << br.n_failed << " failed\n";
  return 0;
}

void print_nested(std::ostream& err, const std::exception& e, int depth = 0) {
  err << (depth == 0 ? "error: " : "  caused by: ") << e.what() << '\n';
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    print_nested(err, inner, depth + 1);
  } catch (...) {
  }
}

/// Exit code of the innermost library error in a nested chain.
int exit_code_of(const std::exception& e) {
  int code = dynamic_cast<const InvalidInput*>(&e) ? 2 : 1;
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    code = exit_code_of(inner);
  } catch (...) {
  }
  return code;
}

}  // namespace

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> g;
  if (spec.find(':') != std::string::npos) {
    std::stringstream ss(spec);
    std::string a, b, k;
    std::getline(ss, a, ':');
    std::getline(ss, b, ':');
    std::getline(ss, k, ':');
    const auto lo = io::parse_double(a), hi = io::parse_double(b), cnt = io::parse_double(k);
    if (!lo || !hi || !cnt || *cnt < 2 || *cnt != std::floor(*cnt) || !(*hi > *lo))
      throw InvalidInput("grid '" + spec + "' must be start:stop:count with stop > start and count >= 2");
    const auto n = static_cast<std::size_t>(*cnt);
    for (std::size_t i = 0; i < n; ++i) g.push_back(*lo + (*hi - *lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  } else {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto v = io::parse_double(item);
      if (!v) throw InvalidInput("grid entry '" + item + "' is not a number");
      g.push_back(*v);
    }
  }
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(g[i] >= 0.0) || !std::isfinite(g[i]) || (i > 0 && !(g[i] > g[i - 1])))
      throw InvalidInput("grid must be finite, non-negative and strictly increasing");
  if (g.empty()) throw InvalidInput("grid is empty");
  return g;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Principal-stratification mediation analysis for semi-competing risks"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    c->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->capture_default_str();
    c->add_option("--tol", o.tol, "EM convergence tolerance")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--max-iters", o.max_iters, "Maximum EM iterations")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--starts", o.starts, "EM starts per fit; extra starts are jittered and the best likelihood wins")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c->add_option("--out-dir", o.out_dir, "Output directory")->required();
  };

  auto* fit_cmd = app.add_subcommand("fit", "Fit the model; writes fit.json, hazards.csv, posteriors.csv, loglik_trace.csv");
  common(fit_cmd);
  fit_cmd->add_option("--input", o.input, "Analysis CSV")->required();
  fit_cmd->add_flag("--standardize", o.standardize, "Fit on standardized covariates, report on the original scale");
  fit_cmd->add_option("--warm-start", o.warm_start, "Start from a previous fit directory");
  fit_cmd->add_flag("--accelerate", o.accelerate, "Squared-extrapolation EM acceleration");

  auto* eff_cmd = app.add_subcommand("effects", "Effect curves with bootstrap bands; writes effects.csv");
  common(eff_cmd);
  eff_cmd->add_option("--input", o.input, "Analysis CSV used for the fit")->required();
  eff_cmd->add_option("--fit-dir", o.fit_dir, "Directory written by fit")->required();
  eff_cmd->add_option("--grid", o.grid, "start:stop:count or comma list (default: 100 points to the 95th percentile of y)");
  eff_cmd->add_option("--profile", o.profiles, "Covariate profile, e.g. x1=0.5,x2=0.5 (repeatable)");
  eff_cmd->add_option("--effect", o.effects, "Effect names (default: NIE1 NDE1 TE2 TE3 and the marginal NIE1/NDE1)");
  eff_cmd->add_option("--bootstrap-n", o.bootstrap_n, "Bootstrap resamples (0 disables)")->capture_default_str();
  eff_cmd->add_flag("--percentile", o.percentile, "Percentile instead of Wald intervals");
  eff_cmd->add_flag("--accelerate", o.accelerate, "Squared-extrapolation EM acceleration for refits");

  auto* diag_cmd = app.add_subcommand("diagnose", "Model-average survival against Kaplan-Meier; writes survival_overlay.csv");
  common(diag_cmd);
  diag_cmd->add_option("--input", o.input, "Analysis CSV used for the fit")->required();
  diag_cmd->add_option("--fit-dir", o.fit_dir, "Directory written by fit")->required();
  diag_cmd->add_option("--grid", o.grid, "start:stop:count or comma list");

  auto* sim_cmd = app.add_subcommand("simulate", "Generate data from the simulation design; writes data.csv and truth.csv");
  common(sim_cmd);
  sim_cmd->add_option("--n", o.n, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
  sim_cmd->add_option("--censor-max", o.censor_max, "Censoring C ~ Uniform(0, censor-max)")->capture_default_str()->check(CLI::PositiveNumber);
  sim_cmd->add_flag("--no-censoring", o.no_censoring, "Disable censoring");

  auto* rep_cmd = app.add_subcommand("reproduce", "Monte Carlo study; writes table1.csv / table2.csv");
  common(rep_cmd);
  rep_cmd->add_option("--table", o.table, "table1, table2 or both")->capture_default_str();
  rep_cmd->add_option("--n", o.n, "Subjects per replicate")->capture_default_str()->check(CLI::PositiveNumber);
  rep_cmd->add_option("--replicates", o.replicates, "Monte Carlo replicates")->capture_default_str();
  rep_cmd->add_option("--base-starts", o.base_starts, "EM starts for each replicate's base fit")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  rep_cmd->add_option("--bootstrap-n", o.bootstrap_n, "Bootstrap resamples per replicate")->capture_default_str();
  o.accelerate = false;
  rep_cmd->add_flag("--accelerate,!--no-accelerate", o.accelerate, "Squared-extrapolation EM acceleration (default on)");

  auto* sens_cmd = app.add_subcommand("sensitivity", "Label-swap refit; writes sensitivity.json");
  common(sens_cmd);
  sens_cmd->add_option("--input", o.input, "Analysis CSV")->required();

  auto* boot_cmd = app.add_subcommand("bootstrap", "Bootstrap SEs, Wald intervals and tests; writes bootstrap.csv");
  common(boot_cmd);
  boot_cmd->add_option("--input", o.input, "Analysis CSV")->required();
  boot_cmd->add_option("--fit-dir", o.fit_dir, "Base fit directory (refit when absent)");
  boot_cmd->add_option("--bootstrap-n", o.bootstrap_n, "Bootstrap resamples")->capture_default_str();
  boot_cmd->add_flag("--percentile", o.percentile, "Percentile instead of Wald intervals");
  boot_cmd->add_flag("--accelerate", o.accelerate, "Squared-extrapolation EM acceleration");

  try {
    // reproduce accelerates unless told otherwise
    for (int i = 1; i < argc; ++i)
      if (std::string(argv[i]) == "reproduce") o.accelerate = true;
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::ostringstream o2, e2;
    app.exit(e, o2, e2);
    out << o2.str();
    err << e2.str();
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(o, out);
    if (eff_cmd->parsed()) return cmd_effects(o, out);
    if (diag_cmd->parsed()) return cmd_diagnose(o, out);
    if (sim_cmd->parsed()) return cmd_simulate(o, out);
    if (rep_cmd->parsed()) return cmd_reproduce(o, out, err);
    if (sens_cmd->parsed()) return cmd_sensitivity(o, out);
    if (boot_cmd->parsed()) return cmd_bootstrap(o, out);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    print_nested(err, e);
    return exit_code_of(e);
  }
  return 2;
}

}  // namespace scrmed
