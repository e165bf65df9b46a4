// Acceptance runner: one PASS/FAIL line per criterion.
//
//   scrmed_acceptance [--cli PATH] [--out DIR] [criterion ...]
//
// With no criterion numbers every criterion runs. Criteria 1 and 2 share one
// Monte Carlo study (200 replicates at n = 2000, 100 bootstrap resamples each).

#include "checks.hpp"

#include "scrmed/effects.hpp"
#include "scrmed/errors.hpp"
#include "scrmed/em.hpp"
#include "scrmed/io.hpp"
#include "scrmed/likelihood.hpp"
#include "scrmed/simulate.hpp"
#include "scrmed/study.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

using namespace scrmed;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& what, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << what << "  [" << detail << "]" << std::endl;
  failures += ok ? 0 : 1;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

struct Reference {
  std::string name;
  double bias;
  double se;
};

// reference bias and SE at n = 2000
const std::vector<Reference> kTable1{
    {"beta_M1", 0.006, 0.147},          {"gamma_M1.x1", 0.005, 0.063},     {"gamma_M1.x2", 0.010, 0.192},
    {"beta_T3", -0.034, 0.334},         {"alpha1.intercept", 0.010, 0.148}, {"alpha1.x1", -0.003, 0.078},
    {"alpha1.x2", -0.007, 0.256},
};

void study_criteria(const fs::path& out, bool want1, bool want2) {
  StudyConfig sc;
  sc.n = 2000;
  sc.replicates = 200;
  sc.bootstrap_n = 100;
  sc.seed = 20240601;
  sc.threads = 1;
  const auto start = std::chrono::steady_clock::now();
  sc.progress = [&](std::size_t d, std::size_t total) {
    if (d % 10 == 0 || d == total) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "  study replicate " << d << "/" << total << " (" << fmt(s, 0) << " s)" << std::endl;
    }
  };
  const StudyResult res = run_study(sc);
  {
    std::ofstream f(out / "table1.csv");
    write_summary(f, res.table1);
    std::ofstream g(out / "table2.csv");
    write_summary(g, res.table2);
  }
  const std::string failed = std::to_string(res.n_fit_failed) + " fit / " + std::to_string(res.n_boot_failed) + " bootstrap failures";

  if (want1) {
    for (const auto& ref : kTable1) {
      const SummaryRow* row = nullptr;
      for (const auto& r : res.table1)
        if (r.quantity == ref.name) row = &r;
      if (!row) {
        report(1, ref.name, false, "row missing");
        continue;
      }
      const bool bias_ok = std::abs(row->bias - ref.bias) <= 0.05;
      const bool se_ok = std::abs(row->se - ref.se) <= 0.30 * ref.se;
      const bool cp_ok = row->cp >= 0.90 && row->cp <= 0.99;
      report(1, ref.name + " bias/SE/CP", bias_ok && se_ok && cp_ok,
             "bias " + fmt(row->bias) + " (ref " + fmt(ref.bias, 3) + ", tol 0.05); SE " + fmt(row->se) + " (ref " +
                 fmt(ref.se, 3) + " +/-30%); SEE " + fmt(row->see) + "; CP " + fmt(row->cp, 3) + " in [0.90,0.99]; " +
                 std::to_string(row->n_used) + " fits; " + failed);
    }
  }
  if (want2) {
    struct Target {
      std::string name;
      double t, value, tol;
    };
    for (const Target tg : {Target{"NDE1", 2.0, -0.11, 0.03}, Target{"NIE1", 4.0, -0.03, 0.01}, Target{"TE2", 6.0, 0.17, 0.05},
                            Target{"TE3", 4.0, -0.06, 0.05}}) {
      const SummaryRow* row = nullptr;
      for (const auto& r : res.table2)
        if (r.quantity == tg.name && r.t == tg.t) row = &r;
      if (!row || row->n_used == 0) {
        report(2, tg.name, false, "no in-support replicates");
        continue;
      }
      const double mean = row->truth + row->bias;
      report(2, tg.name + "(" + fmt(tg.t, 0) + ") mean", std::abs(mean - tg.value) <= tg.tol,
             "mean " + fmt(mean) + " vs " + fmt(tg.value, 2) + " +/- " + fmt(tg.tol, 2) + "; truth " + fmt(row->truth) +
                 "; " + std::to_string(row->n_used) + " replicates in support");
    }
  }
}

void generative_criterion() {
  const auto sim = generate(GenerativeSpec::reference_design(100000, 3));
  double u[3] = {0, 0, 0}, cm = 0, ct = 0;
  const double n = static_cast<double>(sim.data.size());
  for (std::size_t i = 0; i < sim.data.size(); ++i) {
    u[sim.truth.stratum[i] - 1] += 1.0 / n;
    cm += (1 - sim.data.delta_m()[static_cast<Eigen::Index>(i)]) / n;
    ct += (1 - sim.data.delta_t()[static_cast<Eigen::Index>(i)]) / n;
  }
  const bool ok = std::abs(u[0] - 0.31) <= 0.02 && std::abs(u[1] - 0.41) <= 0.02 && std::abs(u[2] - 0.28) <= 0.02 &&
                  std::abs(cm - 0.51) <= 0.02 && std::abs(ct - 0.26) <= 0.02;
  report(3, "stratum shares and censoring at n = 1e5", ok,
         "strata " + fmt(u[0], 3) + "/" + fmt(u[1], 3) + "/" + fmt(u[2], 3) + " vs 0.31/0.41/0.28; nonterminal censored " +
             fmt(cm, 3) + " vs 0.51; terminal censored " + fmt(ct, 3) + " vs 0.26");
}

/// Criteria 4, 5 and 7 share the corpus of randomized small fits.
void corpus_criteria(bool want4, bool want5, bool want7) {
  double worst_ascent = 0.0, worst_decomp = 0.0;
  std::size_t converged = 0, failed_loudly = 0, silent = 0, violations = 0, rows = 0, decomposed = 0;
  std::size_t max_iters = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto sim = fixture::randomized(200, 1000 + seed);
    try {
      const auto f = fit(sim.data);
      worst_ascent = std::max(worst_ascent, check::ascent_violation(f.loglik_trace));
      max_iters = std::max(max_iters, f.n_iters);
      if (f.converged) {
        ++converged;
        worst_decomp = std::max(worst_decomp, check::decomposition_error(f, seed));
        ++decomposed;
      } else if (!f.warnings.empty()) {
        ++failed_loudly;
      } else {
        ++silent;
      }
      violations += check::structure_violations(sim.data, f.posteriors);
      violations += check::structure_violations(sim.data, e_step(sim.data, f.params, f.hazards));
      rows += 2 * sim.data.size();
    } catch (const scrmed::Error&) {
      ++failed_loudly;
    }
  }
  // the reference-design datasets used elsewhere in the suite
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto sim = fixture::reference(2000, seed);
    const auto f = fit(sim.data);
    violations += check::structure_violations(sim.data, f.posteriors);
    rows += sim.data.size();
    if (f.converged) {
      worst_decomp = std::max(worst_decomp, check::decomposition_error(f, seed));
      ++decomposed;
    }
    worst_ascent = std::max(worst_ascent, check::ascent_violation(f.loglik_trace));
  }
  if (want4)
    report(4, "EM ascent on 50 randomized n = 200 datasets", worst_ascent <= 1e-10 && silent == 0,
           "largest drop " + sci(worst_ascent) + " (slack 1e-10); converged " + std::to_string(converged) +
               "/50, loud failures " + std::to_string(failed_loudly) + ", silent " + std::to_string(silent) +
               ", most iterations " + std::to_string(max_iters));
  if (want5)
    report(5, "posterior structural zeros and unit row sums", violations == 0,
           std::to_string(violations) + " bad rows of " + std::to_string(rows));
  if (want7)
    report(7, "NIE1 + NDE1 equals the stratum-1 survival difference", decomposed > 0 && worst_decomp <= 1e-10,
           "max error " + sci(worst_decomp) + " over " + std::to_string(decomposed) + " fits x 20 profiles x 50 times");
}

void oracle_criterion() {
  double cox = 0.0;
  for (std::uint64_t seed : {77, 78, 79}) cox = std::max(cox, check::cox_reduction_error(fixture::reference(300, seed)));
  report(6, "(a) clamped memberships vs brute-force Cox", cox <= 1e-6, "max abs diff " + sci(cox));
  double na = 0.0;
  for (std::uint64_t seed : {8, 9, 10}) na = std::max(na, check::nelson_aalen_error(seed));
  report(6, "(b) unit-weight hazard jumps vs Nelson-Aalen", na <= 1e-10, "max abs diff " + sci(na));
  const double jac = check::jacobian_error(fixture::reference(300, 31).data, 99, 20);
  report(6, "(c) analytic derivatives vs finite differences", jac <= 1e-5, "max rel diff " + sci(jac));
}

void km_criterion() {
  double worst = 0.0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto sim = fixture::reference(2000, seed);
    const auto f = fit(sim.data);
    for (int arm : {0, 1}) {
      std::vector<double> t;
      std::vector<int> e;
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(sim.data.size()); ++i)
        if (sim.data.a()[i] == arm) {
          t.push_back(sim.data.y()[i]);
          e.push_back(sim.data.delta_t()[i]);
        }
      const KaplanMeier km(t, e);
      std::vector<double> sorted = t;
      std::sort(sorted.begin(), sorted.end());
      const double lo = sorted[sorted.size() / 10], hi = sorted[sorted.size() * 9 / 10];
      std::vector<double> grid;
      for (int g = 0; g <= 400; ++g) grid.push_back(lo + (hi - lo) * g / 400.0);
      const auto curve = population_average_survival(f, sim.data, arm, grid);
      double sup = 0.0;
      for (std::size_t g = 0; g < curve.grid.size(); ++g) sup = std::max(sup, std::abs(curve.values[g] - km(curve.grid[g])));
      worst = std::max(worst, sup);
      detail += "seed " + std::to_string(seed) + " arm " + std::to_string(arm) + ": " + fmt(sup) + " on [" + fmt(lo, 2) +
                "," + fmt(hi, 2) + "] (" + std::to_string(curve.truncated) + " dropped); ";
    }
  }
  report(8, "model-average survival vs Kaplan-Meier at n = 2000", worst < 0.05, detail + "max " + fmt(worst));
}

std::string slurp_dir(const fs::path& dir) {
  std::set<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.insert(e.path());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + io::slurp(f);
  return all;
}

void determinism_criterion(const std::string& cli, const fs::path& work) {
  auto run_all = [&](const fs::path& root) {
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string r = root.string();
    const std::string data = r + "/sim/data.csv";
    const std::vector<std::string> cmds{
        "simulate --n 600 --seed 11 --threads 1 --out-dir " + r + "/sim",
        "fit --input " + data + " --seed 11 --threads 1 --out-dir " + r + "/fit",
        "effects --input " + data + " --fit-dir " + r + "/fit --bootstrap-n 4 --seed 11 --threads 1 --grid 0:3:7 --out-dir " + r + "/eff",
        "diagnose --input " + data + " --fit-dir " + r + "/fit --seed 11 --threads 1 --out-dir " + r + "/diag",
        "bootstrap --input " + data + " --fit-dir " + r + "/fit --bootstrap-n 4 --seed 11 --threads 1 --out-dir " + r + "/boot",
        "sensitivity --input " + data + " --seed 11 --threads 1 --out-dir " + r + "/sens",
        "reproduce --n 400 --replicates 2 --bootstrap-n 3 --seed 11 --threads 1 --out-dir " + r + "/rep",
    };
    for (const auto& c : cmds) {
      const std::string full = cli + " " + c + " > " + r + "/stdout_" + std::to_string(&c - cmds.data()) + ".txt 2>/dev/null";
      if (std::system(full.c_str()) != 0) return std::string("command failed: ") + c;
    }
    return slurp_dir(root);
  };
  const auto a = run_all(work / "det_a");
  auto b = run_all(work / "det_b");
  // stdout mentions no paths, so the two trees compare byte for byte
  const bool ok = a.rfind("command failed", 0) != 0 && a == b;
  report(9, "fixed seed and --threads 1 give identical bytes", ok,
         ok ? "7 commands, " + std::to_string(a.size()) + " bytes compared" : (a.rfind("command failed", 0) == 0 ? a : "outputs differ"));
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  fs::path out = fs::current_path() / "acceptance_out";
  std::set<int> want;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) cli = argv[++i];
    else if (a == "--out" && i + 1 < argc) out = argv[++i];
    else want.insert(std::stoi(a));
  }
  if (want.empty()) want = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  fs::create_directories(out);
  auto on = [&](int k) { return want.count(k) > 0; };
  try {
    if (on(3)) generative_criterion();
    if (on(4) || on(5) || on(7)) corpus_criteria(on(4), on(5), on(7));
    if (on(6)) oracle_criterion();
    if (on(8)) km_criterion();
    if (on(9)) {
      if (cli.empty()) report(9, "determinism", false, "no --cli path given");
      else determinism_criterion(cli, out);
    }
    if (on(1) || on(2)) study_criteria(out, on(1), on(2));
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " check(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
