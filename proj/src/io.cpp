#include "scrmed/io.hpp"

#include "scrmed/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace scrmed::io {

using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open '" + path.string() + "' for writing");
  return out;
}

bool next_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) return true;
  }
  return false;
}

double field_double(const std::vector<std::string>& f, std::size_t k, std::size_t row, const char* what) {
  const auto v = parse_double(f[k]);
  if (!v) throw InvalidInput("row " + std::to_string(row) + ": " + what + " is not a number ('" + f[k] + "')");
  return *v;
}

int field_binary(const std::vector<std::string>& f, std::size_t k, std::size_t row, const char* what) {
  const double v = field_double(f, k, row, what);
  if (v != 0.0 && v != 1.0)
    throw InvalidInput("row " + std::to_string(row) + ": " + what + " must be 0 or 1 ('" + f[k] + "')");
  return static_cast<int>(v);
}

void expect_header(std::istream& in, const std::vector<std::string>& cols, const std::string& file) {
  std::string line;
  if (!next_line(in, line)) throw InvalidInput(file + ": empty file");
  const auto got = split_csv(line);
  if (got != cols) {
    std::string want;
    for (const auto& c : cols) want += (want.empty() ? "" : ",") + c;
    throw InvalidInput(file + ": expected header '" + want + "'");
  }
}

std::string opt_field(double v) { return std::isfinite(v) ? format_double(v) : ""; }

std::string profile_label(const EffectCurve& c, const std::vector<std::string>& names) {
  if (!c.covariate_profile) return "marginal";
  std::string s;
  for (std::size_t j = 0; j < c.covariate_profile->size(); ++j) {
    if (j) s += ";";
    s += (j < names.size() ? names[j] : "x" + std::to_string(j + 1)) + "=" + format_double((*c.covariate_profile)[j]);
  }
  return s;
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    std::string f = line.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : f.substr(b, e - b + 1));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "inf" || s == "Inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf" || s == "-Inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  const char* first = s.data();
  if (*first == '+') ++first;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string slurp(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!next_line(in, line)) throw InvalidInput("input CSV is empty");
  const auto header = split_csv(line);
  static const std::vector<std::string> fixed{"id", "a", "z", "delta_m", "y", "delta_t"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin()))
    throw InvalidInput("input CSV header must start with id,a,z,delta_m,y,delta_t");
  std::vector<std::string> names(header.begin() + 6, header.end());
  for (const auto& n : names)
    if (n.empty()) throw InvalidInput("input CSV header has an empty covariate name");

  std::vector<SubjectRecord> recs;
  std::vector<std::string> issues;
  std::size_t row = 0;
  while (next_line(in, line)) {
    ++row;
    const auto f = split_csv(line);
    try {
      if (f.size() != header.size())
        throw InvalidInput("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                           " fields, found " + std::to_string(f.size()));
      SubjectRecord r;
      r.id = f[0];
      r.a = field_binary(f, 1, row, "a");
      r.z = field_double(f, 2, row, "z");
      r.delta_m = field_binary(f, 3, row, "delta_m");
      r.y = field_double(f, 4, row, "y");
      r.delta_t = field_binary(f, 5, row, "delta_t");
      for (std::size_t k = 6; k < f.size(); ++k) r.x.push_back(field_double(f, k, row, header[k].c_str()));
      recs.push_back(std::move(r));
    } catch (const InvalidInput& e) {
      issues.push_back(e.what());
    }
  }
  if (!issues.empty()) {
    std::ostringstream os;
    os << issues.size() << " malformed row(s):";
    for (std::size_t k = 0; k < std::min<std::size_t>(issues.size(), 50); ++k) os << "\n  " << issues[k];
    throw InvalidInput(os.str());
  }
  if (recs.empty()) throw InvalidInput("input CSV has no data rows");
  return Dataset(recs, names);
}

Dataset read_dataset(const fs::path& path) {
  auto in = open_in(path);
  try {
    return read_dataset(in);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

void write_dataset(std::ostream& out, const Dataset& data) {
  out << "id,a,z,delta_m,y,delta_t";
  for (const auto& n : data.covariate_names()) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    out << data.ids()[i] << ',' << data.a()[ii] << ',' << format_double(data.z()[ii]) << ','
        << data.delta_m()[ii] << ',' << format_double(data.y()[ii]) << ',' << data.delta_t()[ii];
    for (Eigen::Index j = 0; j < data.x().cols(); ++j) out << ',' << format_double(data.x()(ii, j));
    out << '\n';
  }
}

void write_dataset(const fs::path& path, const Dataset& data) {
  auto out = open_out(path);
  write_dataset(out, data);
}

void write_truth(const fs::path& path, const Dataset& data, const HiddenTruth& truth) {
  auto out = open_out(path);
  out << "id,u,m_true,t_true\n";
  for (std::size_t i = 0; i < data.size(); ++i)
    out << data.ids()[i] << ',' << truth.stratum[i] << ','
        << (truth.m_time[i] ? format_double(*truth.m_time[i]) : std::string("inf")) << ','
        << format_double(truth.t_time[i]) << '\n';
}

HiddenTruth read_truth(const fs::path& path) {
  auto in = open_in(path);
  expect_header(in, {"id", "u", "m_true", "t_true"}, path.string());
  HiddenTruth t;
  std::string line;
  std::size_t row = 0;
  while (next_line(in, line)) {
    ++row;
    const auto f = split_csv(line);
    if (f.size() != 4) throw InvalidInput(path.string() + ": row " + std::to_string(row) + " needs 4 fields");
    t.stratum.push_back(static_cast<int>(field_double(f, 1, row, "u")));
    if (f[2] == "inf") {
      t.m_time.emplace_back();
    } else {
      t.m_time.emplace_back(field_double(f, 2, row, "m_true"));
    }
    t.t_time.push_back(field_double(f, 3, row, "t_true"));
  }
  return t;
}

void write_hazards(std::ostream& out, const HazardSet& h) {
  out << "scale,time,jump,cumulative\n";
  for (const auto& bh : h)
    for (std::size_t l = 0; l < bh.size(); ++l)
      out << scale_name(bh.label()) << ',' << format_double(bh.times()[l]) << ',' << format_double(bh.jumps()[l])
          << ',' << format_double(bh.cumulative()[l]) << '\n';
}

HazardSet read_hazards(std::istream& in) {
  expect_header(in, {"scale", "time", "jump", "cumulative"}, "hazards.csv");
  std::array<std::vector<double>, 3> times, jumps;
  std::string line;
  std::size_t row = 0;
  while (next_line(in, line)) {
    ++row;
    const auto f = split_csv(line);
    if (f.size() != 4) throw InvalidInput("hazards.csv: row " + std::to_string(row) + " needs 4 fields");
    int k = -1;
    for (int s = 0; s < 3; ++s)
      if (f[0] == scale_name(static_cast<HazardScale>(s))) k = s;
    if (k < 0) throw InvalidInput("hazards.csv: row " + std::to_string(row) + ": unknown scale '" + f[0] + "'");
    times[k].push_back(field_double(f, 1, row, "time"));
    jumps[k].push_back(field_double(f, 2, row, "jump"));
  }
  HazardSet h;
  for (int k = 0; k < 3; ++k) h[k] = BaselineHazard(static_cast<HazardScale>(k), times[k], jumps[k]);
  return h;
}

void write_posteriors(std::ostream& out, const Dataset& data, const PosteriorMatrix& post) {
  out << "id,p_u1,p_u2,p_u3\n";
  for (Eigen::Index i = 0; i < post.rows(); ++i)
    out << data.ids()[static_cast<std::size_t>(i)] << ',' << format_double(post(i, 0)) << ','
        << format_double(post(i, 1)) << ',' << format_double(post(i, 2)) << '\n';
}

PosteriorMatrix read_posteriors(std::istream& in) {
  expect_header(in, {"id", "p_u1", "p_u2", "p_u3"}, "posteriors.csv");
  std::vector<std::array<double, 3>> rows;
  std::string line;
  std::size_t row = 0;
  while (next_line(in, line)) {
    ++row;
    const auto f = split_csv(line);
    if (f.size() != 4) throw InvalidInput("posteriors.csv: row " + std::to_string(row) + " needs 4 fields");
    rows.push_back({field_double(f, 1, row, "p_u1"), field_double(f, 2, row, "p_u2"), field_double(f, 3, row, "p_u3")});
  }
  PosteriorMatrix p(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int u = 0; u < 3; ++u) p(static_cast<Eigen::Index>(i), u) = rows[i][static_cast<std::size_t>(u)];
  return p;
}

void write_loglik_trace(std::ostream& out, const std::vector<double>& trace) {
  out << "iteration,loglik\n";
  for (std::size_t k = 0; k < trace.size(); ++k) out << k << ',' << format_double(trace[k]) << '\n';
}

std::vector<double> read_loglik_trace(std::istream& in) {
  expect_header(in, {"iteration", "loglik"}, "loglik_trace.csv");
  std::vector<double> t;
  std::string line;
  std::size_t row = 0;
  while (next_line(in, line)) {
    ++row;
    const auto f = split_csv(line);
    if (f.size() != 2) throw InvalidInput("loglik_trace.csv: row " + std::to_string(row) + " needs 2 fields");
    t.push_back(field_double(f, 1, row, "loglik"));
  }
  return t;
}

void write_fit_dir(const fs::path& dir, const FitArtifacts& a, const Dataset& data) {
  fs::create_directories(dir);
  const auto& f = a.fit;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["n_subjects"] = a.n_subjects;
  j["covariates"] = a.covariate_names;
  const Vector flat = f.params.flat();
  j["parameters"]["names"] = ParameterSet::names(a.covariate_names);
  j["parameters"]["values"] = vec_json(flat);
  for (int b = 0; b < 8; ++b) j["blocks"][block_name(static_cast<Block>(b))] = vec_json(f.params.blocks[b]);
  j["converged"] = f.converged;
  j["n_iters"] = f.n_iters;
  j["final_loglik"] = f.loglik_trace.empty() ? json(nullptr) : json(f.loglik_trace.back());
  j["pinned_columns"] = f.pinned_columns;
  j["clamp_events"] = f.clamp_events;
  j["warnings"] = f.warnings;
  j["support"] = {{"tau1", f.hazards[0].support_limit()},
                  {"tau2", f.hazards[1].support_limit()},
                  {"tau3", f.hazards[2].support_limit()}};
  const auto& c = a.config;
  j["config"] = {{"tol", c.tol},
                 {"max_outer_iters", c.max_outer_iters},
                 {"inner_newton_tol", c.inner_newton_tol},
                 {"inner_max_iters", c.inner_max_iters},
                 {"step_halving_max", c.step_halving_max},
                 {"single_newton_step", c.single_newton_step},
                 {"accelerate", c.accelerate},
                 {"n_starts", c.n_starts},
                 {"start_jitter", c.start_jitter},
                 {"seed", c.seed ? json(*c.seed) : json(nullptr)}};
  if (a.standardization)
    j["standardization"] = {{"mean", vec_json(a.standardization->mean)}, {"sd", vec_json(a.standardization->sd)}};
  else
    j["standardization"] = nullptr;
  write_text(dir / "fit.json", j.dump(2) + "\n");

  auto hz = open_out(dir / "hazards.csv");
  write_hazards(hz, f.hazards);
  auto po = open_out(dir / "posteriors.csv");
  write_posteriors(po, data, f.posteriors);
  auto tr = open_out(dir / "loglik_trace.csv");
  write_loglik_trace(tr, f.loglik_trace);
}

FitArtifacts read_fit_dir(const fs::path& dir) {
  FitArtifacts a;
  json j;
  try {
    j = json::parse(slurp(dir / "fit.json"));
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw InvalidInput("fit.json: unsupported schema_version");
    a.covariate_names = j.at("covariates").get<std::vector<std::string>>();
    a.n_subjects = j.at("n_subjects").get<std::size_t>();
    a.fit.params = ParameterSet::from_flat(json_vec(j.at("parameters").at("values")), a.covariate_names.size());
    a.fit.converged = j.at("converged").get<bool>();
    a.fit.n_iters = j.at("n_iters").get<std::size_t>();
    a.fit.pinned_columns = j.at("pinned_columns").get<std::vector<std::size_t>>();
    a.fit.clamp_events = j.at("clamp_events").get<std::size_t>();
    a.fit.warnings = j.at("warnings").get<std::vector<std::string>>();
    const auto& c = j.at("config");
    a.config.tol = c.at("tol").get<double>();
    a.config.max_outer_iters = c.at("max_outer_iters").get<std::size_t>();
    a.config.inner_newton_tol = c.at("inner_newton_tol").get<double>();
    a.config.inner_max_iters = c.at("inner_max_iters").get<std::size_t>();
    a.config.step_halving_max = c.at("step_halving_max").get<std::size_t>();
    a.config.single_newton_step = c.at("single_newton_step").get<bool>();
    a.config.accelerate = c.at("accelerate").get<bool>();
    a.config.n_starts = c.at("n_starts").get<std::size_t>();
    a.config.start_jitter = c.at("start_jitter").get<double>();
    if (!c.at("seed").is_null()) a.config.seed = c.at("seed").get<std::uint64_t>();
    if (!j.at("standardization").is_null())
      a.standardization = Standardization{json_vec(j["standardization"].at("mean")), json_vec(j["standardization"].at("sd"))};
  } catch (const json::exception& e) {
    throw InvalidInput("fit.json is malformed: " + std::string(e.what()));
  }
  {
    auto in = open_in(dir / "hazards.csv");
    a.fit.hazards = read_hazards(in);
  }
  if (fs::exists(dir / "posteriors.csv")) {
    auto in = open_in(dir / "posteriors.csv");
    a.fit.posteriors = read_posteriors(in);
  }
  if (fs::exists(dir / "loglik_trace.csv")) {
    auto in = open_in(dir / "loglik_trace.csv");
    a.fit.loglik_trace = read_loglik_trace(in);
  }
  return a;
}

void write_effects(std::ostream& out, const std::vector<EffectCurve>& curves,
                   const std::vector<std::string>& covariate_names) {
  out << "name,t,value,se,ci_low,ci_high,profile\n";
  for (const auto& c : curves) {
    const std::string prof = profile_label(c, covariate_names);
    for (std::size_t g = 0; g < c.grid.size(); ++g) {
      out << c.name << ',' << format_double(c.grid[g]) << ',' << format_double(c.values[g]) << ','
          << (g < c.se.size() ? opt_field(c.se[g]) : "") << ','
          << (g < c.ci_low.size() ? opt_field(c.ci_low[g]) : "") << ','
          << (g < c.ci_high.size() ? opt_field(c.ci_high[g]) : "") << ',' << prof << '\n';
    }
  }
}

std::vector<EffectCurve> read_effects(std::istream& in) {
  expect_header(in, {"name", "t", "value", "se", "ci_low", "ci_high", "profile"}, "effects.csv");
  std::vector<EffectCurve> out;
  std::string line;
  std::size_t row = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::string last_profile;
  while (next_line(in, line)) {
    ++row;
    const auto f = split_csv(line);
    if (f.size() != 7) throw InvalidInput("effects.csv: row " + std::to_string(row) + " needs 7 fields");
    if (out.empty() || out.back().name != f[0] || last_profile != f[6]) {
      last_profile = f[6];
      EffectCurve c;
      c.name = f[0];
      if (f[6] != "marginal") {
        std::vector<double> prof;
        std::stringstream ss(f[6]);
        std::string item;
        while (std::getline(ss, item, ';')) {
          const auto eq = item.find('=');
          const auto v = parse_double(eq == std::string::npos ? "" : item.substr(eq + 1));
          if (!v) throw InvalidInput("effects.csv: row " + std::to_string(row) + ": bad profile '" + f[6] + "'");
          prof.push_back(*v);
        }
        c.covariate_profile = prof;
      }
      out.push_back(std::move(c));
    }
    auto& c = out.back();
    c.grid.push_back(field_double(f, 1, row, "t"));
    c.values.push_back(field_double(f, 2, row, "value"));
    c.se.push_back(f[3].empty() ? nan : field_double(f, 3, row, "se"));
    c.ci_low.push_back(f[4].empty() ? nan : field_double(f, 4, row, "ci_low"));
    c.ci_high.push_back(f[5].empty() ? nan : field_double(f, 5, row, "ci_high"));
  }
  return out;
}

void write_bootstrap(std::ostream& out, const BootstrapResult& boot) {
  out << "name,estimate,se,ci_low,ci_high,z,p_value\n";
  const auto tests = wald_tests(boot);
  for (std::size_t k = 0; k < boot.names.size(); ++k) {
    const auto& t = tests[k];
    out << boot.names[k] << ',' << format_double(boot.estimate[k]) << ',' << format_double(boot.se[k]) << ','
        << format_double(boot.ci_low[k]) << ',' << format_double(boot.ci_high[k]) << ','
        << (t.z ? format_double(*t.z) : "") << ',' << (t.p_value ? format_double(*t.p_value) : "") << '\n';
  }
}

}  // namespace scrmed::io
