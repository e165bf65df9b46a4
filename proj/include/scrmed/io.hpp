#pragma once

#include "scrmed/curve.hpp"
#include "scrmed/em.hpp"
#include "scrmed/inference.hpp"
#include "scrmed/model.hpp"
#include "scrmed/simulate.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace scrmed::io {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

/// Analysis CSV: header `id,a,z,delta_m,y,delta_t,x1,...,xp`.
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const fs::path& path);
void write_dataset(std::ostream& out, const Dataset& data);
void write_dataset(const fs::path& path, const Dataset& data);

/// Sidecar truth file: id,u,m_true,t_true with m_true = "inf" when the event never occurs.
void write_truth(const fs::path& path, const Dataset& data, const HiddenTruth& truth);
HiddenTruth read_truth(const fs::path& path);

/// Everything `fit` writes, plus the metadata needed to reuse it.
struct FitArtifacts {
  FittedModel fit;
  std::vector<std::string> covariate_names;
  EmConfig config;
  std::optional<Standardization> standardization;
  std::size_t n_subjects = 0;
};

/// Writes fit.json, hazards.csv, posteriors.csv and loglik_trace.csv.
void write_fit_dir(const fs::path& dir, const FitArtifacts& a, const Dataset& data);
/// Reads fit.json and hazards.csv; posteriors.csv and loglik_trace.csv when present.
FitArtifacts read_fit_dir(const fs::path& dir);

void write_hazards(std::ostream& out, const HazardSet& h);
HazardSet read_hazards(std::istream& in);
void write_posteriors(std::ostream& out, const Dataset& data, const PosteriorMatrix& post);
PosteriorMatrix read_posteriors(std::istream& in);
void write_loglik_trace(std::ostream& out, const std::vector<double>& trace);
std::vector<double> read_loglik_trace(std::istream& in);

/// Long format: name,t,value,se,ci_low,ci_high,profile (profile "x1=..;x2=.." or "marginal").
void write_effects(std::ostream& out, const std::vector<EffectCurve>& curves,
                   const std::vector<std::string>& covariate_names);
std::vector<EffectCurve> read_effects(std::istream& in);

/// name,estimate,se,ci_low,ci_high,z,p_value
void write_bootstrap(std::ostream& out, const BootstrapResult& boot);

/// Reads a whole text file; throws InvalidInput when it cannot be opened.
std::string slurp(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Splits one CSV line on commas (no quoting), trimming surrounding blanks.
std::vector<std::string> split_csv(const std::string& line);
/// Strict full-field parse; "inf"/"nan" accepted.
std::optional<double> parse_double(const std::string& s);
/// Shortest round-trip decimal rendering.
std::string format_double(double v);

}  // namespace scrmed::io
