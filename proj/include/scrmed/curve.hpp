#pragma once

#include <optional>
#include <string>
#include <vector>

namespace scrmed {

/// A named quantity evaluated on an increasing time grid, optionally with
/// bootstrap standard errors and interval bands.
struct EffectCurve {
  std::string name;
  std::vector<double> grid;
  std::vector<double> values;
  std::optional<std::vector<double>> covariate_profile;
  std::vector<double> se;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  /// Grid points dropped because they fell beyond the estimated support.
  std::size_t truncated = 0;
};

}  // namespace scrmed
