#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nowcast {

/// Finite-difference checks of every backward pass, from single ops up to
/// whole networks.
struct GradcheckConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> only;  // family names; empty runs everything
  std::size_t elements_per_input = 48;  // checked entries per op input
  std::size_t model_params = 12;        // sampled parameter entries per network
  double op_tolerance = 1e-5;
  double model_tolerance = 1e-4;
};

struct GradcheckEntry {
  std::string family;  // e.g. "conv3d", "CNC-R"
  std::string target;  // input or parameter name
  std::size_t checked = 0;
  double max_rel_error = 0;
  double tolerance = 0;

  bool pass() const { return checked > 0 && max_rel_error <= tolerance; }
};

/// |a - n| / max(|a|, |n|, 1e-4): relative for ordinary gradients, and an
/// absolute 1e-4 scale for entries that are numerically zero.
double relative_error(double analytic, double numeric);

std::vector<std::string> gradcheck_families();
std::vector<GradcheckEntry> run_gradcheck(const GradcheckConfig& cfg);
/// family,target,checked,max_rel_error,tolerance,pass
std::string gradcheck_csv(const std::vector<GradcheckEntry>& entries);

}  // namespace nowcast
