#pragma once

#include <dsnet/parameters.hpp>

#include <functional>
#include <string>
#include <vector>

namespace dsnet::verify {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error. Central differences at h = 1e-5
  /// carry ~1e-8 of rounding noise, so entries below the floor are held to an
  /// absolute bound of tolerance * floor instead.
  double floor = 1e-4;
  /// Entries probed per tensor; 0 probes every entry.
  Index max_entries_per_tensor = 0;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string name;
  Index checked = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0;
  double tolerance = 0;
  DType dtype = DType::f64;
  bool pass = false;

  double max_rel_error() const;
};

/// Compares reverse-mode gradients of a scalar-valued `fn` against central
/// differences (f(t+h) - f(t-h)) / 2h for every tensor in `params`.
/// |analytic - numeric| / max(|analytic|, |numeric|, floor) must stay below
/// the tolerance everywhere.
GradCheckReport gradcheck(const std::function<Var<double>()>& fn, const ParameterList<double>& params,
                          const GradCheckOptions& options = {});

}  // namespace dsnet::verify
