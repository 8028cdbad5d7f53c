#include <dsnet/verify/gradcheck.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dsnet::verify {

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

namespace {

double evaluate(const std::function<Var<double>()>& fn) {
  NoGradGuard no_grad;
  const Var<double> out = fn();
  return out.value()[0];
}

}  // namespace

GradCheckReport gradcheck(const std::function<Var<double>()>& fn, const ParameterList<double>& params,
                          const GradCheckOptions& options) {
  GradCheckReport report;
  report.step = options.step;
  report.tolerance = options.tolerance;
  report.dtype = DType::f64;

  zero_grads(params);
  const Var<double> loss = fn();
  if (loss.size() != 1) throw UsageError("gradcheck: function must return a scalar, got " + to_string(loss.shape()));
  backward(loss);

  std::mt19937_64 rng(options.seed);
  bool pass = true;
  for (const auto& p : params) {
    Var<double> var = p.var;
    Tensor<double> analytic = var.has_grad() ? var.grad() : Tensor<double>(var.shape());
    std::vector<Index> idx(static_cast<std::size_t>(var.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (options.max_entries_per_tensor > 0 && var.size() > options.max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(options.max_entries_per_tensor));
    }
    GradCheckEntry entry{p.name, static_cast<Index>(idx.size()), 0.0, 0.0};
    auto& values = var.mutable_value();
    for (Index i : idx) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = evaluate(fn);
      values[i] = saved - options.step;
      const double down = evaluate(fn);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      entry.max_abs_error = std::max(entry.max_abs_error, err);
      entry.max_rel_error = std::max(entry.max_rel_error, err / denom);
    }
    if (!(entry.max_rel_error < options.tolerance)) pass = false;
    report.entries.push_back(std::move(entry));
  }
  report.pass = pass;
  return report;
}

}  // namespace dsnet::verify
