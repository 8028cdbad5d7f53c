#pragma once

#include <dsnet/autograd.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dsnet {

template <typename Scalar>
struct NamedVar {
  std::string name;
  Var<Scalar> var;
};

template <typename Scalar>
using ParameterList = std::vector<NamedVar<Scalar>>;

template <typename Scalar>
Index count_scalars(const ParameterList<Scalar>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.var.size();
  return n;
}

template <typename Scalar>
void zero_grads(const ParameterList<Scalar>& params) {
  for (auto p : params) p.var.zero_grad();
}

/// Appends `src` to `dst` with every name prefixed by `prefix.`.
template <typename Scalar>
void append_prefixed(ParameterList<Scalar>& dst, const std::string& prefix, const ParameterList<Scalar>& src) {
  for (const auto& p : src) dst.push_back({prefix + "." + p.name, p.var});
}

/// Seeded source of initial weights: truncated normal (std 0.02, cut at two
/// standard deviations) for weights, zeros for biases, ones for norm gains.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed, double stddev = 0.02) : engine_(seed), stddev_(stddev) {}

  template <typename Scalar>
  Tensor<Scalar> trunc_normal(Shape shape) {
    Tensor<Scalar> t(std::move(shape));
    std::normal_distribution<double> normal(0.0, stddev_);
    for (auto& v : t.values()) {
      double s = normal(engine_);
      while (std::abs(s) > 2.0 * stddev_) s = normal(engine_);
      v = static_cast<Scalar>(s);
    }
    return t;
  }

  template <typename Scalar>
  Var<Scalar> weight(Shape shape) {
    return parameter(trunc_normal<Scalar>(std::move(shape)));
  }

  template <typename Scalar>
  static Var<Scalar> zeros(Shape shape) {
    return parameter(Tensor<Scalar>(std::move(shape)));
  }

  template <typename Scalar>
  static Var<Scalar> ones(Shape shape) {
    return parameter(Tensor<Scalar>(std::move(shape), Scalar(1)));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double stddev_;
};

/// Uniform random tensor in [lo, hi); handy for tests and synthetic inputs.
template <typename Scalar>
Tensor<Scalar> random_uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<Scalar>(dist(rng));
  return t;
}

}  // namespace dsnet
