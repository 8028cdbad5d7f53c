#pragma once

// Correctly rounded summation (Shewchuk's non-overlapping partials, finished
// with the half-way correction). The result depends only on the multiset of
// terms, never on their order.

#include <cmath>
#include <array>
#include <cstddef>

namespace dsnet::detail {

class ExactSum {
 public:
  void clear() { count_ = 0; }

  void add(double x) {
    std::size_t i = 0;
    for (std::size_t j = 0; j < count_; ++j) {
      double y = partials_[j];
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[i++] = lo;
      x = hi;
    }
    partials_[i] = x;
    count_ = i + 1;
  }

  /// Adds the exact product a * b as two terms.
  void add_product(double a, double b) {
    const double p = a * b;
    add(p);
    const double e = std::fma(a, b, -p);
    if (e != 0.0) add(e);
  }

  double result() const {
    std::size_t n = count_;
    if (n == 0) return 0.0;
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  // Non-overlapping finite doubles span at most ~40 partials.
  std::array<double, 64> partials_{};
  std::size_t count_ = 0;
};

}  // namespace dsnet::detail
