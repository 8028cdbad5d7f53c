#include <dsnet/verify/oracles.hpp>

#include <cmath>

namespace dsnet::verify {

namespace {

void expect(bool ok, const std::string& what) {
  if (!ok) throw DimensionError("oracle: " + what);
}

// Row-wise softmax written out element by element.
Matrix64 softmax_rows(const Matrix64& s) {
  const Index rows = s.dim(0), cols = s.dim(1);
  Matrix64 p(Shape{rows, cols});
  for (Index i = 0; i < rows; ++i) {
    double mx = s.at(i, 0);
    for (Index j = 1; j < cols; ++j) mx = std::max(mx, s.at(i, j));
    double z = 0;
    for (Index j = 0; j < cols; ++j) {
      p.at(i, j) = std::exp(s.at(i, j) - mx);
      z += p.at(i, j);
    }
    for (Index j = 0; j < cols; ++j) p.at(i, j) /= z;
  }
  return p;
}

Matrix64 transpose(const Matrix64& a) {
  Matrix64 t(Shape{a.dim(1), a.dim(0)});
  for (Index i = 0; i < a.dim(0); ++i)
    for (Index j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace

Matrix64 oracle_matmul(const Matrix64& a, const Matrix64& b) {
  expect(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul shapes " + to_string(a.shape()) + ", " + to_string(b.shape()));
  Matrix64 c(Shape{a.dim(0), b.dim(1)});
  for (Index i = 0; i < a.dim(0); ++i)
    for (Index j = 0; j < b.dim(1); ++j) {
      double acc = 0;
      for (Index p = 0; p < a.dim(1); ++p) acc += a.at(i, p) * b.at(p, j);
      c.at(i, j) = acc;
    }
  return c;
}

Tensor<double> oracle_conv1x1(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  expect(x.rank() == 4 && w.rank() == 2 && w.dim(1) == x.dim(1), "conv1x1 shapes");
  const Index n_ = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(0);
  Tensor<double> y(Shape{n_, cout, h, wd});
  for (Index n = 0; n < n_; ++n)
    for (Index o = 0; o < cout; ++o)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < wd; ++j) {
          double acc = b.empty() ? 0.0 : b[o];
          for (Index c = 0; c < cin; ++c) acc += w.at(o, c) * x.at(n, c, i, j);
          y.at(n, o, i, j) = acc;
        }
  return y;
}

Tensor<double> oracle_depthwise3x3(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  expect(x.rank() == 4 && w.rank() == 3 && w.dim(0) == x.dim(1) && w.dim(1) == 3 && w.dim(2) == 3, "depthwise shapes");
  const Index n_ = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  Tensor<double> y(x.shape());
  for (Index n = 0; n < n_; ++n)
    for (Index c = 0; c < ch; ++c)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < wd; ++j) {
          double acc = b.empty() ? 0.0 : b[c];
          for (Index m = -1; m <= 1; ++m)
            for (Index k = -1; k <= 1; ++k) {
              const Index ii = i + m, jj = j + k;
              if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
              acc += w.at(c, m + 1, k + 1) * x.at(n, c, ii, jj);
            }
          y.at(n, c, i, j) = acc;
        }
  return y;
}

AttentionOracleResult oracle_attention(const Matrix64& rows, const Matrix64& wq, const Matrix64& wk, const Matrix64& wv,
                                       Index heads) {
  expect(rows.rank() == 2, "attention rows must be L x C");
  const Index len = rows.dim(0), width = rows.dim(1);
  expect(heads >= 1 && width % heads == 0, "heads must divide width");
  const Matrix64 q = oracle_matmul(rows, wq);
  const Matrix64 k = oracle_matmul(rows, wk);
  const Matrix64 v = oracle_matmul(rows, wv);
  const Index d = width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionOracleResult result{Matrix64(Shape{len, width}), {}};
  for (Index h = 0; h < heads; ++h) {
    Matrix64 scores(Shape{len, len});
    for (Index i = 0; i < len; ++i)
      for (Index j = 0; j < len; ++j) {
        double acc = 0;
        for (Index e = 0; e < d; ++e) acc += q.at(i, h * d + e) * k.at(j, h * d + e);
        scores.at(i, j) = acc * inv_sqrt_d;
      }
    Matrix64 p = softmax_rows(scores);
    for (Index i = 0; i < len; ++i)
      for (Index e = 0; e < d; ++e) {
        double acc = 0;
        for (Index j = 0; j < len; ++j) acc += p.at(i, j) * v.at(j, h * d + e);
        result.output.at(i, h * d + e) = acc;
      }
    result.weights.push_back(std::move(p));
  }
  return result;
}

CoAttentionOracleResult oracle_coattention(const Matrix64& local_rows, const Matrix64& global_rows,
                                           const CoAttentionWeights64& w) {
  const Matrix64 ql = oracle_matmul(local_rows, w.q_local);
  const Matrix64 kl = oracle_matmul(local_rows, w.k_local);
  const Matrix64 vl = oracle_matmul(local_rows, w.v_local);
  const Matrix64 qg = oracle_matmul(global_rows, w.q_global);
  const Matrix64 kg = oracle_matmul(global_rows, w.k_global);
  const Matrix64 vg = oracle_matmul(global_rows, w.v_global);
  expect(ql.dim(1) == kg.dim(1) && qg.dim(1) == kl.dim(1), "co-attention projection widths differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(ql.dim(1)));

  auto scaled = [inv_sqrt_d](Matrix64 s) {
    for (auto& x : s.values()) x *= inv_sqrt_d;
    return s;
  };
  CoAttentionOracleResult r;
  r.global_to_local = softmax_rows(scaled(oracle_matmul(ql, transpose(kg))));
  r.local_to_global = softmax_rows(scaled(oracle_matmul(qg, transpose(kl))));
  r.local = oracle_matmul(r.global_to_local, vg);
  r.global = oracle_matmul(r.local_to_global, vl);
  return r;
}

}  // namespace dsnet::verify
