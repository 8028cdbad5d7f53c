#include <dsnet/ops.hpp>

#include "exact_sum.hpp"

#include <cmath>
#include <memory>
#include <type_traits>

namespace dsnet {

namespace {

template <typename Scalar>
using RowMatrix = typename Tensor<Scalar>::Matrix;

// Shared description of the three supported matmul layouts.
struct MatmulLayout {
  Index batch;  // 1 for rank 2
  Index m, k, n;
  bool batched_rhs;
};

template <typename Scalar>
MatmulLayout matmul_layout(const Var<Scalar>& a, const Var<Scalar>& b) {
  const int ra = a.value().rank();
  const int rb = b.value().rank();
  auto mismatch = [&]() {
    return DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  };
  if (ra == 2 && rb == 2) {
    if (a.dim(1) != b.dim(0)) throw mismatch();
    return {1, a.dim(0), a.dim(1), b.dim(1), false};
  }
  if (ra == 3 && rb == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) throw mismatch();
    return {a.dim(0), a.dim(1), a.dim(2), b.dim(2), true};
  }
  if (ra == 3 && rb == 2) {
    if (a.dim(2) != b.dim(0)) throw mismatch();
    return {a.dim(0), a.dim(1), a.dim(2), b.dim(1), false};
  }
  throw mismatch();
}

// Double precision is the verification dtype: its forward reductions are
// correctly rounded, so every output entry is independent of operand row
// positions and of the order of the summed terms.
template <typename Scalar>
constexpr bool kExactReductions = std::is_same_v<Scalar, double>;

void exact_gemm(const double* a, const double* b, double* c, Index m, Index k, Index n) {
  detail::ExactSum acc;
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      acc.clear();
      for (Index p = 0; p < k; ++p) acc.add_product(a[i * k + p], b[p * n + j]);
      c[i * n + j] = acc.result();
    }
}

}  // namespace

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  const MatmulLayout L = matmul_layout(a, b);
  Shape out_shape = a.value().rank() == 2 ? Shape{L.m, L.n} : Shape{L.batch, L.m, L.n};
  Tensor<Scalar> out(out_shape);
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  using MMap = typename Tensor<Scalar>::MatrixMap;
  if constexpr (kExactReductions<Scalar>) {
    for (Index i = 0; i < L.batch; ++i)
      exact_gemm(a.value().data() + i * L.m * L.k, b.value().data() + (L.batched_rhs ? i * L.k * L.n : 0),
                 out.data() + i * L.m * L.n, L.m, L.k, L.n);
  } else if (L.batched_rhs) {
    for (Index i = 0; i < L.batch; ++i) {
      CMap am(a.value().data() + i * L.m * L.k, L.m, L.k);
      CMap bm(b.value().data() + i * L.k * L.n, L.k, L.n);
      MMap cm(out.data() + i * L.m * L.n, L.m, L.n);
      cm.noalias() = am * bm;
    }
  } else {
    CMap am(a.value().data(), L.batch * L.m, L.k);
    CMap bm(b.value().data(), L.k, L.n);
    MMap cm(out.data(), L.batch * L.m, L.n);
    cm.noalias() = am * bm;
  }
  detail::count_macs(static_cast<std::uint64_t>(L.batch * L.m * L.k * L.n));
  return detail::record<Scalar>(std::move(out), {a, b}, "matmul", [L](Node<Scalar>& node) {
    auto& an = *node.inputs[0];
    auto& bn = *node.inputs[1];
    const Scalar* g = node.grad.data();
    if (L.batched_rhs) {
      Tensor<Scalar> ga(an.value.shape());
      Tensor<Scalar> gb(bn.value.shape());
      for (Index i = 0; i < L.batch; ++i) {
        CMap gm(g + i * L.m * L.n, L.m, L.n);
        CMap am(an.value.data() + i * L.m * L.k, L.m, L.k);
        CMap bm(bn.value.data() + i * L.k * L.n, L.k, L.n);
        if (an.requires_grad) MMap(ga.data() + i * L.m * L.k, L.m, L.k).noalias() = gm * bm.transpose();
        if (bn.requires_grad) MMap(gb.data() + i * L.k * L.n, L.k, L.n).noalias() = am.transpose() * gm;
      }
      detail::accumulate(an, ga);
      detail::accumulate(bn, gb);
    } else {
      CMap gm(g, L.batch * L.m, L.n);
      CMap am(an.value.data(), L.batch * L.m, L.k);
      CMap bm(bn.value.data(), L.k, L.n);
      if (an.requires_grad) {
        Tensor<Scalar> ga(an.value.shape());
        MMap(ga.data(), L.batch * L.m, L.k).noalias() = gm * bm.transpose();
        detail::accumulate(an, ga);
      }
      if (bn.requires_grad) {
        Tensor<Scalar> gb(bn.value.shape());
        MMap(gb.data(), L.k, L.n).noalias() = am.transpose() * gm;
        detail::accumulate(bn, gb);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> transpose_last2(const Var<Scalar>& a) {
  const int r = a.value().rank();
  if (r != 2 && r != 3) throw DimensionError("transpose_last2: rank 2 or 3 expected, got " + to_string(a.shape()));
  const Index batch = r == 3 ? a.dim(0) : 1;
  const Index rows = a.dim(-2);
  const Index cols = a.dim(-1);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  auto transpose_into = [batch](const Tensor<Scalar>& src, Tensor<Scalar>& dst, Index r_, Index c_) {
    for (Index i = 0; i < batch; ++i) {
      typename Tensor<Scalar>::ConstMatrixMap s(src.data() + i * r_ * c_, r_, c_);
      typename Tensor<Scalar>::MatrixMap d(dst.data() + i * r_ * c_, c_, r_);
      d = s.transpose();
    }
  };
  Tensor<Scalar> out(shape);
  transpose_into(a.value(), out, rows, cols);
  return detail::record<Scalar>(std::move(out), {a}, "transpose", [transpose_into, rows, cols](Node<Scalar>& n) {
    Tensor<Scalar> g(n.inputs[0]->value.shape());
    transpose_into(n.grad, g, cols, rows);
    detail::accumulate(*n.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> softmax_lastdim(const Var<Scalar>& x) {
  if (x.value().rank() < 1 || x.dim(-1) < 1) throw DimensionError("softmax_lastdim: empty last axis in " + to_string(x.shape()));
  const Index n = x.dim(-1);
  const Index rows = x.size() / n;
  Tensor<Scalar> out(x.shape());
  auto xm = x.value().matrix(rows, n);
  auto ym = out.matrix(rows, n);
  for (Index i = 0; i < rows; ++i) {
    const Scalar mx = xm.row(i).maxCoeff();
    if constexpr (kExactReductions<Scalar>) {
      detail::ExactSum acc;
      for (Index j = 0; j < n; ++j) {
        ym(i, j) = std::exp(xm(i, j) - mx);
        acc.add(ym(i, j));
      }
      const double z = acc.result();
      for (Index j = 0; j < n; ++j) ym(i, j) /= z;
    } else {
      ym.row(i) = (xm.row(i).array() - mx).exp().matrix();
      ym.row(i) /= ym.row(i).sum();
    }
  }
  return detail::record<Scalar>(std::move(out), {x}, "softmax", [rows, n](Node<Scalar>& node) {
    Tensor<Scalar> g(node.value.shape());
    auto y = node.value.matrix(rows, n);
    auto gy = node.grad.matrix(rows, n);
    auto gx = g.matrix(rows, n);
    for (Index i = 0; i < rows; ++i) {
      const Scalar dot = gy.row(i).dot(y.row(i));
      gx.row(i) = (y.row(i).array() * (gy.row(i).array() - dot)).matrix();
    }
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> layernorm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  if (x.value().rank() < 1) throw DimensionError("layernorm: rank 0 input");
  const Index d = x.dim(-1);
  if (d < 1) throw DimensionError("layernorm: empty feature axis in " + to_string(x.shape()));
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layernorm: affine parameters " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " for feature width " + std::to_string(d));
  }
  const Index rows = x.size() / d;
  auto xhat = std::make_shared<Tensor<Scalar>>(x.shape());
  auto rstd = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(rows));
  Tensor<Scalar> out(x.shape());
  auto xm = x.value().matrix(rows, d);
  auto hm = xhat->matrix(rows, d);
  auto ym = out.matrix(rows, d);
  auto g = gamma.value().flat().matrix().transpose();
  auto b = beta.value().flat().matrix().transpose();
  for (Index i = 0; i < rows; ++i) {
    const Scalar mu = xm.row(i).mean();
    const Scalar var = (xm.row(i).array() - mu).square().mean();
    const Scalar r = Scalar(1) / std::sqrt(var + eps);
    (*rstd)[static_cast<std::size_t>(i)] = r;
    hm.row(i) = ((xm.row(i).array() - mu) * r).matrix();
    ym.row(i) = (hm.row(i).array() * g.array() + b.array()).matrix();
  }
  return detail::record<Scalar>(std::move(out), {x, gamma, beta}, "layernorm", [xhat, rstd, rows, d](Node<Scalar>& node) {
    auto& xn = *node.inputs[0];
    auto& gn = *node.inputs[1];
    auto& bn = *node.inputs[2];
    auto gy = node.grad.matrix(rows, d);
    auto hm = xhat->matrix(rows, d);
    if (gn.requires_grad) {
      Tensor<Scalar> gg(gn.value.shape());
      gg.flat() = (gy.array() * hm.array()).colwise().sum().transpose();
      detail::accumulate(gn, gg);
    }
    if (bn.requires_grad) {
      Tensor<Scalar> gb(bn.value.shape());
      gb.flat() = gy.array().colwise().sum().transpose();
      detail::accumulate(bn, gb);
    }
    if (xn.requires_grad) {
      Tensor<Scalar> gx(xn.value.shape());
      auto gxm = gx.matrix(rows, d);
      const auto gam = gn.value.flat().transpose();
      for (Index i = 0; i < rows; ++i) {
        const auto gh = (gy.row(i).array() * gam).eval();
        const Scalar m1 = gh.mean();
        const Scalar m2 = (gh * hm.row(i).array()).mean();
        gxm.row(i) = ((gh - m1 - hm.row(i).array() * m2) * (*rstd)[static_cast<std::size_t>(i)]).matrix();
      }
      detail::accumulate(xn, gx);
    }
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  if (weight.value().rank() != 2) throw DimensionError("linear: weight must be out x in, got " + to_string(weight.shape()));
  const Index in = weight.dim(1);
  const Index out_f = weight.dim(0);
  if (x.value().rank() < 1 || x.dim(-1) != in) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != out_f) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " for " + std::to_string(out_f) + " outputs");
  }
  const Index rows = x.size() / std::max<Index>(in, 1);
  Shape shape = x.shape();
  shape.back() = out_f;
  Tensor<Scalar> out(shape);
  auto ym = out.matrix(rows, out_f);
  if constexpr (kExactReductions<Scalar>) {
    detail::ExactSum acc;
    const Scalar* xd = x.value().data();
    const Scalar* wd = weight.value().data();
    for (Index r = 0; r < rows; ++r)
      for (Index o = 0; o < out_f; ++o) {
        acc.clear();
        for (Index p = 0; p < in; ++p) acc.add_product(xd[r * in + p], wd[o * in + p]);
        if (has_bias) acc.add(bias.value()[o]);
        ym(r, o) = acc.result();
      }
  } else {
    ym.noalias() = x.value().matrix(rows, in) * weight.value().matrix().transpose();
    if (has_bias) ym.rowwise() += bias.value().flat().matrix().transpose();
  }
  detail::count_macs(static_cast<std::uint64_t>(rows * in * out_f));
  std::vector<Var<Scalar>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return detail::record<Scalar>(std::move(out), std::move(inputs), "linear", [rows, in, out_f](Node<Scalar>& node) {
    auto& xn = *node.inputs[0];
    auto& wn = *node.inputs[1];
    auto gy = node.grad.matrix(rows, out_f);
    if (xn.requires_grad) {
      Tensor<Scalar> gx(xn.value.shape());
      gx.matrix(rows, in).noalias() = gy * wn.value.matrix();
      detail::accumulate(xn, gx);
    }
    if (wn.requires_grad) {
      Tensor<Scalar> gw(wn.value.shape());
      gw.matrix().noalias() = gy.transpose() * xn.value.matrix(rows, in);
      detail::accumulate(wn, gw);
    }
    if (node.inputs.size() > 2 && node.inputs[2]->requires_grad) {
      Tensor<Scalar> gb(node.inputs[2]->value.shape());
      gb.flat() = gy.colwise().sum().transpose().array();
      detail::accumulate(*node.inputs[2], gb);
    }
  });
}

#define DSNET_INSTANTIATE(S)                                                          \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                               \
  template Var<S> transpose_last2(const Var<S>&);                                     \
  template Var<S> softmax_lastdim(const Var<S>&);                                     \
  template Var<S> layernorm(const Var<S>&, const Var<S>&, const Var<S>&, S);          \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);
DSNET_INSTANTIATE(float)
DSNET_INSTANTIATE(double)
#undef DSNET_INSTANTIATE

}  // namespace dsnet
