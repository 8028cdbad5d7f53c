#include <dsnet/ops.hpp>

#include <cmath>
#include <numbers>

namespace dsnet {

namespace {

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape("add", a, b);
  Tensor<Scalar> out(a.shape());
  out.flat() = a.value().flat() + b.value().flat();
  return detail::record<Scalar>(std::move(out), {a, b}, "add", [](Node<Scalar>& n) {
    detail::accumulate(*n.inputs[0], n.grad);
    detail::accumulate(*n.inputs[1], n.grad);
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape("mul", a, b);
  Tensor<Scalar> out(a.shape());
  out.flat() = a.value().flat() * b.value().flat();
  return detail::record<Scalar>(std::move(out), {a, b}, "mul", [](Node<Scalar>& n) {
    auto& x = *n.inputs[0];
    auto& y = *n.inputs[1];
    if (x.requires_grad) {
      Tensor<Scalar> g(x.value.shape());
      g.flat() = n.grad.flat() * y.value.flat();
      detail::accumulate(x, g);
    }
    if (y.requires_grad) {
      Tensor<Scalar> g(y.value.shape());
      g.flat() = n.grad.flat() * x.value.flat();
      detail::accumulate(y, g);
    }
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape());
  out.flat() = a.value().flat() * factor;
  return detail::record<Scalar>(std::move(out), {a}, "scale", [factor](Node<Scalar>& n) {
    Tensor<Scalar> g(n.grad.shape());
    g.flat() = n.grad.flat() * factor;
    detail::accumulate(*n.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> out(Shape{1});
  out[0] = a.size() ? a.value().flat().sum() : Scalar(0);
  return detail::record<Scalar>(std::move(out), {a}, "sum", [](Node<Scalar>& n) {
    Tensor<Scalar> g(n.inputs[0]->value.shape(), n.grad[0]);
    detail::accumulate(*n.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const Scalar inv_sqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  Tensor<Scalar> out(a.shape());
  const auto& x = a.value();
  for (Index i = 0; i < x.size(); ++i) out[i] = Scalar(0.5) * x[i] * (Scalar(1) + std::erf(x[i] * inv_sqrt2));
  return detail::record<Scalar>(std::move(out), {a}, "gelu", [inv_sqrt2](Node<Scalar>& n) {
    const auto& xv = n.inputs[0]->value;
    const Scalar inv_sqrt2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Scalar>;
    Tensor<Scalar> g(xv.shape());
    for (Index i = 0; i < xv.size(); ++i) {
      const Scalar v = xv[i];
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
      const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
      g[i] = n.grad[i] * (cdf + v * pdf);
    }
    detail::accumulate(*n.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a.value().reshaped(std::move(shape));
  return detail::record<Scalar>(std::move(out), {a}, "reshape", [](Node<Scalar>& n) {
    detail::accumulate(*n.inputs[0], n.grad.reshaped(n.inputs[0]->value.shape()));
  });
}

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  if (logits.value().rank() != 2) throw DimensionError("cross_entropy: logits must be N x K, got " + to_string(logits.shape()));
  const Index batch = logits.dim(0);
  const Index classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch) {
    throw UsageError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw UsageError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const auto x = logits.value().matrix();
  Tensor<Scalar> probs(logits.shape());
  auto p = probs.matrix();
  Scalar loss = 0;
  for (Index i = 0; i < batch; ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    p.row(i) = (x.row(i).array() - mx).exp().matrix();
    const Scalar z = p.row(i).sum();
    p.row(i) /= z;
    loss += std::log(z) + mx - x(i, labels[static_cast<std::size_t>(i)]);
  }
  Tensor<Scalar> out(Shape{1}, loss / static_cast<Scalar>(batch));
  std::vector<int> owned(labels.begin(), labels.end());
  return detail::record<Scalar>(std::move(out), {logits}, "cross_entropy",
                                [probs = std::move(probs), owned = std::move(owned)](Node<Scalar>& n) {
                                  Tensor<Scalar> g = probs;
                                  auto gm = g.matrix();
                                  const Index rows = gm.rows();
                                  for (Index i = 0; i < rows; ++i) gm(i, owned[static_cast<std::size_t>(i)]) -= Scalar(1);
                                  g.flat() *= n.grad[0] / static_cast<Scalar>(rows);
                                  detail::accumulate(*n.inputs[0], g);
                                });
}

#define DSNET_INSTANTIATE(S)                                                     \
  template Var<S> add(const Var<S>&, const Var<S>&);                             \
  template Var<S> mul(const Var<S>&, const Var<S>&);                             \
  template Var<S> scale(const Var<S>&, S);                                       \
  template Var<S> sum(const Var<S>&);                                            \
  template Var<S> mean(const Var<S>&);                                           \
  template Var<S> gelu(const Var<S>&);                                           \
  template Var<S> reshape(const Var<S>&, Shape);                                 \
  template Var<S> cross_entropy(const Var<S>&, std::span<const int>);
DSNET_INSTANTIATE(float)
DSNET_INSTANTIATE(double)
#undef DSNET_INSTANTIATE

}  // namespace dsnet
