#include <dsnet/optim.hpp>

#include <cmath>
#include <numbers>

namespace dsnet {

double cosine_lr(double base, Index step, Index total, double floor) {
  if (total <= 0) return base;
  const double t = std::min<double>(static_cast<double>(step), static_cast<double>(total)) / static_cast<double>(total);
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename Scalar>
double grad_norm(const ParameterList<Scalar>& params) {
  double sq = 0;
  for (const auto& p : params)
    if (p.var.has_grad())
      for (Scalar g : p.var.grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

template <typename Scalar>
double clip_grad_norm(const ParameterList<Scalar>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const Scalar factor = static_cast<Scalar>(max_norm / (norm + 1e-12));
    for (const auto& p : params)
      if (p.var.has_grad()) p.var.node().grad.flat() *= factor;
  }
  return norm;
}

template <typename Scalar>
AdamW<Scalar>::AdamW(ParameterList<Scalar> params, const AdamWConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

template <typename Scalar>
void AdamW<Scalar>::step(double lr) {
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const auto b1 = static_cast<Scalar>(config_.beta1);
  const auto b2 = static_cast<Scalar>(config_.beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<Scalar> var = params_[i].var;
    if (!var.has_grad()) continue;
    auto w = var.mutable_value().flat();
    auto g = var.grad().flat();
    auto m = m_[i].flat();
    auto v = v_[i].flat();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    if (lr == 0.0) continue;
    if (var.value().rank() >= 2) w *= static_cast<Scalar>(1.0 - lr * config_.weight_decay);
    const auto step_size = static_cast<Scalar>(lr / c1);
    const auto denom_scale = static_cast<Scalar>(1.0 / std::sqrt(c2));
    w -= step_size * m / ((v.sqrt() * denom_scale) + static_cast<Scalar>(config_.eps));
  }
}

template <typename Scalar>
Index count_correct(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const Index rows = logits.dim(0), cols = logits.dim(1);
  Index correct = 0;
  for (Index r = 0; r < rows; ++r) {
    Index best = 0;
    for (Index c = 1; c < cols; ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return correct;
}

template <typename Scalar>
StepResult train_step(const Model<Scalar>& model, const Tensor<Scalar>& images, std::span<const int> labels,
                      AdamW<Scalar>& optimizer, double lr) {
  const auto params = model.parameters();
  zero_grads(params);
  const auto logits = model.forward(constant(images)).logits;
  const auto loss = cross_entropy(logits, labels);
  StepResult result;
  result.loss = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(result.loss)) throw NumericError("train_step: non-finite loss");
  result.correct = count_correct(logits.value(), labels);
  backward(loss);
  result.grad_norm = clip_grad_norm(params, optimizer.config().clip_norm);
  result.clipped_norm = grad_norm(params);
  optimizer.step(lr);
  return result;
}

#define DSNET_INSTANTIATE(S)                                                                              \
  template double grad_norm(const ParameterList<S>&);                                                    \
  template double clip_grad_norm(const ParameterList<S>&, double);                                       \
  template class AdamW<S>;                                                                               \
  template Index count_correct(const Tensor<S>&, std::span<const int>);                                  \
  template StepResult train_step(const Model<S>&, const Tensor<S>&, std::span<const int>, AdamW<S>&, double);
DSNET_INSTANTIATE(float)
DSNET_INSTANTIATE(double)
#undef DSNET_INSTANTIATE

}  // namespace dsnet
