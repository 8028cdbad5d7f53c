#pragma once

#include <dsnet/backbone.hpp>

#include <span>
#include <vector>

namespace dsnet {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled decay, applied to weight matrices and kernels only.
  double weight_decay = 0.05;
  /// Global gradient-norm bound; 0 disables clipping.
  double clip_norm = 1.0;
};

/// Cosine decay from `base` at step 0 to `floor` at `total` steps.
double cosine_lr(double base, Index step, Index total, double floor = 0.0);

/// Scales every gradient so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(const ParameterList<Scalar>& params, double max_norm);

template <typename Scalar>
double grad_norm(const ParameterList<Scalar>& params);

template <typename Scalar>
class AdamW {
 public:
  AdamW(ParameterList<Scalar> params, const AdamWConfig& config);

  const AdamWConfig& config() const { return config_; }
  Index steps() const { return step_; }

  /// Applies one update with learning rate `lr` to the current gradients.
  void step(double lr);

 private:
  ParameterList<Scalar> params_;
  AdamWConfig config_;
  std::vector<Tensor<Scalar>> m_, v_;
  Index step_ = 0;
};

struct StepResult {
  double loss = 0;
  double grad_norm = 0;     // before clipping
  double clipped_norm = 0;  // after clipping
  Index correct = 0;
};

/// Forward, cross-entropy, backward, clip and update. Throws UsageError for
/// labels outside [0, num_classes) and NumericError for a non-finite loss.
template <typename Scalar>
StepResult train_step(const Model<Scalar>& model, const Tensor<Scalar>& images, std::span<const int> labels,
                      AdamW<Scalar>& optimizer, double lr);

/// Number of rows whose arg-max equals the label.
template <typename Scalar>
Index count_correct(const Tensor<Scalar>& logits, std::span<const int> labels);

}  // namespace dsnet
