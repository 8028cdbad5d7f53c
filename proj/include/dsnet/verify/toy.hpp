#pragma once

#include <dsnet/optim.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace dsnet::verify {

struct ToyDatasetConfig {
  Index images = 100;
  Index classes = 10;
  Index height = 64;
  Index width = 64;
  /// Standard deviation of per-pixel noise around the class pattern.
  double noise = 1.0;
  std::uint64_t seed = 1;
};

/// Synthetic classification set: every class has a coarse random mean pattern
/// (8x8 cells per channel); images are that pattern plus Gaussian noise.
struct ToyDataset {
  Tensor<float> images;  // K x 3 x H x W
  std::vector<int> labels;
  Index classes = 0;
  std::uint64_t seed = 0;
};

ToyDataset make_toy_dataset(const ToyDatasetConfig& config);

struct ToyRunConfig {
  Index epochs = 200;
  Index batch_size = 20;
  AdamWConfig optimizer{};
  double target_accuracy = 0.99;
  /// Stop at the first epoch whose accuracy reaches the target.
  bool early_stop = true;
  std::uint64_t seed = 1;
};

struct EpochRecord {
  Index epoch = 0;
  double loss = 0;      // mean training loss over the epoch
  double accuracy = 0;  // accuracy of a full pass after the epoch
};

struct ToyResult {
  std::vector<EpochRecord> curve;
  double final_accuracy = 0;
  bool reached_target = false;
  bool diverged = false;
  Index diverged_epoch = -1;
};

/// Depths (1,1,1,1) with the given variant's channels and heads.
ModelConfig reduced_config(const ModelConfig& base, Index num_classes);

double evaluate_accuracy(const Model<float>& model, const ToyDataset& data, Index batch_size);

/// True when the rolling mean of `window` consecutive epoch losses never
/// increases, ignoring windows that start within the first `warmup` epochs.
bool smoothed_loss_nonincreasing(const std::vector<EpochRecord>& curve, std::size_t window = 10, std::size_t warmup = 0);

ToyResult overfit_toy(const ModelConfig& model_config, const ToyDataset& data, const ToyRunConfig& run,
                      const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace dsnet::verify
