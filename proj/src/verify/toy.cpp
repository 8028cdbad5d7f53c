#include <dsnet/verify/toy.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace dsnet::verify {

namespace {

constexpr Index kCells = 8;

Tensor<float> gather(const ToyDataset& data, std::span<const Index> rows) {
  const Index per = data.images.size() / data.images.dim(0);
  Tensor<float> out({static_cast<Index>(rows.size()), data.images.dim(1), data.images.dim(2), data.images.dim(3)});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(data.images.data() + rows[i] * per, per, out.data() + static_cast<Index>(i) * per);
  return out;
}

std::vector<int> gather_labels(const ToyDataset& data, std::span<const Index> rows) {
  std::vector<int> out;
  for (Index r : rows) out.push_back(data.labels[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace

ToyDataset make_toy_dataset(const ToyDatasetConfig& c) {
  if (c.images < 1 || c.classes < 2 || c.height % kCells != 0 || c.width % kCells != 0)
    throw ConfigError("toy dataset: need images >= 1, classes >= 2 and extents divisible by 8");
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<float> patterns({c.classes, 3, kCells, kCells});
  for (auto& v : patterns.values()) v = static_cast<float>(normal(rng));

  ToyDataset data;
  data.classes = c.classes;
  data.seed = c.seed;
  data.images = Tensor<float>({c.images, 3, c.height, c.width});
  for (Index k = 0; k < c.images; ++k) data.labels.push_back(static_cast<int>(k % c.classes));
  std::shuffle(data.labels.begin(), data.labels.end(), rng);

  const Index ch = c.height / kCells, cw = c.width / kCells;
  for (Index k = 0; k < c.images; ++k) {
    const Index label = data.labels[static_cast<std::size_t>(k)];
    for (Index ch_i = 0; ch_i < 3; ++ch_i)
      for (Index i = 0; i < c.height; ++i)
        for (Index j = 0; j < c.width; ++j)
          data.images.at(k, ch_i, i, j) =
              patterns.at(label, ch_i, i / ch, j / cw) + static_cast<float>(c.noise * normal(rng));
  }
  return data;
}

ModelConfig reduced_config(const ModelConfig& base, Index num_classes) {
  ModelConfig c = base;
  c.variant = "custom";
  for (auto& s : c.stages) s.depth = 1;
  c.num_classes = num_classes;
  return c;
}

double evaluate_accuracy(const Model<float>& model, const ToyDataset& data, Index batch_size) {
  NoGradGuard no_grad;
  const Index n = data.images.dim(0);
  Index correct = 0;
  std::vector<Index> rows;
  for (Index start = 0; start < n; start += batch_size) {
    rows.resize(static_cast<std::size_t>(std::min(batch_size, n - start)));
    std::iota(rows.begin(), rows.end(), start);
    const auto logits = model.forward(constant(gather(data, rows))).logits;
    correct += count_correct(logits.value(), gather_labels(data, rows));
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

bool smoothed_loss_nonincreasing(const std::vector<EpochRecord>& curve, std::size_t window, std::size_t warmup) {
  if (window == 0 || curve.size() < window) return true;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t start = warmup; start + window <= curve.size(); ++start) {
    double sum = 0;
    for (std::size_t i = start; i < start + window; ++i) sum += curve[i].loss;
    const double mean = sum / static_cast<double>(window);
    if (mean > prev) return false;
    prev = mean;
  }
  return true;
}

ToyResult overfit_toy(const ModelConfig& model_config, const ToyDataset& data, const ToyRunConfig& run,
                      const std::function<void(const EpochRecord&)>& on_epoch) {
  if (run.batch_size < 1) throw ConfigError("toy run: batch_size must be positive");
  Model<float> model(model_config, run.seed);
  AdamW<float> optimizer(model.parameters(), run.optimizer);
  std::mt19937_64 rng(run.seed ^ 0x9e3779b97f4a7c15ULL);
  const Index n = data.images.dim(0);
  const Index batches = (n + run.batch_size - 1) / run.batch_size;
  const Index total_steps = run.epochs * batches;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  ToyResult result;
  Index step = 0;
  for (Index epoch = 1; epoch <= run.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (Index b = 0; b < batches; ++b) {
      const Index start = b * run.batch_size;
      const std::span<const Index> rows(order.data() + start, static_cast<std::size_t>(std::min(run.batch_size, n - start)));
      const double lr = cosine_lr(run.optimizer.lr, step++, total_steps);
      StepResult s;
      try {
        s = train_step(model, gather(data, rows), gather_labels(data, rows), optimizer, lr);
      } catch (const NumericError&) {
        result.diverged = true;
        result.diverged_epoch = epoch;
        return result;
      }
      loss_sum += s.loss * static_cast<double>(rows.size());
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(n), evaluate_accuracy(model, data, run.batch_size)};
    result.curve.push_back(record);
    result.final_accuracy = record.accuracy;
    if (on_epoch) on_epoch(record);
    if (record.accuracy >= run.target_accuracy) {
      result.reached_target = true;
      if (run.early_stop) break;
    }
  }
  return result;
}

}  // namespace dsnet::verify
