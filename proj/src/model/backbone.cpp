#include <dsnet/backbone.hpp>

namespace dsnet {

namespace {

constexpr Index kStem = 4;
constexpr Index kTransition = 2;

std::uint64_t u64(Index v) { return static_cast<std::uint64_t>(v); }

}  // namespace

ModelConfig ModelConfig::preset(std::string_view variant, bool align) {
  ModelConfig c;
  c.variant = std::string(variant);
  c.align = align;
  std::array<Index, 4> depths;
  if (variant == "T") depths = {2, 2, 4, 1};
  else if (variant == "S") depths = {3, 4, 8, 3};
  else if (variant == "B") depths = {3, 4, 28, 3};
  else throw ConfigError("unknown variant '" + std::string(variant) + "' (expected T, S or B)");
  const Index channels[] = {64, 128, 320, 512};
  const Index heads[] = {1, 2, 5, 8};
  for (int s = 0; s < 4; ++s) c.stages[s] = {depths[s], channels[s], heads[s], kStem << s};
  return c;
}

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("model: num_classes must be at least 1");
  if (in_channels < 1) throw ConfigError("model: in_channels must be positive");
  for (int s = 0; s < 4; ++s) {
    const auto& st = stages[s];
    const std::string where = "model: stage " + std::to_string(s + 1) + ": ";
    if (st.depth < 0) throw ConfigError(where + "depth must be non-negative");
    if (st.channels < 1) throw ConfigError(where + "channels must be positive");
    if (st.stride != (kStem << s))
      throw ConfigError(where + "stride must be " + std::to_string(kStem << s) + ", got " + std::to_string(st.stride));
    try {
      block_config(s).validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

DSBlockConfig ModelConfig::block_config(int stage) const {
  const auto& st = stages[static_cast<std::size_t>(stage)];
  DSBlockConfig b;
  b.channels = st.channels;
  b.alpha = alpha;
  b.heads = st.heads;
  b.align_enabled = align;
  b.ablation = ablation;
  b.expansion_ratio = expansion_ratio;
  b.downsample_factor = kGlobalStride / st.stride;
  return b;
}

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Initializer init(seed);
  const auto& st = config_.stages;
  stem_w_ = init.weight<Scalar>({st[0].channels, config_.in_channels, kStem, kStem});
  stem_b_ = Initializer::zeros<Scalar>({st[0].channels});
  stages_.resize(4);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      transition_w_[s - 1] = init.weight<Scalar>({st[s].channels, st[s - 1].channels, kTransition, kTransition});
      transition_b_[s - 1] = Initializer::zeros<Scalar>({st[s].channels});
    }
    const auto bc = config_.block_config(s);
    for (Index d = 0; d < st[s].depth; ++d) stages_[s].emplace_back(bc, init);
  }
  head_w_ = init.weight<Scalar>({config_.num_classes, st[3].channels});
  head_b_ = Initializer::zeros<Scalar>({config_.num_classes});
}

template <typename Scalar>
ParameterList<Scalar> Model<Scalar>::parameters() const {
  ParameterList<Scalar> list{{"stem.weight", stem_w_}, {"stem.bias", stem_b_}};
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      const std::string t = "transitions." + std::to_string(s - 1);
      list.push_back({t + ".weight", transition_w_[s - 1]});
      list.push_back({t + ".bias", transition_b_[s - 1]});
    }
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      append_prefixed(list, "stages." + std::to_string(s) + ".blocks." + std::to_string(b),
                      stages_[s][b].parameters());
  }
  list.push_back({"head.weight", head_w_});
  list.push_back({"head.bias", head_b_});
  return list;
}

template <typename Scalar>
ModelOutput<Scalar> Model<Scalar>::forward(const Var<Scalar>& images, ModelTrace<Scalar>* trace) const {
  if (images.value().rank() != 4 || images.dim(1) != config_.in_channels)
    throw DimensionError("model: expected N x " + std::to_string(config_.in_channels) + " x H x W images, got " +
                         to_string(images.shape()));
  if (images.dim(2) % ModelConfig::kGlobalStride != 0 || images.dim(3) % ModelConfig::kGlobalStride != 0)
    throw DimensionError("model: image extents " + std::to_string(images.dim(2)) + "x" +
                         std::to_string(images.dim(3)) + " must be divisible by 32");
  ModelOutput<Scalar> out;
  auto x = conv2d(images, stem_w_, stem_b_, kStem, 0);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) x = conv2d(x, transition_w_[s - 1], transition_b_[s - 1], kTransition, 0);
    for (const auto& block : stages_[s]) {
      if (trace) {
        trace->blocks.emplace_back(s, BlockTrace<Scalar>{});
        x = block.forward(x, &trace->blocks.back().second);
      } else {
        x = block.forward(x);
      }
    }
    out.stages[s] = x;
    if (trace) trace->stage_shapes[s] = x.shape();
  }
  out.logits = linear(global_avgpool(x), head_w_, head_b_);
  return out;
}

template <typename Scalar>
AuditReport Model<Scalar>::audit(Index height, Index width) const {
  AuditReport r;
  r.height = height;
  r.width = width;
  const auto& st = config_.stages;
  Index h = height / kStem, w = width / kStem;
  r.add("stem", stem_w_.size() + stem_b_.size(),
        u64(h * w) * u64(st[0].channels * config_.in_channels * kStem * kStem));
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      h /= kTransition;
      w /= kTransition;
      r.add("transitions." + std::to_string(s - 1), transition_w_[s - 1].size() + transition_b_[s - 1].size(),
            u64(h * w) * u64(st[s].channels * st[s - 1].channels * kTransition * kTransition));
    }
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      r.append("stages." + std::to_string(s) + ".blocks." + std::to_string(b), stages_[s][b].audit(h, w));
  }
  r.add("head", head_w_.size() + head_b_.size(), u64(st[3].channels * config_.num_classes));
  return r;
}

template class Model<float>;
template class Model<double>;

}  // namespace dsnet
