#include <dsnet/ds_block.hpp>

#include <cmath>

namespace dsnet {

namespace {

constexpr std::string_view kAblationNames[] = {"full", "no_local", "no_global", "no_g2l", "no_l2g", "no_align"};

template <typename Scalar>
Index size_of(const Var<Scalar>& v) {
  return v.defined() ? v.size() : 0;
}

template <typename Scalar>
void push(ParameterList<Scalar>& list, const char* name, const Var<Scalar>& v) {
  if (v.defined()) list.push_back({name, v});
}

std::uint64_t u64(Index v) { return static_cast<std::uint64_t>(v); }

}  // namespace

Ablation parse_ablation(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kAblationNames); ++i)
    if (kAblationNames[i] == name) return static_cast<Ablation>(i);
  throw ConfigError("unknown ablation '" + std::string(name) +
                    "' (expected full, no_local, no_global, no_g2l, no_l2g or no_align)");
}

std::string_view to_string(Ablation ablation) { return kAblationNames[static_cast<std::size_t>(ablation)]; }

double AlignConfig::scale() const { return 1.0 / std::sqrt(static_cast<double>(dim)); }

Index DSBlockConfig::global_channels() const { return dsnet::global_channels(channels, alpha); }
Index DSBlockConfig::local_channels() const { return channels - global_channels(); }

AttentionConfig DSBlockConfig::attention() const {
  const Index cg = global_channels();
  return {heads, heads > 0 ? cg / heads : 0};
}

AlignConfig DSBlockConfig::align() const { return {align_dim > 0 ? align_dim : channels / 2}; }

bool DSBlockConfig::has_local_conv() const { return local_channels() > 0 && ablation != Ablation::no_local; }
bool DSBlockConfig::has_attention() const { return global_channels() > 0 && ablation != Ablation::no_global; }
bool DSBlockConfig::has_alignment() const {
  return align_enabled && ablation != Ablation::no_align && local_channels() > 0 && global_channels() > 0;
}
bool DSBlockConfig::global_to_local() const { return has_alignment() && ablation != Ablation::no_g2l; }
bool DSBlockConfig::local_to_global() const { return has_alignment() && ablation != Ablation::no_l2g; }

void DSBlockConfig::validate() const {
  if (channels < 1) throw ConfigError("ds-block: channels must be positive, got " + std::to_string(channels));
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ds-block: alpha must lie in [0, 1], got " + std::to_string(alpha));
  const double split = alpha * static_cast<double>(channels);
  if (std::abs(split - std::round(split)) > 1e-9)
    throw ConfigError("ds-block: alpha * channels must be integral, got " + std::to_string(alpha) + " * " +
                      std::to_string(channels));
  if (expansion_ratio < 1) throw ConfigError("ds-block: expansion_ratio must be positive");
  if (downsample_factor < 1) throw ConfigError("ds-block: downsample_factor must be positive");
  if (has_attention()) {
    if (heads < 1) throw ConfigError("ds-block: heads must be positive, got " + std::to_string(heads));
    if (global_channels() % heads != 0)
      throw ConfigError("ds-block: " + std::to_string(heads) + " heads do not divide " +
                        std::to_string(global_channels()) + " global channels");
  }
  if (has_alignment() && align().dim < 1) throw ConfigError("ds-block: alignment dim must be positive");
}

template <typename Scalar>
Var<Scalar> channel_layernorm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta) {
  return from_tokens(layernorm(to_tokens(x), gamma, beta), x.dim(2), x.dim(3));
}

template <typename Scalar>
AttentionResult<Scalar> multi_head_attention(const Var<Scalar>& tokens, const Var<Scalar>& wq, const Var<Scalar>& wk,
                                             const Var<Scalar>& wv, Index heads) {
  const Index width = wq.dim(1);
  if (heads < 1 || width % heads != 0)
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(width));
  const auto q = split_heads(matmul(tokens, wq), heads);
  const auto k = split_heads(matmul(tokens, wk), heads);
  const auto v = split_heads(matmul(tokens, wv), heads);
  const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(width / heads));
  auto weights = softmax_lastdim(scale(matmul(q, transpose_last2(k)), s));
  return {merge_heads(matmul(weights, v), heads), weights};
}

template <typename Scalar>
CoAttentionResult<Scalar> co_attention(const Var<Scalar>& local_tokens, const Var<Scalar>& global_tokens,
                                       const CoAttentionParams<Scalar>& w, bool global_to_local,
                                       bool local_to_global) {
  if (local_tokens.dim(0) != global_tokens.dim(0))
    throw DimensionError("co-attention: batch mismatch between local " + to_string(local_tokens.shape()) +
                         " and global " + to_string(global_tokens.shape()));
  CoAttentionResult<Scalar> out;
  if (global_to_local) {
    const Index dim = w.q_local.dim(1);
    const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(dim));
    const auto q = matmul(local_tokens, w.q_local);
    const auto k = matmul(global_tokens, w.k_global);
    const auto v = matmul(global_tokens, w.v_global);
    out.global_to_local = softmax_lastdim(scale(matmul(q, transpose_last2(k)), s));
    out.local = matmul(out.global_to_local, v);
  }
  if (local_to_global) {
    const Index dim = w.q_global.dim(1);
    const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(dim));
    const auto q = matmul(global_tokens, w.q_global);
    const auto k = matmul(local_tokens, w.k_local);
    const auto v = matmul(local_tokens, w.v_local);
    out.local_to_global = softmax_lastdim(scale(matmul(q, transpose_last2(k)), s));
    out.global = matmul(out.local_to_global, v);
  }
  return out;
}

template <typename Scalar>
DSBlock<Scalar>::DSBlock(const DSBlockConfig& config, Initializer& init) : config_(config) {
  config_.validate();
  const Index c = config_.channels;
  const Index cl = config_.local_channels();
  const Index cg = config_.global_channels();
  const Index hidden = c * config_.expansion_ratio;
  auto& p = params_;

  p.norm1_g = Initializer::ones<Scalar>({c});
  p.norm1_b = Initializer::zeros<Scalar>({c});
  p.in_w = init.weight<Scalar>({c, c});
  p.in_b = Initializer::zeros<Scalar>({c});
  if (config_.has_local_conv()) {
    p.dw_w = init.weight<Scalar>({cl, 3, 3});
    p.dw_b = Initializer::zeros<Scalar>({cl});
  }
  if (config_.has_attention()) {
    p.attn.wq = init.weight<Scalar>({cg, cg});
    p.attn.wk = init.weight<Scalar>({cg, cg});
    p.attn.wv = init.weight<Scalar>({cg, cg});
    p.attn.proj_w = init.weight<Scalar>({cg, cg});
    p.attn.proj_b = Initializer::zeros<Scalar>({cg});
  }
  if (config_.has_alignment()) {
    const Index dim = config_.align().dim;
    p.norm_local_g = Initializer::ones<Scalar>({cl});
    p.norm_local_b = Initializer::zeros<Scalar>({cl});
    p.norm_global_g = Initializer::ones<Scalar>({cg});
    p.norm_global_b = Initializer::zeros<Scalar>({cg});
    if (config_.global_to_local()) {
      p.co.q_local = init.weight<Scalar>({cl, dim});
      p.co.k_global = init.weight<Scalar>({cg, dim});
      p.co.v_global = init.weight<Scalar>({cg, dim});
      p.post_local_w = init.weight<Scalar>({cl, dim});
      p.post_local_b = Initializer::zeros<Scalar>({cl});
    }
    if (config_.local_to_global()) {
      p.co.q_global = init.weight<Scalar>({cg, dim});
      p.co.k_local = init.weight<Scalar>({cl, dim});
      p.co.v_local = init.weight<Scalar>({cl, dim});
      p.post_global_w = init.weight<Scalar>({cg, dim});
      p.post_global_b = Initializer::zeros<Scalar>({cg});
    }
  }
  p.fuse_w = init.weight<Scalar>({c, c});
  p.fuse_b = Initializer::zeros<Scalar>({c});
  p.norm2_g = Initializer::ones<Scalar>({c});
  p.norm2_b = Initializer::zeros<Scalar>({c});
  p.ffn1_w = init.weight<Scalar>({hidden, c});
  p.ffn1_b = Initializer::zeros<Scalar>({hidden});
  p.ffn2_w = init.weight<Scalar>({c, hidden});
  p.ffn2_b = Initializer::zeros<Scalar>({c});
}

template <typename Scalar>
ParameterList<Scalar> DSBlock<Scalar>::parameters() const {
  ParameterList<Scalar> list;
  const auto& p = params_;
  push(list, "norm1.gamma", p.norm1_g);
  push(list, "norm1.beta", p.norm1_b);
  push(list, "in_proj.weight", p.in_w);
  push(list, "in_proj.bias", p.in_b);
  push(list, "local.weight", p.dw_w);
  push(list, "local.bias", p.dw_b);
  push(list, "attn.wq", p.attn.wq);
  push(list, "attn.wk", p.attn.wk);
  push(list, "attn.wv", p.attn.wv);
  push(list, "attn.proj.weight", p.attn.proj_w);
  push(list, "attn.proj.bias", p.attn.proj_b);
  push(list, "align.norm_local.gamma", p.norm_local_g);
  push(list, "align.norm_local.beta", p.norm_local_b);
  push(list, "align.norm_global.gamma", p.norm_global_g);
  push(list, "align.norm_global.beta", p.norm_global_b);
  push(list, "align.q_local", p.co.q_local);
  push(list, "align.k_global", p.co.k_global);
  push(list, "align.v_global", p.co.v_global);
  push(list, "align.post_local.weight", p.post_local_w);
  push(list, "align.post_local.bias", p.post_local_b);
  push(list, "align.q_global", p.co.q_global);
  push(list, "align.k_local", p.co.k_local);
  push(list, "align.v_local", p.co.v_local);
  push(list, "align.post_global.weight", p.post_global_w);
  push(list, "align.post_global.bias", p.post_global_b);
  push(list, "fuse.weight", p.fuse_w);
  push(list, "fuse.bias", p.fuse_b);
  push(list, "norm2.gamma", p.norm2_g);
  push(list, "norm2.beta", p.norm2_b);
  push(list, "ffn.fc1.weight", p.ffn1_w);
  push(list, "ffn.fc1.bias", p.ffn1_b);
  push(list, "ffn.fc2.weight", p.ffn2_w);
  push(list, "ffn.fc2.bias", p.ffn2_b);
  return list;
}

template <typename Scalar>
Var<Scalar> DSBlock<Scalar>::intra_local(const Var<Scalar>& f_l) const {
  if (!config_.has_local_conv()) return f_l;
  return depthwise_conv3x3(f_l, params_.dw_w, params_.dw_b);
}

template <typename Scalar>
Var<Scalar> DSBlock<Scalar>::intra_global(const Var<Scalar>& f_g, BlockTrace<Scalar>* trace) const {
  if (!config_.has_attention()) return f_g;
  const auto& a = params_.attn;
  auto result = multi_head_attention(to_tokens(f_g), a.wq, a.wk, a.wv, config_.heads);
  if (trace) trace->attention = result.weights.value();
  return from_tokens(linear(result.output, a.proj_w, a.proj_b), f_g.dim(2), f_g.dim(3));
}

template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> DSBlock<Scalar>::inter_align(const Var<Scalar>& f_L, const Var<Scalar>& f_G,
                                                                 BlockTrace<Scalar>* trace) const {
  if (!config_.has_alignment()) return {f_L, f_G};
  const auto& p = params_;
  if (f_L.dim(1) != config_.local_channels() || f_G.dim(1) != config_.global_channels())
    throw DimensionError("inter_align: stream widths " + to_string(f_L.shape()) + " and " + to_string(f_G.shape()) +
                         " do not match the block split");
  const auto local = layernorm(to_tokens(f_L), p.norm_local_g, p.norm_local_b);
  const auto global = layernorm(to_tokens(f_G), p.norm_global_g, p.norm_global_b);
  auto co = co_attention(local, global, p.co, config_.global_to_local(), config_.local_to_global());

  Var<Scalar> h_L = f_L;
  Var<Scalar> h_G = f_G;
  if (co.local.defined()) {
    h_L = conv1x1(from_tokens(co.local, f_L.dim(2), f_L.dim(3)), p.post_local_w, p.post_local_b);
    if (trace) trace->global_to_local = co.global_to_local.value();
  }
  if (co.global.defined()) {
    h_G = conv1x1(from_tokens(co.global, f_G.dim(2), f_G.dim(3)), p.post_global_w, p.post_global_b);
    if (trace) trace->local_to_global = co.local_to_global.value();
  }
  return {h_L, h_G};
}

template <typename Scalar>
Var<Scalar> DSBlock<Scalar>::fuse(const Var<Scalar>& local, const Var<Scalar>& global, Index height,
                                  Index width) const {
  Var<Scalar> merged;
  if (!global.defined()) {
    merged = local;
  } else {
    const auto up = bilinear_upsample(global, height, width);
    merged = local.defined() ? concat_channels(local, up) : up;
  }
  return conv1x1(merged, params_.fuse_w, params_.fuse_b);
}

template <typename Scalar>
Var<Scalar> DSBlock<Scalar>::forward(const Var<Scalar>& x, BlockTrace<Scalar>* trace) const {
  if (x.value().rank() != 4 || x.dim(1) != config_.channels)
    throw DimensionError("ds-block: expected N x " + std::to_string(config_.channels) + " x H x W input, got " +
                         to_string(x.shape()));
  const Index h = x.dim(2);
  const Index w = x.dim(3);
  const Index f = config_.downsample_factor;
  if (h % f != 0 || w % f != 0)
    throw DimensionError("ds-block: grid " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by the global factor " + std::to_string(f));
  const auto& p = params_;

  const auto t = conv1x1(channel_layernorm(x, p.norm1_g, p.norm1_b), p.in_w, p.in_b);
  const auto split = split_channels(t, config_.alpha);
  const bool has_local = config_.local_channels() > 0;
  const bool has_global = config_.global_channels() > 0;
  const Var<Scalar> f_l = has_local ? split.local : Var<Scalar>();
  const Var<Scalar> f_g = has_global ? avgpool(split.global, f) : Var<Scalar>();
  if (trace) {
    trace->local_shape = has_local ? f_l.shape() : Shape{};
    trace->global_shape = has_global ? f_g.shape() : Shape{};
  }

  const Var<Scalar> f_L = has_local ? intra_local(f_l) : Var<Scalar>();
  const Var<Scalar> f_G = has_global ? intra_global(f_g, trace) : Var<Scalar>();
  const auto [h_L, h_G] = inter_align(f_L, f_G, trace);
  const auto y = add(x, fuse(h_L, h_G, h, w));

  const auto hidden = gelu(conv1x1(channel_layernorm(y, p.norm2_g, p.norm2_b), p.ffn1_w, p.ffn1_b));
  return add(y, conv1x1(hidden, p.ffn2_w, p.ffn2_b));
}

template <typename Scalar>
AuditReport DSBlock<Scalar>::audit(Index height, Index width) const {
  const auto& p = params_;
  const Index c = config_.channels;
  const Index cl = config_.local_channels();
  const Index cg = config_.global_channels();
  const Index f = config_.downsample_factor;
  const std::uint64_t ll = u64(height * width);
  const std::uint64_t lg = u64((height / f) * (width / f));
  const Index hidden = c * config_.expansion_ratio;

  AuditReport r;
  r.height = height;
  r.width = width;
  r.add("norm1", size_of(p.norm1_g) + size_of(p.norm1_b), 0);
  r.add("in_proj", size_of(p.in_w) + size_of(p.in_b), ll * u64(c * c));
  r.add("local", size_of(p.dw_w) + size_of(p.dw_b), config_.has_local_conv() ? 9 * ll * u64(cl) : 0);

  std::uint64_t attn_macs = 0;
  if (config_.has_attention()) {
    // projections, scores, aggregation, output projection
    const Index tokens = (height / f) * (width / f);
    attn_macs = 3 * lg * u64(cg * cg) + 2 * attention_score_macs(tokens, cg) + lg * u64(cg * cg);
  }
  const auto& a = p.attn;
  r.add("attention", size_of(a.wq) + size_of(a.wk) + size_of(a.wv) + size_of(a.proj_w) + size_of(a.proj_b),
        attn_macs);

  std::uint64_t align_macs = 0;
  const std::uint64_t dim = u64(config_.align().dim);
  if (config_.global_to_local())
    align_macs += ll * u64(cl) * dim + 2 * lg * u64(cg) * dim + 2 * ll * lg * dim + ll * dim * u64(cl);
  if (config_.local_to_global())
    align_macs += lg * u64(cg) * dim + 2 * ll * u64(cl) * dim + 2 * lg * ll * dim + lg * dim * u64(cg);
  const auto& co = p.co;
  r.add("align",
        size_of(p.norm_local_g) + size_of(p.norm_local_b) + size_of(p.norm_global_g) + size_of(p.norm_global_b) +
            size_of(co.q_local) + size_of(co.k_global) + size_of(co.v_global) + size_of(p.post_local_w) +
            size_of(p.post_local_b) + size_of(co.q_global) + size_of(co.k_local) + size_of(co.v_local) +
            size_of(p.post_global_w) + size_of(p.post_global_b),
        align_macs);

  r.add("fuse", size_of(p.fuse_w) + size_of(p.fuse_b), ll * u64(c * c));
  r.add("norm2", size_of(p.norm2_g) + size_of(p.norm2_b), 0);
  r.add("ffn", size_of(p.ffn1_w) + size_of(p.ffn1_b) + size_of(p.ffn2_w) + size_of(p.ffn2_b),
        2 * ll * u64(c * hidden));
  return r;
}

#define DSNET_INSTANTIATE(S)                                                                                     \
  template class DSBlock<S>;                                                                                     \
  template Var<S> channel_layernorm(const Var<S>&, const Var<S>&, const Var<S>&);                                \
  template AttentionResult<S> multi_head_attention(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&,   \
                                                   Index);                                                       \
  template CoAttentionResult<S> co_attention(const Var<S>&, const Var<S>&, const CoAttentionParams<S>&, bool,    \
                                             bool);
DSNET_INSTANTIATE(float)
DSNET_INSTANTIATE(double)
#undef DSNET_INSTANTIATE

}  // namespace dsnet
