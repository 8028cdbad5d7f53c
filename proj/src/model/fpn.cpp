#include <dsnet/fpn.hpp>

namespace dsnet {

namespace {

constexpr std::string_view kInsertionNames[] = {"none", "last", "lateral", "lateral_rev", "lateral_extra"};
constexpr Index kHeadDim = 32;

std::uint64_t u64(Index v) { return static_cast<std::uint64_t>(v); }

Index stride_two(Index g) { return (g + 2 - 3) / 2 + 1; }

template <typename Scalar>
FpnConv<Scalar> make_conv(Initializer& init, Shape weight_shape) {
  const Index out = weight_shape[0];
  return {init.weight<Scalar>(std::move(weight_shape)), Initializer::zeros<Scalar>({out})};
}

template <typename Scalar>
Var<Scalar> apply(const FpnConv<Scalar>& c, const Var<Scalar>& x, Index stride = 1) {
  if (c.weight.value().rank() == 2) return conv1x1(x, c.weight, c.bias);
  return conv2d(x, c.weight, c.bias, stride, 1);
}

template <typename Scalar>
void push(ParameterList<Scalar>& list, const std::string& name, const FpnConv<Scalar>& c) {
  if (!c.weight.defined()) return;
  list.push_back({name + ".weight", c.weight});
  list.push_back({name + ".bias", c.bias});
}

template <typename Scalar>
Index size_of(const FpnConv<Scalar>& c) {
  return c.weight.defined() ? c.weight.size() + c.bias.size() : 0;
}

}  // namespace

Insertion parse_insertion(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kInsertionNames); ++i)
    if (kInsertionNames[i] == name) return static_cast<Insertion>(i);
  throw ConfigError("unknown insertion '" + std::string(name) +
                    "' (expected none, last, lateral, lateral_rev or lateral_extra)");
}

std::string_view to_string(Insertion insertion) { return kInsertionNames[static_cast<std::size_t>(insertion)]; }

void FpnConfig::validate() const {
  if (out_channels < 1) throw ConfigError("fpn: out_channels must be positive");
  if (extra_levels < 0) throw ConfigError("fpn: extra_levels must be non-negative");
  if (heads < 0) throw ConfigError("fpn: heads must be non-negative");
}

template <typename Scalar>
DSBlockConfig DSFpn<Scalar>::neck_block(Index stride) const {
  DSBlockConfig b;
  b.channels = config_.out_channels;
  b.alpha = config_.alpha;
  b.align_enabled = config_.align;
  const Index cg = global_channels(config_.out_channels, config_.alpha);
  b.heads = config_.heads > 0 ? config_.heads : std::max<Index>(1, cg / kHeadDim);
  b.downsample_factor = stride > 0 ? ModelConfig::kGlobalStride / stride : 1;
  return b;
}

template <typename Scalar>
DSFpn<Scalar>::DSFpn(const FpnConfig& config, const ModelConfig& backbone, std::uint64_t seed) : config_(config) {
  config_.validate();
  Initializer init(seed);
  const Index oc = config_.out_channels;
  const auto ins = config_.insertion;
  const bool lateral_blocks = ins == Insertion::lateral || ins == Insertion::lateral_extra;
  for (int i = 0; i < 4; ++i) {
    const auto& st = backbone.stages[i];
    in_channels_[i] = st.channels;
    if (lateral_blocks) lateral_blocks_[i].emplace(backbone.block_config(i), init);
    lateral_[i] = make_conv<Scalar>(init, {oc, st.channels});
    if (ins == Insertion::lateral_rev) lateral_blocks_[i].emplace(neck_block(st.stride), init);
    if (ins == Insertion::last) last_blocks_[i].emplace(neck_block(st.stride), init);
    else smooth_[i] = make_conv<Scalar>(init, {oc, oc, 3, 3});
  }
  for (Index e = 0; e < config_.extra_levels; ++e) {
    extra_.push_back(make_conv<Scalar>(init, {oc, oc, 3, 3}));
    if (ins == Insertion::lateral_extra) extra_blocks_.emplace_back(neck_block(0), init);
  }
}

template <typename Scalar>
Index DSFpn<Scalar>::block_count() const {
  Index n = static_cast<Index>(extra_blocks_.size());
  for (int i = 0; i < 4; ++i) n += (lateral_blocks_[i] ? 1 : 0) + (last_blocks_[i] ? 1 : 0);
  return n;
}

template <typename Scalar>
ParameterList<Scalar> DSFpn<Scalar>::parameters() const {
  ParameterList<Scalar> list;
  for (int i = 0; i < 4; ++i) {
    const std::string level = "neck.level" + std::to_string(i + 2);
    if (lateral_blocks_[i]) append_prefixed(list, level + ".lateral_block", lateral_blocks_[i]->parameters());
    push(list, level + ".lateral", lateral_[i]);
    push(list, level + ".smooth", smooth_[i]);
    if (last_blocks_[i]) append_prefixed(list, level + ".last_block", last_blocks_[i]->parameters());
  }
  for (std::size_t e = 0; e < extra_.size(); ++e) {
    const std::string level = "neck.extra" + std::to_string(e);
    push(list, level + ".conv", extra_[e]);
    if (e < extra_blocks_.size()) append_prefixed(list, level + ".block", extra_blocks_[e].parameters());
  }
  return list;
}

template <typename Scalar>
std::vector<Var<Scalar>> DSFpn<Scalar>::forward(const std::array<Var<Scalar>, 4>& stages) const {
  std::array<Var<Scalar>, 4> merged;
  for (int i = 3; i >= 0; --i) {
    const auto& c = stages[i];
    if (c.value().rank() != 4 || c.dim(1) != in_channels_[i])
      throw DimensionError("fpn: level " + std::to_string(i + 2) + " expects " + std::to_string(in_channels_[i]) +
                           " channels, got " + to_string(c.shape()));
    Var<Scalar> lat;
    if (config_.insertion == Insertion::lateral_rev) lat = lateral_blocks_[i]->forward(apply(lateral_[i], c));
    else if (lateral_blocks_[i]) lat = apply(lateral_[i], lateral_blocks_[i]->forward(c));
    else lat = apply(lateral_[i], c);
    merged[i] = i == 3 ? lat : add(lat, upsample_nearest(merged[i + 1], lat.dim(2), lat.dim(3)));
  }
  std::vector<Var<Scalar>> out;
  for (int i = 0; i < 4; ++i)
    out.push_back(last_blocks_[i] ? last_blocks_[i]->forward(merged[i]) : apply(smooth_[i], merged[i]));
  for (std::size_t e = 0; e < extra_.size(); ++e) {
    auto p = apply(extra_[e], out.back(), 2);
    if (e < extra_blocks_.size()) p = extra_blocks_[e].forward(p);
    out.push_back(p);
  }
  return out;
}

template <typename Scalar>
AuditReport DSFpn<Scalar>::audit(Index height, Index width) const {
  AuditReport r;
  r.height = height;
  r.width = width;
  const Index oc = config_.out_channels;
  for (int i = 0; i < 4; ++i) {
    const Index s = Index{4} << i;
    const std::uint64_t hw = u64((height / s) * (width / s));
    const std::string level = "neck.level" + std::to_string(i + 2);
    if (lateral_blocks_[i]) r.append(level + ".lateral_block", lateral_blocks_[i]->audit(height / s, width / s));
    r.add(level + ".lateral", size_of(lateral_[i]), hw * u64(in_channels_[i] * oc));
    if (last_blocks_[i]) r.append(level + ".last_block", last_blocks_[i]->audit(height / s, width / s));
    else r.add(level + ".smooth", size_of(smooth_[i]), hw * u64(oc * oc * 9));
  }
  Index h = height / 32, w = width / 32;
  for (std::size_t e = 0; e < extra_.size(); ++e) {
    h = stride_two(h);
    w = stride_two(w);
    const std::string level = "neck.extra" + std::to_string(e);
    r.add(level + ".conv", size_of(extra_[e]), u64(h * w) * u64(oc * oc * 9));
    if (e < extra_blocks_.size()) r.append(level + ".block", extra_blocks_[e].audit(h, w));
  }
  return r;
}

template <typename Scalar>
FpnAudit fpn_audit(const DSFpn<Scalar>& neck, const Model<Scalar>& backbone, Index height, Index width) {
  FpnAudit a;
  a.neck = neck.audit(height, width);
  const auto full = backbone.audit(height, width);
  a.total.height = height;
  a.total.width = width;
  for (const auto& e : full.entries)
    if (e.name != "head") a.total.entries.push_back(e);
  for (const auto& e : a.neck.entries) a.total.entries.push_back(e);
  return a;
}

template class DSFpn<float>;
template class DSFpn<double>;
template FpnAudit fpn_audit(const DSFpn<float>&, const Model<float>&, Index, Index);
template FpnAudit fpn_audit(const DSFpn<double>&, const Model<double>&, Index, Index);

}  // namespace dsnet
