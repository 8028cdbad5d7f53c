#include <dsnet/ops.hpp>

#include <cmath>

namespace dsnet {

namespace {

template <typename Scalar>
void require_image(const char* op, const Var<Scalar>& x) {
  if (x.value().rank() != 4) throw DimensionError(std::string(op) + ": expected N x C x H x W, got " + to_string(x.shape()));
}

// Sampling table for one axis of an align_corners=false bilinear resize.
struct LerpTable {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

LerpTable lerp_table(Index src, Index dst) {
  LerpTable t;
  t.lo.resize(static_cast<std::size_t>(dst));
  t.hi.resize(static_cast<std::size_t>(dst));
  t.frac.resize(static_cast<std::size_t>(dst));
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  for (Index i = 0; i < dst; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (pos < 0) pos = 0;
    Index lo = static_cast<Index>(std::floor(pos));
    if (lo > src - 1) lo = src - 1;
    const auto u = static_cast<std::size_t>(i);
    t.lo[u] = lo;
    t.hi[u] = std::min(lo + 1, src - 1);
    t.frac[u] = pos - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Index global_channels(Index channels, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("split_channels: alpha " + std::to_string(alpha) + " outside [0, 1]");
  const auto g = static_cast<Index>(std::floor(alpha * static_cast<double>(channels) + 1e-9));
  return std::min(g, channels);
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, Index begin, Index end) {
  require_image("slice_channels", x);
  const Index batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (begin < 0 || end < begin || end > ch) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         to_string(x.shape()));
  }
  const Index width = end - begin;
  Tensor<Scalar> out(Shape{batch, width, x.dim(2), x.dim(3)});
  for (Index n = 0; n < batch; ++n) {
    const Scalar* src = x.value().data() + (n * ch + begin) * plane;
    std::copy(src, src + width * plane, out.data() + n * width * plane);
  }
  return detail::record<Scalar>(std::move(out), {x}, "slice_channels", [batch, ch, plane, begin, width](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    for (Index n = 0; n < batch; ++n) {
      const Scalar* src = node.grad.data() + n * width * plane;
      std::copy(src, src + width * plane, g.data() + (n * ch + begin) * plane);
    }
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
ChannelSplit<Scalar> split_channels(const Var<Scalar>& x, double alpha) {
  require_image("split_channels", x);
  const Index ch = x.dim(1);
  const Index g = global_channels(ch, alpha);
  return {slice_channels(x, g, ch), slice_channels(x, Index{0}, g)};
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_image("concat_channels", a);
  require_image("concat_channels", b);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const Index batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<Scalar> out(Shape{batch, ca + cb, a.dim(2), a.dim(3)});
  for (Index n = 0; n < batch; ++n) {
    Scalar* dst = out.data() + n * (ca + cb) * plane;
    const Scalar* sa = a.value().data() + n * ca * plane;
    const Scalar* sb = b.value().data() + n * cb * plane;
    std::copy(sa, sa + ca * plane, dst);
    std::copy(sb, sb + cb * plane, dst + ca * plane);
  }
  return detail::record<Scalar>(std::move(out), {a, b}, "concat_channels", [batch, ca, cb, plane](Node<Scalar>& node) {
    Tensor<Scalar> ga(node.inputs[0]->value.shape());
    Tensor<Scalar> gb(node.inputs[1]->value.shape());
    for (Index n = 0; n < batch; ++n) {
      const Scalar* src = node.grad.data() + n * (ca + cb) * plane;
      std::copy(src, src + ca * plane, ga.data() + n * ca * plane);
      std::copy(src + ca * plane, src + (ca + cb) * plane, gb.data() + n * cb * plane);
    }
    detail::accumulate(*node.inputs[0], ga);
    detail::accumulate(*node.inputs[1], gb);
  });
}

template <typename Scalar>
Var<Scalar> to_tokens(const Var<Scalar>& x) {
  require_image("to_tokens", x);
  const Index batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<Scalar> out(Shape{batch, plane, ch});
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  using MMap = typename Tensor<Scalar>::MatrixMap;
  for (Index n = 0; n < batch; ++n) {
    MMap(out.data() + n * plane * ch, plane, ch) = CMap(x.value().data() + n * ch * plane, ch, plane).transpose();
  }
  return detail::record<Scalar>(std::move(out), {x}, "to_tokens", [batch, ch, plane](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    for (Index n = 0; n < batch; ++n) {
      MMap(g.data() + n * ch * plane, ch, plane) = CMap(node.grad.data() + n * plane * ch, plane, ch).transpose();
    }
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> from_tokens(const Var<Scalar>& t, Index height, Index width) {
  if (t.value().rank() != 3 || t.dim(1) != height * width) {
    throw DimensionError("from_tokens: " + to_string(t.shape()) + " cannot form a " + std::to_string(height) + "x" +
                         std::to_string(width) + " grid");
  }
  const Index batch = t.dim(0), plane = t.dim(1), ch = t.dim(2);
  Tensor<Scalar> out(Shape{batch, ch, height, width});
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  using MMap = typename Tensor<Scalar>::MatrixMap;
  for (Index n = 0; n < batch; ++n) {
    MMap(out.data() + n * ch * plane, ch, plane) = CMap(t.value().data() + n * plane * ch, plane, ch).transpose();
  }
  return detail::record<Scalar>(std::move(out), {t}, "from_tokens", [batch, ch, plane](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    for (Index n = 0; n < batch; ++n) {
      MMap(g.data() + n * plane * ch, plane, ch) = CMap(node.grad.data() + n * ch * plane, ch, plane).transpose();
    }
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> split_heads(const Var<Scalar>& t, Index heads) {
  if (t.value().rank() != 3) throw DimensionError("split_heads: expected N x L x D, got " + to_string(t.shape()));
  if (heads < 1 || t.dim(2) % heads != 0) {
    throw ConfigError("split_heads: " + std::to_string(heads) + " heads do not divide width " + std::to_string(t.dim(2)));
  }
  const Index batch = t.dim(0), len = t.dim(1), width = t.dim(2), d = width / heads;
  Tensor<Scalar> out(Shape{batch * heads, len, d});
  auto move = [batch, len, width, heads, d](const Scalar* src, Scalar* dst, bool forward) {
    for (Index n = 0; n < batch; ++n)
      for (Index l = 0; l < len; ++l)
        for (Index h = 0; h < heads; ++h) {
          const Scalar* a = src;
          Scalar* b = dst;
          const Index packed = (n * len + l) * width + h * d;
          const Index split = ((n * heads + h) * len + l) * d;
          if (forward) {
            std::copy(a + packed, a + packed + d, b + split);
          } else {
            std::copy(a + split, a + split + d, b + packed);
          }
        }
  };
  move(t.value().data(), out.data(), true);
  return detail::record<Scalar>(std::move(out), {t}, "split_heads", [move](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    move(node.grad.data(), g.data(), false);
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> merge_heads(const Var<Scalar>& t, Index heads) {
  if (t.value().rank() != 3 || heads < 1 || t.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: " + to_string(t.shape()) + " is not a multiple of " + std::to_string(heads) + " heads");
  }
  const Index batch = t.dim(0) / heads, len = t.dim(1), d = t.dim(2), width = d * heads;
  Tensor<Scalar> out(Shape{batch, len, width});
  auto move = [batch, len, width, heads, d](const Scalar* src, Scalar* dst, bool forward) {
    for (Index n = 0; n < batch; ++n)
      for (Index l = 0; l < len; ++l)
        for (Index h = 0; h < heads; ++h) {
          const Index packed = (n * len + l) * width + h * d;
          const Index split = ((n * heads + h) * len + l) * d;
          if (forward) {
            std::copy(src + split, src + split + d, dst + packed);
          } else {
            std::copy(src + packed, src + packed + d, dst + split);
          }
        }
  };
  move(t.value().data(), out.data(), true);
  return detail::record<Scalar>(std::move(out), {t}, "merge_heads", [move](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    move(node.grad.data(), g.data(), false);
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> avgpool(const Var<Scalar>& x, Index factor) {
  require_image("avgpool", x);
  if (factor < 1) throw ConfigError("avgpool: factor must be positive, got " + std::to_string(factor));
  const Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % factor != 0 || w % factor != 0) {
    throw DimensionError("avgpool: extents " + to_string(x.shape()) + " not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return reshape(x, x.shape());
  const Index oh = h / factor, ow = w / factor;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(factor * factor);
  Tensor<Scalar> out(Shape{batch, ch, oh, ow});
  const Scalar* src = x.value().data();
  for (Index p = 0; p < batch * ch; ++p) {
    const Scalar* plane = src + p * h * w;
    Scalar* dst = out.data() + p * oh * ow;
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        Scalar acc = 0;
        for (Index a = 0; a < factor; ++a)
          for (Index b = 0; b < factor; ++b) acc += plane[(i * factor + a) * w + j * factor + b];
        dst[i * ow + j] = acc * inv;
      }
  }
  return detail::record<Scalar>(std::move(out), {x}, "avgpool", [batch, ch, h, w, oh, ow, factor, inv](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    for (Index p = 0; p < batch * ch; ++p) {
      const Scalar* gy = node.grad.data() + p * oh * ow;
      Scalar* gp = g.data() + p * h * w;
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) gp[i * w + j] = gy[(i / factor) * ow + j / factor] * inv;
    }
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> global_avgpool(const Var<Scalar>& x) {
  require_image("global_avgpool", x);
  const Index batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw DimensionError("global_avgpool: empty spatial extent");
  Tensor<Scalar> out(Shape{batch, ch});
  out.flat() = x.value().matrix(batch * ch, plane).rowwise().mean().array();
  return detail::record<Scalar>(std::move(out), {x}, "global_avgpool", [batch, ch, plane](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    const Scalar inv = Scalar(1) / static_cast<Scalar>(plane);
    for (Index p = 0; p < batch * ch; ++p) std::fill(g.data() + p * plane, g.data() + (p + 1) * plane, node.grad[p] * inv);
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> bilinear_upsample(const Var<Scalar>& x, Index height, Index width) {
  require_image("bilinear_upsample", x);
  const Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (height < h || width < w) {
    throw DimensionError("bilinear_upsample: target " + std::to_string(height) + "x" + std::to_string(width) +
                         " smaller than source " + to_string(x.shape()));
  }
  if (height == h && width == w) return reshape(x, x.shape());
  if (h == 0 || w == 0) throw DimensionError("bilinear_upsample: empty source grid");
  auto ty = std::make_shared<LerpTable>(lerp_table(h, height));
  auto tx = std::make_shared<LerpTable>(lerp_table(w, width));
  Tensor<Scalar> out(Shape{batch, ch, height, width});
  for (Index p = 0; p < batch * ch; ++p) {
    const Scalar* src = x.value().data() + p * h * w;
    Scalar* dst = out.data() + p * height * width;
    for (Index i = 0; i < height; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const Scalar fy = static_cast<Scalar>(ty->frac[ui]);
      const Scalar* r0 = src + ty->lo[ui] * w;
      const Scalar* r1 = src + ty->hi[ui] * w;
      for (Index j = 0; j < width; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        const Scalar fx = static_cast<Scalar>(tx->frac[uj]);
        const Index a = tx->lo[uj], b = tx->hi[uj];
        const Scalar top = r0[a] + (r0[b] - r0[a]) * fx;
        const Scalar bot = r1[a] + (r1[b] - r1[a]) * fx;
        dst[i * width + j] = top + (bot - top) * fy;
      }
    }
  }
  return detail::record<Scalar>(std::move(out), {x}, "bilinear_upsample", [batch, ch, h, w, height, width, ty, tx](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    for (Index p = 0; p < batch * ch; ++p) {
      const Scalar* gy = node.grad.data() + p * height * width;
      Scalar* gp = g.data() + p * h * w;
      for (Index i = 0; i < height; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const Scalar fy = static_cast<Scalar>(ty->frac[ui]);
        Scalar* r0 = gp + ty->lo[ui] * w;
        Scalar* r1 = gp + ty->hi[ui] * w;
        for (Index j = 0; j < width; ++j) {
          const auto uj = static_cast<std::size_t>(j);
          const Scalar fx = static_cast<Scalar>(tx->frac[uj]);
          const Index a = tx->lo[uj], b = tx->hi[uj];
          const Scalar v = gy[i * width + j];
          r0[a] += v * (1 - fy) * (1 - fx);
          r0[b] += v * (1 - fy) * fx;
          r1[a] += v * fy * (1 - fx);
          r1[b] += v * fy * fx;
        }
      }
    }
    detail::accumulate(*node.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, Index height, Index width) {
  require_image("upsample_nearest", x);
  const Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (height < h || width < w || h == 0 || w == 0) {
    throw DimensionError("upsample_nearest: target " + std::to_string(height) + "x" + std::to_string(width) +
                         " invalid for source " + to_string(x.shape()));
  }
  std::vector<Index> ys(static_cast<std::size_t>(height)), xs(static_cast<std::size_t>(width));
  for (Index i = 0; i < height; ++i) ys[static_cast<std::size_t>(i)] = std::min(h - 1, (i * h) / height);
  for (Index j = 0; j < width; ++j) xs[static_cast<std::size_t>(j)] = std::min(w - 1, (j * w) / width);
  Tensor<Scalar> out(Shape{batch, ch, height, width});
  for (Index p = 0; p < batch * ch; ++p) {
    const Scalar* src = x.value().data() + p * h * w;
    Scalar* dst = out.data() + p * height * width;
    for (Index i = 0; i < height; ++i)
      for (Index j = 0; j < width; ++j) dst[i * width + j] = src[ys[static_cast<std::size_t>(i)] * w + xs[static_cast<std::size_t>(j)]];
  }
  return detail::record<Scalar>(std::move(out), {x}, "upsample_nearest", [batch, ch, h, w, height, width, ys, xs](Node<Scalar>& node) {
    Tensor<Scalar> g(node.inputs[0]->value.shape());
    for (Index p = 0; p < batch * ch; ++p) {
      const Scalar* gy = node.grad.data() + p * height * width;
      Scalar* gp = g.data() + p * h * w;
      for (Index i = 0; i < height; ++i)
        for (Index j = 0; j < width; ++j) gp[ys[static_cast<std::size_t>(i)] * w + xs[static_cast<std::size_t>(j)]] += gy[i * width + j];
    }
    detail::accumulate(*node.inputs[0], g);
  });
}

#define DSNET_INSTANTIATE(S)                                                   \
  template Var<S> slice_channels(const Var<S>&, Index, Index);                 \
  template ChannelSplit<S> split_channels(const Var<S>&, double);              \
  template Var<S> concat_channels(const Var<S>&, const Var<S>&);               \
  template Var<S> to_tokens(const Var<S>&);                                    \
  template Var<S> from_tokens(const Var<S>&, Index, Index);                    \
  template Var<S> split_heads(const Var<S>&, Index);                           \
  template Var<S> merge_heads(const Var<S>&, Index);                           \
  template Var<S> avgpool(const Var<S>&, Index);                               \
  template Var<S> global_avgpool(const Var<S>&);                               \
  template Var<S> bilinear_upsample(const Var<S>&, Index, Index);              \
  template Var<S> upsample_nearest(const Var<S>&, Index, Index);
DSNET_INSTANTIATE(float)
DSNET_INSTANTIATE(double)
#undef DSNET_INSTANTIATE

}  // namespace dsnet
