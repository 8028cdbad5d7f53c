#include <dsnet/ops.hpp>

namespace dsnet {

namespace {

template <typename Scalar>
void require_image(const char* op, const Var<Scalar>& x) {
  if (x.value().rank() != 4) throw DimensionError(std::string(op) + ": expected N x C x H x W, got " + to_string(x.shape()));
}

template <typename Scalar>
void require_bias(const char* op, const Var<Scalar>& bias, Index channels) {
  if (bias.defined() && (bias.value().rank() != 1 || bias.size() != channels)) {
    throw DimensionError(std::string(op) + ": bias " + to_string(bias.shape()) + " for " + std::to_string(channels) +
                         " channels");
  }
}

template <typename Scalar>
std::vector<Var<Scalar>> operands(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  std::vector<Var<Scalar>> v{x, w};
  if (b.defined()) v.push_back(b);
  return v;
}

// Unfolds one image (C x H x W) into (C*k*k) x (Ho*Wo) columns.
template <typename Scalar>
void im2col(const Scalar* img, Index channels, Index height, Index width, Index k, Index stride, Index pad, Index out_h,
            Index out_w, Scalar* cols) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols + ((c * k + ky) * k + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + ky;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + kx;
            row[oy * out_w + ox] =
                (iy >= 0 && iy < height && ix >= 0 && ix < width) ? img[(c * height + iy) * width + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index channels, Index height, Index width, Index k, Index stride, Index pad, Index out_h,
            Index out_w, Scalar* img) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols + ((c * k + ky) * k + kx) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) img[(c * height + iy) * width + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv1x1(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  require_image("conv1x1", x);
  if (weight.value().rank() != 2) throw DimensionError("conv1x1: weight must be C_out x C_in, got " + to_string(weight.shape()));
  const Index batch = x.dim(0), cin = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Index cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv1x1: input " + to_string(x.shape()) + " has " + std::to_string(cin) +
                         " channels but weight is " + to_string(weight.shape()));
  }
  require_bias("conv1x1", bias, cout);
  Tensor<Scalar> out(Shape{batch, cout, x.dim(2), x.dim(3)});
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  using MMap = typename Tensor<Scalar>::MatrixMap;
  const auto w = weight.value().matrix();
  for (Index n = 0; n < batch; ++n) {
    MMap y(out.data() + n * cout * hw, cout, hw);
    y.noalias() = w * CMap(x.value().data() + n * cin * hw, cin, hw);
    if (bias.defined()) y.colwise() += bias.value().flat().matrix();
  }
  detail::count_macs(static_cast<std::uint64_t>(batch * hw * cin * cout));
  return detail::record<Scalar>(std::move(out), operands(x, weight, bias), "conv1x1", [batch, cin, cout, hw](Node<Scalar>& node) {
    auto& xn = *node.inputs[0];
    auto& wn = *node.inputs[1];
    Tensor<Scalar> gx = xn.requires_grad ? Tensor<Scalar>(xn.value.shape()) : Tensor<Scalar>();
    Tensor<Scalar> gw = wn.requires_grad ? Tensor<Scalar>(wn.value.shape()) : Tensor<Scalar>();
    const bool want_b = node.inputs.size() > 2 && node.inputs[2]->requires_grad;
    Tensor<Scalar> gb = want_b ? Tensor<Scalar>(Shape{cout}) : Tensor<Scalar>();
    for (Index n = 0; n < batch; ++n) {
      CMap gy(node.grad.data() + n * cout * hw, cout, hw);
      if (xn.requires_grad) MMap(gx.data() + n * cin * hw, cin, hw).noalias() = wn.value.matrix().transpose() * gy;
      if (wn.requires_grad) gw.matrix().noalias() += gy * CMap(xn.value.data() + n * cin * hw, cin, hw).transpose();
      if (want_b) gb.flat() += gy.rowwise().sum().array();
    }
    if (xn.requires_grad) detail::accumulate(xn, gx);
    if (wn.requires_grad) detail::accumulate(wn, gw);
    if (want_b) detail::accumulate(*node.inputs[2], gb);
  });
}

template <typename Scalar>
Var<Scalar> depthwise_conv3x3(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  require_image("depthwise_conv3x3", x);
  const Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (weight.value().rank() != 3 || weight.dim(1) != 3 || weight.dim(2) != 3) {
    throw ConfigError("depthwise_conv3x3: kernel must be C x 3 x 3, got " + to_string(weight.shape()));
  }
  if (weight.dim(0) != ch) {
    throw DimensionError("depthwise_conv3x3: " + std::to_string(ch) + " channels but weight " + to_string(weight.shape()));
  }
  require_bias("depthwise_conv3x3", bias, ch);
  Tensor<Scalar> out(x.shape());
  const Scalar* xs = x.value().data();
  const Scalar* ws = weight.value().data();
  Scalar* ys = out.data();
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < ch; ++c) {
      const Scalar* src = xs + (n * ch + c) * h * w;
      Scalar* dst = ys + (n * ch + c) * h * w;
      const Scalar b = bias.defined() ? bias.value()[c] : Scalar(0);
      std::fill(dst, dst + h * w, b);
      for (Index dy = -1; dy <= 1; ++dy) {
        for (Index dx = -1; dx <= 1; ++dx) {
          const Scalar k = ws[c * 9 + (dy + 1) * 3 + (dx + 1)];
          const Index i0 = std::max<Index>(0, -dy), i1 = std::min(h, h - dy);
          const Index j0 = std::max<Index>(0, -dx), j1 = std::min(w, w - dx);
          for (Index i = i0; i < i1; ++i) {
            const Scalar* srow = src + (i + dy) * w + dx;
            Scalar* drow = dst + i * w;
            for (Index j = j0; j < j1; ++j) drow[j] += k * srow[j];
          }
        }
      }
    }
  }
  detail::count_macs(static_cast<std::uint64_t>(9 * batch * ch * h * w));
  return detail::record<Scalar>(std::move(out), operands(x, weight, bias), "depthwise_conv3x3", [batch, ch, h, w](Node<Scalar>& node) {
    auto& xn = *node.inputs[0];
    auto& wn = *node.inputs[1];
    const bool want_b = node.inputs.size() > 2 && node.inputs[2]->requires_grad;
    Tensor<Scalar> gx = xn.requires_grad ? Tensor<Scalar>(xn.value.shape()) : Tensor<Scalar>();
    Tensor<Scalar> gw(wn.value.shape());
    Tensor<Scalar> gb(Shape{ch});
    const Scalar* gys = node.grad.data();
    for (Index n = 0; n < batch; ++n) {
      for (Index c = 0; c < ch; ++c) {
        const Scalar* gy = gys + (n * ch + c) * h * w;
        const Scalar* src = xn.value.data() + (n * ch + c) * h * w;
        Scalar* gsrc = xn.requires_grad ? gx.data() + (n * ch + c) * h * w : nullptr;
        Scalar bsum = 0;
        for (Index i = 0; i < h * w; ++i) bsum += gy[i];
        gb[c] += bsum;
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index tap = c * 9 + (dy + 1) * 3 + (dx + 1);
            const Scalar k = wn.value[tap];
            const Index i0 = std::max<Index>(0, -dy), i1 = std::min(h, h - dy);
            const Index j0 = std::max<Index>(0, -dx), j1 = std::min(w, w - dx);
            Scalar acc = 0;
            for (Index i = i0; i < i1; ++i) {
              const Scalar* srow = src + (i + dy) * w + dx;
              const Scalar* grow = gy + i * w;
              for (Index j = j0; j < j1; ++j) acc += grow[j] * srow[j];
              if (gsrc) {
                Scalar* gsrow = gsrc + (i + dy) * w + dx;
                for (Index j = j0; j < j1; ++j) gsrow[j] += k * grow[j];
              }
            }
            gw[tap] += acc;
          }
        }
      }
    }
    if (xn.requires_grad) detail::accumulate(xn, gx);
    detail::accumulate(wn, gw);
    if (want_b) detail::accumulate(*node.inputs[2], gb);
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, Index stride, Index padding) {
  require_image("conv2d", x);
  if (weight.value().rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw ConfigError("conv2d: weight must be C_out x C_in x k x k, got " + to_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  const Index batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " + to_string(weight.shape()));
  }
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " smaller than kernel " + std::to_string(k));
  }
  require_bias("conv2d", bias, cout);
  const Index oh = (h + 2 * padding - k) / stride + 1;
  const Index ow = (w + 2 * padding - k) / stride + 1;
  const Index patch = cin * k * k, plane = oh * ow;
  Tensor<Scalar> out(Shape{batch, cout, oh, ow});
  using CMap = typename Tensor<Scalar>::ConstMatrixMap;
  using MMap = typename Tensor<Scalar>::MatrixMap;
  const CMap wm(weight.value().data(), cout, patch);
  typename Tensor<Scalar>::Matrix cols(patch, plane);
  for (Index n = 0; n < batch; ++n) {
    im2col(x.value().data() + n * cin * h * w, cin, h, w, k, stride, padding, oh, ow, cols.data());
    MMap y(out.data() + n * cout * plane, cout, plane);
    y.noalias() = wm * cols;
    if (bias.defined()) y.colwise() += bias.value().flat().matrix();
  }
  detail::count_macs(static_cast<std::uint64_t>(batch * plane * patch * cout));
  return detail::record<Scalar>(
      std::move(out), operands(x, weight, bias), "conv2d",
      [batch, cin, cout, h, w, k, stride, padding, oh, ow, patch, plane](Node<Scalar>& node) {
        auto& xn = *node.inputs[0];
        auto& wn = *node.inputs[1];
        const bool want_b = node.inputs.size() > 2 && node.inputs[2]->requires_grad;
        Tensor<Scalar> gx = xn.requires_grad ? Tensor<Scalar>(xn.value.shape()) : Tensor<Scalar>();
        Tensor<Scalar> gw = wn.requires_grad ? Tensor<Scalar>(wn.value.shape()) : Tensor<Scalar>();
        Tensor<Scalar> gb = want_b ? Tensor<Scalar>(Shape{cout}) : Tensor<Scalar>();
        const CMap wm(wn.value.data(), cout, patch);
        typename Tensor<Scalar>::Matrix cols(patch, plane);
        typename Tensor<Scalar>::Matrix gcols(patch, plane);
        for (Index n = 0; n < batch; ++n) {
          CMap gy(node.grad.data() + n * cout * plane, cout, plane);
          if (wn.requires_grad) {
            im2col(xn.value.data() + n * cin * h * w, cin, h, w, k, stride, padding, oh, ow, cols.data());
            MMap(gw.data(), cout, patch).noalias() += gy * cols.transpose();
          }
          if (xn.requires_grad) {
            gcols.noalias() = wm.transpose() * gy;
            col2im(gcols.data(), cin, h, w, k, stride, padding, oh, ow, gx.data() + n * cin * h * w);
          }
          if (want_b) gb.flat() += gy.rowwise().sum().array();
        }
        if (xn.requires_grad) detail::accumulate(xn, gx);
        if (wn.requires_grad) detail::accumulate(wn, gw);
        if (want_b) detail::accumulate(*node.inputs[2], gb);
      });
}

#define DSNET_INSTANTIATE(S)                                                              \
  template Var<S> conv1x1(const Var<S>&, const Var<S>&, const Var<S>&);                   \
  template Var<S> depthwise_conv3x3(const Var<S>&, const Var<S>&, const Var<S>&);         \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, Index, Index);
DSNET_INSTANTIATE(float)
DSNET_INSTANTIATE(double)
#undef DSNET_INSTANTIATE

}  // namespace dsnet
