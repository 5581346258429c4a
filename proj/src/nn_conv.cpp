#include <algorithm>
#include <cstdint>
#include <string>

#include "volseg/nn.hpp"

namespace volseg {

namespace {

using Index = std::int64_t;

struct ConvGeometry {
  std::size_t batch, in_c, out_c;
  Index in_d, in_h, in_w;
  Index out_d, out_h, out_w;
  Index kd, kh, kw;
  Index stride;
  Index pd, ph, pw;

  std::size_t in_plane() const { return static_cast<std::size_t>(in_d * in_h * in_w); }
  std::size_t out_plane() const { return static_cast<std::size_t>(out_d * out_h * out_w); }
};

Index floor_div(Index a, Index b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
Index ceil_div(Index a, Index b) { return -floor_div(-a, b); }

// Range of output positions o with 0 <= o*stride + tap - pad < in_extent.
std::pair<Index, Index> valid_outputs(Index tap, Index pad, Index stride, Index in_extent,
                                      Index out_extent) {
  const Index lo = std::max<Index>(0, ceil_div(pad - tap, stride));
  const Index hi = std::min<Index>(out_extent, floor_div(in_extent - 1 + pad - tap, stride) + 1);
  return {lo, hi};
}

// Visits every (output row, input row) pair touched by kernel tap (a, b, c)
// within one channel plane. `fn(out_row, in_row, ow_lo, ow_hi, iw_offset)`
// where iw = ow * stride + iw_offset.
template <typename Fn>
void for_each_row(const ConvGeometry& g, Index a, Index b, Index c, Fn&& fn) {
  const auto [od_lo, od_hi] = valid_outputs(a, g.pd, g.stride, g.in_d, g.out_d);
  const auto [oh_lo, oh_hi] = valid_outputs(b, g.ph, g.stride, g.in_h, g.out_h);
  const auto [ow_lo, ow_hi] = valid_outputs(c, g.pw, g.stride, g.in_w, g.out_w);
  if (ow_lo >= ow_hi) return;
  for (Index od = od_lo; od < od_hi; ++od) {
    const Index id = od * g.stride + a - g.pd;
    for (Index oh = oh_lo; oh < oh_hi; ++oh) {
      const Index ih = oh * g.stride + b - g.ph;
      fn(static_cast<std::size_t>((od * g.out_h + oh) * g.out_w),
         static_cast<std::size_t>((id * g.in_h + ih) * g.in_w), ow_lo, ow_hi, c - g.pw);
    }
  }
}

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const ConvParams<T>& p) {
  p.validate();
  if (x.rank() != 5) throw ShapeError("conv3d: expected NCDHW input, got " + shape_str(x.shape()));
  if (x.extent(1) != p.in_channels) {
    throw ShapeError("conv3d: input has " + std::to_string(x.extent(1)) + " channels, layer expects " +
                     std::to_string(p.in_channels));
  }
  ConvGeometry g{};
  g.batch = x.extent(0);
  g.in_c = p.in_channels;
  g.out_c = p.out_channels;
  g.in_d = static_cast<Index>(x.extent(2));
  g.in_h = static_cast<Index>(x.extent(3));
  g.in_w = static_cast<Index>(x.extent(4));
  g.kd = static_cast<Index>(p.kernel[0]);
  g.kh = static_cast<Index>(p.kernel[1]);
  g.kw = static_cast<Index>(p.kernel[2]);
  g.stride = static_cast<Index>(p.stride);
  if (p.padding == Padding::same) {
    g.pd = (g.kd - 1) / 2;
    g.ph = (g.kh - 1) / 2;
    g.pw = (g.kw - 1) / 2;
  } else {
    const char* names[] = {"D", "H", "W"};
    const Index in[] = {g.in_d, g.in_h, g.in_w};
    const Index k[] = {g.kd, g.kh, g.kw};
    for (int i = 0; i < 3; ++i) {
      if (in[i] < k[i]) {
        throw ShapeError(std::string("conv3d: axis ") + names[i] + " extent " + std::to_string(in[i]) +
                         " is smaller than kernel " + std::to_string(k[i]) + " (valid padding)");
      }
    }
  }
  g.out_d = (g.in_d + 2 * g.pd - g.kd) / g.stride + 1;
  g.out_h = (g.in_h + 2 * g.ph - g.kh) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pw - g.kw) / g.stride + 1;
  return g;
}

}  // namespace

template <typename T>
ConvParams<T> ConvParams<T>::make(std::size_t in, std::size_t out, Kernel3 kernel, std::size_t stride,
                                  Padding padding) {
  ConvParams p;
  p.in_channels = in;
  p.out_channels = out;
  p.kernel = kernel;
  p.stride = stride;
  p.padding = padding;
  p.weight = Tensor<T>(Shape{out, in, kernel[0], kernel[1], kernel[2]}, true);
  p.bias = Tensor<T>(Shape{out}, true);
  return p;
}

template <typename T>
void ConvParams<T>::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ShapeError("conv: channel counts must be positive");
  if (stride == 0) throw ShapeError("conv: stride must be positive");
  for (auto k : kernel) {
    if (k == 0) throw ShapeError("conv: kernel extents must be positive");
    if (padding == Padding::same && k % 2 == 0) {
      throw ShapeError("conv: padding=same needs odd kernel extents");
    }
  }
  const Shape expected{out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
  if (!weight.defined() || weight.shape() != expected) {
    throw ShapeError("conv: weight shape " + (weight.defined() ? shape_str(weight.shape()) : "<none>") +
                     " does not match " + shape_str(expected));
  }
  if (!bias.defined() || bias.shape() != Shape{out_channels}) {
    throw ShapeError("conv: bias must have shape [" + std::to_string(out_channels) + "]");
  }
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvParams<T>& p) {
  const ConvGeometry g = conv_geometry(x, p);
  Tensor<T> out(Shape{g.batch, g.out_c, static_cast<std::size_t>(g.out_d),
                      static_cast<std::size_t>(g.out_h), static_cast<std::size_t>(g.out_w)});
  const std::size_t taps = static_cast<std::size_t>(g.kd * g.kh * g.kw);
  const std::size_t in_plane = g.in_plane();
  const std::size_t out_plane = g.out_plane();
  const Index stride = g.stride;

  {
    const T* xd = x.data().data();
    const T* wd = p.weight.data().data();
    const T* bd = p.bias.data().data();
    T* od = out.data().data();
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        T* oplane = od + (n * g.out_c + oc) * out_plane;
        std::fill(oplane, oplane + out_plane, bd[oc]);
        for (std::size_t ic = 0; ic < g.in_c; ++ic) {
          const T* iplane = xd + (n * g.in_c + ic) * in_plane;
          const T* wk = wd + (oc * g.in_c + ic) * taps;
          for (Index a = 0; a < g.kd; ++a)
            for (Index b = 0; b < g.kh; ++b)
              for (Index c = 0; c < g.kw; ++c) {
                const T w = wk[(a * g.kh + b) * g.kw + c];
                if (w == T(0)) continue;
                for_each_row(g, a, b, c,
                             [&](std::size_t orow, std::size_t irow, Index lo, Index hi, Index off) {
                               T* o = oplane + orow;
                               const T* i = iplane + irow;
                               if (stride == 1) {
                                 const T* src = i + off;
                                 for (Index ow = lo; ow < hi; ++ow) o[ow] += w * src[ow];
                               } else {
                                 for (Index ow = lo; ow < hi; ++ow) o[ow] += w * i[ow * stride + off];
                               }
                             });
              }
        }
      }
    }
  }

  detail::record<T>("conv3d", {&x, &p.weight, &p.bias}, out,
                    [x, weight = p.weight, bias = p.bias, out, g, taps]() {
    const std::size_t in_plane = g.in_plane();
    const std::size_t out_plane = g.out_plane();
    const Index stride = g.stride;
    const T* gd = out.grad().data();
    const T* xd = x.data().data();
    const T* wd = weight.data().data();

    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t oc = 0; oc < g.out_c; ++oc) {
          const T* gp = gd + (n * g.out_c + oc) * out_plane;
          long double acc = 0.0L;
          for (std::size_t i = 0; i < out_plane; ++i) acc += gp[i];
          gb[oc] += static_cast<T>(acc);
        }
    }
    T* gw = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
    T* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
    if (gw == nullptr && gx == nullptr) return;

    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        const T* gplane = gd + (n * g.out_c + oc) * out_plane;
        for (std::size_t ic = 0; ic < g.in_c; ++ic) {
          const T* iplane = xd + (n * g.in_c + ic) * in_plane;
          T* giplane = gx ? gx + (n * g.in_c + ic) * in_plane : nullptr;
          const std::size_t wbase = (oc * g.in_c + ic) * taps;
          for (Index a = 0; a < g.kd; ++a)
            for (Index b = 0; b < g.kh; ++b)
              for (Index c = 0; c < g.kw; ++c) {
                const std::size_t widx = wbase + static_cast<std::size_t>((a * g.kh + b) * g.kw + c);
                const T w = wd[widx];
                T wacc = T(0);
                for_each_row(g, a, b, c,
                             [&](std::size_t orow, std::size_t irow, Index lo, Index hi, Index off) {
                               const T* go = gplane + orow;
                               if (stride == 1) {
                                 const T* src = iplane + irow + off;
                                 if (gw) {
                                   T acc = T(0);
                                   for (Index ow = lo; ow < hi; ++ow) acc += go[ow] * src[ow];
                                   wacc += acc;
                                 }
                                 if (giplane && w != T(0)) {
                                   T* dst = giplane + irow + off;
                                   for (Index ow = lo; ow < hi; ++ow) dst[ow] += w * go[ow];
                                 }
                               } else {
                                 const T* src = iplane + irow;
                                 for (Index ow = lo; ow < hi; ++ow) {
                                   const std::size_t iw = static_cast<std::size_t>(ow * stride + off);
                                   if (gw) wacc += go[ow] * src[iw];
                                   if (giplane) giplane[irow + iw] += w * go[ow];
                                 }
                               }
                             });
                if (gw) gw[widx] += wacc;
              }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const ConvParams<T>& p) {
  if (p.kernel != Kernel3{2, 2, 2} || p.stride != 2) {
    throw ShapeError("conv_transpose3d: only kernel (2,2,2) with stride 2 is supported");
  }
  const Shape wshape{p.out_channels, p.in_channels, 2, 2, 2};
  if (!p.weight.defined() || p.weight.shape() != wshape || !p.bias.defined() ||
      p.bias.shape() != Shape{p.out_channels}) {
    throw ShapeError("conv_transpose3d: parameter shapes do not match channel counts");
  }
  if (x.rank() != 5) throw ShapeError("conv_transpose3d: expected NCDHW input, got " + shape_str(x.shape()));
  if (x.extent(1) != p.in_channels) {
    throw ShapeError("conv_transpose3d: input has " + std::to_string(x.extent(1)) +
                     " channels, layer expects " + std::to_string(p.in_channels));
  }
  const std::size_t batch = x.extent(0), in_c = p.in_channels, out_c = p.out_channels;
  const std::size_t d = x.extent(2), h = x.extent(3), w = x.extent(4);
  const std::size_t od = 2 * d, oh = 2 * h, ow = 2 * w;
  const std::size_t in_plane = d * h * w, out_plane = od * oh * ow;
  Tensor<T> out(Shape{batch, out_c, od, oh, ow});

  {
    const T* xd = x.data().data();
    const T* wd = p.weight.data().data();
    const T* bd = p.bias.data().data();
    T* o = out.data().data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t oc = 0; oc < out_c; ++oc) {
        T* oplane = o + (n * out_c + oc) * out_plane;
        std::fill(oplane, oplane + out_plane, bd[oc]);
        for (std::size_t ic = 0; ic < in_c; ++ic) {
          const T* iplane = xd + (n * in_c + ic) * in_plane;
          const T* wk = wd + (oc * in_c + ic) * 8;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              for (std::size_t c = 0; c < 2; ++c) {
                const T wv = wk[(a * 2 + b) * 2 + c];
                for (std::size_t z = 0; z < d; ++z)
                  for (std::size_t y = 0; y < h; ++y) {
                    const T* irow = iplane + (z * h + y) * w;
                    T* orow = oplane + ((2 * z + a) * oh + (2 * y + b)) * ow + c;
                    for (std::size_t xi = 0; xi < w; ++xi) orow[2 * xi] += wv * irow[xi];
                  }
              }
        }
      }
  }

  detail::record<T>("conv_transpose3d", {&x, &p.weight, &p.bias}, out,
                    [x, weight = p.weight, bias = p.bias, out, batch, in_c, out_c, d, h, w]() {
    const std::size_t oh = 2 * h, ow = 2 * w;
    const std::size_t in_plane = d * h * w, out_plane = 8 * in_plane;
    const T* gd = out.grad().data();
    const T* xd = x.data().data();
    const T* wd = weight.data().data();
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t oc = 0; oc < out_c; ++oc) {
          const T* gp = gd + (n * out_c + oc) * out_plane;
          long double acc = 0.0L;
          for (std::size_t i = 0; i < out_plane; ++i) acc += gp[i];
          gb[oc] += static_cast<T>(acc);
        }
    }
    T* gw = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
    T* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
    if (gw == nullptr && gx == nullptr) return;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t oc = 0; oc < out_c; ++oc) {
        const T* gplane = gd + (n * out_c + oc) * out_plane;
        for (std::size_t ic = 0; ic < in_c; ++ic) {
          const T* iplane = xd + (n * in_c + ic) * in_plane;
          T* giplane = gx ? gx + (n * in_c + ic) * in_plane : nullptr;
          const std::size_t wbase = (oc * in_c + ic) * 8;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              for (std::size_t c = 0; c < 2; ++c) {
                const std::size_t widx = wbase + (a * 2 + b) * 2 + c;
                const T wv = wd[widx];
                T wacc = T(0);
                for (std::size_t z = 0; z < d; ++z)
                  for (std::size_t y = 0; y < h; ++y) {
                    const std::size_t irow = (z * h + y) * w;
                    const T* grow = gplane + ((2 * z + a) * oh + (2 * y + b)) * ow + c;
                    for (std::size_t xi = 0; xi < w; ++xi) {
                      if (gw) wacc += grow[2 * xi] * iplane[irow + xi];
                      if (giplane) giplane[irow + xi] += wv * grow[2 * xi];
                    }
                  }
                if (gw) gw[widx] += wacc;
              }
        }
      }
  });
  return out;
}

template struct ConvParams<float>;
template struct ConvParams<double>;
template Tensor<float> conv3d<float>(const Tensor<float>&, const ConvParams<float>&);
template Tensor<double> conv3d<double>(const Tensor<double>&, const ConvParams<double>&);
template Tensor<float> conv_transpose3d<float>(const Tensor<float>&, const ConvParams<float>&);
template Tensor<double> conv_transpose3d<double>(const Tensor<double>&, const ConvParams<double>&);

}  // namespace volseg
