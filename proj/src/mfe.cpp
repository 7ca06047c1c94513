#include "smseg/mfe.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "smseg/parallel.hpp"
#include "smseg/philox.hpp"

namespace smseg {

template <class T>
void DenseBlockParamsT<T>::validate() const {
  const std::size_t c = channels;
  if (c == 0) throw Error(ErrorCode::invalid_argument, "dense block needs at least one channel");
  if (conv_w.size() != 9 * c * c || conv_b.size() != c || gn_gamma.size() != c ||
      gn_beta.size() != c)
    throw Error(ErrorCode::shape_mismatch, "dense block parameter sizes do not match C");
  if (groups == 0 || c % groups != 0)
    throw Error(ErrorCode::invalid_argument, "channels " + std::to_string(c) +
                                                 " not divisible by groups " +
                                                 std::to_string(groups));
  if (!(eps > 0.0)) throw Error(ErrorCode::invalid_argument, "group norm eps must be > 0");
}

template <class T>
std::vector<T> DenseBlockParamsT<T>::flatten() const {
  std::vector<T> out;
  out.reserve(flat_size(channels));
  for (const auto* v : {&conv_w, &conv_b, &gn_gamma, &gn_beta}) out.insert(out.end(), v->begin(), v->end());
  return out;
}

template <class T>
DenseBlockParamsT<T> DenseBlockParamsT<T>::unflatten(std::size_t c, std::span<const T> flat,
                                                     std::size_t groups, double eps) {
  if (flat.size() != flat_size(c))
    throw Error(ErrorCode::shape_mismatch, "flat dense block parameters have the wrong size");
  DenseBlockParamsT p;
  p.channels = c;
  p.groups = groups;
  p.eps = eps;
  auto it = flat.begin();
  auto take = [&](std::vector<T>& dst, std::size_t n) {
    dst.assign(it, it + static_cast<std::ptrdiff_t>(n));
    it += static_cast<std::ptrdiff_t>(n);
  };
  take(p.conv_w, 9 * c * c);
  take(p.conv_b, c);
  take(p.gn_gamma, c);
  take(p.gn_beta, c);
  return p;
}

template <class T>
void MfeParamsT<T>::validate() const {
  for (const auto& b : blocks) {
    b.validate();
    if (b.channels != blocks[0].channels)
      throw Error(ErrorCode::shape_mismatch, "MFE blocks disagree on channel count");
  }
}

void FeaturePyramid::validate() const {
  for (const Tensor* t : {&f0, &f1, &f2})
    if (t->rank() != 3 || t->dtype() != DType::f32)
      throw Error(ErrorCode::shape_mismatch, "pyramid levels must be C x H x W f32");
  if (ratio < 1) throw Error(ErrorCode::invalid_argument, "scale ratio must be >= 1");
  const std::size_t c = f2.dim(0), h = f2.dim(1), w = f2.dim(2);
  const std::size_t r1 = ratio, r0 = ratio * ratio;
  if (h % r0 != 0 || w % r0 != 0)
    throw Error(ErrorCode::shape_mismatch, "finest level is not divisible by ratio^2");
  auto expect = [&](const Tensor& t, std::size_t div, const char* name) {
    if (t.dim(0) != c || t.dim(1) != h / div || t.dim(2) != w / div)
      throw Error(ErrorCode::shape_mismatch, std::string(name) + " has the wrong shape");
  };
  expect(f1, r1, "F_1");
  expect(f0, r0, "F_0");
}

template <class T>
FeatureMap<T> conv2d_3x3(const FeatureMap<T>& x, std::span<const T> w, std::span<const T> b) {
  const std::size_t ci = x.channels, co = b.size(), H = x.height, W = x.width;
  if (w.size() != co * ci * 9)
    throw Error(ErrorCode::shape_mismatch, "conv weights must be Cout x Cin x 3 x 3");
  FeatureMap<T> out(co, H, W);
  parallel_for(co, [&](std::size_t o) {
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        double acc = b[o];
        for (std::size_t i = 0; i < ci; ++i)
          for (std::size_t dy = 0; dy < 3; ++dy) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t dx = 0; dx < 3; ++dx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += static_cast<double>(w[((o * ci + i) * 3 + dy) * 3 + dx]) *
                     x.at(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          }
        out.at(o, y, xx) = static_cast<T>(acc);
      }
  });
  return out;
}

template <class T>
void conv2d_3x3_backward(const FeatureMap<T>& x, std::span<const T> w, const FeatureMap<T>& gout,
                         FeatureMap<T>* gx, std::span<T> gw, std::span<T> gb) {
  const std::size_t ci = x.channels, co = gout.channels, H = x.height, W = x.width;
  for (std::size_t o = 0; o < co; ++o) {
    double s = 0.0;
    for (std::size_t p = 0; p < H * W; ++p) s += gout.data[o * H * W + p];
    gb[o] = static_cast<T>(s);
  }
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t dy = 0; dy < 3; ++dy)
        for (std::size_t dx = 0; dx < 3; ++dx) {
          double s = 0.0;
          for (std::size_t y = 0; y < H; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t xx = 0; xx < W; ++xx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              s += static_cast<double>(gout.at(o, y, xx)) *
                   x.at(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          }
          gw[((o * ci + i) * 3 + dy) * 3 + dx] = static_cast<T>(s);
        }
  if (!gx) return;
  *gx = FeatureMap<T>(ci, H, W);
  for (std::size_t i = 0; i < ci; ++i)
    for (std::size_t sy = 0; sy < H; ++sy)
      for (std::size_t sx = 0; sx < W; ++sx) {
        double s = 0.0;
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t dy = 0; dy < 3; ++dy) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(sy) + 1 - static_cast<std::ptrdiff_t>(dy);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t dx = 0; dx < 3; ++dx) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(sx) + 1 - static_cast<std::ptrdiff_t>(dx);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
              s += static_cast<double>(w[((o * ci + i) * 3 + dy) * 3 + dx]) *
                   gout.at(o, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
            }
          }
        gx->at(i, sy, sx) = static_cast<T>(s);
      }
}

namespace {

struct GroupStats {
  double mean = 0.0;
  double invstd = 0.0;
};

template <class T>
std::vector<GroupStats> group_stats(const FeatureMap<T>& x, std::size_t groups, double eps) {
  const std::size_t cg = x.channels / groups, n = cg * x.plane();
  std::vector<GroupStats> st(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const T* base = x.data.data() + g * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += base[i];
    const double mean = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = base[i] - mean;
      v += d * d;
    }
    v /= static_cast<double>(n);
    st[g] = {mean, 1.0 / std::sqrt(v + eps)};
  }
  return st;
}

void check_groups(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0)
    throw Error(ErrorCode::invalid_argument, "channels " + std::to_string(channels) +
                                                 " not divisible by groups " +
                                                 std::to_string(groups));
}

}  // namespace

template <class T>
FeatureMap<T> group_norm(const FeatureMap<T>& x, std::span<const T> gamma, std::span<const T> beta,
                         std::size_t groups, double eps) {
  check_groups(x.channels, groups);
  if (gamma.size() != x.channels || beta.size() != x.channels)
    throw Error(ErrorCode::shape_mismatch, "gamma / beta must have one entry per channel");
  const auto st = group_stats(x, groups, eps);
  const std::size_t cg = x.channels / groups, P = x.plane();
  FeatureMap<T> out(x.channels, x.height, x.width);
  for (std::size_t c = 0; c < x.channels; ++c) {
    const auto& s = st[c / cg];
    for (std::size_t p = 0; p < P; ++p) {
      const double xhat = (x.data[c * P + p] - s.mean) * s.invstd;
      out.data[c * P + p] = static_cast<T>(gamma[c] * xhat + beta[c]);
    }
  }
  return out;
}

template <class T>
void group_norm_backward(const FeatureMap<T>& x, std::span<const T> gamma, std::size_t groups,
                         double eps, const FeatureMap<T>& gout, FeatureMap<T>* gx,
                         std::span<T> ggamma, std::span<T> gbeta) {
  check_groups(x.channels, groups);
  const auto st = group_stats(x, groups, eps);
  const std::size_t cg = x.channels / groups, P = x.plane(), n = cg * P;
  for (std::size_t c = 0; c < x.channels; ++c) {
    const auto& s = st[c / cg];
    double gg = 0.0, gb = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double xhat = (x.data[c * P + p] - s.mean) * s.invstd;
      gg += gout.data[c * P + p] * xhat;
      gb += gout.data[c * P + p];
    }
    ggamma[c] = static_cast<T>(gg);
    gbeta[c] = static_cast<T>(gb);
  }
  if (!gx) return;
  *gx = FeatureMap<T>(x.channels, x.height, x.width);
  for (std::size_t g = 0; g < groups; ++g) {
    const auto& s = st[g];
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = g * n; i < (g + 1) * n; ++i) {
      const std::size_t c = i / P;
      const double gxh = gout.data[i] * static_cast<double>(gamma[c]);
      const double xhat = (x.data[i] - s.mean) * s.invstd;
      s1 += gxh;
      s2 += gxh * xhat;
    }
    const double nn = static_cast<double>(n);
    for (std::size_t i = g * n; i < (g + 1) * n; ++i) {
      const std::size_t c = i / P;
      const double gxh = gout.data[i] * static_cast<double>(gamma[c]);
      const double xhat = (x.data[i] - s.mean) * s.invstd;
      gx->data[i] = static_cast<T>(s.invstd / nn * (nn * gxh - s1 - xhat * s2));
    }
  }
}

template <class T>
FeatureMap<T> relu(const FeatureMap<T>& x) {
  FeatureMap<T> out = x;
  for (auto& v : out.data) v = std::max(v, T(0));
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = hi == lo ? 0.0 : src - static_cast<double>(lo);
    taps[o] = {lo, hi, frac};
  }
  return taps;
}

}  // namespace

template <class T>
FeatureMap<T> bilinear_resize(const FeatureMap<T>& x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0)
    throw Error(ErrorCode::invalid_argument, "resize target must be positive");
  const auto ty = bilinear_taps(x.height, out_h);
  const auto tx = bilinear_taps(x.width, out_w);
  FeatureMap<T> out(x.channels, out_h, out_w);
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const double top = (1.0 - b.frac) * x.at(c, a.lo, b.lo) + b.frac * x.at(c, a.lo, b.hi);
        const double bot = (1.0 - b.frac) * x.at(c, a.hi, b.lo) + b.frac * x.at(c, a.hi, b.hi);
        out.at(c, y, xx) = static_cast<T>((1.0 - a.frac) * top + a.frac * bot);
      }
  return out;
}

template <class T>
FeatureMap<T> bilinear_resize_adjoint(const FeatureMap<T>& gout, std::size_t in_h,
                                      std::size_t in_w) {
  const auto ty = bilinear_taps(in_h, gout.height);
  const auto tx = bilinear_taps(in_w, gout.width);
  std::vector<double> acc(gout.channels * in_h * in_w, 0.0);
  for (std::size_t c = 0; c < gout.channels; ++c)
    for (std::size_t y = 0; y < gout.height; ++y)
      for (std::size_t xx = 0; xx < gout.width; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const double g = gout.at(c, y, xx);
        double* plane = &acc[c * in_h * in_w];
        plane[a.lo * in_w + b.lo] += g * (1.0 - a.frac) * (1.0 - b.frac);
        plane[a.lo * in_w + b.hi] += g * (1.0 - a.frac) * b.frac;
        plane[a.hi * in_w + b.lo] += g * a.frac * (1.0 - b.frac);
        plane[a.hi * in_w + b.hi] += g * a.frac * b.frac;
      }
  FeatureMap<T> out(gout.channels, in_h, in_w);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<T>(acc[i]);
  return out;
}

template <class T>
DenseBlockTrace<T> dense_block_trace(const FeatureMap<T>& x, const DenseBlockParamsT<T>& p) {
  p.validate();
  if (x.channels != p.channels)
    throw Error(ErrorCode::shape_mismatch, "input channels do not match dense block");
  DenseBlockTrace<T> t;
  t.conv = conv2d_3x3<T>(x, p.conv_w, p.conv_b);
  t.norm = group_norm<T>(t.conv, p.gn_gamma, p.gn_beta, p.groups, p.eps);
  t.out = relu(t.norm);
  return t;
}

template <class T>
void dense_block_backward(const FeatureMap<T>& x, const DenseBlockParamsT<T>& p,
                          const DenseBlockTrace<T>& trace, const FeatureMap<T>& gout,
                          FeatureMap<T>* gx, std::span<T> gparams) {
  const std::size_t c = p.channels;
  FeatureMap<T> g_norm = gout;
  for (std::size_t i = 0; i < g_norm.data.size(); ++i)
    if (!(trace.norm.data[i] > T(0))) g_norm.data[i] = T(0);
  auto gw = gparams.subspan(0, 9 * c * c);
  auto gb = gparams.subspan(9 * c * c, c);
  auto ggamma = gparams.subspan(9 * c * c + c, c);
  auto gbeta = gparams.subspan(9 * c * c + 2 * c, c);
  FeatureMap<T> g_conv;
  group_norm_backward<T>(trace.conv, p.gn_gamma, p.groups, p.eps, g_norm, &g_conv, ggamma, gbeta);
  conv2d_3x3_backward<T>(x, p.conv_w, g_conv, gx, gw, gb);
}

namespace {

template <class T>
FeatureMap<T> add(const FeatureMap<T>& a, const FeatureMap<T>& b) {
  FeatureMap<T> out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace

template <class T>
MfeTrace<T> mfe_forward_trace(const std::array<FeatureMap<T>, 3>& pyr, const MfeParamsT<T>& p) {
  p.validate();
  MfeTrace<T> t;
  for (std::size_t i = 0; i < 3; ++i) t.blocks[i] = dense_block_trace(pyr[i], p.blocks[i]);
  t.fused01 = add(t.blocks[1].out, bilinear_resize(t.blocks[0].out, pyr[1].height, pyr[1].width));
  t.out = add(t.blocks[2].out, bilinear_resize(t.fused01, pyr[2].height, pyr[2].width));
  return t;
}

MfeGradients mfe_backward(const std::array<FeatureMap<double>, 3>& pyr,
                          const MfeParamsT<double>& p, const MfeTrace<double>& trace,
                          const FeatureMap<double>& gout) {
  MfeGradients g;
  const std::size_t c = p.blocks[0].channels;
  for (auto& v : g.params) v.assign(DenseBlockParamsT<double>::flat_size(c), 0.0);
  // F_d = B2 + up(F01);  F01 = B1 + up(B0)
  dense_block_backward(pyr[2], p.blocks[2], trace.blocks[2], gout, &g.inputs[2],
                       std::span<double>(g.params[2]));
  const auto g01 = bilinear_resize_adjoint(gout, pyr[1].height, pyr[1].width);
  dense_block_backward(pyr[1], p.blocks[1], trace.blocks[1], g01, &g.inputs[1],
                       std::span<double>(g.params[1]));
  const auto g0 = bilinear_resize_adjoint(g01, pyr[0].height, pyr[0].width);
  dense_block_backward(pyr[0], p.blocks[0], trace.blocks[0], g0, &g.inputs[0],
                       std::span<double>(g.params[0]));
  return g;
}

template <class T>
FeatureMap<T> mfe_logits(const FeatureMap<T>& fused, std::span<const T> emb, std::size_t rows,
                         double temperature) {
  const std::size_t C = fused.channels, P = fused.plane();
  if (rows > 0 && emb.size() != rows * C)
    throw Error(ErrorCode::shape_mismatch, "embedding width does not match F_d channels");
  if (!(temperature > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be > 0");
  FeatureMap<T> out(rows, fused.height, fused.width);
  parallel_for(P, [&](std::size_t p) {
    double nn = 0.0;
    for (std::size_t c = 0; c < C; ++c) nn += static_cast<double>(fused.data[c * P + p]) * fused.data[c * P + p];
    if (nn <= 0.0) return;
    const double inv = 1.0 / std::sqrt(nn);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += fused.data[c * P + p] * inv * emb[r * C + c];
      out.data[r * P + p] = static_cast<T>(dot / temperature);
    }
  });
  return out;
}

template <class T>
FeatureMap<T> mfe_logits_backward(const FeatureMap<T>& fused, std::span<const T> emb,
                                  std::size_t rows, double temperature,
                                  const FeatureMap<T>& gout) {
  const std::size_t C = fused.channels, P = fused.plane();
  FeatureMap<T> g(C, fused.height, fused.width);
  for (std::size_t p = 0; p < P; ++p) {
    double nn = 0.0;
    for (std::size_t c = 0; c < C; ++c) nn += static_cast<double>(fused.data[c * P + p]) * fused.data[c * P + p];
    if (nn <= 0.0) continue;
    const double norm = std::sqrt(nn);
    // d/df (fhat . e) = (e - (fhat . e) fhat) / |f|
    std::vector<double> acc(C, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double go = gout.data[r * P + p] / temperature;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += fused.data[c * P + p] / norm * emb[r * C + c];
      for (std::size_t c = 0; c < C; ++c)
        acc[c] += go * (emb[r * C + c] - dot * fused.data[c * P + p] / norm) / norm;
    }
    for (std::size_t c = 0; c < C; ++c) g.data[c * P + p] = static_cast<T>(acc[c]);
  }
  return g;
}

template <class U, class T>
MfeParamsT<U> cast_params(const MfeParamsT<T>& p) {
  MfeParamsT<U> out;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& b = p.blocks[i];
    auto& o = out.blocks[i];
    o.channels = b.channels;
    o.groups = b.groups;
    o.eps = b.eps;
    o.conv_w.assign(b.conv_w.begin(), b.conv_w.end());
    o.conv_b.assign(b.conv_b.begin(), b.conv_b.end());
    o.gn_gamma.assign(b.gn_gamma.begin(), b.gn_gamma.end());
    o.gn_beta.assign(b.gn_beta.begin(), b.gn_beta.end());
  }
  return out;
}

#define SMSEG_INSTANTIATE(T)                                                                    \
  template struct DenseBlockParamsT<T>;                                                         \
  template struct MfeParamsT<T>;                                                                \
  template FeatureMap<T> conv2d_3x3<T>(const FeatureMap<T>&, std::span<const T>,               \
                                       std::span<const T>);                                     \
  template void conv2d_3x3_backward<T>(const FeatureMap<T>&, std::span<const T>,               \
                                       const FeatureMap<T>&, FeatureMap<T>*, std::span<T>,     \
                                       std::span<T>);                                           \
  template FeatureMap<T> group_norm<T>(const FeatureMap<T>&, std::span<const T>,               \
                                       std::span<const T>, std::size_t, double);                \
  template void group_norm_backward<T>(const FeatureMap<T>&, std::span<const T>, std::size_t, \
                                       double, const FeatureMap<T>&, FeatureMap<T>*,            \
                                       std::span<T>, std::span<T>);                             \
  template FeatureMap<T> relu<T>(const FeatureMap<T>&);                                         \
  template FeatureMap<T> bilinear_resize<T>(const FeatureMap<T>&, std::size_t, std::size_t);   \
  template FeatureMap<T> bilinear_resize_adjoint<T>(const FeatureMap<T>&, std::size_t,         \
                                                    std::size_t);                               \
  template DenseBlockTrace<T> dense_block_trace<T>(const FeatureMap<T>&,                       \
                                                   const DenseBlockParamsT<T>&);                \
  template void dense_block_backward<T>(const FeatureMap<T>&, const DenseBlockParamsT<T>&,     \
                                        const DenseBlockTrace<T>&, const FeatureMap<T>&,       \
                                        FeatureMap<T>*, std::span<T>);                          \
  template MfeTrace<T> mfe_forward_trace<T>(const std::array<FeatureMap<T>, 3>&,               \
                                            const MfeParamsT<T>&);                              \
  template FeatureMap<T> mfe_logits<T>(const FeatureMap<T>&, std::span<const T>, std::size_t,  \
                                       double);                                                 \
  template FeatureMap<T> mfe_logits_backward<T>(const FeatureMap<T>&, std::span<const T>,      \
                                                std::size_t, double, const FeatureMap<T>&);
SMSEG_INSTANTIATE(float)
SMSEG_INSTANTIATE(double)
#undef SMSEG_INSTANTIATE

template MfeParamsT<double> cast_params<double, float>(const MfeParamsT<float>&);
template MfeParamsT<float> cast_params<float, double>(const MfeParamsT<double>&);

// -- Tensor-facing API --------------------------------------------------------

FeatureMap<float> to_map(const Tensor& t) {
  if (t.rank() != 3 || t.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "expected a C x H x W f32 tensor");
  FeatureMap<float> m;
  m.channels = t.dim(0);
  m.height = t.dim(1);
  m.width = t.dim(2);
  m.data.assign(t.f32().begin(), t.f32().end());
  return m;
}

Tensor to_tensor(const FeatureMap<float>& m) {
  return Tensor::from_f32({m.channels, m.height, m.width}, m.data);
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto xm = to_map(x);
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3 || w.dim(1) != xm.channels)
    throw Error(ErrorCode::shape_mismatch, "conv weights must be Cout x Cin x 3 x 3");
  if (b.rank() != 1 || b.dim(0) != w.dim(0))
    throw Error(ErrorCode::shape_mismatch, "conv bias must have Cout entries");
  return to_tensor(conv2d_3x3<float>(xm, w.f32(), b.f32()));
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups,
                  double eps) {
  return to_tensor(group_norm<float>(to_map(x), gamma.f32(), beta.f32(), groups, eps));
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  return to_tensor(bilinear_resize<float>(to_map(x), out_h, out_w));
}

Tensor dense_block(const Tensor& x, const DenseBlockParams& p) {
  return to_tensor(dense_block<float>(to_map(x), p));
}

Tensor mfe_forward(const FeaturePyramid& pyramid, const MfeParams& p) {
  pyramid.validate();
  if (pyramid.f2.dim(0) != p.blocks[0].channels)
    throw Error(ErrorCode::shape_mismatch, "pyramid channels do not match MFE parameters");
  const std::array<FeatureMap<float>, 3> pyr{to_map(pyramid.f0), to_map(pyramid.f1),
                                             to_map(pyramid.f2)};
  return to_tensor(mfe_forward_trace<float>(pyr, p).out);
}

Tensor mfe_logits(const Tensor& fused, const JointEmbedding& E, double temperature) {
  const auto fm = to_map(fused);
  if (E.rows() > 0 && E.width() != fm.channels)
    throw Error(ErrorCode::shape_mismatch, "embedding width does not match F_d channels");
  const std::span<const float> e = E.rows() ? E.matrix.f32() : std::span<const float>{};
  return to_tensor(mfe_logits<float>(fm, e, E.rows(), temperature));
}

Tensor mfe_params_tensor(const MfeParams& p) {
  p.validate();
  const std::size_t c = p.blocks[0].channels, n = DenseBlockParams::flat_size(c);
  std::vector<float> data;
  data.reserve(3 * n);
  for (const auto& b : p.blocks) {
    auto f = b.flatten();
    data.insert(data.end(), f.begin(), f.end());
  }
  return Tensor::from_f32({3, n}, std::move(data));
}

MfeParams mfe_params_from_tensor(const Tensor& t, std::size_t groups, double eps) {
  if (t.rank() != 2 || t.dim(0) != 3 || t.dtype() != DType::f32)
    throw Error(ErrorCode::shape_mismatch, "MFE parameters must be a 3 x (9C^2 + 3C) f32 tensor");
  const std::size_t n = t.dim(1);
  std::size_t c = 0;
  while (DenseBlockParams::flat_size(c) < n) ++c;
  if (DenseBlockParams::flat_size(c) != n)
    throw Error(ErrorCode::shape_mismatch, "row length is not 9C^2 + 3C for any C");
  MfeParams p;
  for (std::size_t i = 0; i < 3; ++i)
    p.blocks[i] = DenseBlockParams::unflatten(c, t.f32().subspan(i * n, n), groups, eps);
  p.validate();
  return p;
}

MfeParams random_mfe_params(std::size_t channels, std::uint64_t seed, double sigma,
                            std::size_t groups) {
  const PhiloxStream rng(seed);
  MfeParams p;
  std::uint64_t idx = 0;
  for (auto& b : p.blocks) {
    b.channels = channels;
    b.groups = groups;
    b.conv_w.resize(9 * channels * channels);
    for (auto& v : b.conv_w) v = static_cast<float>(sigma * rng.normal(idx++));
    b.conv_b.assign(channels, 0.0f);
    b.gn_gamma.assign(channels, 1.0f);
    b.gn_beta.assign(channels, 0.0f);
  }
  p.validate();
  return p;
}

FeaturePyramid pyramid_from_finest(const Tensor& finest, std::size_t ratio) {
  const auto m = to_map(finest);
  if (ratio < 1 || m.height % (ratio * ratio) || m.width % (ratio * ratio))
    throw Error(ErrorCode::shape_mismatch, "finest level is not divisible by ratio^2");
  FeaturePyramid pyr;
  pyr.ratio = ratio;
  pyr.f2 = finest;
  pyr.f1 = to_tensor(bilinear_resize<float>(m, m.height / ratio, m.width / ratio));
  pyr.f0 = to_tensor(bilinear_resize<float>(m, m.height / (ratio * ratio), m.width / (ratio * ratio)));
  return pyr;
}

}  // namespace smseg
