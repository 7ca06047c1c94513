#include "smseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "smseg/error.hpp"
#include "smseg/losses.hpp"
#include "smseg/mfe.hpp"
#include "smseg/philox.hpp"

namespace smseg {

std::vector<double> numeric_gradient(const ScalarFn& f, std::vector<double> x, double h,
                                     Stencil stencil) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    auto at = [&](double offset) {
      x[i] = x0 + offset;
      return f(x);
    };
    if (stencil == Stencil::two_point)
      g[i] = (at(h) - at(-h)) / (2.0 * h);
    else
      g[i] = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
    x[i] = x0;
  }
  return g;
}

double max_relative_error(std::span<const double> numeric, std::span<const double> analytic) {
  if (numeric.size() != analytic.size())
    throw Error(ErrorCode::shape_mismatch, "gradient sizes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = numeric[i], b = analytic[i];
    const double den = std::max({std::abs(a), std::abs(b), 1e-8});
    worst = std::max(worst, std::abs(a - b) / den);
  }
  return worst;
}

namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double normal() { return rng_.normal(i_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * rng_.uniform(i_++); }
  std::vector<double> normals(std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * normal();
    return v;
  }
  std::vector<double> binary(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(0.0, 1.0) < 0.5 ? 0.0 : 1.0;
    return v;
  }

 private:
  PhiloxStream rng_;
  std::uint64_t i_ = 0;
};

struct Problem {
  std::vector<double> x;
  ScalarFn f;
  std::function<std::vector<double>(std::span<const double>)> grad;
};

using Map = FeatureMap<double>;

Map map_from(std::span<const double> v, std::size_t c, std::size_t h, std::size_t w) {
  Map m(c, h, w);
  std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(c * h * w), m.data.begin());
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> cat(std::initializer_list<std::span<const double>> parts) {
  std::vector<double> out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Problem conv_problem(std::uint64_t seed) {
  constexpr std::size_t ci = 2, co = 3, H = 4, W = 5;
  Draw d(seed);
  auto x = d.normals(ci * H * W);
  auto w = d.normals(co * ci * 9, 0.5);
  auto b = d.normals(co);
  auto target = d.normals(co * H * W);
  const std::size_t nx = x.size(), nw = w.size();
  auto split = [=](std::span<const double> v) {
    return std::tuple{map_from(v, ci, H, W), v.subspan(nx, nw), v.subspan(nx + nw, co)};
  };
  Problem p;
  p.x = cat({x, w, b});
  p.f = [=](std::span<const double> v) {
    auto [xm, wv, bv] = split(v);
    const auto out = conv2d_3x3<double>(xm, wv, bv);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += 0.5 * std::pow(out.data[i] - target[i], 2);
    return s;
  };
  p.grad = [=](std::span<const double> v) {
    auto [xm, wv, bv] = split(v);
    auto gout = conv2d_3x3<double>(xm, wv, bv);
    for (std::size_t i = 0; i < gout.data.size(); ++i) gout.data[i] -= target[i];
    Map gx;
    std::vector<double> gw(nw), gb(co);
    conv2d_3x3_backward<double>(xm, wv, gout, &gx, gw, gb);
    return cat({gx.data, gw, gb});
  };
  return p;
}

Problem group_norm_problem(std::uint64_t seed) {
  constexpr std::size_t C = 4, G = 2, H = 3, W = 3;
  Draw d(seed);
  auto x = d.normals(C * H * W);
  std::vector<double> gamma(C), beta(C);
  for (auto& g : gamma) g = 1.0 + 0.2 * d.normal();
  for (auto& b : beta) b = 0.2 * d.normal();
  auto r = d.normals(C * H * W);
  const std::size_t nx = x.size();
  Problem p;
  p.x = cat({x, gamma, beta});
  p.f = [=](std::span<const double> v) {
    const auto out = group_norm<double>(map_from(v, C, H, W), v.subspan(nx, C), v.subspan(nx + C, C), G, 1e-5);
    return dot(out.data, r);
  };
  p.grad = [=](std::span<const double> v) {
    Map gout(C, H, W);
    gout.data = r;
    Map gx;
    std::vector<double> gg(C), gb(C);
    group_norm_backward<double>(map_from(v, C, H, W), v.subspan(nx, C), G, 1e-5, gout, &gx, gg, gb);
    return cat({gx.data, gg, gb});
  };
  return p;
}

Problem relu_problem(std::uint64_t seed) {
  constexpr std::size_t C = 2, H = 3, W = 3;
  Draw d(seed);
  auto x = d.normals(C * H * W);
  for (auto& v : x) v += v >= 0.0 ? 0.1 : -0.1;
  auto r = d.normals(C * H * W);
  Problem p;
  p.x = x;
  p.f = [=](std::span<const double> v) { return dot(relu(map_from(v, C, H, W)).data, r); };
  p.grad = [=](std::span<const double> v) {
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) g[i] = v[i] > 0.0 ? r[i] : 0.0;
    return g;
  };
  return p;
}

Problem bilinear_problem(std::uint64_t seed) {
  constexpr std::size_t C = 2, H = 3, W = 4;
  const std::size_t oh = seed % 2 ? 5 : 2, ow = seed % 3 ? 6 : 3;
  Draw d(seed);
  auto x = d.normals(C * H * W);
  auto r = d.normals(C * oh * ow);
  Problem p;
  p.x = x;
  p.f = [=](std::span<const double> v) {
    return dot(bilinear_resize(map_from(v, C, H, W), oh, ow).data, r);
  };
  p.grad = [=](std::span<const double>) {
    Map g(C, oh, ow);
    g.data = r;
    return bilinear_resize_adjoint(g, H, W).data;
  };
  return p;
}

DenseBlockParamsT<double> random_block(Draw& d, std::size_t C, std::size_t groups) {
  DenseBlockParamsT<double> b;
  b.channels = C;
  b.groups = groups;
  b.conv_w = d.normals(9 * C * C, 0.3);
  b.conv_b = d.normals(C, 0.1);
  b.gn_gamma.resize(C);
  for (auto& g : b.gn_gamma) g = 1.0 + 0.2 * d.normal();
  b.gn_beta = d.normals(C, 0.2);
  return b;
}

bool away_from_kinks(const Map& pre) {
  for (double v : pre.data)
    if (std::abs(v) < 0.05) return false;
  return true;
}

// Group norm over a nearly constant group behaves like a step function.
bool well_spread(const Map& conv, std::size_t groups) {
  const std::size_t n = conv.data.size() / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = g * n; i < (g + 1) * n; ++i) s += conv.data[i];
    const double mean = s / static_cast<double>(n);
    for (std::size_t i = g * n; i < (g + 1) * n; ++i) ss += (conv.data[i] - mean) * (conv.data[i] - mean);
    if (ss / static_cast<double>(n) < 0.01) return false;
  }
  return true;
}

constexpr int kMaxAttempts = 10000;

Problem dense_block_problem(std::uint64_t seed) {
  constexpr std::size_t C = 4, G = 2, H = 4, W = 4;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Draw d(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(attempt));
    auto x = d.normals(C * H * W);
    const auto blk = random_block(d, C, G);
    auto r = d.normals(C * H * W);
    const auto tr0 = dense_block_trace(map_from(x, C, H, W), blk);
    if (!away_from_kinks(tr0.norm) || !well_spread(tr0.conv, G)) continue;
    const std::size_t nx = x.size(), np = DenseBlockParamsT<double>::flat_size(C);
    auto unpack = [=](std::span<const double> v) {
      return DenseBlockParamsT<double>::unflatten(C, v.subspan(nx, np), G, 1e-5);
    };
    Problem p;
    p.x = cat({x, blk.flatten()});
    p.f = [=](std::span<const double> v) {
      return dot(dense_block(map_from(v, C, H, W), unpack(v)).data, r);
    };
    p.grad = [=](std::span<const double> v) {
      const auto xm = map_from(v, C, H, W);
      const auto prm = unpack(v);
      const auto tr = dense_block_trace(xm, prm);
      Map gout(C, H, W);
      gout.data = r;
      Map gx;
      std::vector<double> gp(np);
      dense_block_backward<double>(xm, prm, tr, gout, &gx, gp);
      return cat({gx.data, gp});
    };
    return p;
  }
  throw Error(ErrorCode::invalid_argument, "could not draw a kink-free dense block fixture");
}

Problem mfe_problem(std::uint64_t seed) {
  constexpr std::size_t C = 2, G = 1;
  const std::array<std::size_t, 3> side{1, 2, 4};
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Draw d(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(attempt));
    std::array<std::vector<double>, 3> levels;
    for (std::size_t i = 0; i < 3; ++i) levels[i] = d.normals(C * side[i] * side[i]);
    MfeParamsT<double> prm;
    for (auto& b : prm.blocks) b = random_block(d, C, G);
    const auto y = d.binary(C * 16);

    auto unpack = [=](std::span<const double> v) {
      std::array<Map, 3> pyr;
      std::size_t off = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        pyr[i] = map_from(v.subspan(off), C, side[i], side[i]);
        off += C * side[i] * side[i];
      }
      MfeParamsT<double> q;
      const std::size_t np = DenseBlockParamsT<double>::flat_size(C);
      for (std::size_t i = 0; i < 3; ++i) {
        q.blocks[i] = DenseBlockParamsT<double>::unflatten(C, v.subspan(off, np), G, 1e-5);
        off += np;
      }
      return std::pair{pyr, q};
    };
    std::vector<double> x;
    for (const auto& l : levels) x.insert(x.end(), l.begin(), l.end());
    for (const auto& b : prm.blocks) {
      const auto f = b.flatten();
      x.insert(x.end(), f.begin(), f.end());
    }
    {
      auto [pyr, q] = unpack(x);
      const auto tr = mfe_forward_trace(pyr, q);
      bool ok = true;
      for (const auto& b : tr.blocks) ok = ok && away_from_kinks(b.norm) && well_spread(b.conv, G);
      if (!ok) continue;
    }

    // mean over channels of dice(sigmoid(F_d[c]), Y[c])
    auto loss = [=](const Map& fd) {
      const std::size_t P = fd.plane();
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> m(P);
        for (std::size_t i = 0; i < P; ++i) m[i] = sigmoid(fd.data[c * P + i]);
        s += dice_loss<double, double>(m, std::span(y).subspan(c * P, P), 1.0);
      }
      return s / static_cast<double>(C);
    };
    Problem p;
    p.x = x;
    p.f = [=](std::span<const double> v) {
      auto [pyr, q] = unpack(v);
      return loss(mfe_forward_trace(pyr, q).out);
    };
    p.grad = [=](std::span<const double> v) {
      auto [pyr, q] = unpack(v);
      const auto tr = mfe_forward_trace(pyr, q);
      const std::size_t P = tr.out.plane();
      Map gout(C, side[2], side[2]);
      for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> m(P), g(P);
        for (std::size_t i = 0; i < P; ++i) m[i] = sigmoid(tr.out.data[c * P + i]);
        dice_grad<double, double>(m, std::span(y).subspan(c * P, P), 1.0, g);
        for (std::size_t i = 0; i < P; ++i)
          gout.data[c * P + i] = g[i] * m[i] * (1.0 - m[i]) / static_cast<double>(C);
      }
      const auto g = mfe_backward(pyr, q, tr, gout);
      std::vector<double> out;
      for (const auto& gi : g.inputs) out.insert(out.end(), gi.data.begin(), gi.data.end());
      for (const auto& gp : g.params) out.insert(out.end(), gp.begin(), gp.end());
      return out;
    };
    return p;
  }
  throw Error(ErrorCode::invalid_argument, "could not draw a kink-free MFE fixture");
}

Problem mfe_logits_problem(std::uint64_t seed) {
  constexpr std::size_t C = 3, H = 3, W = 3, N = 4;
  constexpr double temp = 0.07;
  Draw d(seed);
  auto f = d.normals(C * H * W);
  auto e = d.normals(N * C);
  for (std::size_t n = 0; n < N; ++n) {
    const double nn = std::sqrt(dot(std::span(e).subspan(n * C, C), std::span(e).subspan(n * C, C)));
    for (std::size_t c = 0; c < C; ++c) e[n * C + c] /= nn;
  }
  auto r = d.normals(N * H * W);
  Problem p;
  p.x = f;
  p.f = [=](std::span<const double> v) {
    return dot(mfe_logits<double>(map_from(v, C, H, W), e, N, temp).data, r);
  };
  p.grad = [=](std::span<const double> v) {
    Map g(N, H, W);
    g.data = r;
    return mfe_logits_backward<double>(map_from(v, C, H, W), e, N, temp, g).data;
  };
  return p;
}

Problem mask_problem(std::uint64_t seed, int kind) {
  constexpr std::size_t n = 12;
  Draw d(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = kind == 2 ? 2.0 * d.normal() : d.uniform(0.05, 0.95);
  const auto y = d.binary(n);
  Problem p;
  p.x = x;
  p.f = [=](std::span<const double> v) {
    if (kind == 0) return dice_loss<double, double>(v, y, 1.0);
    if (kind == 1) return iou_loss<double, double>(v, y, 1.0);
    return bce_mask<double, double>(v, y);
  };
  p.grad = [=](std::span<const double> v) {
    std::vector<double> g(n);
    if (kind == 0) dice_grad<double, double>(v, y, 1.0, g);
    else if (kind == 1) iou_grad<double, double>(v, y, 1.0, g);
    else bce_grad<double, double>(v, y, g);
    return g;
  };
  return p;
}

Problem focal_problem(std::uint64_t seed) {
  constexpr std::size_t n = 5;
  constexpr double alpha = 0.25, gamma = 2.0;
  Draw d(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = d.uniform(0.05, 0.95);
  const std::optional<std::size_t> target =
      seed % (n + 1) == n ? std::nullopt : std::optional<std::size_t>(seed % (n + 1));
  Problem p;
  p.x = x;
  p.f = [=](std::span<const double> v) { return focal_loss<double>(v, target, alpha, gamma); };
  p.grad = [=](std::span<const double> v) {
    std::vector<double> g(n);
    focal_grad<double>(v, target, alpha, gamma, g);
    return g;
  };
  return p;
}

Problem map_loss_problem(std::uint64_t seed, bool focal) {
  constexpr std::size_t N = 4, P = 6;
  constexpr std::int32_t ignore = 255;
  Draw d(seed);
  auto x = d.normals(N * P, 1.5);
  std::vector<std::int32_t> labels(P);
  for (auto& l : labels) l = static_cast<std::int32_t>(d.uniform(0.0, 1.0) * N) % static_cast<std::int32_t>(N);
  labels[seed % P] = ignore;
  Problem p;
  p.x = x;
  p.f = [=](std::span<const double> v) {
    return focal ? focal_map<double>(v, N, labels, ignore, 0.25, 2.0)
                 : cross_entropy_map<double>(v, N, labels, ignore);
  };
  p.grad = [=](std::span<const double> v) {
    std::vector<double> g(N * P);
    if (focal) focal_map_grad<double>(v, N, labels, ignore, 0.25, 2.0, g);
    else cross_entropy_grad<double>(v, N, labels, ignore, g);
    return g;
  };
  return p;
}

Problem cosine_problem(std::uint64_t seed) {
  constexpr std::size_t n = 6;
  Draw d(seed);
  auto a = d.normals(n);
  auto b = d.normals(n);
  Problem p;
  p.x = a;
  p.f = [=](std::span<const double> v) { return cosine_distance<double>(v, b); };
  p.grad = [=](std::span<const double> v) {
    std::vector<double> g(n);
    cosine_distance_grad<double>(v, b, g);
    return g;
  };
  return p;
}

Problem class_similarity_problem(std::uint64_t seed) {
  constexpr std::size_t K = 3, N = 5, C = 4;
  Draw d(seed);
  auto V = d.normals(K * C);
  auto E = d.normals(N * C);
  for (std::size_t n = 0; n < N; ++n) {
    auto row = std::span(E).subspan(n * C, C);
    const double nn = std::sqrt(dot(row, row));
    for (auto& v : row) v /= nn;
  }
  auto r = d.normals(K * N);
  auto scores = [=](std::span<const double> v) {
    std::vector<double> s(K * N);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t m = 0; m < N; ++m)
        s[k * N + m] = sigmoid(dot(v.subspan(k * C, C), std::span(E).subspan(m * C, C)));
    return s;
  };
  Problem p;
  p.x = V;
  p.f = [=](std::span<const double> v) { return dot(scores(v), r); };
  p.grad = [=](std::span<const double> v) {
    const auto s = scores(v);
    std::vector<double> g(K * C, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t m = 0; m < N; ++m) {
        const double w = r[k * N + m] * s[k * N + m] * (1.0 - s[k * N + m]);
        for (std::size_t c = 0; c < C; ++c) g[k * C + c] += w * E[m * C + c];
      }
    return g;
  };
  return p;
}

Problem make_problem(const std::string& op, std::uint64_t seed) {
  if (op == "conv") return conv_problem(seed);
  if (op == "group_norm") return group_norm_problem(seed);
  if (op == "relu") return relu_problem(seed);
  if (op == "bilinear") return bilinear_problem(seed);
  if (op == "dense_block") return dense_block_problem(seed);
  if (op == "mfe") return mfe_problem(seed);
  if (op == "mfe_logits") return mfe_logits_problem(seed);
  if (op == "dice") return mask_problem(seed, 0);
  if (op == "iou") return mask_problem(seed, 1);
  if (op == "bce") return mask_problem(seed, 2);
  if (op == "focal") return focal_problem(seed);
  if (op == "ce") return map_loss_problem(seed, false);
  if (op == "focal_map") return map_loss_problem(seed, true);
  if (op == "cosine") return cosine_problem(seed);
  if (op == "class_similarity") return class_similarity_problem(seed);
  throw Error(ErrorCode::unsupported, "no analytic gradient for op '" + op + "'");
}

}  // namespace

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> ops{
      "conv", "group_norm", "relu", "bilinear", "dense_block", "mfe", "mfe_logits", "dice",
      "iou",  "bce",        "focal", "ce",      "focal_map",   "cosine", "class_similarity"};
  return ops;
}

GradCheckResult grad_check(const std::string& op, std::uint64_t seed, double h, Stencil stencil) {
  if (!(h > 0.0)) throw Error(ErrorCode::invalid_argument, "step must be > 0");
  const Problem p = make_problem(op, seed);
  const auto numeric = numeric_gradient(p.f, p.x, h, stencil);
  const auto analytic = p.grad(p.x);
  GradCheckResult r;
  r.op = op;
  r.seed = seed;
  r.step = h;
  r.parameters = p.x.size();
  r.max_rel_error = max_relative_error(numeric, analytic);
  return r;
}

}  // namespace smseg
