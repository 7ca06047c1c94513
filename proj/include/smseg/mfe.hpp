#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "smseg/embeddings.hpp"
#include "smseg/tensor.hpp"

namespace smseg {

/// Channel-major C x H x W feature map in arbitrary precision.
template <class T>
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t plane() const { return height * width; }
  T& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  T at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

template <class T>
struct DenseBlockParamsT {
  std::size_t channels = 0;
  std::vector<T> conv_w;  // C x C x 3 x 3 (out, in, ky, kx)
  std::vector<T> conv_b;  // C
  std::vector<T> gn_gamma;
  std::vector<T> gn_beta;
  std::size_t groups = 8;
  double eps = 1e-5;

  void validate() const;
  /// conv_w, conv_b, gn_gamma, gn_beta concatenated.
  std::vector<T> flatten() const;
  static DenseBlockParamsT unflatten(std::size_t channels, std::span<const T> flat,
                                     std::size_t groups, double eps);
  static std::size_t flat_size(std::size_t channels) { return 9 * channels * channels + 3 * channels; }
};

using DenseBlockParams = DenseBlockParamsT<float>;

template <class T>
struct MfeParamsT {
  std::array<DenseBlockParamsT<T>, 3> blocks;

  void validate() const;
};

using MfeParams = MfeParamsT<float>;

/// Scale-ordered pyramid: f0 coarsest, f2 finest; f_i is f2 downscaled by
/// ratio^(2 - i).
struct FeaturePyramid {
  Tensor f0, f1, f2;
  std::size_t ratio = 2;

  void validate() const;
};

// -- Templated forward / backward kernels -----------------------------------

template <class T>
FeatureMap<T> conv2d_3x3(const FeatureMap<T>& x, std::span<const T> w, std::span<const T> b);

template <class T>
void conv2d_3x3_backward(const FeatureMap<T>& x, std::span<const T> w, const FeatureMap<T>& gout,
                         FeatureMap<T>* gx, std::span<T> gw, std::span<T> gb);

template <class T>
FeatureMap<T> group_norm(const FeatureMap<T>& x, std::span<const T> gamma, std::span<const T> beta,
                         std::size_t groups, double eps);

template <class T>
void group_norm_backward(const FeatureMap<T>& x, std::span<const T> gamma, std::size_t groups,
                         double eps, const FeatureMap<T>& gout, FeatureMap<T>* gx,
                         std::span<T> ggamma, std::span<T> gbeta);

template <class T>
FeatureMap<T> relu(const FeatureMap<T>& x);

/// Half-pixel-centre bilinear resize, no corner alignment, edge clamped.
template <class T>
FeatureMap<T> bilinear_resize(const FeatureMap<T>& x, std::size_t out_h, std::size_t out_w);

/// Adjoint of bilinear_resize: maps a gradient on the output grid back to the
/// input grid of size in_h x in_w.
template <class T>
FeatureMap<T> bilinear_resize_adjoint(const FeatureMap<T>& gout, std::size_t in_h,
                                      std::size_t in_w);

/// Intermediates of one dense block, kept for the backward pass.
template <class T>
struct DenseBlockTrace {
  FeatureMap<T> conv;  // conv output
  FeatureMap<T> norm;  // group-norm output (pre-activation)
  FeatureMap<T> out;   // relu(norm)
};

template <class T>
DenseBlockTrace<T> dense_block_trace(const FeatureMap<T>& x, const DenseBlockParamsT<T>& p);

template <class T>
FeatureMap<T> dense_block(const FeatureMap<T>& x, const DenseBlockParamsT<T>& p) {
  return dense_block_trace(x, p).out;
}

/// Backward through one block; gparams is laid out like DenseBlockParamsT::flatten.
template <class T>
void dense_block_backward(const FeatureMap<T>& x, const DenseBlockParamsT<T>& p,
                          const DenseBlockTrace<T>& trace, const FeatureMap<T>& gout,
                          FeatureMap<T>* gx, std::span<T> gparams);

template <class T>
struct MfeTrace {
  std::array<DenseBlockTrace<T>, 3> blocks;
  FeatureMap<T> fused01;  // dense_block(F1) + resize(dense_block(F0))
  FeatureMap<T> out;      // F_d
};

template <class T>
MfeTrace<T> mfe_forward_trace(const std::array<FeatureMap<T>, 3>& pyramid,
                              const MfeParamsT<T>& p);

struct MfeGradients {
  std::array<FeatureMap<double>, 3> inputs;
  std::array<std::vector<double>, 3> params;  // per block, flatten() layout
};

MfeGradients mfe_backward(const std::array<FeatureMap<double>, 3>& pyramid,
                          const MfeParamsT<double>& p, const MfeTrace<double>& trace,
                          const FeatureMap<double>& gout);

/// logits[n, y, x] = normalize(F_d[:, y, x]) . E[n] / temperature
template <class T>
FeatureMap<T> mfe_logits(const FeatureMap<T>& fused, std::span<const T> embeddings,
                         std::size_t rows, double temperature);

template <class T>
FeatureMap<T> mfe_logits_backward(const FeatureMap<T>& fused, std::span<const T> embeddings,
                                  std::size_t rows, double temperature,
                                  const FeatureMap<T>& gout);

// -- Tensor-facing f32 API ---------------------------------------------------

FeatureMap<float> to_map(const Tensor& t);
Tensor to_tensor(const FeatureMap<float>& m);

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups,
                  double eps = 1e-5);
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor dense_block(const Tensor& x, const DenseBlockParams& p);
Tensor mfe_forward(const FeaturePyramid& pyramid, const MfeParams& p);
Tensor mfe_logits(const Tensor& fused, const JointEmbedding& E, double temperature = 0.07);

/// MFE parameters as a 3 x (9C^2 + 3C) f32 tensor and back.
Tensor mfe_params_tensor(const MfeParams& p);
MfeParams mfe_params_from_tensor(const Tensor& t, std::size_t groups = 8, double eps = 1e-5);

/// Deterministic N(0, sigma^2) convolution weights, unit gamma, zero bias/beta.
MfeParams random_mfe_params(std::size_t channels, std::uint64_t seed, double sigma = 0.1,
                            std::size_t groups = 8);

/// Builds a three-level pyramid from a single map by bilinear downscaling.
FeaturePyramid pyramid_from_finest(const Tensor& finest, std::size_t ratio = 2);

template <class U, class T>
MfeParamsT<U> cast_params(const MfeParamsT<T>& p);

}  // namespace smseg
