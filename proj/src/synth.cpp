#include "smseg/synth.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "smseg/error.hpp"
#include "smseg/json_io.hpp"
#include "smseg/philox.hpp"

namespace smseg {

namespace {

constexpr std::uint64_t kJitterBase = 1ull << 40;
constexpr std::uint64_t kNoiseBase = 1ull << 41;

std::vector<std::vector<double>> orthonormal_directions(const PhiloxStream& rng, std::size_t n,
                                                        std::size_t d) {
  std::vector<std::vector<double>> dirs;
  std::uint64_t idx = 0;
  while (dirs.size() < n) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal(idx++);
    for (const auto& u : dirs) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
    }
    double nn = 0.0;
    for (double x : v) nn += x * x;
    nn = std::sqrt(nn);
    if (nn < 1e-6) continue;
    for (auto& x : v) x /= nn;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

Tensor rows_tensor(const std::vector<std::vector<double>>& dirs, std::size_t begin,
                   std::size_t end) {
  const std::size_t d = dirs.empty() ? 0 : dirs[0].size();
  std::vector<float> data;
  for (std::size_t i = begin; i < end; ++i)
    for (double x : dirs[i]) data.push_back(static_cast<float>(x));
  return Tensor::from_f32({end - begin, d}, std::move(data));
}

}  // namespace

void SynthSpec::validate() const {
  if (blobs == 0) throw Error(ErrorCode::invalid_argument, "need at least one blob");
  if (seen > blobs) throw Error(ErrorCode::invalid_argument, "more seen blobs than blobs");
  if (dim < blobs + 1)
    throw Error(ErrorCode::invalid_argument, "feature dim " + std::to_string(dim) +
                                                 " cannot hold " + std::to_string(blobs + 1) +
                                                 " orthogonal directions");
  if (blobs + 1 > 255) throw Error(ErrorCode::capacity, "too many classes for a u8 label map");
  if (!(noise >= 0.0)) throw Error(ErrorCode::invalid_argument, "noise must be >= 0");
  if (height == 0 || width == 0) throw Error(ErrorCode::invalid_argument, "empty image");
}

SynthFixture gen_synth(const SynthSpec& spec) {
  spec.validate();
  const std::size_t B = spec.blobs, H = spec.height, W = spec.width, D = spec.dim, P = H * W;
  std::size_t grid = 1;
  while (grid * grid < B) ++grid;
  const double cell_h = static_cast<double>(H) / static_cast<double>(grid);
  const double cell_w = static_cast<double>(W) / static_cast<double>(grid);
  const int radius = static_cast<int>(0.3 * std::min(cell_h, cell_w));
  if (radius < 3)
    throw Error(ErrorCode::capacity, std::to_string(B) + " blobs do not fit in a " +
                                         std::to_string(H) + "x" + std::to_string(W) + " image");

  const PhiloxStream rng(spec.seed);
  const auto dirs = orthonormal_directions(rng, B + 1, D);

  std::vector<std::uint8_t> gt(P, 0), blob_masks(B * P, 0);
  const double margin_y = cell_h / 2.0 - radius - 1.0, margin_x = cell_w / 2.0 - radius - 1.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double jy = (2.0 * rng.uniform(kJitterBase + 2 * b) - 1.0) * std::max(margin_y, 0.0);
    const double jx = (2.0 * rng.uniform(kJitterBase + 2 * b + 1) - 1.0) * std::max(margin_x, 0.0);
    const long cy = std::lround(cell_h * (static_cast<double>(b / grid) + 0.5) + jy);
    const long cx = std::lround(cell_w * (static_cast<double>(b % grid) + 0.5) + jx);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const long dy = static_cast<long>(y) - cy, dx = static_cast<long>(x) - cx;
        if (dy * dy + dx * dx <= static_cast<long>(radius) * radius) {
          gt[y * W + x] = static_cast<std::uint8_t>(b + 1);
          blob_masks[b * P + y * W + x] = 1;
        }
      }
  }

  std::vector<float> feat(D * P);
  for (std::size_t p = 0; p < P; ++p) {
    const auto& dir = dirs[gt[p]];
    for (std::size_t c = 0; c < D; ++c) {
      double v = dir[c];
      if (spec.noise > 0.0) v += spec.noise * rng.normal(kNoiseBase + p * D + c);
      feat[c * P + p] = static_cast<float>(v);
    }
  }

  SynthFixture fx;
  fx.num_classes = B + 1;
  for (std::size_t c = 0; c <= spec.seen; ++c) fx.seen_ids.push_back(static_cast<int>(c));
  for (std::size_t c = spec.seen + 1; c <= B; ++c) fx.unseen_ids.push_back(static_cast<int>(c));
  std::vector<std::uint8_t> ys(P), ign(P, 0);
  for (std::size_t p = 0; p < P; ++p) {
    const bool unseen = gt[p] > spec.seen;
    ign[p] = unseen;
    ys[p] = unseen ? 255 : gt[p];
  }
  fx.features = Tensor::from_f32({D, H, W}, std::move(feat));
  fx.seen_labels = Tensor::from_u8({H, W}, std::move(ys));
  fx.ignore = Tensor::from_u8({H, W}, std::move(ign));
  fx.seen_embeddings = rows_tensor(dirs, 0, spec.seen + 1);
  fx.unseen_embeddings = rows_tensor(dirs, spec.seen + 1, B + 1);
  fx.gt = Tensor::from_u8({H, W}, std::move(gt));
  fx.blob_masks = Tensor::from_u8({B, H, W}, std::move(blob_masks));
  return fx;
}

void save_synth(const SynthFixture& fx, const SynthSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_tensor(fx.features, dir / "O.smtf");
  save_tensor(fx.seen_labels, dir / "Ys.smtf");
  save_tensor(fx.ignore, dir / "ignore.smtf");
  save_tensor(fx.seen_embeddings, dir / "As.smtf");
  save_tensor(fx.unseen_embeddings, dir / "Au.smtf");
  save_tensor(fx.gt, dir / "gt.smtf");
  save_tensor(fx.blob_masks, dir / "blobs.smtf");
  nlohmann::ordered_json meta;
  meta["seed"] = spec.seed;
  meta["blobs"] = spec.blobs;
  meta["seen_blobs"] = spec.seen;
  meta["height"] = spec.height;
  meta["width"] = spec.width;
  meta["dim"] = spec.dim;
  meta["noise"] = spec.noise;
  meta["num_classes"] = fx.num_classes;
  meta["seen_ids"] = fx.seen_ids;
  meta["unseen_ids"] = fx.unseen_ids;
  meta["ignore_id"] = 255;
  write_json(dir / "meta.json", meta);
}

}  // namespace smseg
