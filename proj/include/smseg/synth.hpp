#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "smseg/tensor.hpp"

namespace smseg {

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t blobs = 4;
  std::size_t seen = 2;  // blobs 0 .. seen-1 are labelled, the rest ignored
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t dim = 16;
  double noise = 0.05;

  void validate() const;
};

/// Background is class 0 (seen); blob b is class b + 1.
struct SynthFixture {
  Tensor features;           // D x H x W
  Tensor seen_labels;        // H x W u8, unseen blob pixels = 255
  Tensor ignore;             // H x W u8, 1 on unseen blob pixels
  Tensor seen_embeddings;    // (1 + seen) x D
  Tensor unseen_embeddings;  // (blobs - seen) x D
  Tensor gt;                 // H x W u8
  Tensor blob_masks;         // blobs x H x W u8
  std::vector<int> seen_ids;
  std::vector<int> unseen_ids;
  std::size_t num_classes = 0;
};

/// Discs on a regular grid with seed-jittered centres, each filled with a
/// distinct orthonormal direction plus N(0, noise^2) per channel.
SynthFixture gen_synth(const SynthSpec& spec);

/// Writes O, Ys, ignore, As, Au, gt, blobs (.smtf) and meta.json into dir.
void save_synth(const SynthFixture& fx, const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace smseg
