#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smseg/clustering.hpp"
#include "smseg/decoder.hpp"
#include "smseg/losses.hpp"
#include "smseg/matcher.hpp"
#include "smseg/metrics.hpp"

namespace smseg {

struct PipelineConfig {
  // [input]; relative paths resolve against the config file's directory
  std::filesystem::path features;
  std::filesystem::path seen_labels;
  std::filesystem::path ignore;
  std::filesystem::path seen_embeddings;
  std::filesystem::path unseen_embeddings;  // optional
  std::filesystem::path candidate_embeddings;  // optional external C_u
  std::filesystem::path gt;
  std::vector<int> seen_ids;
  std::vector<int> unseen_ids;
  std::size_t num_classes = 0;  // 0: max id + 1
  int ignore_id = 255;

  // [cluster]
  WindowConfig windows;
  float tau = 0.9f;
  std::size_t min_area = 16;

  // [queries]
  std::size_t seen_queries = 100;
  std::size_t candidate_queries = 50;
  std::size_t random_queries = 50;
  std::uint64_t seed = 0;
  float sigma = 0.02f;
  float oracle_scale = 10.0f;

  // [decoder]
  std::size_t decoder_layers = 1;

  // [loss]
  CostWeights weights;

  // [mfe]
  std::uint64_t mfe_seed = 0;
  double mfe_sigma = 0.1;
  std::size_t mfe_groups = 8;
  double temperature = 0.07;
  std::size_t ratio = 2;

  // [run]
  int threads = 1;
  std::filesystem::path out_dir = "out";
};

/// INI-style file: [section] headers and key = value lines, '#' or ';' comments.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct PipelineResult {
  ClusterResult clusters;
  FusedMasks fused;
  CandidateMaskSet candidates;
  JointEmbedding E;
  TargetSet seen_targets;
  TargetSet candidate_targets;
  SplitMatchResult match;
  MatchedLossBreakdown matched;
  double cosine = 0.0;
  double mfe_ce = 0.0;
  double mfe_focal = 0.0;
  MetricsReport report;
  EvalConfig eval;
  Tensor labels;
};

/// cluster -> fuse -> restrict -> embed -> decode -> split_match -> losses ->
/// infer (+ random queries) -> eval. Every intermediate lands in cfg.out_dir.
/// Errors are rethrown with the failing stage's name.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace smseg
