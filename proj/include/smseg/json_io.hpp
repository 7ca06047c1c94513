#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "smseg/assignment.hpp"
#include "smseg/gradcheck.hpp"
#include "smseg/losses.hpp"
#include "smseg/metrics.hpp"

namespace smseg {

using Json = nlohmann::ordered_json;

Json read_json(const std::filesystem::path& path);
/// Two-space indent, trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);

/// {"class_ids": [...], "masks": "<file>.smtf"}; the mask path is resolved
/// relative to the JSON file. An empty id list may omit "masks".
TargetSet load_targets(const std::filesystem::path& path);
/// Writes the masks beside the JSON as masks_file.
void save_targets(const std::filesystem::path& path, const TargetSet& t,
                  const std::string& masks_file);

Json to_json(const Assignment& a);
Assignment assignment_from_json(const Json& j);

Json to_json(const CostWeights& w);
CostWeights weights_from_json(const Json& j);

Json to_json(const MatchedLossBreakdown& b);
Json to_json(const MetricsReport& r, const EvalConfig& cfg);
Json to_json(const GradCheckResult& r);

}  // namespace smseg
