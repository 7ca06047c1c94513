#include "smseg/json_io.hpp"

#include <fstream>

#include "smseg/error.hpp"
#include "smseg/tensor.hpp"

namespace smseg {

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

TargetSet load_targets(const std::filesystem::path& path) {
  const Json j = read_json(path);
  try {
    auto ids = j.at("class_ids").get<std::vector<std::size_t>>();
    if (ids.empty() && !j.contains("masks")) return {};
    const auto mask_path = path.parent_path() / j.at("masks").get<std::string>();
    Tensor masks = load_tensor(mask_path);
    if (ids.empty() && masks.numel() == 0) {
      TargetSet t;
      if (masks.rank() == 3) t.masks = masks;
      return t;
    }
    return make_targets(std::move(ids), std::move(masks));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
}

void save_targets(const std::filesystem::path& path, const TargetSet& t,
                  const std::string& masks_file) {
  save_tensor(t.masks, path.parent_path() / masks_file);
  Json j;
  j["class_ids"] = t.class_ids;
  j["masks"] = masks_file;
  write_json(path, j);
}

namespace {

Group group_from_string(const std::string& s) {
  if (s == "seen") return Group::seen;
  if (s == "candidate") return Group::candidate;
  if (s == "combined") return Group::combined;
  throw Error(ErrorCode::config, "unknown group '" + s + "'");
}

}  // namespace

Json to_json(const Assignment& a) {
  Json pairs = Json::array();
  for (const auto& p : a.pairs)
    pairs.push_back({{"q", p.query}, {"t", p.target}, {"cost", static_cast<double>(p.cost)},
                     {"group", to_string(p.group)}});
  Json j;
  j["pairs"] = std::move(pairs);
  j["unmatched"] = a.unmatched_queries;
  j["total_cost"] = a.total_cost();
  return j;
}

Assignment assignment_from_json(const Json& j) {
  try {
    Assignment a;
    a.group = Group::combined;
    for (const auto& p : j.at("pairs"))
      a.pairs.push_back({p.at("q").get<std::size_t>(), p.at("t").get<std::size_t>(),
                         p.at("cost").get<float>(), group_from_string(p.at("group").get<std::string>())});
    a.unmatched_queries = j.at("unmatched").get<std::vector<std::size_t>>();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("assignment JSON: ") + e.what());
  }
}

Json to_json(const CostWeights& w) {
  Json j;
  j["w_cls"] = w.w_cls;
  j["w_bce"] = w.w_bce;
  j["w_dice"] = w.w_dice;
  j["w_iou"] = w.w_iou;
  j["focal_alpha"] = w.focal_alpha;
  j["focal_gamma"] = w.focal_gamma;
  j["use_iou_in_loss"] = w.use_iou_in_loss;
  j["eps"] = w.eps;
  return j;
}

CostWeights weights_from_json(const Json& j) {
  CostWeights w;
  if (!j.is_object()) throw Error(ErrorCode::config, "weights must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "w_cls") w.w_cls = value.get<float>();
      else if (key == "w_bce") w.w_bce = value.get<float>();
      else if (key == "w_dice") w.w_dice = value.get<float>();
      else if (key == "w_iou") w.w_iou = value.get<float>();
      else if (key == "focal_alpha") w.focal_alpha = value.get<float>();
      else if (key == "focal_gamma") w.focal_gamma = value.get<float>();
      else if (key == "use_iou_in_loss") w.use_iou_in_loss = value.get<bool>();
      else if (key == "eps") w.eps = value.get<float>();
      else throw Error(ErrorCode::config, "unknown weight '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, "weight '" + key + "': " + e.what());
    }
  }
  w.validate();
  return w;
}

Json to_json(const MatchedLossBreakdown& b) {
  Json j;
  j["cls"] = b.cls;
  j["bce"] = b.bce;
  j["dice"] = b.dice;
  j["iou"] = b.iou;
  j["no_object"] = b.no_object;
  j["matched"] = b.matched;
  j["unmatched"] = b.unmatched;
  j["total"] = b.total();
  return j;
}

Json to_json(const MetricsReport& r, const EvalConfig& cfg) {
  Json per = Json::array();
  for (const auto& v : r.per_class_iou) per.push_back(v ? Json(*v) : Json(nullptr));
  Json j;
  j["num_classes"] = cfg.num_classes;
  j["seen_ids"] = cfg.seen_ids;
  j["unseen_ids"] = cfg.unseen_ids;
  j["ignore_id"] = cfg.ignore_id;
  j["percent"] = r.percent;
  j["per_class_iou"] = std::move(per);
  j["sIoU"] = r.siou;
  j["uIoU"] = r.uiou;
  j["hIoU"] = r.hiou;
  return j;
}

Json to_json(const GradCheckResult& r) {
  Json j;
  j["op"] = r.op;
  j["seed"] = r.seed;
  j["step"] = r.step;
  j["parameters"] = r.parameters;
  j["max_rel_error"] = r.max_rel_error;
  return j;
}

}  // namespace smseg
