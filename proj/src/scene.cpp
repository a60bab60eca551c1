#include "mrg/scene.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mrg/errors.hpp"
#include "mrg/io.hpp"

namespace mrg {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json box_to_json(const Box2D& b) {
  return ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

Box2D box_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 4) {
    throw DataError(std::string(what) + ": box must be an array of 4 numbers");
  }
  Box2D b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  validate_box(b, what);
  return b;
}

Vec vec_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) {
    throw DataError(std::string(what) + ": expected an array of numbers");
  }
  Vec v;
  v.reserve(j.size());
  for (const auto& x : j) {
    double d = x.get<double>();
    if (!std::isfinite(d)) {
      throw DataError(std::string(what) + ": non-finite value");
    }
    v.push_back(d);
  }
  return v;
}

SceneRecord scene_from_json(const nlohmann::json& j) {
  SceneRecord scene;
  scene.scene_id = j.at("scene_id").get<std::string>();
  std::set<int> seen;
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    o.index = jo.at("index").get<int>();
    if (!seen.insert(o.index).second) {
      throw DataError("scene " + scene.scene_id + ": duplicate object index " +
                      std::to_string(o.index));
    }
    o.box = box_from_json(jo.at("box"), "object box");
    o.confidence = jo.at("confidence").get<double>();
    if (!(o.confidence >= 0.0 && o.confidence <= 1.0)) {
      throw DataError("scene " + scene.scene_id + ": confidence outside [0, 1]");
    }
    o.is_object = jo.at("is_object").get<bool>();
    o.feature = vec_from_json(jo.at("feature"), "object feature");
    o.attributes = vec_from_json(jo.at("attributes"), "object attributes");
    scene.objects.push_back(std::move(o));
  }
  for (const auto& jt : j.at("gt_triplets")) {
    GtTriplet t;
    t.subject = jt.at("subject").get<int>();
    t.relationship = jt.at("relationship").get<int>();
    t.object = jt.at("object").get<int>();
    if (t.relationship < 1) {
      throw DataError("scene " + scene.scene_id + ": relationship id must be >= 1");
    }
    if (t.subject == t.object) {
      throw DataError("scene " + scene.scene_id + ": triplet subject equals object");
    }
    if (!seen.count(t.subject) || !seen.count(t.object)) {
      throw DataError("scene " + scene.scene_id + ": triplet references unknown object index");
    }
    scene.gt_triplets.push_back(t);
  }
  return scene;
}

}  // namespace

ObjectProposal SceneObject::proposal() const {
  return ObjectProposal{index, box, confidence, feature};
}

std::vector<ObjectProposal> SceneRecord::proposals() const {
  std::vector<ObjectProposal> out;
  out.reserve(objects.size());
  for (const auto& o : objects) {
    out.push_back(o.proposal());
  }
  return out;
}

std::string scene_to_json_line(const SceneRecord& scene) {
  ordered_json j;
  j["scene_id"] = scene.scene_id;
  auto objects = ordered_json::array();
  for (const auto& o : scene.objects) {
    ordered_json jo;
    jo["index"] = o.index;
    jo["box"] = box_to_json(o.box);
    jo["confidence"] = o.confidence;
    jo["is_object"] = o.is_object;
    jo["feature"] = o.feature;
    jo["attributes"] = o.attributes;
    objects.push_back(std::move(jo));
  }
  j["objects"] = std::move(objects);
  auto triplets = ordered_json::array();
  for (const auto& t : scene.gt_triplets) {
    ordered_json jt;
    jt["subject"] = t.subject;
    jt["relationship"] = t.relationship;
    jt["object"] = t.object;
    triplets.push_back(std::move(jt));
  }
  j["gt_triplets"] = std::move(triplets);
  return j.dump();
}

SceneRecord scene_from_json_line(const std::string& line) {
  return scene_from_json(nlohmann::json::parse(line));
}

std::vector<SceneRecord> read_scenes(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  std::vector<SceneRecord> scenes;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    try {
      scenes.push_back(scene_from_json_line(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scenes;
}

void write_scenes(const std::filesystem::path& path, const std::vector<SceneRecord>& scenes) {
  std::string out;
  for (const auto& s : scenes) {
    out += scene_to_json_line(s);
    out += '\n';
  }
  write_text_atomic(path, out);
}

}  // namespace mrg
