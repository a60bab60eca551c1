#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mrg/geometry.hpp"
#include "mrg/vec.hpp"

namespace mrg {

/**
 * @brief One detected object candidate as consumed by the model.
 */
struct ObjectProposal {
  int index = 0;          // unique within a scene
  Box2D box;
  double confidence = 0;  // detector score in [0, 1]
  Vec appearance;         // appearance feature, length = model input_dim
};

// Scene-file object record: a proposal plus its training targets.
struct SceneObject {
  int index = 0;
  Box2D box;
  double confidence = 0;
  Vec feature;
  bool is_object = true;  // false for injected distractors
  Vec attributes;         // 0/1 affordance targets, length = relationship class count

  ObjectProposal proposal() const;
};

struct GtTriplet {
  int subject = 0;       // proposal index
  int relationship = 0;  // class id >= 1; 0 means background and never appears as GT
  int object = 0;        // proposal index

  bool operator==(const GtTriplet&) const = default;
};

struct SceneRecord {
  std::string scene_id;
  std::vector<SceneObject> objects;
  std::vector<GtTriplet> gt_triplets;

  std::vector<ObjectProposal> proposals() const;
};

// JSONL, one scene per line. Parse failures report the 1-based line number.
std::vector<SceneRecord> read_scenes(const std::filesystem::path& path);
void write_scenes(const std::filesystem::path& path, const std::vector<SceneRecord>& scenes);

// Single-scene JSON conversion, shared by the JSONL layer above.
std::string scene_to_json_line(const SceneRecord& scene);
SceneRecord scene_from_json_line(const std::string& line);

}  // namespace mrg
