#include "mrg/infer.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "mrg/errors.hpp"

namespace mrg {

namespace {

bool triplet_order(const RelationshipTriplet& a, const RelationshipTriplet& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.subject_index != b.subject_index) return a.subject_index < b.subject_index;
  if (a.relationship_class != b.relationship_class) return a.relationship_class < b.relationship_class;
  return a.object_index < b.object_index;
}

nlohmann::json box_to_json(const Box2D& b) {
  return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2});
}

Box2D box_from_json(const nlohmann::json& j) {
  Box2D b{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
  validate_box(b, "graph box");
  return b;
}

}  // namespace

RelationshipClassTable RelationshipClassTable::default_table() {
  return RelationshipClassTable{{"scoop", "pour", "cut", "contain", "wipe", "dump"}};
}

const std::string& RelationshipClassTable::name(int class_id) const {
  static const std::string none = "none";
  if (class_id == 0) {
    return none;
  }
  if (class_id < 1 || static_cast<size_t>(class_id) > names.size()) {
    throw DataError("relationship class id " + std::to_string(class_id) + " out of range");
  }
  return names[static_cast<size_t>(class_id) - 1];
}

std::optional<RelationshipTriplet> form_triplet(const PairEdge& pair,
                                                const RelationshipPrediction& prediction,
                                                double subject_confidence,
                                                double object_confidence,
                                                const Box2D& subject_box,
                                                const Box2D& object_box) {
  if (prediction.probs.size() < 2) {
    throw ShapeError("form_triplet: prediction needs background plus at least one class");
  }
  if (!(subject_confidence >= 0.0 && subject_confidence <= 1.0) ||
      !(object_confidence >= 0.0 && object_confidence <= 1.0)) {
    throw DataError("form_triplet: confidences must lie in [0, 1]");
  }
  size_t best = prediction.argmax();
  if (best == 0) {
    return std::nullopt;
  }
  RelationshipTriplet t;
  t.subject_index = pair.subject_index;
  t.object_index = pair.object_index;
  t.relationship_class = static_cast<int>(best);
  // Confidences multiply first so swapped endpoints give a bit-identical
  // score and rank ties resolve canonically.
  t.score = (subject_confidence * object_confidence) * prediction.probs[best];
  t.subject_box = subject_box;
  t.object_box = object_box;
  return t;
}

std::vector<RelationshipTriplet> triplet_nms(std::vector<RelationshipTriplet> triplets,
                                             double iou_threshold) {
  std::sort(triplets.begin(), triplets.end(), triplet_order);
  std::vector<RelationshipTriplet> kept;
  for (const auto& t : triplets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.relationship_class == t.relationship_class &&
          iou(k.subject_box, t.subject_box) >= iou_threshold &&
          iou(k.object_box, t.object_box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(t);
    }
  }
  return kept;
}

ManipulationRelationshipGraph build_mrg(std::span<const ObjectProposal> proposals,
                                        std::vector<RelationshipTriplet> triplets,
                                        double min_score) {
  ManipulationRelationshipGraph g;
  g.nodes.assign(proposals.begin(), proposals.end());
  std::sort(g.nodes.begin(), g.nodes.end(),
            [](const ObjectProposal& a, const ObjectProposal& b) { return a.index < b.index; });
  std::set<int> indices;
  for (const auto& n : g.nodes) {
    if (!indices.insert(n.index).second) {
      throw DataError("build_mrg: duplicate node index " + std::to_string(n.index));
    }
  }
  for (auto& t : triplets) {
    if (t.score < min_score) {
      continue;
    }
    if (!indices.count(t.subject_index) || !indices.count(t.object_index)) {
      throw DataError("build_mrg: edge references unknown node index");
    }
    g.edges.push_back(std::move(t));
  }
  std::sort(g.edges.begin(), g.edges.end(), triplet_order);
  return g;
}

TaskQueryResult query_task(const ManipulationRelationshipGraph& graph, const GtTriplet& task) {
  for (size_t i = 0; i < graph.edges.size(); ++i) {
    const auto& e = graph.edges[i];
    if (e.subject_index == task.subject && e.relationship_class == task.relationship &&
        e.object_index == task.object) {
      return TaskQueryResult{true, static_cast<int>(i) + 1, e.score};
    }
  }
  return TaskQueryResult{false, 0, 0.0};
}

std::string export_json(const ManipulationRelationshipGraph& graph,
                        const RelationshipClassTable& classes) {
  nlohmann::json j;  // std::map keys, so output keys are sorted
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : graph.nodes) {
    nlohmann::json jn;
    jn["index"] = n.index;
    jn["box"] = box_to_json(n.box);
    jn["confidence"] = n.confidence;
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& e : graph.edges) {
    nlohmann::json je;
    je["subject"] = e.subject_index;
    je["relationship"] = nlohmann::json{{"id", e.relationship_class},
                                        {"name", classes.name(e.relationship_class)}};
    je["object"] = e.object_index;
    je["score"] = e.score;
    je["subject_box"] = box_to_json(e.subject_box);
    je["object_box"] = box_to_json(e.object_box);
    j["edges"].push_back(std::move(je));
  }
  return j.dump(2) + "\n";
}

ManipulationRelationshipGraph mrg_from_json(const std::string& text,
                                            const RelationshipClassTable& classes) {
  try {
    auto j = nlohmann::json::parse(text);
    ManipulationRelationshipGraph g;
    for (const auto& jn : j.at("nodes")) {
      ObjectProposal n;
      n.index = jn.at("index").get<int>();
      n.box = box_from_json(jn.at("box"));
      n.confidence = jn.at("confidence").get<double>();
      g.nodes.push_back(std::move(n));
    }
    for (const auto& je : j.at("edges")) {
      RelationshipTriplet e;
      e.subject_index = je.at("subject").get<int>();
      e.relationship_class = je.at("relationship").at("id").get<int>();
      if (classes.name(e.relationship_class) !=
          je.at("relationship").at("name").get<std::string>()) {
        throw DataError("graph file: relationship name does not match its id");
      }
      e.object_index = je.at("object").get<int>();
      e.score = je.at("score").get<double>();
      e.subject_box = box_from_json(je.at("subject_box"));
      e.object_box = box_from_json(je.at("object_box"));
      g.edges.push_back(std::move(e));
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("graph file: ") + e.what());
  }
}

std::string export_dot(const ManipulationRelationshipGraph& graph,
                       const RelationshipClassTable& classes) {
  std::string out = "digraph mrg {\n";
  for (const auto& n : graph.nodes) {
    out += "  " + std::to_string(n.index) + ";\n";
  }
  for (const auto& e : graph.edges) {
    char score[32];
    std::snprintf(score, sizeof(score), "%.3f", e.score);
    out += "  " + std::to_string(e.subject_index) + " -> " + std::to_string(e.object_index) +
           " [label=\"" + classes.name(e.relationship_class) + " (" + score + ")\"];\n";
  }
  out += "}\n";
  return out;
}

std::vector<RelationshipTriplet> predict_triplets(const ModelParameters& params,
                                                  std::span<const ObjectProposal> proposals,
                                                  const InferenceOptions& options) {
  SceneOutputs outputs = forward_scene(params, proposals);
  std::unordered_map<int, size_t> positions;
  for (size_t i = 0; i < proposals.size(); ++i) {
    positions[proposals[i].index] = i;
  }
  std::vector<RelationshipTriplet> triplets;
  for (size_t e = 0; e < outputs.edges.size(); ++e) {
    const PairEdge& edge = outputs.edges[e];
    size_t s = positions.at(edge.subject_index);
    size_t o = positions.at(edge.object_index);
    double sc = options.use_objectness ? outputs.objectness[s] : proposals[s].confidence;
    double oc = options.use_objectness ? outputs.objectness[o] : proposals[o].confidence;
    auto t = form_triplet(edge, outputs.pair_predictions[e], sc, oc, proposals[s].box,
                          proposals[o].box);
    if (t.has_value()) {
      triplets.push_back(*t);
    }
  }
  return triplet_nms(std::move(triplets), options.nms_iou);
}

ManipulationRelationshipGraph infer_mrg(const ModelParameters& params,
                                        std::span<const ObjectProposal> proposals,
                                        const InferenceOptions& options) {
  auto triplets = predict_triplets(params, proposals, options);
  return build_mrg(proposals, std::move(triplets), options.min_score);
}

}  // namespace mrg
