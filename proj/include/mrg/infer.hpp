#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrg/model.hpp"
#include "mrg/scene.hpp"

namespace mrg {

// Relationship class names; id 0 is the background class "none" and ids
// 1..size() are real classes.
struct RelationshipClassTable {
  std::vector<std::string> names;  // names[i] is class id i + 1

  static RelationshipClassTable default_table();

  size_t class_count() const { return names.size(); }
  const std::string& name(int class_id) const;
};

struct RelationshipTriplet {
  int subject_index = 0;
  int relationship_class = 0;  // >= 1; background never forms a triplet
  int object_index = 0;
  double score = 0.0;  // subject confidence * class probability * object confidence
  Box2D subject_box;
  Box2D object_box;

  bool operator==(const RelationshipTriplet&) const = default;
};

// Argmax decision for one pair; ties go to the lowest class id. Background
// argmax yields no triplet.
std::optional<RelationshipTriplet> form_triplet(const PairEdge& pair,
                                                const RelationshipPrediction& prediction,
                                                double subject_confidence,
                                                double object_confidence,
                                                const Box2D& subject_box,
                                                const Box2D& object_box);

/**
 * @brief Greedy score-sorted triplet NMS.
 *
 * Sorts descending by score with ties broken by (subject, class, object)
 * ids, then suppresses any triplet sharing its class with a kept one whose
 * subject and object boxes both overlap with IoU >= iou_threshold.
 * Idempotent; output order is the sort order.
 */
std::vector<RelationshipTriplet> triplet_nms(std::vector<RelationshipTriplet> triplets,
                                             double iou_threshold);

struct ManipulationRelationshipGraph {
  std::vector<ObjectProposal> nodes;       // ascending by index
  std::vector<RelationshipTriplet> edges;  // descending score, ties by ids
};

// Drops triplets scoring below min_score and assembles the graph. Every
// proposal becomes a node whether or not an edge references it. Edge
// endpoints must exist among the proposals.
ManipulationRelationshipGraph build_mrg(std::span<const ObjectProposal> proposals,
                                        std::vector<RelationshipTriplet> triplets,
                                        double min_score);

struct TaskQueryResult {
  bool found = false;
  int rank = 0;  // 1-based position in the score-sorted edge list
  double score = 0.0;
};

// Looks up an exact (subject, class, object) edge.
TaskQueryResult query_task(const ManipulationRelationshipGraph& graph, const GtTriplet& task);

// Deterministic JSON (alphabetically sorted keys, edges in stored order).
std::string export_json(const ManipulationRelationshipGraph& graph,
                        const RelationshipClassTable& classes);
ManipulationRelationshipGraph mrg_from_json(const std::string& text,
                                            const RelationshipClassTable& classes);

// GraphViz digraph, one line per node and per edge; edge labels read
// "name (score)" with the score at three decimals.
std::string export_dot(const ManipulationRelationshipGraph& graph,
                       const RelationshipClassTable& classes);

struct InferenceOptions {
  double min_score = 0.05;
  double nms_iou = 0.5;
  bool use_objectness = true;  // false: fall back to input proposal confidence
};

// Forward pass, triplet formation over every pair, NMS. Returns the
// score-sorted surviving triplets without the min_score cut, which applies
// only when assembling a graph.
std::vector<RelationshipTriplet> predict_triplets(const ModelParameters& params,
                                                  std::span<const ObjectProposal> proposals,
                                                  const InferenceOptions& options);

ManipulationRelationshipGraph infer_mrg(const ModelParameters& params,
                                        std::span<const ObjectProposal> proposals,
                                        const InferenceOptions& options);

}  // namespace mrg
