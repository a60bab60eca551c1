#pragma once

#include <span>
#include <string>
#include <vector>

#include "mrg/infer.hpp"
#include "mrg/scene.hpp"

namespace mrg {

// Phrase matching compares the union box of subject and object; relationship
// matching compares both boxes separately. Both require the class to agree.
enum class MatchMode { kPhrase, kRelationship };

bool match_phrase(const RelationshipTriplet& pred, const RelationshipTriplet& gt,
                  double iou_threshold);
bool match_relationship(const RelationshipTriplet& pred, const RelationshipTriplet& gt,
                        double iou_threshold);

// Ground truth triplets materialized with boxes so they can be matched against
// predictions. Score is unused for ground truth.
std::vector<RelationshipTriplet> gt_to_triplets(const SceneRecord& scene);

struct RecallCount {
  size_t matched = 0;
  size_t total = 0;
  double recall() const { return total == 0 ? 0.0 : static_cast<double>(matched) / total; }
};

// Greedy one-to-one matching: walk predictions in rank order, up to the k
// highest, and claim the first still unmatched ground truth entry that
// matches. Predictions must already be sorted by descending score.
RecallCount recall_at_k(std::span<const RelationshipTriplet> predictions,
                        std::span<const RelationshipTriplet> ground_truth, size_t k,
                        MatchMode mode, double iou_threshold);

struct SceneEval {
  std::string scene_id;
  size_t gt_count = 0;
  std::vector<RecallCount> phrase;        // one per requested k
  std::vector<RecallCount> relationship;  // one per requested k
};

struct MetricsReport {
  std::vector<size_t> ks;
  std::vector<SceneEval> scenes;            // sorted by scene_id
  std::vector<RecallCount> phrase;          // micro-aggregated per k
  std::vector<RecallCount> relationship;    // micro-aggregated per k
};

// Runs inference on every scene and accumulates micro-averaged recall
// (summed matches over summed ground truth across scenes).
MetricsReport evaluate_dataset(const ModelParameters& params,
                               std::span<const SceneRecord> scenes,
                               std::span<const size_t> ks, const InferenceOptions& options,
                               double iou_threshold = 0.5);

// Aggregates per-scene results that were computed elsewhere, e.g. in
// parallel. Scene order in the report is by scene_id.
MetricsReport aggregate_evals(std::vector<SceneEval> evals, std::span<const size_t> ks);

// Per-scene evaluation for one already predicted triplet list.
SceneEval evaluate_scene(const SceneRecord& scene,
                         std::span<const RelationshipTriplet> predictions,
                         std::span<const size_t> ks, double iou_threshold);

// Rows: mode,k,matched,total,recall with one line per (mode, k).
std::string metrics_to_csv(const MetricsReport& report);

// Human readable table, one PR@k / RR@k line per k.
std::string metrics_to_text(const MetricsReport& report);

}  // namespace mrg
