#include "mrg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "mrg/errors.hpp"
#include "mrg/geometry.hpp"

namespace mrg {

bool match_phrase(const RelationshipTriplet& pred, const RelationshipTriplet& gt,
                  double iou_threshold) {
  if (pred.relationship_class != gt.relationship_class) {
    return false;
  }
  Box2D pu = union_box(pred.subject_box, pred.object_box);
  Box2D gu = union_box(gt.subject_box, gt.object_box);
  return iou(pu, gu) >= iou_threshold;
}

bool match_relationship(const RelationshipTriplet& pred, const RelationshipTriplet& gt,
                        double iou_threshold) {
  if (pred.relationship_class != gt.relationship_class) {
    return false;
  }
  return iou(pred.subject_box, gt.subject_box) >= iou_threshold &&
         iou(pred.object_box, gt.object_box) >= iou_threshold;
}

std::vector<RelationshipTriplet> gt_to_triplets(const SceneRecord& scene) {
  std::unordered_map<int, const SceneObject*> by_index;
  for (const auto& obj : scene.objects) {
    by_index[obj.index] = &obj;
  }
  std::vector<RelationshipTriplet> out;
  out.reserve(scene.gt_triplets.size());
  for (const auto& gt : scene.gt_triplets) {
    RelationshipTriplet t;
    t.subject_index = gt.subject;
    t.relationship_class = gt.relationship;
    t.object_index = gt.object;
    t.score = 1.0;
    t.subject_box = by_index.at(gt.subject)->box;
    t.object_box = by_index.at(gt.object)->box;
    out.push_back(std::move(t));
  }
  return out;
}

RecallCount recall_at_k(std::span<const RelationshipTriplet> predictions,
                        std::span<const RelationshipTriplet> ground_truth, size_t k,
                        MatchMode mode, double iou_threshold) {
  RecallCount count;
  count.total = ground_truth.size();
  std::vector<bool> claimed(ground_truth.size(), false);
  size_t limit = std::min(k, predictions.size());
  for (size_t p = 0; p < limit; ++p) {
    for (size_t g = 0; g < ground_truth.size(); ++g) {
      if (claimed[g]) {
        continue;
      }
      bool matched = mode == MatchMode::kPhrase
                         ? match_phrase(predictions[p], ground_truth[g], iou_threshold)
                         : match_relationship(predictions[p], ground_truth[g], iou_threshold);
      if (matched) {
        claimed[g] = true;
        ++count.matched;
        break;
      }
    }
  }
  return count;
}

SceneEval evaluate_scene(const SceneRecord& scene,
                         std::span<const RelationshipTriplet> predictions,
                         std::span<const size_t> ks, double iou_threshold) {
  SceneEval eval;
  eval.scene_id = scene.scene_id;
  eval.gt_count = scene.gt_triplets.size();
  auto gt = gt_to_triplets(scene);
  for (size_t k : ks) {
    eval.phrase.push_back(recall_at_k(predictions, gt, k, MatchMode::kPhrase, iou_threshold));
    eval.relationship.push_back(
        recall_at_k(predictions, gt, k, MatchMode::kRelationship, iou_threshold));
  }
  return eval;
}

MetricsReport aggregate_evals(std::vector<SceneEval> evals, std::span<const size_t> ks) {
  MetricsReport report;
  report.ks.assign(ks.begin(), ks.end());
  std::sort(evals.begin(), evals.end(),
            [](const SceneEval& a, const SceneEval& b) { return a.scene_id < b.scene_id; });
  report.phrase.assign(ks.size(), RecallCount{});
  report.relationship.assign(ks.size(), RecallCount{});
  for (const auto& eval : evals) {
    if (eval.phrase.size() != ks.size() || eval.relationship.size() != ks.size()) {
      throw ShapeError("aggregate_evals: per-scene result does not cover every k");
    }
    for (size_t i = 0; i < ks.size(); ++i) {
      report.phrase[i].matched += eval.phrase[i].matched;
      report.phrase[i].total += eval.phrase[i].total;
      report.relationship[i].matched += eval.relationship[i].matched;
      report.relationship[i].total += eval.relationship[i].total;
    }
  }
  report.scenes = std::move(evals);
  return report;
}

MetricsReport evaluate_dataset(const ModelParameters& params,
                               std::span<const SceneRecord> scenes,
                               std::span<const size_t> ks, const InferenceOptions& options,
                               double iou_threshold) {
  std::vector<SceneEval> evals;
  evals.reserve(scenes.size());
  for (const auto& scene : scenes) {
    auto proposals = scene.proposals();
    auto predictions = predict_triplets(params, proposals, options);
    evals.push_back(evaluate_scene(scene, predictions, ks, iou_threshold));
  }
  return aggregate_evals(std::move(evals), ks);
}

std::string metrics_to_csv(const MetricsReport& report) {
  std::string out = "mode,k,matched,total,recall\n";
  char line[128];
  for (size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(line, sizeof(line), "phrase,%zu,%zu,%zu,%.10g\n", report.ks[i],
                  report.phrase[i].matched, report.phrase[i].total, report.phrase[i].recall());
    out += line;
  }
  for (size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(line, sizeof(line), "relationship,%zu,%zu,%zu,%.10g\n", report.ks[i],
                  report.relationship[i].matched, report.relationship[i].total,
                  report.relationship[i].recall());
    out += line;
  }
  return out;
}

std::string metrics_to_text(const MetricsReport& report) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "scenes evaluated: %zu\n", report.scenes.size());
  out += line;
  for (size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(line, sizeof(line), "PR@%zu  %7.4f  (%zu/%zu)\n", report.ks[i],
                  report.phrase[i].recall(), report.phrase[i].matched, report.phrase[i].total);
    out += line;
  }
  for (size_t i = 0; i < report.ks.size(); ++i) {
    std::snprintf(line, sizeof(line), "RR@%zu  %7.4f  (%zu/%zu)\n", report.ks[i],
                  report.relationship[i].recall(), report.relationship[i].matched,
                  report.relationship[i].total);
    out += line;
  }
  out += "recall is micro-averaged: matches and ground truth are summed across scenes\n";
  return out;
}

}  // namespace mrg
