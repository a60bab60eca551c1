#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>

#include "mrg/metrics.hpp"

using namespace mrg;

namespace {

RelationshipTriplet make_triplet(int s, int c, int o, double score, Box2D sb, Box2D ob) {
  RelationshipTriplet t;
  t.subject_index = s;
  t.relationship_class = c;
  t.object_index = o;
  t.score = score;
  t.subject_box = sb;
  t.object_box = ob;
  return t;
}

Box2D random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 40.0);
  std::uniform_real_distribution<double> side(5.0, 25.0);
  double x = pos(rng), y = pos(rng);
  return {x, y, x + side(rng), y + side(rng)};
}

// Reference matcher: rank-ordered predictions claim the first unmatched GT.
size_t reference_matched(const std::vector<RelationshipTriplet>& preds,
                         const std::vector<RelationshipTriplet>& gt, size_t k, MatchMode mode,
                         double thr) {
  std::vector<bool> claimed(gt.size(), false);
  size_t matched = 0;
  for (size_t i = 0; i < preds.size() && i < k; ++i) {
    for (size_t j = 0; j < gt.size(); ++j) {
      if (claimed[j]) continue;
      bool ok = mode == MatchMode::kPhrase ? match_phrase(preds[i], gt[j], thr)
                                           : match_relationship(preds[i], gt[j], thr);
      if (ok) {
        claimed[j] = true;
        ++matched;
        break;
      }
    }
  }
  return matched;
}

}  // namespace

TEST_CASE("relationship matching needs class and both box overlaps") {
  Box2D a{0, 0, 10, 10};
  Box2D b{20, 0, 30, 10};
  auto gt = make_triplet(0, 2, 1, 0.0, a, b);

  CHECK(match_relationship(make_triplet(5, 2, 6, 0.9, a, b), gt, 0.5));
  CHECK_FALSE(match_relationship(make_triplet(5, 3, 6, 0.9, a, b), gt, 0.5));

  Box2D half{0, 5, 10, 15};  // IoU with a is exactly 1/3
  CHECK_FALSE(match_relationship(make_triplet(5, 2, 6, 0.9, half, b), gt, 0.5));
  CHECK(match_relationship(make_triplet(5, 2, 6, 0.9, half, b), gt, 1.0 / 3.0));
}

TEST_CASE("the iou threshold is inclusive") {
  // Boxes (0,0,2,2) and (0,0,2,1): intersection 2, union 4, IoU exactly 0.5.
  Box2D full{0, 0, 2, 2};
  Box2D lower{0, 0, 2, 1};
  Box2D other{30, 30, 40, 40};
  auto gt = make_triplet(0, 1, 1, 0.0, full, other);
  CHECK(match_relationship(make_triplet(0, 1, 1, 0.9, lower, other), gt, 0.5));
  CHECK_FALSE(match_relationship(make_triplet(0, 1, 1, 0.9, lower, other), gt, 0.5 + 1e-9));
}

TEST_CASE("phrase matching compares union boxes") {
  Box2D sa{0, 0, 10, 10};
  Box2D oa{10, 0, 20, 10};
  auto gt = make_triplet(0, 1, 1, 0.0, sa, oa);
  // Swapped boxes give the same union, so the phrase matches while the
  // per-box relationship match fails.
  auto swapped = make_triplet(0, 1, 1, 0.9, oa, sa);
  CHECK(match_phrase(swapped, gt, 0.99));
  CHECK_FALSE(match_relationship(swapped, gt, 0.99));
}

TEST_CASE("two predictions cannot claim the same ground truth") {
  Box2D a{0, 0, 10, 10};
  Box2D b{20, 0, 30, 10};
  std::vector<RelationshipTriplet> gt{make_triplet(0, 1, 1, 0.0, a, b)};
  std::vector<RelationshipTriplet> preds{
      make_triplet(0, 1, 1, 0.9, a, b),
      make_triplet(2, 1, 3, 0.8, a, b),
  };
  auto rc = recall_at_k(preds, gt, 5, MatchMode::kRelationship, 0.5);
  CHECK_EQ(rc.matched, 1);
  CHECK_EQ(rc.total, 1);
  CHECK_EQ(rc.recall(), 1.0);
}

TEST_CASE("only the top k predictions participate") {
  Box2D a{0, 0, 10, 10};
  Box2D b{20, 0, 30, 10};
  Box2D c{40, 0, 50, 10};
  std::vector<RelationshipTriplet> gt{make_triplet(0, 1, 1, 0.0, a, c)};
  std::vector<RelationshipTriplet> preds{
      make_triplet(9, 2, 9, 0.9, b, b),  // rank 1 mismatch
      make_triplet(0, 1, 1, 0.8, a, c),  // rank 2 match
  };
  CHECK_EQ(recall_at_k(preds, gt, 1, MatchMode::kRelationship, 0.5).matched, 0);
  CHECK_EQ(recall_at_k(preds, gt, 2, MatchMode::kRelationship, 0.5).matched, 1);
}

TEST_CASE("empty predictions or ground truth degrade gracefully") {
  Box2D a{0, 0, 10, 10};
  std::vector<RelationshipTriplet> some{make_triplet(0, 1, 1, 0.5, a, a)};
  auto none_pred = recall_at_k({}, some, 5, MatchMode::kPhrase, 0.5);
  CHECK_EQ(none_pred.matched, 0);
  CHECK_EQ(none_pred.total, 1);
  auto none_gt = recall_at_k(some, {}, 5, MatchMode::kPhrase, 0.5);
  CHECK_EQ(none_gt.total, 0);
  CHECK_EQ(none_gt.recall(), 0.0);
}

TEST_CASE("recall matches a reference matcher on random scenes") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(1, 3);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RelationshipTriplet> gt;
    size_t gts = 1 + rng() % 4;
    for (size_t j = 0; j < gts; ++j)
      gt.push_back(make_triplet(int(j), cls(rng), int(j + 1), 0.0, random_box(rng),
                                random_box(rng)));
    std::vector<RelationshipTriplet> preds;
    size_t np = rng() % 6;
    for (size_t j = 0; j < np; ++j) {
      // Half the predictions perturb a GT entry, half are random.
      if (j % 2 == 0 && !gt.empty()) {
        auto t = gt[j % gt.size()];
        t.score = score(rng);
        t.subject_box.x2 += double(rng() % 3);
        preds.push_back(t);
      } else {
        preds.push_back(make_triplet(int(j), cls(rng), int(j + 7), score(rng),
                                     random_box(rng), random_box(rng)));
      }
    }
    std::sort(preds.begin(), preds.end(),
              [](const auto& x, const auto& y) { return x.score > y.score; });
    for (size_t k : {size_t(1), size_t(3), size_t(5)}) {
      for (MatchMode mode : {MatchMode::kPhrase, MatchMode::kRelationship}) {
        auto rc = recall_at_k(preds, gt, k, mode, 0.5);
        CHECK_EQ(rc.matched, reference_matched(preds, gt, k, mode, 0.5));
        CHECK_EQ(rc.total, gt.size());
      }
    }
  }
}

TEST_CASE("phrase recall is at least relationship recall") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cls(1, 3);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RelationshipTriplet> gt;
    for (size_t j = 0; j < 3; ++j)
      gt.push_back(make_triplet(int(j), cls(rng), int(j + 1), 0.0, random_box(rng),
                                random_box(rng)));
    std::vector<RelationshipTriplet> preds;
    for (size_t j = 0; j < 5; ++j) {
      auto t = gt[j % gt.size()];
      t.score = score(rng);
      t.subject_box.x1 -= double(rng() % 4);
      t.object_box.y2 += double(rng() % 4);
      preds.push_back(t);
    }
    std::sort(preds.begin(), preds.end(),
              [](const auto& x, const auto& y) { return x.score > y.score; });
    auto pr = recall_at_k(preds, gt, 5, MatchMode::kPhrase, 0.5);
    auto rr = recall_at_k(preds, gt, 5, MatchMode::kRelationship, 0.5);
    CHECK_GE(pr.matched, rr.matched);
  }
}

TEST_CASE("ground truth triplets inherit scene boxes") {
  SceneRecord scene;
  scene.scene_id = "g";
  SceneObject a;
  a.index = 0;
  a.box = {0, 0, 5, 5};
  a.attributes = Vec(6, 0.0);
  SceneObject b = a;
  b.index = 1;
  b.box = {10, 10, 20, 20};
  scene.objects = {a, b};
  scene.gt_triplets = {{0, 3, 1}};
  auto gts = gt_to_triplets(scene);
  REQUIRE_EQ(gts.size(), 1);
  CHECK_EQ(gts[0].subject_index, 0);
  CHECK_EQ(gts[0].relationship_class, 3);
  CHECK_EQ(gts[0].subject_box, Box2D{0, 0, 5, 5});
  CHECK_EQ(gts[0].object_box, Box2D{10, 10, 20, 20});
}

TEST_CASE("perfect predictions score full recall through the dataset evaluator") {
  // A trained stand-in: evaluate_scene consumes externally supplied
  // predictions, so feeding the GT itself must give recall 1 at every k.
  SceneRecord scene;
  scene.scene_id = "p";
  for (int i = 0; i < 3; ++i) {
    SceneObject o;
    o.index = i;
    o.box = {10.0 * i, 0, 10.0 * i + 8, 8};
    o.attributes = Vec(6, 0.0);
    scene.objects.push_back(o);
  }
  scene.gt_triplets = {{0, 1, 1}, {1, 2, 2}};
  auto gts = gt_to_triplets(scene);
  for (size_t i = 0; i < gts.size(); ++i) gts[i].score = 1.0 - 0.1 * double(i);

  std::vector<size_t> ks{1, 3};
  auto eval = evaluate_scene(scene, gts, ks, 0.5);
  CHECK_EQ(eval.gt_count, 2);
  REQUIRE_EQ(eval.phrase.size(), 2);
  CHECK_EQ(eval.phrase[0].matched, 1);  // k=1 claims one of two
  CHECK_EQ(eval.phrase[1].matched, 2);
  CHECK_EQ(eval.relationship[1].recall(), 1.0);
}

TEST_CASE("aggregation micro-averages over scenes sorted by id") {
  std::vector<size_t> ks{1};
  SceneEval a;
  a.scene_id = "b_scene";
  a.gt_count = 4;
  a.phrase = {{1, 4}};
  a.relationship = {{0, 4}};
  SceneEval b;
  b.scene_id = "a_scene";
  b.gt_count = 2;
  b.phrase = {{2, 2}};
  b.relationship = {{1, 2}};
  auto report = aggregate_evals({a, b}, ks);
  REQUIRE_EQ(report.scenes.size(), 2);
  CHECK_EQ(report.scenes[0].scene_id, "a_scene");
  CHECK_EQ(report.phrase[0].matched, 3);
  CHECK_EQ(report.phrase[0].total, 6);
  CHECK_EQ(report.phrase[0].recall(), 0.5);
  CHECK_EQ(report.relationship[0].matched, 1);
}

TEST_CASE("csv and text reports carry one row per mode and k") {
  std::vector<size_t> ks{1};
  SceneEval a;
  a.scene_id = "s";
  a.gt_count = 4;
  a.phrase = {{2, 4}};
  a.relationship = {{1, 4}};
  auto report = aggregate_evals({a}, ks);
  std::string csv = metrics_to_csv(report);
  CHECK(csv.starts_with("mode,k,matched,total,recall\n"));
  CHECK(csv.find("phrase,1,2,4,") != std::string::npos);
  CHECK(csv.find("relationship,1,1,4,") != std::string::npos);
  std::string text = metrics_to_text(report);
  CHECK(text.find("PR@1") != std::string::npos);
  CHECK(text.find("RR@1") != std::string::npos);
}

TEST_CASE("dataset evaluation equals per-scene evaluation plus aggregation") {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.feature_dim = 4;
  cfg.hidden_dim = 4;
  cfg.grid_size = 3;
  ModelParameters params = init_model(cfg, 7);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 1.0);

  std::vector<SceneRecord> scenes;
  for (int s = 0; s < 4; ++s) {
    SceneRecord scene;
    scene.scene_id = "scene_" + std::to_string(s);
    for (int i = 0; i < 3; ++i) {
      SceneObject o;
      o.index = i;
      double x = 15.0 * i + double(s);
      o.box = {x, 5, x + 12, 20};
      o.confidence = 0.9;
      o.feature.resize(cfg.input_dim);
      for (double& v : o.feature) v = d(rng);
      o.attributes = Vec(6, 0.0);
      scene.objects.push_back(o);
    }
    scene.gt_triplets = {{0, 1 + s % 6, 1}, {1, 1 + (s + 2) % 6, 2}};
    scenes.push_back(scene);
  }

  std::vector<size_t> ks{1, 3, 5};
  InferenceOptions options;
  auto report = evaluate_dataset(params, scenes, ks, options, 0.5);
  REQUIRE_EQ(report.scenes.size(), scenes.size());

  std::vector<SceneEval> manual;
  for (const auto& scene : scenes) {
    auto preds = predict_triplets(params, scene.proposals(), options);
    manual.push_back(evaluate_scene(scene, preds, ks, 0.5));
  }
  auto expected = aggregate_evals(std::move(manual), ks);
  for (size_t i = 0; i < ks.size(); ++i) {
    CHECK_EQ(report.phrase[i].matched, expected.phrase[i].matched);
    CHECK_EQ(report.phrase[i].total, expected.phrase[i].total);
    CHECK_EQ(report.relationship[i].matched, expected.relationship[i].matched);
  }
  CHECK_EQ(metrics_to_csv(report), metrics_to_csv(expected));
}
