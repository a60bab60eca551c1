#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "mrg/model.hpp"
#include "mrg/train.hpp"

using namespace mrg;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_dim = 6;
  c.feature_dim = 4;
  c.hidden_dim = 4;
  c.num_relationship_classes = 6;
  c.grid_size = 3;
  return c;
}

ObjectProposal make_proposal(int index, Box2D box, std::mt19937_64& rng, size_t dim) {
  std::normal_distribution<double> d(0.0, 1.0);
  ObjectProposal p;
  p.index = index;
  p.box = box;
  p.confidence = 0.9;
  p.appearance.resize(dim);
  for (double& v : p.appearance) v = d(rng);
  return p;
}

std::vector<ObjectProposal> random_scene(std::mt19937_64& rng, size_t n, size_t dim) {
  std::vector<ObjectProposal> out;
  std::uniform_real_distribution<double> pos(0.0, 80.0);
  std::uniform_real_distribution<double> side(8.0, 30.0);
  for (size_t i = 0; i < n; ++i) {
    double x = pos(rng), y = pos(rng);
    out.push_back(make_proposal(int(i), {x, y, x + side(rng), y + side(rng)}, rng, dim));
  }
  return out;
}

bool bits_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("init is deterministic in the seed and sized by the config") {
  ModelConfig cfg = tiny_config();
  ModelParameters a = init_model(cfg, 42);
  ModelParameters b = init_model(cfg, 42);
  ModelParameters c = init_model(cfg, 43);

  auto va = param_views(a);
  auto vb = param_views(b);
  auto vc = param_views(c);
  REQUIRE_EQ(va.size(), vb.size());
  bool same = true, differs = false;
  for (size_t i = 0; i < va.size(); ++i) {
    CHECK_EQ(va[i].name, vb[i].name);
    REQUIRE_EQ(va[i].values.size(), vb[i].values.size());
    for (size_t j = 0; j < va[i].values.size(); ++j) {
      if (va[i].values[j] != vb[i].values[j]) same = false;
      if (va[i].values[j] != vc[i].values[j]) differs = true;
    }
  }
  CHECK(same);
  CHECK(differs);

  CHECK_EQ(a.object_projection.in_dim(), cfg.input_dim);
  CHECK_EQ(a.object_projection.out_dim(), cfg.feature_dim);
  CHECK_EQ(a.relationship_out.out_dim(), cfg.num_relationship_classes + 1);
  CHECK_EQ(a.context.alpha, 0.0);
}

TEST_CASE("projected object features are relu outputs") {
  ModelParameters params = init_model(tiny_config(), 1);
  std::mt19937_64 rng(2);
  auto proposals = random_scene(rng, 4, params.config.input_dim);
  auto feats = project_objects(params, proposals);
  REQUIRE_EQ(feats.size(), 4);
  for (const Vec& f : feats) {
    REQUIRE_EQ(f.size(), params.config.feature_dim);
    for (double v : f) CHECK_GE(v, 0.0);
  }
}

TEST_CASE("contained objects are ascending positions of positive-area overlaps") {
  std::vector<ObjectProposal> proposals(4);
  proposals[0].box = {0, 0, 10, 10};
  proposals[1].box = {50, 50, 60, 60};
  proposals[2].box = {5, 5, 15, 15};
  proposals[3].box = {10, 0, 20, 10};  // touches region edge only
  for (int i = 0; i < 4; ++i) {
    proposals[i].index = i;
    proposals[i].appearance = {0, 0};
  }
  SubgraphRegion region;
  region.region_box = {0, 0, 10, 10};
  auto inside = contained_objects(region, proposals);
  CHECK_EQ(inside, std::vector<int>{0, 2});
}

TEST_CASE("rasterized cells average the member projections and empty cells are zero") {
  ModelConfig cfg = tiny_config();
  cfg.input_dim = 2;
  cfg.feature_dim = 2;
  ModelParameters params = init_model(cfg, 3);
  // Identity projection so cell contents are directly readable.
  params.subgraph_init_projection.weight(0, 0) = 1;
  params.subgraph_init_projection.weight(0, 1) = 0;
  params.subgraph_init_projection.weight(1, 0) = 0;
  params.subgraph_init_projection.weight(1, 1) = 1;
  params.subgraph_init_projection.bias = {0, 0};

  // Region [0,30]x[0,30], 3x3 grid of 10x10 cells. One object covers the
  // left column, another the top-left cell only.
  std::vector<ObjectProposal> proposals(2);
  proposals[0] = {0, {0, 0, 10, 30}, 0.9, {2.0, 4.0}};
  proposals[1] = {1, {0, 0, 10, 10}, 0.9, {6.0, 8.0}};
  SubgraphRegion region;
  region.region_box = {0, 0, 30, 30};

  auto map = rasterize_subgraph(params, region, proposals);
  REQUIRE_EQ(map.grid, 3);
  REQUIRE_EQ(map.dim, 2);
  CHECK_EQ(map.cell_vec(0, 0), Vec{4.0, 6.0});  // mean of both
  CHECK_EQ(map.cell_vec(0, 1), Vec{2.0, 4.0});  // column object only
  CHECK_EQ(map.cell_vec(0, 2), Vec{2.0, 4.0});
  CHECK_EQ(map.cell_vec(1, 0), Vec{0.0, 0.0});  // empty
  CHECK_EQ(map.cell_vec(2, 2), Vec{0.0, 0.0});
}

TEST_CASE("attention weights sum to one and are uniform for identical objects") {
  ModelParameters params = init_model(tiny_config(), 4);
  std::mt19937_64 rng(5);
  SubgraphFeatureMap map(params.config.grid_size, params.config.feature_dim);
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : map.data) v = d(rng);

  std::vector<Vec> feats;
  for (int i = 0; i < 5; ++i) {
    Vec f(params.config.feature_dim);
    for (double& v : f) v = std::abs(d(rng));
    feats.push_back(f);
  }
  Vec w = attention_weights(params.context, feats, map, 1, 2);
  REQUIRE_EQ(w.size(), 5);
  double sum = 0;
  for (double v : w) {
    CHECK_GE(v, 0.0);
    sum += v;
  }
  CHECK_EQ(sum, doctest::Approx(1.0).epsilon(1e-12));

  std::vector<Vec> same(4, feats[0]);
  Vec u = attention_weights(params.context, same, map, 0, 0);
  for (double v : u) CHECK_EQ(v, doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("aggregation with zero alpha is exactly the spatial sum") {
  ModelParameters params = init_model(tiny_config(), 6);
  REQUIRE_EQ(params.context.alpha, 0.0);
  std::mt19937_64 rng(7);
  SubgraphFeatureMap map(3, params.config.feature_dim);
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : map.data) v = d(rng);
  std::vector<Vec> feats(2, Vec(params.config.feature_dim));
  for (Vec& f : feats)
    for (double& v : f) v = std::abs(d(rng));

  Vec agg = aggregate_subgraph(params.context, feats, map);
  Vec manual(params.config.feature_dim, 0.0);
  for (size_t y = 0; y < 3; ++y)
    for (size_t x = 0; x < 3; ++x) {
      Vec c = map.cell_vec(x, y);
      for (size_t k = 0; k < c.size(); ++k) manual[k] += c[k];
    }
  CHECK(bits_equal(agg, manual));
}

TEST_CASE("nonzero alpha adds the attended features on top of the sum") {
  ModelParameters params = init_model(tiny_config(), 8);
  params.context.alpha = 0.5;
  std::mt19937_64 rng(9);
  SubgraphFeatureMap map(3, params.config.feature_dim);
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : map.data) v = d(rng);
  std::vector<Vec> feats;
  for (int i = 0; i < 3; ++i) {
    Vec f(params.config.feature_dim);
    for (double& v : f) v = std::abs(d(rng));
    feats.push_back(f);
  }

  Vec agg = aggregate_subgraph(params.context, feats, map);
  Vec manual(params.config.feature_dim, 0.0);
  for (size_t y = 0; y < 3; ++y)
    for (size_t x = 0; x < 3; ++x) {
      Vec c = map.cell_vec(x, y);
      Vec attended = weighted_object_features(params.context, feats, map, x, y);
      for (size_t k = 0; k < c.size(); ++k) manual[k] += c[k] + 0.5 * attended[k];
    }
  for (size_t k = 0; k < manual.size(); ++k)
    CHECK_EQ(agg[k], doctest::Approx(manual[k]).epsilon(1e-12));
}

TEST_CASE("relationship prediction is bit-identical under subject-object swap") {
  ModelParameters params = init_model(tiny_config(), 10);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vec s(params.config.feature_dim), o(params.config.feature_dim), g(params.config.feature_dim);
    for (double& v : s) v = std::abs(d(rng));
    for (double& v : o) v = std::abs(d(rng));
    for (double& v : g) v = d(rng);
    auto fwd = predict_relationship(params, s, g, o);
    auto rev = predict_relationship(params, o, g, s);
    REQUIRE_EQ(fwd.probs.size(), params.config.num_relationship_classes + 1);
    CHECK(bits_equal(fwd.probs, rev.probs));
  }
}

TEST_CASE("argmax breaks ties toward the lowest class") {
  RelationshipPrediction p;
  p.probs = {0.2, 0.3, 0.3, 0.2};
  CHECK_EQ(p.argmax(), 1);
  p.probs = {0.5, 0.1, 0.4};
  CHECK_EQ(p.argmax(), 0);
}

TEST_CASE("forward scene emits all ordered pairs and handles degenerate scenes") {
  ModelParameters params = init_model(tiny_config(), 12);
  std::mt19937_64 rng(13);
  auto proposals = random_scene(rng, 4, params.config.input_dim);
  auto out = forward_scene(params, proposals);
  CHECK_EQ(out.edges.size(), 12);  // 4 * 3 ordered pairs
  CHECK_EQ(out.pair_predictions.size(), 12);
  CHECK_EQ(out.objectness.size(), 4);
  CHECK_EQ(out.attributes.size(), 4);
  for (const auto& pred : out.pair_predictions) {
    double sum = 0;
    for (double v : pred.probs) sum += v;
    CHECK_EQ(sum, doctest::Approx(1.0).epsilon(1e-9));
  }
  for (double p : out.objectness) {
    CHECK_GT(p, 0.0);
    CHECK_LT(p, 1.0);
  }

  auto single = forward_scene(params, std::span(proposals.data(), 1));
  CHECK(single.edges.empty());
  CHECK(single.pair_predictions.empty());
  CHECK_EQ(single.objectness.size(), 1);
}

TEST_CASE("cached forward agrees with the plain forward bit for bit") {
  ModelParameters params = init_model(tiny_config(), 14);
  std::mt19937_64 rng(15);
  auto proposals = random_scene(rng, 5, params.config.input_dim);
  auto plain = forward_scene(params, proposals);
  auto cache = forward_scene_cached(params, proposals);
  REQUIRE_EQ(cache.edges.size(), plain.edges.size());
  for (size_t i = 0; i < plain.edges.size(); ++i) {
    CHECK_EQ(cache.edges[i].subject_index, plain.edges[i].subject_index);
    CHECK_EQ(cache.edges[i].object_index, plain.edges[i].object_index);
    CHECK(bits_equal(cache.pair_caches[i].probs, plain.pair_predictions[i].probs));
  }
  for (size_t i = 0; i < proposals.size(); ++i) {
    CHECK_EQ(cache.objectness_prob[i], plain.objectness[i]);
    CHECK(bits_equal(cache.attribute_probs[i], plain.attributes[i]));
  }
}

TEST_CASE("pair mask skips disabled pairs and unused regions") {
  ModelParameters params = init_model(tiny_config(), 16);
  std::mt19937_64 rng(17);
  auto proposals = random_scene(rng, 4, params.config.input_dim);
  auto full = forward_scene_cached(params, proposals);
  std::vector<char> mask(full.edges.size(), 0);
  mask[0] = 1;
  mask[3] = 1;
  auto masked = forward_scene_cached(params, proposals, &mask);
  REQUIRE_EQ(masked.pair_caches.size(), full.pair_caches.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    CHECK_EQ(bool(masked.pair_caches[i].used), bool(mask[i]));
    if (mask[i]) CHECK(bits_equal(masked.pair_caches[i].probs, full.pair_caches[i].probs));
  }
  std::vector<bool> needed(masked.region_caches.size(), false);
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) needed[size_t(masked.edges[i].subgraph_id)] = true;
  for (size_t r = 0; r < needed.size(); ++r) CHECK_EQ(masked.region_caches[r].used, needed[r]);
}

TEST_CASE("model json and file round-trips preserve every parameter bit") {
  ModelConfig cfg = tiny_config();
  ModelParameters params = init_model(cfg, 18);
  std::vector<std::string> names{"scoop", "pour", "cut", "contain", "wipe", "dump"};

  std::string text = model_to_json(params, names);
  LoadedModel back = model_from_json(text);
  CHECK_EQ(back.class_names, names);
  CHECK_EQ(back.params.config.feature_dim, cfg.feature_dim);
  auto va = param_views(params);
  auto vb = param_views(back.params);
  REQUIRE_EQ(va.size(), vb.size());
  for (size_t i = 0; i < va.size(); ++i) {
    REQUIRE_EQ(va[i].values.size(), vb[i].values.size());
    CHECK_EQ(std::memcmp(va[i].values.data(), vb[i].values.data(),
                         va[i].values.size() * sizeof(double)),
             0);
  }

  auto path = std::filesystem::temp_directory_path() / "mrg_model_roundtrip_test.json";
  save_model(path, params, names);
  LoadedModel loaded = load_model(path);
  CHECK_EQ(model_to_json(loaded.params, loaded.class_names), text);
  std::filesystem::remove(path);
}

TEST_CASE("scene backward gradients agree with finite differences") {
  ModelConfig cfg = tiny_config();
  std::mt19937_64 scene_rng(100);
  int checked = 0;
  for (uint64_t seed = 0; seed < 40 && checked < 3; ++seed) {
    ModelParameters params = init_model(cfg, 200 + seed);
    auto proposals = random_scene(scene_rng, 3, cfg.input_dim);
    SceneRecord scene;
    scene.scene_id = "fd";
    for (const auto& p : proposals) {
      SceneObject obj;
      obj.index = p.index;
      obj.box = p.box;
      obj.confidence = p.confidence;
      obj.feature = p.appearance;
      obj.attributes = Vec(cfg.num_relationship_classes, 0.0);
      scene.objects.push_back(obj);
    }
    scene.objects[0].attributes[0] = 1.0;
    scene.objects[1].attributes[3] = 1.0;
    scene.gt_triplets = {{0, 1, 1}, {1, 4, 2}};
    auto sampled = label_pairs(scene);

    TrainConfig tc;
    auto result = scene_loss(params, scene, sampled, tc);
    if (result.relu_margin < 1e-4) continue;  // kink too close for a stable probe
    ++checked;

    auto pviews = param_views(params);
    const GradientTape& tape = result.tape;
    auto gviews = param_views(tape);
    auto loss_fn = [&] { return scene_loss(params, scene, sampled, tc).loss.total; };
    auto report = finite_difference_check(pviews, gviews, loss_fn, 1e-6);
    INFO("worst: ", report.worst_parameter, "[", report.worst_index, "]");
    CHECK_LT(report.max_relative_error, 1e-5);
  }
  CHECK_GE(checked, 3);
}

TEST_CASE("relu margin is a finite non-negative diagnostic") {
  // Exact zeros are legitimate: pair inputs add ReLU outputs, which carry
  // clipped zero entries, so the margin only bounds kink distance from above.
  ModelParameters params = init_model(tiny_config(), 19);
  std::mt19937_64 rng(20);
  auto proposals = random_scene(rng, 3, params.config.input_dim);
  auto cache = forward_scene_cached(params, proposals);
  double margin = min_relu_margin(cache);
  CHECK(std::isfinite(margin));
  CHECK_GE(margin, 0.0);
}
