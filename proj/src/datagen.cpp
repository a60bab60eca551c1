#include "mrg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "mrg/errors.hpp"
#include "mrg/geometry.hpp"
#include "mrg/io.hpp"

namespace mrg {

namespace {

std::vector<Vec> make_embeddings(int input_dim, uint64_t seed, size_t count) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec> out(count);
  // Random orthonormal frame while count <= input_dim: each seeded Gaussian
  // draw is projected off the previous embeddings before normalizing, so
  // archetypes never alias each other in feature space.
  for (size_t n = 0; n < count; ++n) {
    Vec& e = out[n];
    double norm = 0.0;
    do {
      e.assign(static_cast<size_t>(input_dim), 0.0);
      for (auto& v : e) {
        v = normal(rng);
      }
      for (size_t prev = 0; prev < n && n < static_cast<size_t>(input_dim); ++prev) {
        if (out[prev].size() != e.size()) continue;
        double dot = 0.0;
        for (size_t i = 0; i < e.size(); ++i) dot += e[i] * out[prev][i];
        for (size_t i = 0; i < e.size(); ++i) e[i] -= dot * out[prev][i];
      }
      norm = 0.0;
      for (auto& v : e) norm += v * v;
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (auto& v : e) {
      v /= norm;
    }
  }
  return out;
}

const Archetype* find_archetype(const Taxonomy& t, size_t id) {
  if (id >= t.archetypes.size()) {
    throw DataError("archetype id " + std::to_string(id) + " out of range");
  }
  return &t.archetypes[id];
}

void validate_gen_config(const GenConfig& c) {
  if (c.input_dim < 1) throw DataError("gen config: input_dim must be positive");
  if (!(c.image_width > 0.0) || !(c.image_height > 0.0)) {
    throw DataError("gen config: image dimensions must be positive");
  }
  if (c.min_triplets < 1 || c.max_triplets < c.min_triplets) {
    throw DataError("gen config: triplet bounds must satisfy 1 <= min <= max");
  }
  if (c.object_count_weights.empty()) {
    throw DataError("gen config: object count weights must not be empty");
  }
  double sum = 0.0;
  for (double w : c.object_count_weights) {
    if (!(w >= 0.0)) throw DataError("gen config: object count weights must be nonnegative");
    sum += w;
  }
  if (!(sum > 0.0)) throw DataError("gen config: object count weights must not all be zero");
  if (c.max_distractors < 0) throw DataError("gen config: max_distractors must be nonnegative");
  if (!(c.max_box_iou >= 0.0 && c.max_box_iou <= 1.0)) {
    throw DataError("gen config: max_box_iou must lie in [0, 1]");
  }
  if (!(c.feature_noise >= 0.0)) throw DataError("gen config: feature_noise must be nonnegative");
  auto conf_range = [](double lo, double hi) {
    return lo >= 0.0 && hi <= 1.0 && lo <= hi;
  };
  if (!conf_range(c.min_confidence, c.max_confidence) ||
      !conf_range(c.distractor_min_confidence, c.distractor_max_confidence)) {
    throw DataError("gen config: confidence ranges must lie in [0, 1] with min <= max");
  }
  if (c.max_attempts < 1) throw DataError("gen config: max_attempts must be positive");
}

// Places one box with bounded overlap against the already placed ones.
// Returns false when no placement was found within the try budget.
bool place_box(const GenConfig& config, const std::vector<Box2D>& placed, std::mt19937_64& rng,
               Box2D& out) {
  std::uniform_real_distribution<double> size_dist(60.0, 160.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    double w = size_dist(rng);
    double h = size_dist(rng);
    if (w >= config.image_width) w = config.image_width * 0.5;
    if (h >= config.image_height) h = config.image_height * 0.5;
    std::uniform_real_distribution<double> x_dist(0.0, config.image_width - w);
    std::uniform_real_distribution<double> y_dist(0.0, config.image_height - h);
    double x = x_dist(rng);
    double y = y_dist(rng);
    Box2D candidate{x, y, x + w, y + h};
    bool ok = true;
    for (const auto& other : placed) {
      if (iou(candidate, other) > config.max_box_iou) {
        ok = false;
        break;
      }
    }
    if (ok) {
      out = candidate;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<int> Taxonomy::directed_classes(size_t subject, size_t object) const {
  const Archetype* s = find_archetype(*this, subject);
  const Archetype* o = find_archetype(*this, object);
  std::vector<int> out;
  for (int c : s->capabilities) {
    if (std::find(o->receivable.begin(), o->receivable.end(), c) != o->receivable.end()) {
      out.push_back(c);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Taxonomy::PairAffordance Taxonomy::pair_affordance(size_t a, size_t b) const {
  std::vector<int> fwd = directed_classes(a, b);
  std::vector<int> bwd = directed_classes(b, a);
  const std::string& na = find_archetype(*this, a)->name;
  const std::string& nb = find_archetype(*this, b)->name;
  std::string key = na < nb ? na + "|" + nb : nb + "|" + na;
  uint64_t h = fnv1a64(key);

  std::vector<int> common;
  for (int c : fwd) {
    if (std::find(bwd.begin(), bwd.end(), c) != bwd.end()) {
      common.push_back(c);
    }
  }
  PairAffordance out;
  if (!common.empty()) {
    out.cls = *std::max_element(common.begin(), common.end());
    out.mutual = true;
    return out;
  }
  if (fwd.empty() && bwd.empty()) {
    return out;
  }
  if (!fwd.empty() && !bwd.empty()) {
    out.forward = (h & 1u) == 0;
  } else {
    out.forward = !fwd.empty();
  }
  const std::vector<int>& dir = out.forward ? fwd : bwd;
  out.cls = dir[h % dir.size()];
  return out;
}

Vec Taxonomy::attribute_target(size_t archetype) const {
  const Archetype* a = find_archetype(*this, archetype);
  Vec out(class_count(), 0.0);
  for (int c : a->capabilities) {
    if (c < 1 || static_cast<size_t>(c) > class_count()) {
      throw DataError("archetype " + a->name + " lists unknown class " + std::to_string(c));
    }
    out[static_cast<size_t>(c) - 1] = 1.0;
  }
  return out;
}

std::string Taxonomy::to_json() const {
  nlohmann::ordered_json j;
  j["archetypes"] = nlohmann::ordered_json::array();
  for (const auto& a : archetypes) {
    nlohmann::ordered_json ja;
    ja["name"] = a.name;
    ja["capabilities"] = a.capabilities;
    ja["receivable"] = a.receivable;
    ja["sample_weight"] = a.sample_weight;
    j["archetypes"].push_back(std::move(ja));
  }
  j["class_names"] = class_names;
  j["input_dim"] = input_dim;
  j["embedding_seed"] = embedding_seed;
  return j.dump(2) + "\n";
}

Taxonomy Taxonomy::from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    Taxonomy t;
    for (const auto& ja : j.at("archetypes")) {
      Archetype a;
      a.name = ja.at("name").get<std::string>();
      a.capabilities = ja.at("capabilities").get<std::vector<int>>();
      a.receivable = ja.at("receivable").get<std::vector<int>>();
      a.sample_weight = ja.value("sample_weight", 1.0);
      if (!(a.sample_weight >= 0.0)) {
        throw DataError("taxonomy: sample_weight must be nonnegative");
      }
      t.archetypes.push_back(std::move(a));
    }
    t.class_names = j.at("class_names").get<std::vector<std::string>>();
    t.input_dim = j.at("input_dim").get<int>();
    t.embedding_seed = j.at("embedding_seed").get<uint64_t>();
    if (t.archetypes.empty() || t.class_names.empty() || t.input_dim < 1) {
      throw DataError("taxonomy: archetypes, class names and input_dim must be nonempty");
    }
    t.embeddings = make_embeddings(t.input_dim, t.embedding_seed, t.archetypes.size());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("taxonomy: ") + e.what());
  }
}

uint64_t Taxonomy::hash() const { return fnv1a64(to_json()); }

Taxonomy default_taxonomy(int input_dim, uint64_t seed) {
  // Class ids: 1 scoop, 2 pour, 3 cut, 4 contain, 5 wipe, 6 dump.
  // Containers receive scoop, pour, contain and dump; open surfaces also
  // receive wipe; foods receive cut and contain.
  const std::vector<int> kContainer = {1, 2, 4, 6};
  const std::vector<int> kSurface = {1, 2, 4, 5, 6};
  const std::vector<int> kFood = {3, 4};
  // Containers are drawn more often; their pairings are the mutual ones and
  // carry most of the relationship mass, like tabletop manipulation scenes.
  const double kW = 2.0;   // plain containers
  const double kU = 2.0;   // wipeable surfaces
  const double kP = 0.2;   // wiping tools
  const double kS = 0.2;   // scooping tools
  const double kT = 0.2;   // cutting tools
  const double kF = 4.5;   // foods
  const double kC = 4.5;   // cans pair as pour rather than contain
  Taxonomy t;
  t.archetypes = {
      {"pan", {2, 4}, kSurface, kU},    {"spatula", {1}, {}, kS},
      {"plate", {4}, kSurface, kU},     {"knife", {3}, {}, kT},
      {"bowl", {2, 4}, kContainer, kW}, {"cloth", {5}, {}, kP},
      {"fork", {3}, {}, kT},            {"mug", {2, 4}, kContainer, kW},
      {"spoon", {1}, {}, kS},           {"brush", {5}, {}, kP},
      {"cup", {2, 4}, kContainer, kW},  {"pot", {2, 4, 6}, kContainer, kW},
      {"can", {2, 6}, kContainer, kC},  {"apple", {}, kFood, kF},
      {"bread", {}, kFood, kF},
  };
  t.class_names = {"scoop", "pour", "cut", "contain", "wipe", "dump"};
  t.input_dim = input_dim;
  t.embedding_seed = seed;
  t.embeddings = make_embeddings(input_dim, seed, t.archetypes.size());
  return t;
}

SceneRecord gen_scene(const Taxonomy& taxonomy, const GenConfig& config,
                      const std::string& scene_id, std::mt19937_64& rng) {
  validate_gen_config(config);
  if (taxonomy.archetypes.size() < 3) {
    throw DataError("gen_scene: taxonomy needs at least 3 archetypes");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    std::discrete_distribution<int> count_dist(config.object_count_weights.begin(),
                                               config.object_count_weights.end());
    size_t m = 3 + static_cast<size_t>(count_dist(rng));
    std::uniform_int_distribution<int> cap_dist(config.min_triplets, config.max_triplets);
    int cap = cap_dist(rng);
    size_t drawable = 0;
    for (const auto& a : taxonomy.archetypes) {
      if (a.sample_weight > 0.0) ++drawable;
    }
    if (m > drawable) {
      continue;
    }
    // Weighted draw of m distinct archetypes.
    std::vector<size_t> pool(taxonomy.archetypes.size());
    std::vector<double> weights(taxonomy.archetypes.size());
    for (size_t i = 0; i < pool.size(); ++i) {
      pool[i] = i;
      weights[i] = taxonomy.archetypes[i].sample_weight;
    }
    std::vector<size_t> ids;
    for (size_t i = 0; i < m; ++i) {
      std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
      size_t slot = pick(rng);
      ids.push_back(pool[slot]);
      weights[slot] = 0.0;
    }
    // Proposal indices follow a fixed category layout: tools, then
    // containers, then foods. Subjects of one-way relations always come from
    // an earlier category than their objects, so scene indexing is stable
    // with respect to relation direction.
    auto category = [&](size_t id) {
      const auto& a = taxonomy.archetypes[id];
      if (a.capabilities.empty()) return 2;  // foods act on nothing
      if (a.receivable.empty()) return 0;    // plain tools receive nothing
      return 1;                              // containers and surfaces
    };
    std::stable_sort(ids.begin(), ids.end(),
                     [&](size_t a, size_t b) { return category(a) < category(b); });

    // Mutual pairs contribute two triplets, one-way pairs one. The scene is
    // accepted only when every compatible pair fits under the drawn cap, so
    // no compatible pair is ever left unlabeled.
    struct ScenePair {
      size_t i, j;
      Taxonomy::PairAffordance affordance;
    };
    std::vector<ScenePair> compatible;
    int g = 0;
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = i + 1; j < m; ++j) {
        auto aff = taxonomy.pair_affordance(ids[i], ids[j]);
        if (aff.cls != 0) {
          compatible.push_back(ScenePair{i, j, aff});
          g += aff.triplet_count();
        }
      }
    }
    if (g < config.min_triplets || g > cap) {
      continue;
    }

    std::uniform_int_distribution<int> distractor_dist(0, config.max_distractors);
    size_t d = static_cast<size_t>(distractor_dist(rng));
    std::vector<Box2D> boxes;
    bool placed_all = true;
    for (size_t i = 0; i < m + d && placed_all; ++i) {
      Box2D box;
      placed_all = place_box(config, boxes, rng, box);
      if (placed_all) {
        boxes.push_back(box);
      }
    }
    if (!placed_all) {
      continue;
    }

    SceneRecord scene;
    scene.scene_id = scene_id;
    std::uniform_real_distribution<double> conf_dist(config.min_confidence,
                                                     config.max_confidence);
    for (size_t i = 0; i < m; ++i) {
      SceneObject obj;
      obj.index = static_cast<int>(i);
      obj.box = boxes[i];
      obj.confidence = conf_dist(rng);
      obj.is_object = true;
      obj.feature = taxonomy.embeddings[ids[i]];
      for (auto& v : obj.feature) {
        v += normal(rng) * config.feature_noise;
      }
      obj.attributes = taxonomy.attribute_target(ids[i]);
      scene.objects.push_back(std::move(obj));
    }
    std::uniform_real_distribution<double> distractor_conf(config.distractor_min_confidence,
                                                           config.distractor_max_confidence);
    for (size_t i = 0; i < d; ++i) {
      SceneObject obj;
      obj.index = static_cast<int>(m + i);
      obj.box = boxes[m + i];
      obj.confidence = distractor_conf(rng);
      obj.is_object = false;
      double norm = 0.0;
      do {
        obj.feature.assign(static_cast<size_t>(config.input_dim), 0.0);
        norm = 0.0;
        for (auto& v : obj.feature) {
          v = normal(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
      } while (norm < 1e-12);
      for (auto& v : obj.feature) {
        v /= norm;
      }
      obj.attributes.assign(taxonomy.class_count(), 0.0);
      scene.objects.push_back(std::move(obj));
    }
    for (const auto& p : compatible) {
      int si = static_cast<int>(p.i);
      int oj = static_cast<int>(p.j);
      if (p.affordance.mutual) {
        scene.gt_triplets.push_back(GtTriplet{si, p.affordance.cls, oj});
        scene.gt_triplets.push_back(GtTriplet{oj, p.affordance.cls, si});
      } else if (p.affordance.forward) {
        scene.gt_triplets.push_back(GtTriplet{si, p.affordance.cls, oj});
      } else {
        scene.gt_triplets.push_back(GtTriplet{oj, p.affordance.cls, si});
      }
    }
    return scene;
  }
  throw DataError("gen_scene: no acceptable scene for " + scene_id + " within " +
                  std::to_string(config.max_attempts) + " attempts");
}

GeneratedDataset gen_dataset(const GenConfig& config) {
  validate_gen_config(config);
  GeneratedDataset out;
  out.taxonomy = default_taxonomy(config.input_dim, config.seed);
  auto gen_split = [&](uint32_t stream, size_t count, const char* prefix,
                       std::vector<SceneRecord>& scenes) {
    double total = 0.0;
    for (size_t i = 0; i < count; ++i) {
      std::seed_seq seq{static_cast<uint32_t>(config.seed & 0xffffffffu),
                        static_cast<uint32_t>(config.seed >> 32), stream,
                        static_cast<uint32_t>(i)};
      std::mt19937_64 rng(seq);
      char id[32];
      std::snprintf(id, sizeof(id), "%s-%05zu", prefix, i);
      scenes.push_back(gen_scene(out.taxonomy, config, id, rng));
      total += static_cast<double>(scenes.back().gt_triplets.size());
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
  };
  out.mean_train_triplets = gen_split(0, config.train_scenes, "train", out.train);
  out.mean_test_triplets = gen_split(1, config.test_scenes, "test", out.test);
  return out;
}

}  // namespace mrg
