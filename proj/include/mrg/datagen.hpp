#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mrg/scene.hpp"
#include "mrg/vec.hpp"

namespace mrg {

// One object category. Capabilities are the relationship classes the object
// can act with; receivable are the classes it can undergo.
struct Archetype {
  std::string name;
  std::vector<int> capabilities;
  std::vector<int> receivable;
  double sample_weight = 1.0;  // relative draw frequency in generated scenes
};

struct Taxonomy {
  std::vector<Archetype> archetypes;
  std::vector<std::string> class_names;  // class id r maps to class_names[r-1]
  int input_dim = 32;
  uint64_t embedding_seed = 0;
  std::vector<Vec> embeddings;  // unit vectors, one per archetype

  size_t class_count() const { return class_names.size(); }

  // Classes valid with a as subject and b as object.
  std::vector<int> directed_classes(size_t subject, size_t object) const;

  // Relationship label for the unordered archetype pair (a, b). When a class
  // is valid in both directions the pair is mutual and both ordered triplets
  // carry the highest such class; otherwise one compatible direction is used,
  // resolved by a deterministic hash of the archetype names.
  struct PairAffordance {
    int cls = 0;          // 0 when the pair is incompatible
    bool mutual = false;  // label applies in both directions
    bool forward = true;  // when not mutual, a is the subject
    int triplet_count() const { return cls == 0 ? 0 : (mutual ? 2 : 1); }
  };
  PairAffordance pair_affordance(size_t a, size_t b) const;

  Vec attribute_target(size_t archetype) const;

  std::string to_json() const;
  static Taxonomy from_json(const std::string& text);
  uint64_t hash() const;
};

// Embeddings depend only on seed and input_dim, so a taxonomy round-trips
// through JSON without storing the vectors.
Taxonomy default_taxonomy(int input_dim, uint64_t seed);

struct GenConfig {
  size_t train_scenes = 200;
  size_t test_scenes = 40;
  int input_dim = 32;
  uint64_t seed = 42;
  double image_width = 640.0;
  double image_height = 480.0;
  // Accepted scenes carry between min_triplets and a per-scene cap drawn
  // uniformly from [min_triplets, max_triplets].
  int min_triplets = 3;
  int max_triplets = 7;
  std::vector<double> object_count_weights = {0.8, 0.1, 0.06, 0.04};  // 3..6 objects
  int max_distractors = 2;
  double max_box_iou = 0.4;
  double feature_noise = 0.1;
  double min_confidence = 0.75;
  double max_confidence = 0.98;
  double distractor_min_confidence = 0.1;
  double distractor_max_confidence = 0.3;
  int max_attempts = 200;
};

SceneRecord gen_scene(const Taxonomy& taxonomy, const GenConfig& config,
                      const std::string& scene_id, std::mt19937_64& rng);

struct GeneratedDataset {
  Taxonomy taxonomy;
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> test;
  double mean_train_triplets = 0.0;
  double mean_test_triplets = 0.0;
};

// Train and test scenes come from disjoint per-scene random streams, so any
// scene is reproducible from (seed, split, index) alone.
GeneratedDataset gen_dataset(const GenConfig& config);

}  // namespace mrg
