#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mrg/model.hpp"
#include "mrg/scene.hpp"

namespace mrg {

struct TrainConfig {
  size_t epochs = 15;
  double initial_lr = 1e-3;
  double lr_decay_factor = 0.1;
  size_t lr_decay_every = 5;  // epochs per decay step
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  size_t negative_ratio = 3;  // background pairs kept per positive pair
  double w_relationship = 1.0;
  double w_attribute = 1.0;
  double w_objectness = 1.0;
  uint64_t seed = 1;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

// Relationship target for one ordered proposal pair; class 0 is background.
struct LabeledPair {
  int subject_index = 0;
  int object_index = 0;
  int relationship_class = 0;
};

// Labels every ordered pair in pair-graph order from the scene's GT
// triplets. Dangling GT indices and duplicate GT entries for the same
// ordered pair are data errors.
std::vector<LabeledPair> label_pairs(const SceneRecord& scene);

// Keeps every positive pair and a uniform subsample of at most
// negative_ratio * positives background pairs, returned in pair-graph order.
std::vector<LabeledPair> sample_training_pairs(const std::vector<LabeledPair>& pairs,
                                               size_t negative_ratio, std::mt19937_64& rng);

// initial_lr * decay^floor((epoch - 1) / every); epoch is 1-based.
double learning_rate(const TrainConfig& config, size_t epoch);

struct LossBreakdown {
  double total = 0.0;
  double relationship = 0.0;  // mean cross-entropy over the sampled pairs
  double attribute = 0.0;     // mean BCE over proposals
  double objectness = 0.0;    // mean BCE over proposals
};

struct SceneLossResult {
  LossBreakdown loss;
  GradientTape tape;
  size_t sampled_pairs = 0;
  double relu_margin = 0.0;  // diagnostics for finite-difference validity
};

// Weighted scene loss with full gradients. Throws NumericalError when the
// loss is non-finite.
SceneLossResult scene_loss(const ModelParameters& params, const SceneRecord& scene,
                           const std::vector<LabeledPair>& sampled, const TrainConfig& config);

struct EpochStats {
  size_t epoch = 0;
  double mean_loss = 0.0;
  double relationship_loss = 0.0;
  double attribute_loss = 0.0;
  double objectness_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParameters params;
  std::vector<EpochStats> history;
  long steps = 0;  // optimizer steps taken; one per scene per epoch
};

/**
 * @brief Full training loop: one Adam step per scene, shuffled every epoch.
 *
 * Scene order, negative sampling and parameter init all derive from
 * config.seed, so identical inputs reproduce identical parameters.
 * A non-finite loss aborts with the epoch and scene in the message.
 */
TrainResult train(const std::vector<SceneRecord>& scenes, const TrainConfig& config,
                  const ModelConfig& model_config);

// CSV with header epoch,mean_loss,relationship_loss,attribute_loss,objectness_loss,lr.
std::string history_to_csv(const std::vector<EpochStats>& history);

}  // namespace mrg
