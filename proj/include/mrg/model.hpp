#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mrg/graph.hpp"
#include "mrg/nn.hpp"
#include "mrg/scene.hpp"

namespace mrg {

struct ModelConfig {
  size_t input_dim = 32;    // appearance feature length
  size_t feature_dim = 32;  // projected object feature length
  size_t hidden_dim = 32;   // relationship head hidden width
  size_t num_relationship_classes = 6;  // R; pair heads emit R+1 with class 0 = background
  size_t grid_size = 5;     // subgraph maps are grid_size x grid_size
  double cluster_threshold = 0.5;
};

/// Attention context block: key/query/value projections plus the learnable
// residual weight alpha applied to attended features during aggregation.
struct ContextParams {
  DenseLayer key_projection;
  DenseLayer query_projection;
  DenseLayer value_projection;
  double alpha = 0.0;
};

struct ModelParameters {
  ModelConfig config;
  DenseLayer object_projection;         // input_dim -> feature_dim, ReLU
  DenseLayer subgraph_init_projection;  // input_dim -> feature_dim, ReLU
  ContextParams context;                // feature_dim -> feature_dim each
  DenseLayer attribute_head;            // feature_dim -> R, sigmoid
  DenseLayer objectness_head;           // feature_dim -> 1, sigmoid
  DenseLayer relationship_hidden;       // feature_dim -> hidden_dim, ReLU
  DenseLayer relationship_out;          // hidden_dim -> R + 1, softmax
};

// Per-parameter gradient accumulators, shaped exactly like ModelParameters.
struct GradientTape {
  DenseLayer object_projection;
  DenseLayer subgraph_init_projection;
  ContextParams context;
  DenseLayer attribute_head;
  DenseLayer objectness_head;
  DenseLayer relationship_hidden;
  DenseLayer relationship_out;
};

// Seeded uniform init scaled by fan-in/fan-out. Head biases and alpha start
// at 0; ReLU-layer biases start slightly positive to keep units live.
ModelParameters init_model(const ModelConfig& config, uint64_t seed);

GradientTape zero_tape(const ModelConfig& config);

// Flat named views over every trainable block, in one fixed canonical order
// shared by ModelParameters and GradientTape.
std::vector<ParamView> param_views(ModelParameters& params);
std::vector<ConstParamView> param_views(const ModelParameters& params);
std::vector<ParamView> param_views(GradientTape& tape);
std::vector<ConstParamView> param_views(const GradientTape& tape);

/// Model file: one JSON document carrying the config, relationship class
// names, and a name -> {shape, row-major values} map of every parameter.
// Round-trips losslessly at 64-bit float precision.
void save_model(const std::filesystem::path& path, const ModelParameters& params,
                const std::vector<std::string>& class_names);

struct LoadedModel {
  ModelParameters params;
  std::vector<std::string> class_names;
};

LoadedModel load_model(const std::filesystem::path& path);

std::string model_to_json(const ModelParameters& params,
                          const std::vector<std::string>& class_names);
LoadedModel model_from_json(const std::string& text);

// grid x grid grid of feature_dim cell vectors, row-major by (y, x).
struct SubgraphFeatureMap {
  size_t grid = 0;
  size_t dim = 0;
  std::vector<double> data;

  SubgraphFeatureMap() = default;
  SubgraphFeatureMap(size_t g, size_t d) : grid(g), dim(d), data(g * g * d, 0.0) {}

  std::span<double> cell(size_t x, size_t y) {
    return std::span<double>(data.data() + (y * grid + x) * dim, dim);
  }
  std::span<const double> cell(size_t x, size_t y) const {
    return std::span<const double>(data.data() + (y * grid + x) * dim, dim);
  }
  Vec cell_vec(size_t x, size_t y) const {
    auto c = cell(x, y);
    return Vec(c.begin(), c.end());
  }
};

// Distribution over R+1 relationship classes; probs[0] is background.
struct RelationshipPrediction {
  Vec probs;

  // Lowest class id wins ties.
  size_t argmax() const;
};

// ReLU(object_projection(appearance)) per proposal, in input order.
std::vector<Vec> project_objects(const ModelParameters& params,
                                 std::span<const ObjectProposal> proposals);

// Positions (into `proposals`) of objects whose box overlaps the region box
// with positive area, ascending.
std::vector<int> contained_objects(const SubgraphRegion& region,
                                   std::span<const ObjectProposal> proposals);

/**
 * @brief Rasterizes a region into its grid feature map.
 *
 * Each cell holds the mean of ReLU(subgraph_init_projection(appearance))
 * over the proposals whose box overlaps the cell rectangle with positive
 * area, or zeros when no proposal does.
 */
SubgraphFeatureMap rasterize_subgraph(const ModelParameters& params, const SubgraphRegion& region,
                                      std::span<const ObjectProposal> proposals);

// Softmax over <key_projection(o_i), query_projection(cell)> for the given
// object features. Sums to 1; uniform when all features are identical.
Vec attention_weights(const ContextParams& context, const std::vector<Vec>& object_features,
                      const SubgraphFeatureMap& map, size_t x, size_t y);

// Attention-weighted sum of value_projection(o_i) at one cell.
Vec weighted_object_features(const ContextParams& context, const std::vector<Vec>& object_features,
                             const SubgraphFeatureMap& map, size_t x, size_t y);

// Sum over all cells of (cell + alpha * attended cell). With alpha == 0 this
// equals the plain spatial sum of the map, bit for bit.
Vec aggregate_subgraph(const ContextParams& context, const std::vector<Vec>& object_features,
                       const SubgraphFeatureMap& map);

// Per-class sigmoid affordance probabilities for one projected object.
Vec predict_attributes(const ModelParameters& params, const Vec& object_feature);

// Scalar probability that the proposal is a real object.
double predict_objectness(const ModelParameters& params, const Vec& object_feature);

// softmax(out(ReLU(hidden(ReLU(subject + aggregated + object))))). The input
// sum is evaluated as (subject + object) + aggregated so swapping subject and
// object returns bit-identical probabilities.
RelationshipPrediction predict_relationship(const ModelParameters& params,
                                            const Vec& subject_feature, const Vec& aggregated,
                                            const Vec& object_feature);

struct SceneOutputs {
  std::vector<PairEdge> edges;          // pair-graph order
  std::vector<SubgraphRegion> regions;  // seeding order
  std::vector<double> objectness;       // per proposal, input order
  std::vector<Vec> attributes;          // per proposal
  std::vector<RelationshipPrediction> pair_predictions;  // aligned with edges
};

/// Full forward pass: projection, clustering, rasterization, attention
// aggregation, heads. Deterministic; proposals with fewer than 2 entries
// yield empty pair outputs.
SceneOutputs forward_scene(const ModelParameters& params,
                           std::span<const ObjectProposal> proposals);

// Intermediates retained for the manual backward pass.
struct RegionCache {
  bool used = false;
  SubgraphFeatureMap map;
  std::vector<std::vector<int>> cell_members;  // proposal positions per cell
  std::vector<int> contained;                  // proposal positions, ascending
  std::vector<Vec> keys;                       // per contained object
  std::vector<Vec> values;
  std::vector<Vec> cell_query;                 // per cell
  std::vector<Vec> cell_weights;               // per cell, length K
  std::vector<Vec> cell_attended;              // per cell weighted value sum
  Vec aggregated;
};

struct PairCache {
  bool used = false;
  Vec sum_pre;     // (o_subject + o_object) + aggregated
  Vec sum_act;
  Vec hidden_pre;
  Vec hidden_act;
  Vec logits;
  Vec probs;
};

struct ForwardCache {
  std::vector<Vec> object_pre;     // object projection pre-activations
  std::vector<Vec> object_feat;    // o_i
  std::vector<Vec> subgraph_pre;   // subgraph projection pre-activations
  std::vector<Vec> subgraph_feat;  // per-object rasterization features
  std::vector<Vec> attribute_logits;
  std::vector<Vec> attribute_probs;
  std::vector<double> objectness_logit;
  std::vector<double> objectness_prob;
  std::vector<PairEdge> edges;
  std::vector<SubgraphRegion> regions;
  std::vector<RegionCache> region_caches;
  std::vector<PairCache> pair_caches;
};

// Forward pass keeping intermediates. When pair_mask is given (one flag per
// pair-graph edge), relationship outputs are computed only for enabled pairs
// and regions no enabled pair uses are skipped entirely.
ForwardCache forward_scene_cached(const ModelParameters& params,
                                  std::span<const ObjectProposal> proposals,
                                  const std::vector<char>* pair_mask = nullptr);

// Upstream gradients at the head logits. Empty vectors mean no contribution.
struct HeadGradients {
  std::vector<Vec> pair_logit_grads;        // per edge, length R+1
  std::vector<Vec> attribute_logit_grads;   // per proposal, length R
  std::vector<double> objectness_logit_grads;  // per proposal
};

// Reverse-mode pass through heads, aggregation, attention, rasterization and
// both projections. Accumulates into tape.
void backward_scene(const ModelParameters& params, std::span<const ObjectProposal> proposals,
                    const ForwardCache& cache, const HeadGradients& heads, GradientTape& tape);

// Smallest |pre-activation| any ReLU on a used path reached during the pass.
// Finite-difference checks need this above the probe epsilon to be valid.
double min_relu_margin(const ForwardCache& cache);

}  // namespace mrg
