#include "mrg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "mrg/errors.hpp"
#include "mrg/io.hpp"

namespace mrg {

namespace {

using ordered_json = nlohmann::ordered_json;

void validate_config(const ModelConfig& c) {
  if (c.input_dim == 0 || c.feature_dim == 0 || c.hidden_dim == 0 ||
      c.num_relationship_classes == 0 || c.grid_size == 0) {
    throw DataError("model config: all dimensions must be positive");
  }
  if (!(c.cluster_threshold > 0.0 && c.cluster_threshold <= 1.0)) {
    throw DataError("model config: cluster_threshold must lie in (0, 1]");
  }
}

// Sizes every block to the config without touching values.
template <class P>
void shape_blocks(P& p, const ModelConfig& c) {
  p.object_projection = DenseLayer(c.feature_dim, c.input_dim);
  p.subgraph_init_projection = DenseLayer(c.feature_dim, c.input_dim);
  p.context.key_projection = DenseLayer(c.feature_dim, c.feature_dim);
  p.context.query_projection = DenseLayer(c.feature_dim, c.feature_dim);
  p.context.value_projection = DenseLayer(c.feature_dim, c.feature_dim);
  p.context.alpha = 0.0;
  p.attribute_head = DenseLayer(c.num_relationship_classes, c.feature_dim);
  p.objectness_head = DenseLayer(1, c.feature_dim);
  p.relationship_hidden = DenseLayer(c.hidden_dim, c.feature_dim);
  p.relationship_out = DenseLayer(c.num_relationship_classes + 1, c.hidden_dim);
}

template <class P, class View, class Span>
std::vector<View> views_impl(P& p) {
  std::vector<View> out;
  auto add_layer = [&out](const std::string& name, auto& layer) {
    out.push_back(View{name + ".weight", Span(layer.weight.data.data(), layer.weight.data.size())});
    out.push_back(View{name + ".bias", Span(layer.bias.data(), layer.bias.size())});
  };
  add_layer("object_projection", p.object_projection);
  add_layer("subgraph_init_projection", p.subgraph_init_projection);
  add_layer("context.key_projection", p.context.key_projection);
  add_layer("context.query_projection", p.context.query_projection);
  add_layer("context.value_projection", p.context.value_projection);
  out.push_back(View{"context.alpha", Span(&p.context.alpha, 1)});
  add_layer("attribute_head", p.attribute_head);
  add_layer("objectness_head", p.objectness_head);
  add_layer("relationship_hidden", p.relationship_hidden);
  add_layer("relationship_out", p.relationship_out);
  return out;
}

double dot(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

Box2D cell_rect(const Box2D& region, size_t grid, size_t x, size_t y) {
  double cw = region.width() / static_cast<double>(grid);
  double ch = region.height() / static_cast<double>(grid);
  return Box2D{region.x1 + static_cast<double>(x) * cw, region.y1 + static_cast<double>(y) * ch,
               region.x1 + static_cast<double>(x + 1) * cw,
               region.y1 + static_cast<double>(y + 1) * ch};
}

// Fills the map from precomputed per-proposal subgraph features; optionally
// records cell membership for the backward pass.
void rasterize_impl(const SubgraphRegion& region, std::span<const ObjectProposal> proposals,
                    const std::vector<Vec>& subgraph_feats, SubgraphFeatureMap& map,
                    std::vector<std::vector<int>>* members_out) {
  size_t grid = map.grid;
  if (members_out != nullptr) {
    members_out->assign(grid * grid, {});
  }
  for (size_t y = 0; y < grid; ++y) {
    for (size_t x = 0; x < grid; ++x) {
      Box2D rect = cell_rect(region.region_box, grid, x, y);
      auto cell = map.cell(x, y);
      size_t count = 0;
      for (size_t i = 0; i < proposals.size(); ++i) {
        if (!intersects(proposals[i].box, rect)) {
          continue;
        }
        const Vec& f = subgraph_feats[i];
        for (size_t d = 0; d < map.dim; ++d) {
          cell[d] += f[d];
        }
        ++count;
        if (members_out != nullptr) {
          (*members_out)[y * grid + x].push_back(static_cast<int>(i));
        }
      }
      if (count > 0) {
        double inv = 1.0 / static_cast<double>(count);
        for (size_t d = 0; d < map.dim; ++d) {
          cell[d] *= inv;
        }
      }
    }
  }
}

// Attention and aggregation over one region, keeping intermediates. The cell
// loop runs y outer, x inner everywhere so repeated runs and the standalone
// operations below produce identical bits.
void region_attention_impl(const ContextParams& context, const std::vector<Vec>& features,
                           RegionCache& rc) {
  size_t grid = rc.map.grid;
  size_t dim = rc.map.dim;
  size_t k = features.size();
  rc.keys.clear();
  rc.values.clear();
  for (const Vec& f : features) {
    rc.keys.push_back(dense_forward(context.key_projection, f));
    rc.values.push_back(dense_forward(context.value_projection, f));
  }
  rc.cell_query.assign(grid * grid, {});
  rc.cell_weights.assign(grid * grid, {});
  rc.cell_attended.assign(grid * grid, {});
  rc.aggregated.assign(dim, 0.0);
  for (size_t y = 0; y < grid; ++y) {
    for (size_t x = 0; x < grid; ++x) {
      size_t c = y * grid + x;
      auto cell = rc.map.cell(x, y);
      if (k == 0) {
        for (size_t d = 0; d < dim; ++d) {
          rc.aggregated[d] += cell[d];
        }
        continue;
      }
      Vec q = dense_forward(context.query_projection, rc.map.cell_vec(x, y));
      Vec logits(k);
      for (size_t i = 0; i < k; ++i) {
        logits[i] = dot(rc.keys[i], q);
      }
      Vec w = softmax(logits);
      Vec attended(dim, 0.0);
      for (size_t i = 0; i < k; ++i) {
        for (size_t d = 0; d < dim; ++d) {
          attended[d] += w[i] * rc.values[i][d];
        }
      }
      for (size_t d = 0; d < dim; ++d) {
        rc.aggregated[d] += cell[d] + context.alpha * attended[d];
      }
      rc.cell_query[c] = std::move(q);
      rc.cell_weights[c] = std::move(w);
      rc.cell_attended[c] = std::move(attended);
    }
  }
}

void relationship_impl(const ModelParameters& params, const Vec& subject, const Vec& aggregated,
                       const Vec& object, PairCache& pc) {
  size_t dim = params.config.feature_dim;
  if (subject.size() != dim || aggregated.size() != dim || object.size() != dim) {
    throw ShapeError("predict_relationship: feature length does not match feature_dim");
  }
  pc.sum_pre.resize(dim);
  // (subject + object) first: addition is commutative per component, so a
  // subject/object swap reproduces the exact same bits.
  for (size_t d = 0; d < dim; ++d) {
    pc.sum_pre[d] = (subject[d] + object[d]) + aggregated[d];
  }
  pc.sum_act = relu(pc.sum_pre);
  pc.hidden_pre = dense_forward(params.relationship_hidden, pc.sum_act);
  pc.hidden_act = relu(pc.hidden_pre);
  pc.logits = dense_forward(params.relationship_out, pc.hidden_act);
  pc.probs = softmax(pc.logits);
}

std::unordered_map<int, size_t> position_by_index(std::span<const ObjectProposal> proposals) {
  std::unordered_map<int, size_t> map;
  for (size_t i = 0; i < proposals.size(); ++i) {
    map[proposals[i].index] = i;
  }
  return map;
}

}  // namespace

size_t RelationshipPrediction::argmax() const {
  size_t best = 0;
  for (size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) {
      best = i;
    }
  }
  return best;
}

ModelParameters init_model(const ModelConfig& config, uint64_t seed) {
  validate_config(config);
  ModelParameters p;
  p.config = config;
  shape_blocks(p, config);
  std::mt19937_64 rng(seed);
  auto init_layer = [&rng](DenseLayer& layer, double scale = 1.0) {
    double bound = scale * std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.data) {
      w = dist(rng);
    }
  };
  // Layers feeding a ReLU start with a small positive bias so most units
  // are active at the first step.
  auto relu_bias = [](DenseLayer& layer) {
    for (double& b : layer.bias) b = 0.05;
  };
  init_layer(p.object_projection);
  relu_bias(p.object_projection);
  // A diagonal boost lets object features pass through near-unchanged at the
  // start, so the heads see separable inputs from the first epoch.
  {
    size_t diag = std::min(p.object_projection.in_dim(), p.object_projection.out_dim());
    for (size_t i = 0; i < diag; ++i) {
      p.object_projection.weight(i, i) += 0.5;
    }
  }
  // Subgraph cell features are summed over grid_size^2 cells before they
  // reach the relationship head, so their projection starts small to keep
  // early pair inputs at the same scale as the object features.
  init_layer(p.subgraph_init_projection, 0.1);
  init_layer(p.context.key_projection, 2.0);
  init_layer(p.context.query_projection, 2.0);
  init_layer(p.context.value_projection, 2.0);
  // Output heads start at zero: predictions begin uniform and the first
  // gradients point straight at the labels instead of at init noise.
  init_layer(p.attribute_head, 0.0);
  init_layer(p.objectness_head, 0.0);
  init_layer(p.relationship_hidden);
  relu_bias(p.relationship_hidden);
  {
    size_t diag = std::min(p.relationship_hidden.in_dim(), p.relationship_hidden.out_dim());
    for (size_t i = 0; i < diag; ++i) {
      p.relationship_hidden.weight(i, i) += 0.5;
    }
  }
  init_layer(p.relationship_out, 1.0);
  return p;
}

GradientTape zero_tape(const ModelConfig& config) {
  validate_config(config);
  GradientTape t;
  shape_blocks(t, config);
  return t;
}

std::vector<ParamView> param_views(ModelParameters& params) {
  return views_impl<ModelParameters, ParamView, std::span<double>>(params);
}

std::vector<ConstParamView> param_views(const ModelParameters& params) {
  return views_impl<const ModelParameters, ConstParamView, std::span<const double>>(params);
}

std::vector<ParamView> param_views(GradientTape& tape) {
  return views_impl<GradientTape, ParamView, std::span<double>>(tape);
}

std::vector<ConstParamView> param_views(const GradientTape& tape) {
  return views_impl<const GradientTape, ConstParamView, std::span<const double>>(tape);
}

std::string model_to_json(const ModelParameters& params,
                          const std::vector<std::string>& class_names) {
  const ModelConfig& c = params.config;
  if (class_names.size() != c.num_relationship_classes) {
    throw DataError("model_to_json: class name count does not match the class count");
  }
  ordered_json j;
  j["format"] = "mrg-model";
  j["version"] = 1;
  ordered_json jc;
  jc["input_dim"] = c.input_dim;
  jc["feature_dim"] = c.feature_dim;
  jc["hidden_dim"] = c.hidden_dim;
  jc["num_relationship_classes"] = c.num_relationship_classes;
  jc["grid_size"] = c.grid_size;
  jc["cluster_threshold"] = c.cluster_threshold;
  j["config"] = std::move(jc);
  j["class_names"] = class_names;
  ordered_json jp;
  auto put_layer = [&jp](const std::string& name, const DenseLayer& layer) {
    ordered_json w;
    w["shape"] = ordered_json::array({layer.out_dim(), layer.in_dim()});
    w["values"] = layer.weight.data;
    jp[name + ".weight"] = std::move(w);
    ordered_json b;
    b["shape"] = ordered_json::array({layer.bias.size()});
    b["values"] = layer.bias;
    jp[name + ".bias"] = std::move(b);
  };
  put_layer("object_projection", params.object_projection);
  put_layer("subgraph_init_projection", params.subgraph_init_projection);
  put_layer("context.key_projection", params.context.key_projection);
  put_layer("context.query_projection", params.context.query_projection);
  put_layer("context.value_projection", params.context.value_projection);
  ordered_json ja;
  ja["shape"] = ordered_json::array({1});
  ja["values"] = ordered_json::array({params.context.alpha});
  jp["context.alpha"] = std::move(ja);
  put_layer("attribute_head", params.attribute_head);
  put_layer("objectness_head", params.objectness_head);
  put_layer("relationship_hidden", params.relationship_hidden);
  put_layer("relationship_out", params.relationship_out);
  j["parameters"] = std::move(jp);
  return j.dump(2) + "\n";
}

LoadedModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "mrg-model") {
      throw DataError("model file: unknown format tag");
    }
    const auto& jc = j.at("config");
    ModelConfig c;
    c.input_dim = jc.at("input_dim").get<size_t>();
    c.feature_dim = jc.at("feature_dim").get<size_t>();
    c.hidden_dim = jc.at("hidden_dim").get<size_t>();
    c.num_relationship_classes = jc.at("num_relationship_classes").get<size_t>();
    c.grid_size = jc.at("grid_size").get<size_t>();
    c.cluster_threshold = jc.at("cluster_threshold").get<double>();
    validate_config(c);
    LoadedModel loaded;
    loaded.params.config = c;
    shape_blocks(loaded.params, c);
    loaded.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (loaded.class_names.size() != c.num_relationship_classes) {
      throw DataError("model file: class name count does not match the config");
    }
    const auto& jp = j.at("parameters");
    auto views = param_views(loaded.params);
    if (jp.size() != views.size()) {
      throw DataError("model file: expected " + std::to_string(views.size()) +
                      " parameter entries, found " + std::to_string(jp.size()));
    }
    for (auto& view : views) {
      if (!jp.contains(view.name)) {
        throw DataError("model file: missing parameter " + view.name);
      }
      const auto& entry = jp.at(view.name);
      size_t expect = 1;
      for (const auto& s : entry.at("shape")) {
        expect *= s.get<size_t>();
      }
      const auto& values = entry.at("values");
      if (expect != view.values.size() || values.size() != view.values.size()) {
        throw DataError("model file: shape mismatch for " + view.name);
      }
      for (size_t i = 0; i < view.values.size(); ++i) {
        double v = values[i].get<double>();
        if (!std::isfinite(v)) {
          throw DataError("model file: non-finite value in " + view.name);
        }
        view.values[i] = v;
      }
    }
    return loaded;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ModelParameters& params,
                const std::vector<std::string>& class_names) {
  write_text_atomic(path, model_to_json(params, class_names));
}

LoadedModel load_model(const std::filesystem::path& path) {
  return model_from_json(read_text_file(path));
}

std::vector<Vec> project_objects(const ModelParameters& params,
                                 std::span<const ObjectProposal> proposals) {
  std::vector<Vec> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    out.push_back(relu(dense_forward(params.object_projection, p.appearance)));
  }
  return out;
}

std::vector<int> contained_objects(const SubgraphRegion& region,
                                   std::span<const ObjectProposal> proposals) {
  std::vector<int> out;
  for (size_t i = 0; i < proposals.size(); ++i) {
    if (intersects(proposals[i].box, region.region_box)) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

SubgraphFeatureMap rasterize_subgraph(const ModelParameters& params, const SubgraphRegion& region,
                                      std::span<const ObjectProposal> proposals) {
  validate_box(region.region_box, "subgraph region");
  std::vector<Vec> feats;
  feats.reserve(proposals.size());
  for (const auto& p : proposals) {
    feats.push_back(relu(dense_forward(params.subgraph_init_projection, p.appearance)));
  }
  SubgraphFeatureMap map(params.config.grid_size, params.config.feature_dim);
  rasterize_impl(region, proposals, feats, map, nullptr);
  return map;
}

Vec attention_weights(const ContextParams& context, const std::vector<Vec>& object_features,
                      const SubgraphFeatureMap& map, size_t x, size_t y) {
  if (object_features.empty()) {
    throw ShapeError("attention_weights: needs at least one object feature");
  }
  Vec q = dense_forward(context.query_projection, map.cell_vec(x, y));
  Vec logits(object_features.size());
  for (size_t i = 0; i < object_features.size(); ++i) {
    logits[i] = dot(dense_forward(context.key_projection, object_features[i]), q);
  }
  return softmax(logits);
}

Vec weighted_object_features(const ContextParams& context, const std::vector<Vec>& object_features,
                             const SubgraphFeatureMap& map, size_t x, size_t y) {
  Vec w = attention_weights(context, object_features, map, x, y);
  Vec out(map.dim, 0.0);
  for (size_t i = 0; i < object_features.size(); ++i) {
    Vec v = dense_forward(context.value_projection, object_features[i]);
    for (size_t d = 0; d < map.dim; ++d) {
      out[d] += w[i] * v[d];
    }
  }
  return out;
}

Vec aggregate_subgraph(const ContextParams& context, const std::vector<Vec>& object_features,
                       const SubgraphFeatureMap& map) {
  Vec acc(map.dim, 0.0);
  for (size_t y = 0; y < map.grid; ++y) {
    for (size_t x = 0; x < map.grid; ++x) {
      auto cell = map.cell(x, y);
      if (object_features.empty()) {
        for (size_t d = 0; d < map.dim; ++d) {
          acc[d] += cell[d];
        }
        continue;
      }
      Vec attended = weighted_object_features(context, object_features, map, x, y);
      for (size_t d = 0; d < map.dim; ++d) {
        acc[d] += cell[d] + context.alpha * attended[d];
      }
    }
  }
  return acc;
}

Vec predict_attributes(const ModelParameters& params, const Vec& object_feature) {
  return sigmoid(dense_forward(params.attribute_head, object_feature));
}

double predict_objectness(const ModelParameters& params, const Vec& object_feature) {
  return sigmoid(dense_forward(params.objectness_head, object_feature)[0]);
}

RelationshipPrediction predict_relationship(const ModelParameters& params,
                                            const Vec& subject_feature, const Vec& aggregated,
                                            const Vec& object_feature) {
  PairCache pc;
  relationship_impl(params, subject_feature, aggregated, object_feature, pc);
  return RelationshipPrediction{std::move(pc.probs)};
}

ForwardCache forward_scene_cached(const ModelParameters& params,
                                  std::span<const ObjectProposal> proposals,
                                  const std::vector<char>* pair_mask) {
  const ModelConfig& c = params.config;
  for (const auto& p : proposals) {
    if (p.appearance.size() != c.input_dim) {
      throw ShapeError("forward: appearance length " + std::to_string(p.appearance.size()) +
                       " does not match input_dim " + std::to_string(c.input_dim));
    }
  }
  ForwardCache cache;
  size_t n = proposals.size();
  cache.object_pre.reserve(n);
  cache.object_feat.reserve(n);
  cache.subgraph_pre.reserve(n);
  cache.subgraph_feat.reserve(n);
  for (const auto& p : proposals) {
    Vec pre = dense_forward(params.object_projection, p.appearance);
    cache.object_feat.push_back(relu(pre));
    cache.object_pre.push_back(std::move(pre));
    Vec spre = dense_forward(params.subgraph_init_projection, p.appearance);
    cache.subgraph_feat.push_back(relu(spre));
    cache.subgraph_pre.push_back(std::move(spre));
  }
  for (size_t i = 0; i < n; ++i) {
    Vec alog = dense_forward(params.attribute_head, cache.object_feat[i]);
    cache.attribute_probs.push_back(sigmoid(alog));
    cache.attribute_logits.push_back(std::move(alog));
    double olog = dense_forward(params.objectness_head, cache.object_feat[i])[0];
    cache.objectness_logit.push_back(olog);
    cache.objectness_prob.push_back(sigmoid(olog));
  }

  cache.edges = build_pair_graph(proposals);
  if (pair_mask != nullptr && pair_mask->size() != cache.edges.size()) {
    throw ShapeError("forward: pair mask length does not match pair count");
  }
  cache.regions = cluster_subgraphs(cache.edges, proposals, c.cluster_threshold);

  std::vector<char> region_used(cache.regions.size(), pair_mask == nullptr ? 1 : 0);
  if (pair_mask != nullptr) {
    for (size_t e = 0; e < cache.edges.size(); ++e) {
      if ((*pair_mask)[e]) {
        region_used[static_cast<size_t>(cache.edges[e].subgraph_id)] = 1;
      }
    }
  }

  cache.region_caches.resize(cache.regions.size());
  for (size_t r = 0; r < cache.regions.size(); ++r) {
    if (!region_used[r]) {
      continue;
    }
    RegionCache& rc = cache.region_caches[r];
    rc.used = true;
    rc.map = SubgraphFeatureMap(c.grid_size, c.feature_dim);
    rasterize_impl(cache.regions[r], proposals, cache.subgraph_feat, rc.map, &rc.cell_members);
    rc.contained = contained_objects(cache.regions[r], proposals);
    std::vector<Vec> features;
    features.reserve(rc.contained.size());
    for (int pos : rc.contained) {
      features.push_back(cache.object_feat[static_cast<size_t>(pos)]);
    }
    region_attention_impl(params.context, features, rc);
  }

  auto positions = position_by_index(proposals);
  cache.pair_caches.resize(cache.edges.size());
  for (size_t e = 0; e < cache.edges.size(); ++e) {
    if (pair_mask != nullptr && !(*pair_mask)[e]) {
      continue;
    }
    const PairEdge& edge = cache.edges[e];
    PairCache& pc = cache.pair_caches[e];
    size_t s = positions.at(edge.subject_index);
    size_t o = positions.at(edge.object_index);
    const RegionCache& rc = cache.region_caches[static_cast<size_t>(edge.subgraph_id)];
    relationship_impl(params, cache.object_feat[s], rc.aggregated, cache.object_feat[o], pc);
    pc.used = true;
  }
  return cache;
}

SceneOutputs forward_scene(const ModelParameters& params,
                           std::span<const ObjectProposal> proposals) {
  ForwardCache cache = forward_scene_cached(params, proposals, nullptr);
  SceneOutputs out;
  out.edges = cache.edges;
  out.regions = cache.regions;
  out.objectness = cache.objectness_prob;
  out.attributes = cache.attribute_probs;
  out.pair_predictions.reserve(cache.pair_caches.size());
  for (auto& pc : cache.pair_caches) {
    out.pair_predictions.push_back(RelationshipPrediction{pc.probs});
  }
  return out;
}

void backward_scene(const ModelParameters& params, std::span<const ObjectProposal> proposals,
                    const ForwardCache& cache, const HeadGradients& heads, GradientTape& tape) {
  const ModelConfig& c = params.config;
  size_t n = proposals.size();
  size_t dim = c.feature_dim;
  if (!heads.pair_logit_grads.empty() && heads.pair_logit_grads.size() != cache.edges.size()) {
    throw ShapeError("backward: pair gradient count does not match pair count");
  }
  if (!heads.attribute_logit_grads.empty() && heads.attribute_logit_grads.size() != n) {
    throw ShapeError("backward: attribute gradient count does not match proposal count");
  }
  if (!heads.objectness_logit_grads.empty() && heads.objectness_logit_grads.size() != n) {
    throw ShapeError("backward: objectness gradient count does not match proposal count");
  }

  auto positions = position_by_index(proposals);
  std::vector<Vec> g_object(n, Vec(dim, 0.0));
  std::vector<Vec> g_subgraph(n);
  std::vector<Vec> g_region_agg(cache.regions.size());

  // Relationship pairs: output head back to the pair input sum.
  for (size_t e = 0; e < heads.pair_logit_grads.size(); ++e) {
    const Vec& g_logits = heads.pair_logit_grads[e];
    if (g_logits.empty()) {
      continue;
    }
    const PairCache& pc = cache.pair_caches[e];
    if (!pc.used) {
      throw ShapeError("backward: gradient supplied for a pair the forward pass skipped");
    }
    Vec g_hidden_act(c.hidden_dim, 0.0);
    dense_backward(params.relationship_out, pc.hidden_act, g_logits, tape.relationship_out,
                   &g_hidden_act);
    Vec g_hidden_pre = relu_backward(pc.hidden_pre, g_hidden_act);
    Vec g_sum_act(dim, 0.0);
    dense_backward(params.relationship_hidden, pc.sum_act, g_hidden_pre, tape.relationship_hidden,
                   &g_sum_act);
    Vec g_sum_pre = relu_backward(pc.sum_pre, g_sum_act);
    size_t s = positions.at(cache.edges[e].subject_index);
    size_t o = positions.at(cache.edges[e].object_index);
    auto r = static_cast<size_t>(cache.edges[e].subgraph_id);
    if (g_region_agg[r].empty()) {
      g_region_agg[r].assign(dim, 0.0);
    }
    for (size_t d = 0; d < dim; ++d) {
      g_object[s][d] += g_sum_pre[d];
      g_object[o][d] += g_sum_pre[d];
      g_region_agg[r][d] += g_sum_pre[d];
    }
  }

  // Regions: aggregation, attention, rasterization.
  for (size_t r = 0; r < cache.regions.size(); ++r) {
    const Vec& g_agg = g_region_agg[r];
    if (g_agg.empty()) {
      continue;
    }
    const RegionCache& rc = cache.region_caches[r];
    size_t grid = rc.map.grid;
    size_t k = rc.contained.size();
    std::vector<Vec> g_keys(k, Vec(dim, 0.0));
    std::vector<Vec> g_values(k, Vec(dim, 0.0));
    for (size_t y = 0; y < grid; ++y) {
      for (size_t x = 0; x < grid; ++x) {
        size_t cidx = y * grid + x;
        Vec g_cell(g_agg);  // direct spatial-sum term
        if (k > 0) {
          const Vec& w = rc.cell_weights[cidx];
          const Vec& attended = rc.cell_attended[cidx];
          tape.context.alpha += dot(g_agg, attended);
          double a = params.context.alpha;
          Vec g_w(k, 0.0);
          for (size_t i = 0; i < k; ++i) {
            double gw = 0.0;
            for (size_t d = 0; d < dim; ++d) {
              gw += a * g_agg[d] * rc.values[i][d];
              g_values[i][d] += w[i] * a * g_agg[d];
            }
            g_w[i] = gw;
          }
          Vec g_att_logits = softmax_backward(w, g_w);
          Vec g_query(dim, 0.0);
          for (size_t i = 0; i < k; ++i) {
            for (size_t d = 0; d < dim; ++d) {
              g_keys[i][d] += g_att_logits[i] * rc.cell_query[cidx][d];
              g_query[d] += g_att_logits[i] * rc.keys[i][d];
            }
          }
          dense_backward(params.context.query_projection, rc.map.cell_vec(x, y), g_query,
                         tape.context.query_projection, &g_cell);
        }
        const auto& members = rc.cell_members[cidx];
        if (!members.empty()) {
          double inv = 1.0 / static_cast<double>(members.size());
          for (int m : members) {
            auto mi = static_cast<size_t>(m);
            if (g_subgraph[mi].empty()) {
              g_subgraph[mi].assign(dim, 0.0);
            }
            for (size_t d = 0; d < dim; ++d) {
              g_subgraph[mi][d] += g_cell[d] * inv;
            }
          }
        }
      }
    }
    for (size_t i = 0; i < k; ++i) {
      auto pos = static_cast<size_t>(rc.contained[i]);
      dense_backward(params.context.key_projection, cache.object_feat[pos], g_keys[i],
                     tape.context.key_projection, &g_object[pos]);
      dense_backward(params.context.value_projection, cache.object_feat[pos], g_values[i],
                     tape.context.value_projection, &g_object[pos]);
    }
  }

  // Per-proposal heads.
  for (size_t i = 0; i < heads.attribute_logit_grads.size(); ++i) {
    if (heads.attribute_logit_grads[i].empty()) {
      continue;
    }
    dense_backward(params.attribute_head, cache.object_feat[i], heads.attribute_logit_grads[i],
                   tape.attribute_head, &g_object[i]);
  }
  for (size_t i = 0; i < heads.objectness_logit_grads.size(); ++i) {
    Vec g{heads.objectness_logit_grads[i]};
    dense_backward(params.objectness_head, cache.object_feat[i], g, tape.objectness_head,
                   &g_object[i]);
  }

  // Projections back to the appearance inputs.
  for (size_t i = 0; i < n; ++i) {
    Vec g_pre = relu_backward(cache.object_pre[i], g_object[i]);
    dense_backward(params.object_projection, proposals[i].appearance, g_pre,
                   tape.object_projection, nullptr);
    if (!g_subgraph[i].empty()) {
      Vec g_spre = relu_backward(cache.subgraph_pre[i], g_subgraph[i]);
      dense_backward(params.subgraph_init_projection, proposals[i].appearance, g_spre,
                     tape.subgraph_init_projection, nullptr);
    }
  }
}

double min_relu_margin(const ForwardCache& cache) {
  double margin = std::numeric_limits<double>::infinity();
  auto scan = [&margin](const Vec& v) {
    for (double x : v) {
      margin = std::min(margin, std::abs(x));
    }
  };
  for (const auto& v : cache.object_pre) {
    scan(v);
  }
  std::set<int> raster_members;
  for (const auto& rc : cache.region_caches) {
    if (!rc.used) {
      continue;
    }
    for (const auto& cell : rc.cell_members) {
      raster_members.insert(cell.begin(), cell.end());
    }
  }
  for (int m : raster_members) {
    scan(cache.subgraph_pre[static_cast<size_t>(m)]);
  }
  for (const auto& pc : cache.pair_caches) {
    if (!pc.used) {
      continue;
    }
    scan(pc.sum_pre);
    scan(pc.hidden_pre);
  }
  return margin;
}

}  // namespace mrg
