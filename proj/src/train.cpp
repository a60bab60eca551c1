#include "mrg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <utility>

#include <json.hpp>

#include "mrg/errors.hpp"
#include "mrg/graph.hpp"
#include "mrg/nn.hpp"

namespace mrg {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["initial_lr"] = c.initial_lr;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["lr_decay_every"] = c.lr_decay_every;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["negative_ratio"] = c.negative_ratio;
  j["loss_weights"] = ordered_json{{"relationship", c.w_relationship},
                                   {"attribute", c.w_attribute},
                                   {"objectness", c.w_objectness}};
  j["seed"] = c.seed;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    TrainConfig c;
    c.epochs = j.at("epochs").get<size_t>();
    c.initial_lr = j.at("initial_lr").get<double>();
    c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
    c.lr_decay_every = j.at("lr_decay_every").get<size_t>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.negative_ratio = j.at("negative_ratio").get<size_t>();
    const auto& w = j.at("loss_weights");
    c.w_relationship = w.at("relationship").get<double>();
    c.w_attribute = w.at("attribute").get<double>();
    c.w_objectness = w.at("objectness").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("train config: ") + e.what());
  }
}

std::vector<LabeledPair> label_pairs(const SceneRecord& scene) {
  auto proposals = scene.proposals();
  auto edges = build_pair_graph(proposals);
  std::map<std::pair<int, int>, int> gt;
  for (const auto& t : scene.gt_triplets) {
    if (t.relationship < 1) {
      throw DataError("scene " + scene.scene_id + ": GT relationship id must be >= 1");
    }
    auto key = std::make_pair(t.subject, t.object);
    if (gt.count(key)) {
      throw DataError("scene " + scene.scene_id + ": duplicate GT for pair (" +
                      std::to_string(t.subject) + ", " + std::to_string(t.object) + ")");
    }
    gt[key] = t.relationship;
  }
  std::vector<LabeledPair> out;
  out.reserve(edges.size());
  size_t matched = 0;
  for (const auto& e : edges) {
    auto it = gt.find(std::make_pair(e.subject_index, e.object_index));
    int cls = 0;
    if (it != gt.end()) {
      cls = it->second;
      ++matched;
    }
    out.push_back(LabeledPair{e.subject_index, e.object_index, cls});
  }
  if (matched != gt.size()) {
    throw DataError("scene " + scene.scene_id + ": GT triplet references an unknown proposal");
  }
  return out;
}

std::vector<LabeledPair> sample_training_pairs(const std::vector<LabeledPair>& pairs,
                                               size_t negative_ratio, std::mt19937_64& rng) {
  size_t positives = 0;
  std::vector<size_t> negative_pos;
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].relationship_class > 0) {
      ++positives;
    } else {
      negative_pos.push_back(i);
    }
  }
  size_t budget = negative_ratio * positives;
  std::vector<char> keep(pairs.size(), 0);
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].relationship_class > 0) {
      keep[i] = 1;
    }
  }
  if (negative_pos.size() <= budget) {
    for (size_t i : negative_pos) {
      keep[i] = 1;
    }
  } else {
    // Partial Fisher-Yates: the first `budget` entries are a uniform draw
    // without replacement.
    for (size_t i = 0; i < budget; ++i) {
      std::uniform_int_distribution<size_t> dist(i, negative_pos.size() - 1);
      std::swap(negative_pos[i], negative_pos[dist(rng)]);
      keep[negative_pos[i]] = 1;
    }
  }
  std::vector<LabeledPair> out;
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (keep[i]) {
      out.push_back(pairs[i]);
    }
  }
  return out;
}

double learning_rate(const TrainConfig& config, size_t epoch) {
  if (epoch == 0) {
    throw DataError("learning_rate: epoch is 1-based");
  }
  auto steps = static_cast<double>((epoch - 1) / config.lr_decay_every);
  return config.initial_lr * std::pow(config.lr_decay_factor, steps);
}

SceneLossResult scene_loss(const ModelParameters& params, const SceneRecord& scene,
                           const std::vector<LabeledPair>& sampled, const TrainConfig& config) {
  size_t r_classes = params.config.num_relationship_classes;
  auto proposals = scene.proposals();
  size_t n = proposals.size();
  if (n == 0) {
    throw DataError("scene " + scene.scene_id + ": no objects");
  }
  for (const auto& o : scene.objects) {
    if (o.attributes.size() != r_classes) {
      throw DataError("scene " + scene.scene_id + ": attribute target length " +
                      std::to_string(o.attributes.size()) + " does not match class count " +
                      std::to_string(r_classes));
    }
  }

  auto edges = build_pair_graph(proposals);
  std::map<std::pair<int, int>, size_t> edge_pos;
  for (size_t e = 0; e < edges.size(); ++e) {
    edge_pos[{edges[e].subject_index, edges[e].object_index}] = e;
  }
  std::vector<char> mask(edges.size(), 0);
  std::vector<size_t> sampled_edges;
  sampled_edges.reserve(sampled.size());
  for (const auto& p : sampled) {
    auto it = edge_pos.find({p.subject_index, p.object_index});
    if (it == edge_pos.end()) {
      throw DataError("scene " + scene.scene_id + ": sampled pair is not in the pair graph");
    }
    if (p.relationship_class < 0 || static_cast<size_t>(p.relationship_class) > r_classes) {
      throw DataError("scene " + scene.scene_id + ": relationship class out of range");
    }
    mask[it->second] = 1;
    sampled_edges.push_back(it->second);
  }

  ForwardCache cache = forward_scene_cached(params, proposals, &mask);

  SceneLossResult result;
  result.sampled_pairs = sampled.size();

  double rel_sum = 0.0;
  for (size_t i = 0; i < sampled.size(); ++i) {
    const auto& pc = cache.pair_caches[sampled_edges[i]];
    rel_sum += cross_entropy(pc.probs, static_cast<size_t>(sampled[i].relationship_class));
  }
  result.loss.relationship = sampled.empty() ? 0.0 : rel_sum / static_cast<double>(sampled.size());

  double att_sum = 0.0;
  double obj_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    att_sum += binary_cross_entropy(cache.attribute_probs[i], scene.objects[i].attributes);
    Vec p{cache.objectness_prob[i]};
    Vec t{scene.objects[i].is_object ? 1.0 : 0.0};
    obj_sum += binary_cross_entropy(p, t);
  }
  result.loss.attribute = att_sum / static_cast<double>(n);
  result.loss.objectness = obj_sum / static_cast<double>(n);
  result.loss.total = config.w_relationship * result.loss.relationship +
                      config.w_attribute * result.loss.attribute +
                      config.w_objectness * result.loss.objectness;
  if (!std::isfinite(result.loss.total)) {
    throw NumericalError("scene " + scene.scene_id + ": non-finite loss");
  }

  HeadGradients heads;
  heads.pair_logit_grads.assign(edges.size(), {});
  if (!sampled.empty()) {
    double scale = config.w_relationship / static_cast<double>(sampled.size());
    for (size_t i = 0; i < sampled.size(); ++i) {
      const auto& pc = cache.pair_caches[sampled_edges[i]];
      Vec g = cross_entropy_softmax_backward(pc.probs,
                                             static_cast<size_t>(sampled[i].relationship_class));
      for (double& v : g) {
        v *= scale;
      }
      heads.pair_logit_grads[sampled_edges[i]] = std::move(g);
    }
  }
  heads.attribute_logit_grads.resize(n);
  heads.objectness_logit_grads.resize(n);
  double att_scale = config.w_attribute / static_cast<double>(n);
  double obj_scale = config.w_objectness / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    Vec g = binary_cross_entropy_sigmoid_backward(cache.attribute_probs[i],
                                                  scene.objects[i].attributes);
    for (double& v : g) {
      v *= att_scale;
    }
    heads.attribute_logit_grads[i] = std::move(g);
    Vec p{cache.objectness_prob[i]};
    Vec t{scene.objects[i].is_object ? 1.0 : 0.0};
    heads.objectness_logit_grads[i] = binary_cross_entropy_sigmoid_backward(p, t)[0] * obj_scale;
  }

  result.tape = zero_tape(params.config);
  backward_scene(params, proposals, cache, heads, result.tape);
  result.relu_margin = min_relu_margin(cache);
  return result;
}

TrainResult train(const std::vector<SceneRecord>& scenes, const TrainConfig& config,
                  const ModelConfig& model_config) {
  if (scenes.empty()) {
    throw DataError("train: no scenes");
  }
  if (config.epochs == 0 || config.lr_decay_every == 0) {
    throw DataError("train: epochs and lr_decay_every must be positive");
  }
  TrainResult result;
  result.params = init_model(model_config, config.seed);
  AdamConfig adam{config.initial_lr, config.beta1, config.beta2, config.adam_eps,
                  config.weight_decay};
  AdamState state;
  std::vector<size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    adam.lr = learning_rate(config, epoch);
    std::seed_seq seq{static_cast<uint32_t>(config.seed), static_cast<uint32_t>(config.seed >> 32),
                      static_cast<uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    double sum_total = 0.0;
    double sum_rel = 0.0;
    double sum_att = 0.0;
    double sum_obj = 0.0;
    for (size_t idx : order) {
      const SceneRecord& scene = scenes[idx];
      try {
        auto labeled = label_pairs(scene);
        auto sampled = sample_training_pairs(labeled, config.negative_ratio, rng);
        auto res = scene_loss(result.params, scene, sampled, config);
        const GradientTape& tape = res.tape;
        adam_step(param_views(result.params), param_views(tape), state, adam);
        sum_total += res.loss.total;
        sum_rel += res.loss.relationship;
        sum_att += res.loss.attribute;
        sum_obj += res.loss.objectness;
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", scene " + scene.scene_id +
                             ": " + e.what());
      }
    }
    auto n = static_cast<double>(scenes.size());
    result.history.push_back(EpochStats{epoch, sum_total / n, sum_rel / n, sum_att / n,
                                        sum_obj / n, adam.lr});
  }
  result.steps = state.step_count;
  return result;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,mean_loss,relationship_loss,attribute_loss,objectness_loss,lr\n";
  for (const auto& row : history) {
    out += std::to_string(row.epoch);
    out += ',';
    out += format_double(row.mean_loss);
    out += ',';
    out += format_double(row.relationship_loss);
    out += ',';
    out += format_double(row.attribute_loss);
    out += ',';
    out += format_double(row.objectness_loss);
    out += ',';
    out += format_double(row.lr);
    out += '\n';
  }
  return out;
}

}  // namespace mrg
