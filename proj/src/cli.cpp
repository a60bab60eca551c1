#include "mrg/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrg/datagen.hpp"
#include "mrg/errors.hpp"
#include "mrg/infer.hpp"
#include "mrg/io.hpp"
#include "mrg/metrics.hpp"
#include "mrg/model.hpp"
#include "mrg/train.hpp"

namespace fs = std::filesystem;

namespace mrg {

namespace {

size_t worker_count() {
  const char* env = std::getenv("MRG_THREADS");
  if (env == nullptr || *env == '\0') {
    return 1;
  }
  long parsed = std::strtol(env, nullptr, 10);
  if (parsed < 1) {
    return 1;
  }
  return static_cast<size_t>(parsed);
}

// Runs fn(i) for i in [0, n) across up to `threads` workers. fn must only
// write into its own index slot; outputs stay ordered by index.
void parallel_for(size_t n, size_t threads, const std::function<void(size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mutex;
  for (size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) {
          return;
        }
        try {
          fn(i);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!failed.exchange(true)) {
            first_error = e.what();
          }
          return;
        }
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
  if (failed.load()) {
    throw DataError(first_error);
  }
}

long elapsed_ms(std::chrono::steady_clock::time_point start) {
  auto end = std::chrono::steady_clock::now();
  return std::chrono::duration_cast<std::chrono::milliseconds>(end - start).count();
}

std::string hex64(uint64_t value) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

nlohmann::ordered_json model_config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["input_dim"] = c.input_dim;
  j["feature_dim"] = c.feature_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["num_relationship_classes"] = c.num_relationship_classes;
  j["grid_size"] = c.grid_size;
  j["cluster_threshold"] = c.cluster_threshold;
  return j;
}

void write_manifest(const fs::path& path, nlohmann::ordered_json manifest) {
  write_text_atomic(path, manifest.dump(2) + "\n");
}

// Loads relationship class names stored next to a dataset, when present.
RelationshipClassTable class_table_for(const fs::path& scenes_path) {
  fs::path taxonomy = scenes_path.parent_path() / "taxonomy.json";
  if (fs::exists(taxonomy)) {
    Taxonomy t = Taxonomy::from_json(read_text_file(taxonomy));
    return RelationshipClassTable{t.class_names};
  }
  return RelationshipClassTable::default_table();
}

struct GenArgs {
  std::string out;
  uint64_t seed = 42;
  size_t train_scenes = 200;
  size_t test_scenes = 40;
  int input_dim = 32;
};

int cmd_gen(const GenArgs& args) {
  auto start = std::chrono::steady_clock::now();
  GenConfig config;
  config.seed = args.seed;
  config.train_scenes = args.train_scenes;
  config.test_scenes = args.test_scenes;
  config.input_dim = args.input_dim;
  GeneratedDataset dataset = gen_dataset(config);
  fs::path dir(args.out);
  write_scenes(dir / "train.jsonl", dataset.train);
  write_scenes(dir / "test.jsonl", dataset.test);
  write_text_atomic(dir / "taxonomy.json", dataset.taxonomy.to_json());

  nlohmann::ordered_json m;
  m["command"] = "gen";
  m["version"] = kArtifactVersion;
  m["config"] = {{"seed", config.seed},
                 {"train_scenes", config.train_scenes},
                 {"test_scenes", config.test_scenes},
                 {"input_dim", config.input_dim}};
  m["outputs"] = {{"train", (dir / "train.jsonl").string()},
                  {"test", (dir / "test.jsonl").string()},
                  {"taxonomy", (dir / "taxonomy.json").string()}};
  m["stats"] = {{"taxonomy_hash", hex64(dataset.taxonomy.hash())},
                {"mean_train_triplets", dataset.mean_train_triplets},
                {"mean_test_triplets", dataset.mean_test_triplets}};
  m["wall_clock_ms"] = elapsed_ms(start);
  write_manifest(dir / "gen.manifest.json", std::move(m));
  std::cout << "generated " << dataset.train.size() << " train and " << dataset.test.size()
            << " test scenes in " << dir.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  TrainConfig config;
  ModelConfig model_config;
};

int cmd_train(const TrainArgs& args) {
  auto start = std::chrono::steady_clock::now();
  fs::path scenes_path(args.data);
  if (fs::is_directory(scenes_path)) {
    scenes_path /= "train.jsonl";
  }
  auto scenes = read_scenes(scenes_path);
  RelationshipClassTable classes = class_table_for(scenes_path);
  ModelConfig model_config = args.model_config;
  model_config.num_relationship_classes = classes.class_count();
  if (!scenes.empty()) {
    model_config.input_dim = scenes.front().objects.front().feature.size();
  }

  TrainResult result = train(scenes, args.config, model_config);

  fs::path out(args.out);
  fs::path stem = out.parent_path() / out.stem();
  fs::path loss_path = stem.string() + ".loss.csv";
  fs::path manifest_path = stem.string() + ".manifest.json";
  save_model(out, result.params, classes.names);
  write_text_atomic(loss_path, history_to_csv(result.history));

  nlohmann::ordered_json m;
  m["command"] = "train";
  m["version"] = kArtifactVersion;
  m["config"] = nlohmann::ordered_json::parse(train_config_to_json(args.config));
  m["model_config"] = model_config_json(model_config);
  m["inputs"] = {{"scenes", scenes_path.string()}};
  m["outputs"] = {{"model", out.string()}, {"loss_csv", loss_path.string()}};
  m["stats"] = {{"scenes", scenes.size()},
                {"steps", result.steps},
                {"first_epoch_loss", result.history.front().mean_loss},
                {"final_epoch_loss", result.history.back().mean_loss}};
  m["wall_clock_ms"] = elapsed_ms(start);
  write_manifest(manifest_path, std::move(m));
  std::cout << "trained on " << scenes.size() << " scenes for " << result.history.size()
            << " epochs; final loss " << result.history.back().mean_loss << "\n";
  return 0;
}

struct InferArgs {
  std::string model;
  std::string scenes;
  std::string out;
  double min_score = 0.05;
  double nms_iou = 0.5;
  std::string format = "json";
  size_t limit = 0;  // 0 means every scene
};

int cmd_infer(const InferArgs& args) {
  auto start = std::chrono::steady_clock::now();
  LoadedModel model = load_model(args.model);
  auto scenes = read_scenes(args.scenes);
  if (args.limit > 0 && scenes.size() > args.limit) {
    scenes.resize(args.limit);
  }
  RelationshipClassTable classes{model.class_names};
  InferenceOptions options;
  options.min_score = args.min_score;
  options.nms_iou = args.nms_iou;
  bool want_json = args.format == "json" || args.format == "both";
  bool want_dot = args.format == "dot" || args.format == "both";

  fs::path dir(args.out);
  fs::create_directories(dir);
  std::vector<size_t> edge_counts(scenes.size(), 0);
  std::vector<std::string> graph_files(scenes.size());
  parallel_for(scenes.size(), worker_count(), [&](size_t i) {
    auto proposals = scenes[i].proposals();
    ManipulationRelationshipGraph graph = infer_mrg(model.params, proposals, options);
    edge_counts[i] = graph.edges.size();
    if (want_json) {
      fs::path p = dir / (scenes[i].scene_id + ".mrg.json");
      write_text_atomic(p, export_json(graph, classes));
      graph_files[i] = p.filename().string();
    }
    if (want_dot) {
      write_text_atomic(dir / (scenes[i].scene_id + ".dot"), export_dot(graph, classes));
    }
  });

  size_t total_edges = 0;
  for (size_t c : edge_counts) total_edges += c;
  nlohmann::ordered_json m;
  m["command"] = "infer";
  m["version"] = kArtifactVersion;
  m["config"] = {{"min_score", options.min_score},
                 {"nms_iou", options.nms_iou},
                 {"format", args.format}};
  m["inputs"] = {{"model", args.model}, {"scenes", args.scenes}};
  m["outputs"] = {{"dir", dir.string()}, {"scenes", scenes.size()}};
  m["stats"] = {{"total_edges", total_edges}};
  m["wall_clock_ms"] = elapsed_ms(start);
  write_manifest(dir / "infer.manifest.json", std::move(m));
  std::cout << "wrote graphs for " << scenes.size() << " scenes (" << total_edges
            << " edges) to " << dir.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string scenes;
  std::string out;
  std::vector<size_t> ks = {1, 3, 5};
  double min_score = 0.05;
  double nms_iou = 0.5;
  double iou_threshold = 0.5;
};

int cmd_eval(const EvalArgs& args) {
  auto start = std::chrono::steady_clock::now();
  LoadedModel model = load_model(args.model);
  auto scenes = read_scenes(args.scenes);
  std::vector<size_t> ks = args.ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.empty() || ks.front() == 0) {
    throw DataError("eval: ranks must be positive");
  }
  InferenceOptions options;
  options.min_score = args.min_score;
  options.nms_iou = args.nms_iou;

  std::vector<SceneEval> evals(scenes.size());
  parallel_for(scenes.size(), worker_count(), [&](size_t i) {
    auto proposals = scenes[i].proposals();
    auto predictions = predict_triplets(model.params, proposals, options);
    evals[i] = evaluate_scene(scenes[i], predictions, ks, args.iou_threshold);
  });
  MetricsReport report = aggregate_evals(std::move(evals), ks);

  fs::path out(args.out);
  write_text_atomic(out, metrics_to_csv(report));
  fs::path stem = out.parent_path() / out.stem();
  nlohmann::ordered_json m;
  m["command"] = "eval";
  m["version"] = kArtifactVersion;
  m["config"] = {{"ks", ks},
                 {"min_score", options.min_score},
                 {"nms_iou", options.nms_iou},
                 {"iou_threshold", args.iou_threshold}};
  m["inputs"] = {{"model", args.model}, {"scenes", args.scenes}};
  m["outputs"] = {{"csv", out.string()}};
  nlohmann::ordered_json stats;
  for (size_t i = 0; i < report.ks.size(); ++i) {
    stats["phrase_recall_at_" + std::to_string(report.ks[i])] = report.phrase[i].recall();
    stats["relationship_recall_at_" + std::to_string(report.ks[i])] =
        report.relationship[i].recall();
  }
  m["stats"] = std::move(stats);
  m["wall_clock_ms"] = elapsed_ms(start);
  write_manifest(fs::path(stem.string() + ".manifest.json"), std::move(m));
  std::cout << metrics_to_text(report);
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
  CLI::App app{"manipulation relationship graph tool"};
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--train", gen_args.train_scenes, "train scene count");
  gen->add_option("--test", gen_args.test_scenes, "test scene count");
  gen->add_option("--input-dim", gen_args.input_dim, "appearance feature length")
      ->check(CLI::PositiveNumber);

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--data", train_args.data, "dataset directory or scene file")->required();
  tr->add_option("--out", train_args.out, "model output path")->required();
  tr->add_option("--epochs", train_args.config.epochs, "training epochs");
  tr->add_option("--lr", train_args.config.initial_lr, "initial learning rate");
  tr->add_option("--seed", train_args.config.seed, "training seed");
  tr->add_option("--negative-ratio", train_args.config.negative_ratio,
                 "background pairs kept per positive");
  tr->add_option("--feature-dim", train_args.model_config.feature_dim, "object feature width");
  tr->add_option("--hidden-dim", train_args.model_config.hidden_dim,
                 "relationship head hidden width");
  tr->add_option("--grid", train_args.model_config.grid_size, "subgraph map resolution");
  tr->add_option("--cluster-threshold", train_args.model_config.cluster_threshold,
                 "subgraph clustering IoU threshold");

  InferArgs infer_args;
  auto* in = app.add_subcommand("infer", "build relationship graphs for scenes");
  in->add_option("--model", infer_args.model, "model file")->required();
  in->add_option("--scenes", infer_args.scenes, "scene JSONL file")->required();
  in->add_option("--out", infer_args.out, "output directory")->required();
  in->add_option("--min-score", infer_args.min_score, "graph edge score floor");
  in->add_option("--nms-iou", infer_args.nms_iou, "triplet suppression IoU");
  in->add_option("--format", infer_args.format, "json, dot or both")
      ->check(CLI::IsMember({"json", "dot", "both"}));
  in->add_option("--limit", infer_args.limit, "cap on scenes processed, 0 for all");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "score a model against ground truth");
  ev->add_option("--model", eval_args.model, "model file")->required();
  ev->add_option("--scenes", eval_args.scenes, "scene JSONL file")->required();
  ev->add_option("--out", eval_args.out, "metrics CSV path")->required();
  ev->add_option("--ks", eval_args.ks, "recall ranks")->delimiter(',');
  ev->add_option("--min-score", eval_args.min_score, "graph edge score floor");
  ev->add_option("--nms-iou", eval_args.nms_iou, "triplet suppression IoU");
  ev->add_option("--iou", eval_args.iou_threshold, "matching IoU threshold");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_args);
    if (tr->parsed()) return cmd_train(train_args);
    if (in->parsed()) return cmd_infer(infer_args);
    if (ev->parsed()) return cmd_eval(eval_args);
    std::cerr << "error: no subcommand selected\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace mrg
