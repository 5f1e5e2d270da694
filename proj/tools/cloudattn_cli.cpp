// cloudattn: generate toy data, train, evaluate, segment, inspect tokenization, benchmark.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "cloudattn/checkpoint.h"
#include "cloudattn/cloud_io.h"
#include "cloudattn/dataset.h"
#include "cloudattn/harness.h"

using namespace cloudattn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

/// Input that parsed but does not fit the model or the request.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n ? n : 1;
}

/// Config file (if any) overlaid by --set key=value pairs.
KeyValues load_settings(const std::string& config_path, const std::vector<std::string>& sets) {
  KeyValues kv;
  if (!config_path.empty()) {
    if (!std::filesystem::exists(config_path)) throw DataError("config file not found: " + config_path);
    kv = KeyValues::load(config_path);
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    }
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return kv;
}

Dataset load_data(const std::string& dir) {
  try {
    return load_dataset(dir);
  } catch (const std::invalid_argument& e) {
    throw DataError(dir + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

void check_features(const PointCloud& cloud, const ModelConfig& cfg, const std::string& what) {
  if (cloud.feat_dim() != cfg.point_feat_dim) {
    throw DataError(what + " has " + std::to_string(cloud.feat_dim()) +
                    " feature columns, model expects " + std::to_string(cfg.point_feat_dim));
  }
}

struct GenArgs {
  std::string kind = "cls3";
  std::string out;
  std::size_t n = 300;
  std::size_t points = 1024;
  double test_fraction = 0.2;
  std::string format = "binary";
};

int run_gen(const GenArgs& a, std::uint64_t seed) {
  const Dataset ds = gen_synthetic(parse_synthetic_kind(a.kind), a.n, a.points, seed, a.test_fraction);
  if (a.format != "binary" && a.format != "text") throw std::invalid_argument("--format must be binary or text");
  save_dataset(a.out, ds, a.format == "binary" ? CloudFormat::Binary : CloudFormat::Text);
  std::printf("wrote %zu samples (%zu train, %zu test) to %s\n", ds.samples.size(), ds.train.size(),
              ds.test.size(), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string task;
  std::string config;
  std::string out = "model.ckpt";
  std::string log;
  std::vector<std::string> sets;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::string optimizer = "lamb";
  std::string schedule = "cosine";
  double stop_at = 0.0;
};

int run_train(const TrainArgs& a, CLI::App& cmd, std::uint64_t seed, std::size_t threads) {
  const Dataset ds = load_data(a.data);
  KeyValues kv = load_settings(a.config, a.sets);
  // Explicit flags beat the config file; the file beats built-in defaults.
  auto flag = [&](const char* opt, const char* key, const std::string& value) {
    if (cmd.count(opt) || !kv.has(key)) kv.set(key, value);
  };
  flag("--epochs", "epochs", std::to_string(a.epochs));
  flag("--batch-size", "batch_size", std::to_string(a.batch_size));
  flag("--lr", "base_lr", CLI::detail::to_string(a.lr));
  flag("--optimizer", "optimizer", a.optimizer);
  flag("--schedule", "schedule", a.schedule);
  flag("--stop-at-train-acc", "stop_at_train_acc", CLI::detail::to_string(a.stop_at));
  flag("--seed", "seed", std::to_string(seed));
  if (!a.task.empty()) kv.set("task", a.task);
  if (!kv.has("task")) kv.set("task", task_name(ds.task));
  if (!kv.has("num_classes")) kv.set("num_classes", std::to_string(ds.num_classes()));
  if (!kv.has("point_feat_dim") && !ds.samples.empty())
    kv.set("point_feat_dim", std::to_string(ds.samples.front().feat_dim()));

  const ModelConfig model = ModelConfig::from_kv(kv);
  TrainConfig tc = TrainConfig::from_kv(kv);
  tc.threads = threads;
  tc.checkpoint_path = a.out;
  if (model.task != ds.task) {
    throw DataError("dataset " + a.data + " is " + task_name(ds.task) + ", config asks for " +
                    task_name(model.task));
  }
  if (model.num_classes != ds.num_classes()) {
    throw DataError("dataset " + a.data + " has " + std::to_string(ds.num_classes()) +
                    " classes, config says " + std::to_string(model.num_classes));
  }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) check_features(ds.samples[i], model, "sample " + std::to_string(i));

  const std::string log_path = a.log.empty() ? a.out + ".log" : a.log;
  std::ofstream log(log_path);
  if (!log) throw DataError("cannot write " + log_path);
  const TrainResult r = train(ds, model, tc, [&](const EpochRecord& e) {
    const std::string line = e.to_line();
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    log << line << '\n' << std::flush;
  });
  std::printf("best_epoch=%zu checkpoint=%s\n", r.best_epoch, a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string split = "test";
  std::string report;
};

int run_eval(const EvalArgs& a, std::size_t threads) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const Dataset ds = load_data(a.data);
  if (ds.task != ck.config.task) throw DataError("dataset " + a.data + " does not match the checkpoint task");
  if (ds.num_classes() != ck.config.num_classes) throw DataError("dataset " + a.data + " class count does not match the checkpoint");
  std::vector<std::size_t> idx;
  if (a.split == "test") {
    idx = ds.test;
  } else if (a.split == "train") {
    idx = ds.train;
  } else if (a.split == "all") {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) idx.push_back(i);
  } else {
    throw std::invalid_argument("--split must be train, test or all");
  }
  if (idx.empty()) throw DataError("split '" + a.split + "' of " + a.data + " is empty");
  for (auto i : idx) check_features(ds.samples[i], ck.config, "sample " + std::to_string(i));
  const Evaluation ev = evaluate(ds, idx, ck.config, ck.params, threads);
  const std::string text = ev.report.to_text();
  std::fputs(text.c_str(), stdout);
  write_text(a.report.empty() ? a.ckpt + ".report.txt" : a.report, text);
  return 0;
}

struct SegmentArgs {
  std::string cloud;
  std::string ckpt;
  std::string out;
  bool normalize = true;
};

int run_segment(const SegmentArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  if (ck.config.task != Task::Segmentation) throw DataError("checkpoint " + a.ckpt + " is not a segmentation model");
  PointCloud cloud = load_cloud(a.cloud);
  check_features(cloud, ck.config, a.cloud);
  PointCloud input = cloud;
  if (a.normalize) normalize(input);
  cloud.labels = predict_points(input, ck.config, ck.params);
  save_cloud(a.out, cloud, CloudFormat::Text);
  std::printf("wrote %zu labeled points to %s\n", cloud.size(), a.out.c_str());
  return 0;
}

struct TokenizeArgs {
  std::string cloud;
  std::string config;
  std::string ckpt;
  std::string out;
  std::vector<std::string> sets;
};

int run_tokenize(const TokenizeArgs& a, CLI::App& cmd, std::uint64_t seed) {
  ModelConfig cfg;
  ParamStore params;
  if (!a.ckpt.empty()) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    cfg = ck.config;
    params = ck.params;
  } else {
    KeyValues kv = load_settings(a.config, a.sets);
    if (cmd.count("--seed") || !kv.has("seed")) kv.set("seed", std::to_string(seed));
    cfg = ModelConfig::from_kv(kv);
    params = init_params(cfg);
  }
  const PointCloud cloud = load_cloud(a.cloud);
  check_features(cloud, cfg, a.cloud);
  const ScaleConfig& sc = cfg.stages.front().scales;
  if (sc.centroid_count > cloud.size()) {
    throw DataError(a.cloud + " has " + std::to_string(cloud.size()) + " points, first stage needs " +
                    std::to_string(sc.centroid_count));
  }
  // Same canonical ordering the network uses, so ids refer to the file's rows.
  const auto order = canonical_order(cloud);
  PointCloud canon;
  canon.coords = take_rows(cloud.coords, order);
  if (cloud.feats) canon.feats = take_rows(*cloud.feats, order);

  ad::NoGradGuard guard;
  const Binding bind(params, false);
  TokenizeTrace trace;
  const TokenSet tokens = tokenize(canon, sc, bind_linear(bind, "s0.delta"), cfg.seed, &trace);

  std::ofstream out(a.out);
  if (!out) throw DataError("cannot write " + a.out);
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  out << "points " << cloud.size() << "\ntokens " << tokens.size() << "\nradius " << num(sc.radius)
      << "\nscales";
  for (auto k : sc.ks) out << ' ' << k;
  out << "\nwidth " << tokens.width() << "\n";
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t c = order[trace.centroid_ids[t]];
    out << "token " << t << " centroid " << c << ' ' << num(cloud.coords.at(c, 0)) << ' '
        << num(cloud.coords.at(c, 1)) << ' ' << num(cloud.coords.at(c, 2)) << " in_radius "
        << trace.ball.neighbor_ids[t].size() << "\n";
    for (std::size_t s = 0; s < sc.ks.size(); ++s) {
      out << "  scale " << sc.ks[s] << ':';
      for (std::size_t j = 0; j < sc.ks[s]; ++j) out << ' ' << order[trace.neighbors[t][j]];
      out << "\n";
    }
    out << "  features:";
    for (std::size_t f = 0; f < tokens.width(); ++f) out << ' ' << num(tokens.feats->value.at(t, f));
    out << "\n";
  }
  std::printf("wrote %zu tokens to %s\n", tokens.size(), a.out.c_str());
  return 0;
}

struct BenchArgs {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::size_t> points{1024, 2048, 4096, 8192};
  std::vector<std::size_t> tokens;
  std::size_t repeats = 5;
};

int run_bench(const BenchArgs& a, std::uint64_t seed) {
  const ModelConfig cfg = ModelConfig::from_kv(load_settings(a.config, a.sets));
  const BenchResult r = a.tokens.empty() ? bench_scaling(cfg, a.points, a.repeats, seed)
                                         : bench_lau_scaling(cfg, a.tokens, a.repeats, seed);
  std::fputs(r.to_text().c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical point-cloud attention: data, training, evaluation and benchmarks"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::uint64_t seed = 1;
  std::size_t threads = default_threads();
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset directory");
  gen_cmd->add_option("--kind", gen.kind, "cls3 (sphere/cube/torus) or seg2 (cube with pole)")
      ->check(CLI::IsMember({"cls3", "seg2"}));
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of samples");
  gen_cmd->add_option("--points", gen.points, "Points per cloud");
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "Held-out fraction");
  gen_cmd->add_option("--format", gen.format, "Cloud file format")->check(CLI::IsMember({"binary", "text"}));
  common(gen_cmd);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--task", tr.task, "classification or segmentation (default: from dataset)");
  train_cmd->add_option("--config", tr.config, "key=value config file (model and training keys)");
  train_cmd->add_option("--set", tr.sets, "Override a config key (key=value), repeatable");
  train_cmd->add_option("--out", tr.out, "Checkpoint path (best epoch)");
  train_cmd->add_option("--log", tr.log, "Per-epoch log path (default: <out>.log)");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs");
  train_cmd->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  train_cmd->add_option("--lr", tr.lr, "Base learning rate");
  train_cmd->add_option("--optimizer", tr.optimizer, "adam or lamb")->check(CLI::IsMember({"adam", "lamb"}));
  train_cmd->add_option("--schedule", tr.schedule, "cosine or constant")->check(CLI::IsMember({"cosine", "constant"}));
  train_cmd->add_option("--stop-at-train-acc", tr.stop_at, "Stop once an epoch's train accuracy reaches this (0: off)");
  common(train_cmd);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--split", ev.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  eval_cmd->add_option("--report", ev.report, "Report path (default: <ckpt>.report.txt)");
  common(eval_cmd);

  SegmentArgs sg;
  auto* seg_cmd = app.add_subcommand("segment", "Label every point of a cloud");
  seg_cmd->add_option("--cloud", sg.cloud, "Input cloud (.pcat binary, otherwise text)")->required();
  seg_cmd->add_option("--ckpt", sg.ckpt, "Segmentation checkpoint")->required();
  seg_cmd->add_option("--out", sg.out, "Output text cloud with a label column")->required();
  seg_cmd->add_option("--normalize", sg.normalize, "Center and scale the cloud before prediction");
  common(seg_cmd);

  TokenizeArgs tk;
  auto* tok_cmd = app.add_subcommand("tokenize", "Dump first-stage centroids, neighbor sets and tokens");
  tok_cmd->add_option("--cloud", tk.cloud, "Input cloud")->required();
  tok_cmd->add_option("--config", tk.config, "key=value model config");
  tok_cmd->add_option("--set", tk.sets, "Override a config key (key=value), repeatable");
  tok_cmd->add_option("--ckpt", tk.ckpt, "Use a checkpoint's config and weights instead");
  tok_cmd->add_option("--out", tk.out, "Dump path")->required();
  common(tok_cmd);

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Time the encoder against point count (or LAU against token count)");
  bench_cmd->add_option("--config", bn.config, "key=value model config");
  bench_cmd->add_option("--set", bn.sets, "Override a config key (key=value), repeatable");
  bench_cmd->add_option("--points", bn.points, "Raw point counts")->delimiter(',');
  bench_cmd->add_option("--tokens", bn.tokens, "Token counts; switches to the LAU benchmark")->delimiter(',');
  bench_cmd->add_option("--repeats", bn.repeats, "Timed repeats per size")->check(CLI::PositiveNumber);
  common(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen, seed);
    if (train_cmd->parsed()) return run_train(tr, *train_cmd, seed, threads);
    if (eval_cmd->parsed()) return run_eval(ev, threads);
    if (seg_cmd->parsed()) return run_segment(sg);
    if (tok_cmd->parsed()) return run_tokenize(tk, *tok_cmd, seed);
    if (bench_cmd->parsed()) return run_bench(bn, seed);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
