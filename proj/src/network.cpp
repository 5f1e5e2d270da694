#include "cloudattn/network.h"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cloudattn {

namespace {

std::string stage_prefix(std::size_t s) { return "s" + std::to_string(s); }

bool needs_projection(const ModelConfig& cfg, std::size_t s) {
  return cfg.stages[s].scales.token_width() != cfg.d_model;
}

void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng) {
  store.add(prefix + ".w", glorot(in, out, rng));
  store.add(prefix + ".b", Tensor({out}, 0.0));
}

void add_mha(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
             std::mt19937_64& rng) {
  const std::size_t d = cfg.d_model;
  store.add(prefix + ".wq", glorot(d, d, rng));
  store.add(prefix + ".wk", glorot(d, d, rng));
  store.add(prefix + ".wv", glorot(d, d, rng));
  store.add(prefix + ".wo", glorot(d, d, rng));
  add_linear(store, prefix + ".ff1", d, cfg.d_ff, rng);
  add_linear(store, prefix + ".ff2", cfg.d_ff, d, rng);
}

std::string join_sizes(const std::vector<std::size_t>& v, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(v[i]);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string task_name(Task task) {
  return task == Task::Classification ? "classification" : "segmentation";
}

Task parse_task(const std::string& name) {
  if (name == "classification" || name == "cls") return Task::Classification;
  if (name == "segmentation" || name == "seg") return Task::Segmentation;
  throw std::invalid_argument("unknown task '" + name + "' (expected classification|segmentation)");
}

ModelConfig ModelConfig::defaults(Task task, std::size_t num_classes) {
  ModelConfig cfg;
  cfg.task = task;
  cfg.num_classes = num_classes;
  const std::size_t tokens[] = {128, 32, 8};
  const double radii[] = {0.2, 0.4, 0.8};
  const std::vector<std::size_t> ks[] = {{8, 16, 32}, {4, 8, 16}, {2, 4, 8}};
  const std::size_t lau_k[] = {16, 8, 4};
  for (std::size_t s = 0; s < 3; ++s) {
    StageConfig st;
    st.scales.ks = ks[s];
    st.scales.radius = radii[s];
    st.scales.centroid_count = tokens[s];
    st.scales.out_dim_per_scale = 32;
    st.lau_k = lau_k[s];
    st.lau_repeats = 1;
    cfg.stages.push_back(st);
  }
  return cfg;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  const Task task = parse_task(kv.get("task", "classification"));
  ModelConfig cfg = defaults(task, kv.get_size("num_classes", task == Task::Segmentation ? 2 : 3));
  cfg.point_feat_dim = kv.get_size("point_feat_dim", cfg.point_feat_dim);
  cfg.d_model = kv.get_size("d_model", cfg.d_model);
  cfg.heads = kv.get_size("heads", cfg.heads);
  cfg.d_ff = kv.get_size("d_ff", cfg.d_ff);
  cfg.head_hidden = kv.get_size("head_hidden", cfg.head_hidden);
  cfg.decoder_k = kv.get_size("decoder_k", cfg.decoder_k);
  cfg.use_lau = kv.get_bool("use_lau", cfg.use_lau);
  cfg.use_gau = kv.get_bool("use_gau", cfg.use_gau);
  cfg.prenorm = kv.get_bool("prenorm", cfg.prenorm);
  cfg.seed = kv.get_size("seed", cfg.seed);

  const ModelConfig base = cfg;
  std::vector<std::size_t> default_tokens;
  for (const auto& st : base.stages) default_tokens.push_back(st.scales.centroid_count);
  const auto tokens = kv.get_sizes("tokens", default_tokens);
  const std::size_t n = tokens.size();
  auto stage_default = [&](std::size_t s) { return base.stages[std::min(s, base.stages.size() - 1)]; };

  std::vector<double> default_radii;
  std::vector<std::size_t> default_lau_k;
  for (std::size_t s = 0; s < n; ++s) {
    default_radii.push_back(stage_default(s).scales.radius);
    default_lau_k.push_back(stage_default(s).lau_k);
  }
  const auto radii = kv.get_doubles("radii", default_radii);
  const auto lau_k = kv.get_sizes("lau_k", default_lau_k);
  const auto repeats = kv.get_sizes("lau_repeats", {1});
  const std::size_t out_dim = kv.get_size("out_dim_per_scale", 32);
  std::vector<std::string> scale_lists;
  if (kv.has("scales")) scale_lists = split(kv.get("scales", ""), ';');
  const bool use_mst = kv.get_bool("use_mst", true);

  auto require_len = [n](std::size_t len, const char* key) {
    if (len != n) {
      throw std::invalid_argument(std::string("config key '") + key + "' needs " +
                                  std::to_string(n) + " entries (one per stage)");
    }
  };
  require_len(radii.size(), "radii");
  require_len(lau_k.size(), "lau_k");
  if (!scale_lists.empty()) require_len(scale_lists.size(), "scales");
  if (repeats.size() != 1) require_len(repeats.size(), "lau_repeats");

  cfg.stages.clear();
  for (std::size_t s = 0; s < n; ++s) {
    StageConfig st;
    if (!scale_lists.empty()) {
      KeyValues tmp;
      tmp.set("k", scale_lists[s]);
      st.scales.ks = tmp.get_sizes("k", {});
    } else {
      st.scales.ks = stage_default(s).scales.ks;
    }
    if (!use_mst) st.scales.ks = {st.scales.ks.back()};
    st.scales.radius = radii[s];
    st.scales.centroid_count = tokens[s];
    st.scales.out_dim_per_scale = out_dim;
    st.lau_k = lau_k[s];
    st.lau_repeats = repeats.size() == 1 ? repeats[0] : repeats[s];
    cfg.stages.push_back(st);
  }
  cfg.validate();
  return cfg;
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv.set("task", task_name(task));
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("point_feat_dim", std::to_string(point_feat_dim));
  kv.set("d_model", std::to_string(d_model));
  kv.set("heads", std::to_string(heads));
  kv.set("d_ff", std::to_string(d_ff));
  kv.set("head_hidden", std::to_string(head_hidden));
  kv.set("decoder_k", std::to_string(decoder_k));
  kv.set("use_lau", use_lau ? "1" : "0");
  kv.set("use_gau", use_gau ? "1" : "0");
  kv.set("prenorm", prenorm ? "1" : "0");
  kv.set("seed", std::to_string(seed));
  std::vector<std::size_t> tokens, lau_k, repeats;
  std::string radii, scales;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    tokens.push_back(stages[s].scales.centroid_count);
    lau_k.push_back(stages[s].lau_k);
    repeats.push_back(stages[s].lau_repeats);
    if (s) {
      radii += ',';
      scales += ';';
    }
    radii += format_double(stages[s].scales.radius);
    scales += join_sizes(stages[s].scales.ks);
  }
  kv.set("tokens", join_sizes(tokens));
  kv.set("lau_k", join_sizes(lau_k));
  kv.set("lau_repeats", join_sizes(repeats));
  kv.set("radii", radii);
  kv.set("scales", scales);
  kv.set("out_dim_per_scale",
         std::to_string(stages.empty() ? 32 : stages.front().scales.out_dim_per_scale));
  return kv;
}

AttentionConfig ModelConfig::attention(std::size_t stage) const {
  AttentionConfig a;
  a.heads = heads;
  a.d_model = d_model;
  a.d_ff = d_ff;
  a.k_neighbors = stages.at(stage).lau_k;
  a.prenorm = prenorm;
  return a;
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (stages.empty()) throw std::invalid_argument("model needs at least one stage");
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("d_model must be a positive multiple of heads");
  }
  if (d_ff < 1 || head_hidden < 1 || decoder_k < 1) {
    throw std::invalid_argument("d_ff, head_hidden and decoder_k must be positive");
  }
  for (std::size_t s = 0; s < stages.size(); ++s) {
    stages[s].scales.validate();
    if (s && stages[s].scales.centroid_count >= stages[s - 1].scales.centroid_count) {
      throw std::invalid_argument("token counts must strictly decrease across stages");
    }
    if (stages[s].lau_k < 1 || stages[s].lau_k > stages[s].scales.centroid_count) {
      throw std::invalid_argument("stage " + std::to_string(s) +
                                  ": lau_k must be in [1, token count]");
    }
  }
}

ParamStore init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamStore store;
  const std::size_t d = cfg.d_model;
  add_linear(store, "embed", 3 + cfg.point_feat_dim, d, rng);
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    const std::string p = stage_prefix(s);
    const std::size_t in = 3 + (s == 0 ? cfg.point_feat_dim : d);
    add_linear(store, p + ".delta", in, st.scales.out_dim_per_scale, rng);
    if (needs_projection(cfg, s)) add_linear(store, p + ".proj", st.scales.token_width(), d, rng);
    if (cfg.use_lau) {
      for (std::size_t r = 0; r < st.lau_repeats; ++r)
        add_mha(store, p + ".lau" + std::to_string(r), cfg, rng);
    }
    if (cfg.use_gau) add_mha(store, p + ".gau", cfg, rng);
  }
  if (cfg.task == Task::Classification) {
    add_linear(store, "head.fc1", d, cfg.head_hidden, rng);
    add_linear(store, "head.fc2", cfg.head_hidden, cfg.num_classes, rng);
  } else {
    for (std::size_t s = cfg.stages.size() - 1; s-- > 0;)
      add_linear(store, "dec" + std::to_string(s), 2 * d, d, rng);
    add_linear(store, "dec.points", 2 * d, d, rng);
    add_linear(store, "seg.out", d, cfg.num_classes, rng);
  }
  return store;
}

Linear bind_linear(const Binding& params, const std::string& prefix) {
  return Linear{params[prefix + ".w"], params[prefix + ".b"]};
}

MhaParams bind_mha(const Binding& params, const std::string& prefix, std::size_t heads) {
  MhaParams p;
  p.wq = params[prefix + ".wq"];
  p.wk = params[prefix + ".wk"];
  p.wv = params[prefix + ".wv"];
  p.wo = params[prefix + ".wo"];
  p.ff = FeedForward{bind_linear(params, prefix + ".ff1"), bind_linear(params, prefix + ".ff2")};
  p.heads = heads;
  return p;
}

std::vector<std::size_t> canonical_order(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  const std::size_t f = cloud.feat_dim();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double* c = cloud.coords.data();
  const double* fe = cloud.feats ? cloud.feats->data() : nullptr;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (int d = 0; d < 3; ++d) {
      if (c[3 * a + d] != c[3 * b + d]) return c[3 * a + d] < c[3 * b + d];
    }
    for (std::size_t d = 0; d < f; ++d) {
      if (fe[f * a + d] != fe[f * b + d]) return fe[f * a + d] < fe[f * b + d];
    }
    return a < b;
  });
  return order;
}

EncodeResult encode(const PointCloud& cloud, const ModelConfig& cfg, const Binding& params) {
  cloud.validate();
  if (cloud.feat_dim() != cfg.point_feat_dim) {
    throw DimensionError("cloud has " + std::to_string(cloud.feat_dim()) +
                         " feature columns, model expects " + std::to_string(cfg.point_feat_dim));
  }
  if (cloud.size() < cfg.stages.front().scales.centroid_count) {
    throw std::invalid_argument("cloud has " + std::to_string(cloud.size()) +
                                " points, first stage needs " +
                                std::to_string(cfg.stages.front().scales.centroid_count));
  }

  EncodeResult res;
  res.order = canonical_order(cloud);
  res.coords = take_rows(cloud.coords, res.order);
  ad::Var feats;
  Tensor input = res.coords;
  if (cloud.feats) {
    Tensor f = take_rows(*cloud.feats, res.order);
    const std::size_t n = f.rows(), fd = f.cols();
    input = Tensor::matrix(n, 3 + fd);
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 3; ++d) input.at(i, d) = res.coords.at(i, d);
      for (std::size_t d = 0; d < fd; ++d) input.at(i, 3 + d) = f.at(i, d);
    }
    feats = ad::constant(std::move(f));
  }
  res.point_embed = affine(bind_linear(params, "embed"), ad::constant(std::move(input)));

  TokenSet tokens;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    const std::string p = stage_prefix(s);
    const Linear delta = bind_linear(params, p + ".delta");
    const std::uint64_t seed = cfg.seed + s;
    tokens = s == 0 ? tokenize_points(res.coords, feats, st.scales, delta, seed)
                    : reduce_tokens(tokens, st.scales, delta, seed);
    if (needs_projection(cfg, s)) tokens.feats = affine(bind_linear(params, p + ".proj"), tokens.feats);
    const AttentionConfig att = cfg.attention(s);
    if (cfg.use_lau) {
      for (std::size_t r = 0; r < st.lau_repeats; ++r)
        tokens = lau_forward(tokens, bind_mha(params, p + ".lau" + std::to_string(r), cfg.heads), att);
    }
    if (cfg.use_gau) tokens = gau_forward(tokens, res.point_embed, bind_mha(params, p + ".gau", cfg.heads), att);
    res.cache.stages.push_back(tokens);
  }
  res.final_tokens = tokens;
  return res;
}

ClassifyOutput classify(const PointCloud& cloud, const ModelConfig& cfg, const Binding& params) {
  if (cfg.task != Task::Classification) throw std::invalid_argument("classify needs a classification model");
  const EncodeResult enc = encode(cloud, cfg, params);
  ad::Var pooled = ad::reduce_max(enc.final_tokens.feats, 0);
  ad::Var hidden = ad::relu(affine(bind_linear(params, "head.fc1"), pooled));
  ad::Var logits = affine(bind_linear(params, "head.fc2"), hidden);
  return ClassifyOutput{logits, ad::softmax(logits, 1)};
}

ad::Var interpolate(const ad::Var& coarse_feats, const Tensor& coarse_anchors,
                    const Tensor& fine_positions, std::size_t k) {
  k = std::min(k, coarse_anchors.rows());
  const NeighborIndex nbr = knn(fine_positions, coarse_anchors, k);
  std::vector<std::size_t> idx;
  std::vector<double> w;
  idx.reserve(nbr.size() * k);
  w.reserve(nbr.size() * k);
  for (std::size_t i = 0; i < nbr.size(); ++i) {
    const auto wi = idw_weights(nbr.distances[i]);
    idx.insert(idx.end(), nbr.neighbor_ids[i].begin(), nbr.neighbor_ids[i].end());
    w.insert(w.end(), wi.begin(), wi.end());
  }
  return ad::weighted_gather(coarse_feats, idx, w, k);
}

SegmentOutput segment(const PointCloud& cloud, const ModelConfig& cfg, const Binding& params) {
  if (cfg.task != Task::Segmentation) throw std::invalid_argument("segment needs a segmentation model");
  const EncodeResult enc = encode(cloud, cfg, params);
  const auto& cache = enc.cache.stages;
  ad::Var feats = cache.back().feats;
  for (std::size_t s = cache.size() - 1; s-- > 0;) {
    ad::Var up = interpolate(feats, cache[s + 1].anchors, cache[s].anchors, cfg.decoder_k);
    std::vector<ad::Var> parts{up, cache[s].feats};
    feats = ad::relu(affine(bind_linear(params, "dec" + std::to_string(s)), ad::concat(parts, 1)));
  }
  ad::Var up = interpolate(feats, cache.front().anchors, enc.coords, cfg.decoder_k);
  std::vector<ad::Var> parts{up, enc.point_embed};
  feats = ad::relu(affine(bind_linear(params, "dec.points"), ad::concat(parts, 1)));
  ad::Var logits = affine(bind_linear(params, "seg.out"), feats);

  // Back to the caller's point order.
  std::vector<std::size_t> inverse(enc.order.size());
  for (std::size_t i = 0; i < enc.order.size(); ++i) inverse[enc.order[i]] = i;
  logits = ad::gather_rows(logits, inverse);
  return SegmentOutput{logits, ad::softmax(logits, 1)};
}

Tensor one_hot(std::span<const std::int32_t> labels, std::size_t num_classes) {
  Tensor t = Tensor::matrix(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range for " +
                                  std::to_string(num_classes) + " classes");
    }
    t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

ad::Var loss_cls(const ad::Var& pred, const Tensor& target) {
  if (pred->value.numel() != target.numel()) {
    throw DimensionError("loss_cls: prediction " + shape_str(pred->value.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  Tensor g(pred->value.shape(), target.values());
  return ad::scale(ad::sum(ad::mul(ad::constant(std::move(g)), ad::log(pred, kLogFloor))), -1.0);
}

ad::Var loss_cls(const ad::Var& pred, std::size_t label) {
  const std::int32_t l = static_cast<std::int32_t>(label);
  return loss_cls(pred, one_hot(std::span<const std::int32_t>(&l, 1), pred->value.numel()));
}

ad::Var loss_seg(const ad::Var& pred, const Tensor& target) {
  if (pred->value.shape() != target.shape()) {
    throw DimensionError("loss_seg: prediction " + shape_str(pred->value.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  const double n = static_cast<double>(pred->value.rows());
  return ad::scale(ad::sum(ad::mul(ad::constant(target), ad::log(pred, kLogFloor))), -1.0 / n);
}

ad::Var loss_seg(const ad::Var& pred, std::span<const std::int32_t> labels) {
  return loss_seg(pred, one_hot(labels, pred->value.cols()));
}

}  // namespace cloudattn
