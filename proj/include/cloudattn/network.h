#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cloudattn/attention.h"
#include "cloudattn/config.h"
#include "cloudattn/params.h"
#include "cloudattn/tokenizer.h"

namespace cloudattn {

enum class Task { Classification, Segmentation };

std::string task_name(Task task);
Task parse_task(const std::string& name);

struct StageConfig {
  /// scales.centroid_count is the stage's token count.
  ScaleConfig scales;
  std::size_t lau_k = 16;
  std::size_t lau_repeats = 1;
};

/// Full hyperparameter record. Token counts must strictly decrease across stages.
struct ModelConfig {
  Task task = Task::Classification;
  std::size_t num_classes = 3;
  std::size_t point_feat_dim = 0;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t head_hidden = 64;
  std::size_t decoder_k = 3;
  bool use_lau = true;
  bool use_gau = true;
  bool prenorm = false;
  std::uint64_t seed = 1;
  std::vector<StageConfig> stages;

  /// 3 stages, M = (128, 32, 8).
  static ModelConfig defaults(Task task, std::size_t num_classes);
  /// Defaults overridden by any keys present in `kv`.
  static ModelConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;

  AttentionConfig attention(std::size_t stage) const;
  void validate() const;
};

/// One TokenSet per encoder stage, in order.
struct StageCache {
  std::vector<TokenSet> stages;
};

/// Everything the heads need from an encoder pass. Points are held in canonical order.
struct EncodeResult {
  TokenSet final_tokens;
  StageCache cache;
  ad::Var point_embed;
  Tensor coords;
  /// canonical position -> caller's point index
  std::vector<std::size_t> order;
};

/// Freshly initialized parameters for `cfg` (Glorot weights, zero biases, f32-exact).
ParamStore init_params(const ModelConfig& cfg);

/// Points sorted lexicographically by coordinates, then features, then index.
std::vector<std::size_t> canonical_order(const PointCloud& cloud);

EncodeResult encode(const PointCloud& cloud, const ModelConfig& cfg, const Binding& params);

struct ClassifyOutput {
  ad::Var logits;  // 1 x C
  ad::Var probs;   // 1 x C
};
ClassifyOutput classify(const PointCloud& cloud, const ModelConfig& cfg, const Binding& params);

struct SegmentOutput {
  ad::Var logits;  // N x C, caller's point order
  ad::Var probs;   // N x C, caller's point order
};
SegmentOutput segment(const PointCloud& cloud, const ModelConfig& cfg, const Binding& params);

/// Inverse-distance interpolation of coarse features onto fine positions using the k nearest
/// coarse anchors.
ad::Var interpolate(const ad::Var& coarse_feats, const Tensor& coarse_anchors,
                    const Tensor& fine_positions, std::size_t k);

inline constexpr double kLogFloor = 1e-12;

/// -sum_c g_c log p_c with the log argument clamped at kLogFloor. pred and target: 1 x C.
ad::Var loss_cls(const ad::Var& pred, const Tensor& target);
ad::Var loss_cls(const ad::Var& pred, std::size_t label);
/// Mean over rows of the per-row cross-entropy. pred: N x C.
ad::Var loss_seg(const ad::Var& pred, const Tensor& target);
ad::Var loss_seg(const ad::Var& pred, std::span<const std::int32_t> labels);

Tensor one_hot(std::span<const std::int32_t> labels, std::size_t num_classes);

/// Parameter handles for one stage, looked up by name in a binding.
Linear bind_linear(const Binding& params, const std::string& prefix);
MhaParams bind_mha(const Binding& params, const std::string& prefix, std::size_t heads);

}  // namespace cloudattn
