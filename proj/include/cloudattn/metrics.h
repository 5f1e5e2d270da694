#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cloudattn {

/// A contiguous range [begin, end) of predictions that belong to one shape instance.
/// `parts` lists the part classes of its category; empty means every class.
struct ShapeGroup {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::int32_t category = 0;
  std::vector<std::int32_t> parts;
};

struct MetricsReport {
  double oa = 0.0;
  double macc = 0.0;
  double ins_miou = 0.0;
  double cat_miou = 0.0;
  /// Per-class accuracy; NaN for classes without ground-truth samples.
  std::vector<double> class_acc;
  /// Per-class IoU over all predictions pooled; NaN when a class is absent from both.
  std::vector<double> class_iou;
  std::vector<std::size_t> class_support;

  /// key=value lines (oa, macc, ins_miou, cat_miou, then per-class entries).
  std::string to_text() const;
};

/// OA, mAcc (skipping classes with no ground truth), instance mIoU (mean over shapes of the
/// per-shape mean part IoU; a part absent from both prediction and truth scores 1) and
/// category mIoU (mean over categories of the per-category instance mean). Without groups the
/// whole input is treated as a single shape containing every class.
MetricsReport compute_metrics(std::span<const std::int32_t> preds,
                              std::span<const std::int32_t> labels, std::size_t num_classes,
                              std::span<const ShapeGroup> groups = {});

}  // namespace cloudattn
