#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cloudattn/cloud_io.h"
#include "cloudattn/network.h"

namespace cloudattn {

/// Inverse of normalize: original = normalized * scale + centroid.
struct NormalizationRecord {
  std::array<double, 3> centroid{0.0, 0.0, 0.0};
  double scale = 1.0;
};

/// Subtracts the centroid and divides by the largest norm (if nonzero).
NormalizationRecord normalize(PointCloud& cloud);
void denormalize(PointCloud& cloud, const NormalizationRecord& record);

/// Classification datasets carry one class per sample; segmentation datasets carry per-point
/// labels inside each cloud and a shape category per sample.
struct Dataset {
  Task task = Task::Classification;
  std::vector<PointCloud> samples;
  std::vector<std::int32_t> sample_labels;  // class (cls) or shape category (seg)
  std::vector<std::string> class_names;     // prediction classes
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<NormalizationRecord> norms;

  std::size_t num_classes() const { return class_names.size(); }
  void validate() const;
};

enum class SyntheticKind { Cls3, Seg2 };
SyntheticKind parse_synthetic_kind(const std::string& name);

/// cls3: sphere / cube / torus surfaces, random rotation, 1-2% jitter.
/// seg2: cube with a pole on top, labels 0 = cube, 1 = pole.
/// Deterministic under `seed`; `test_fraction` of samples are held out.
Dataset gen_synthetic(SyntheticKind kind, std::size_t n_samples, std::size_t points_per_cloud,
                      std::uint64_t seed, double test_fraction = 0.2);

/// Directory layout: one cloud file per sample, manifest.txt ("<file> <class_id> <train|test>"
/// per line), classes.txt (one class name per line), dataset.txt (task=...).
void save_dataset(const std::string& dir, const Dataset& ds, CloudFormat format = CloudFormat::Binary);
Dataset load_dataset(const std::string& dir);

}  // namespace cloudattn
