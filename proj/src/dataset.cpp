#include "cloudattn/dataset.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "cloudattn/config.h"

namespace cloudattn {

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

Mat3 random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double w = a * std::sin(2 * std::numbers::pi * u2), x = a * std::cos(2 * std::numbers::pi * u2);
  const double y = b * std::sin(2 * std::numbers::pi * u3), z = b * std::cos(2 * std::numbers::pi * u3);
  return Mat3{Vec3{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
              Vec3{2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
              Vec3{2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
}

Vec3 sample_sphere(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 p{g(rng), g(rng), g(rng)};
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (n > 1e-9) return Vec3{p[0] / n, p[1] / n, p[2] / n};
  }
}

/// Surface of the cube [-h, h]^3.
Vec3 sample_cube(std::mt19937_64& rng, double h) {
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<double> u(-h, h);
  const int f = face(rng);
  Vec3 p{u(rng), u(rng), u(rng)};
  p[static_cast<std::size_t>(f / 2)] = f % 2 ? h : -h;
  return p;
}

Vec3 sample_torus(std::mt19937_64& rng, double major, double minor) {
  std::uniform_real_distribution<double> ang(0.0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double theta = ang(rng), phi = ang(rng);
    // Area element is proportional to (major + minor cos(phi)).
    if (u(rng) * (major + minor) > major + minor * std::cos(phi)) continue;
    const double r = major + minor * std::cos(phi);
    return Vec3{r * std::cos(theta), r * std::sin(theta), minor * std::sin(phi)};
  }
}

struct LabeledPoint {
  Vec3 p;
  std::int32_t label;
};

/// Cube of half-size 0.5 with a pole of radius pr and height ph standing on the top face at
/// (ox, oy). Parts are sampled in proportion to their surface area.
LabeledPoint sample_cube_pole(std::mt19937_64& rng, double ox, double oy, double pr, double ph) {
  constexpr double h = 0.5;
  const double cube_area = 6 * (2 * h) * (2 * h);
  const double side_area = 2 * std::numbers::pi * pr * ph;
  const double cap_area = std::numbers::pi * pr * pr;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double pick = u(rng) * (cube_area + side_area + cap_area);
    if (pick < cube_area) {
      Vec3 p = sample_cube(rng, h);
      // The pole footprint hides part of the top face.
      if (p[2] == h && std::hypot(p[0] - ox, p[1] - oy) < pr) continue;
      return {p, 0};
    }
    const double theta = u(rng) * 2 * std::numbers::pi;
    if (pick < cube_area + side_area) {
      return {Vec3{ox + pr * std::cos(theta), oy + pr * std::sin(theta), h + u(rng) * ph}, 1};
    }
    const double r = pr * std::sqrt(u(rng));
    return {Vec3{ox + r * std::cos(theta), oy + r * std::sin(theta), h + ph}, 1};
  }
}

void rotate_and_jitter(PointCloud& cloud, std::mt19937_64& rng) {
  const Mat3 rot = random_rotation(rng);
  std::uniform_real_distribution<double> sigma_dist(0.01, 0.02);
  std::normal_distribution<double> g(0.0, 1.0);
  const double sigma = sigma_dist(rng);
  const std::size_t n = cloud.size();
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p{cloud.coords.at(i, 0), cloud.coords.at(i, 1), cloud.coords.at(i, 2)};
    for (std::size_t r = 0; r < 3; ++r) {
      cloud.coords.at(i, r) =
          rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2] + sigma * g(rng);
    }
  }
}

}  // namespace

NormalizationRecord normalize(PointCloud& cloud) {
  cloud.validate();
  NormalizationRecord rec;
  const std::size_t n = cloud.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 3; ++d) rec.centroid[d] += cloud.coords.at(i, d);
  for (auto& c : rec.centroid) c /= static_cast<double>(n);
  double max_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
      cloud.coords.at(i, d) -= rec.centroid[d];
      s += cloud.coords.at(i, d) * cloud.coords.at(i, d);
    }
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  rec.scale = max_norm > 0.0 ? max_norm : 1.0;
  for (auto& v : cloud.coords.values()) v /= rec.scale;
  return rec;
}

void denormalize(PointCloud& cloud, const NormalizationRecord& record) {
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (std::size_t d = 0; d < 3; ++d)
      cloud.coords.at(i, d) = cloud.coords.at(i, d) * record.scale + record.centroid[d];
}

void Dataset::validate() const {
  if (samples.size() != sample_labels.size()) {
    throw std::invalid_argument("dataset: sample/label count mismatch");
  }
  const std::size_t c = num_classes();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].validate();
    if (task == Task::Classification) {
      if (sample_labels[i] < 0 || static_cast<std::size_t>(sample_labels[i]) >= c)
        throw std::invalid_argument("dataset: sample " + std::to_string(i) + " label out of range");
    } else {
      if (!samples[i].has_labels())
        throw std::invalid_argument("dataset: segmentation sample " + std::to_string(i) + " has no point labels");
      for (auto l : samples[i].labels)
        if (l < 0 || static_cast<std::size_t>(l) >= c)
          throw std::invalid_argument("dataset: sample " + std::to_string(i) + " point label out of range");
    }
  }
  for (auto i : train)
    if (i >= samples.size()) throw std::invalid_argument("dataset: train index out of range");
  for (auto i : test)
    if (i >= samples.size()) throw std::invalid_argument("dataset: test index out of range");
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "cls3") return SyntheticKind::Cls3;
  if (name == "seg2") return SyntheticKind::Seg2;
  throw std::invalid_argument("unknown synthetic dataset kind '" + name + "' (expected cls3|seg2)");
}

Dataset gen_synthetic(SyntheticKind kind, std::size_t n_samples, std::size_t points_per_cloud,
                      std::uint64_t seed, double test_fraction) {
  if (n_samples < 1) throw std::invalid_argument("gen_synthetic: n_samples must be >= 1");
  if (points_per_cloud < 1) throw std::invalid_argument("gen_synthetic: points_per_cloud must be >= 1");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("gen_synthetic: test_fraction must be in [0, 1)");

  std::mt19937_64 rng(seed);
  Dataset ds;
  if (kind == SyntheticKind::Cls3) {
    ds.task = Task::Classification;
    ds.class_names = {"sphere", "cube", "torus"};
  } else {
    ds.task = Task::Segmentation;
    ds.class_names = {"cube", "pole"};
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    PointCloud cloud;
    cloud.coords = Tensor::matrix(points_per_cloud, 3);
    std::int32_t label = 0;
    if (kind == SyntheticKind::Cls3) {
      label = static_cast<std::int32_t>(s % 3);
      for (std::size_t i = 0; i < points_per_cloud; ++i) {
        const Vec3 p = label == 0 ? sample_sphere(rng)
                       : label == 1 ? sample_cube(rng, 1.0)
                                    : sample_torus(rng, 1.0, 0.35);
        for (std::size_t d = 0; d < 3; ++d) cloud.coords.at(i, d) = p[d];
      }
    } else {
      const double ox = (u(rng) - 0.5) * 0.4, oy = (u(rng) - 0.5) * 0.4;
      const double pr = 0.12 + 0.06 * u(rng), ph = 0.6 + 0.4 * u(rng);
      cloud.labels.resize(points_per_cloud);
      for (std::size_t i = 0; i < points_per_cloud; ++i) {
        const auto lp = sample_cube_pole(rng, ox, oy, pr, ph);
        for (std::size_t d = 0; d < 3; ++d) cloud.coords.at(i, d) = lp.p[d];
        cloud.labels[i] = lp.label;
      }
    }
    rotate_and_jitter(cloud, rng);
    ds.norms.push_back(normalize(cloud));
    // Stored files hold f32, so keep generated data f32-exact.
    for (double& v : cloud.coords.values()) v = static_cast<double>(static_cast<float>(v));
    ds.samples.push_back(std::move(cloud));
    ds.sample_labels.push_back(label);
  }

  std::vector<std::size_t> idx(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n_samples)));
  ds.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  ds.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds, CloudFormat format) {
  ds.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<char> is_test(ds.samples.size(), 0);
  for (auto i : ds.test) is_test[i] = 1;
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "# file class_id split centroid_x centroid_y centroid_z scale\n";
  const char* ext = format == CloudFormat::Binary ? ".pcat" : ".txt";
  char buf[160];
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const std::string name = "sample_" + std::to_string(i) + ext;
    save_cloud((fs::path(dir) / name).string(), ds.samples[i], format);
    const NormalizationRecord rec = i < ds.norms.size() ? ds.norms[i] : NormalizationRecord{};
    std::snprintf(buf, sizeof(buf), " %.17g %.17g %.17g %.17g", rec.centroid[0], rec.centroid[1],
                  rec.centroid[2], rec.scale);
    manifest << name << ' ' << ds.sample_labels[i] << ' ' << (is_test[i] ? "test" : "train")
             << buf << '\n';
  }
  std::ofstream classes(fs::path(dir) / "classes.txt");
  for (const auto& c : ds.class_names) classes << c << '\n';
  std::ofstream meta(fs::path(dir) / "dataset.txt");
  meta << "task=" << task_name(ds.task) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory not found: " + dir);
  Dataset ds;
  const auto meta = KeyValues::load((root / "dataset.txt").string());
  ds.task = parse_task(meta.get("task", "classification"));

  std::ifstream classes(root / "classes.txt");
  if (!classes) throw std::runtime_error("cannot open " + (root / "classes.txt").string());
  for (std::string line; std::getline(classes, line);) {
    if (!trim(line).empty()) ds.class_names.push_back(trim(line));
  }

  const fs::path manifest_path = root / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open " + manifest_path.string());
  std::size_t lineno = 0;
  for (std::string line; std::getline(manifest, line);) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream is(t);
    std::string file, split_name;
    long long cls = -1;
    if (!(is >> file >> cls >> split_name) || (split_name != "train" && split_name != "test")) {
      throw FormatError("expected '<file> <class_id> <train|test>'", FormatError::Unit::Line,
                        lineno, manifest_path.string());
    }
    NormalizationRecord rec;
    if (!(is >> rec.centroid[0] >> rec.centroid[1] >> rec.centroid[2] >> rec.scale)) rec = {};
    const std::size_t index = ds.samples.size();
    ds.samples.push_back(load_cloud((root / file).string()));
    ds.sample_labels.push_back(static_cast<std::int32_t>(cls));
    ds.norms.push_back(rec);
    (split_name == "train" ? ds.train : ds.test).push_back(index);
  }
  ds.validate();
  return ds;
}

}  // namespace cloudattn
