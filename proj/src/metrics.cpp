#include "cloudattn/metrics.h"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>

namespace cloudattn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double shape_miou(std::span<const std::int32_t> preds, std::span<const std::int32_t> labels,
                  const ShapeGroup& g, std::size_t num_classes) {
  std::vector<std::int32_t> parts = g.parts;
  if (parts.empty())
    for (std::size_t c = 0; c < num_classes; ++c) parts.push_back(static_cast<std::int32_t>(c));
  double total = 0.0;
  for (auto part : parts) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = g.begin; i < g.end; ++i) {
      const bool p = preds[i] == part, l = labels[i] == part;
      inter += p && l;
      uni += p || l;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(parts.size());
}

}  // namespace

MetricsReport compute_metrics(std::span<const std::int32_t> preds,
                              std::span<const std::int32_t> labels, std::size_t num_classes,
                              std::span<const ShapeGroup> groups) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw std::invalid_argument("metrics: no predictions");
  if (num_classes < 1) throw std::invalid_argument("metrics: num_classes must be >= 1");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || labels[i] < 0 || static_cast<std::size_t>(preds[i]) >= num_classes ||
        static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("metrics: class id out of range at index " + std::to_string(i));
    }
  }

  MetricsReport r;
  std::vector<std::size_t> correct(num_classes, 0), support(num_classes, 0), predicted(num_classes, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto l = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(preds[i]);
    ++support[l];
    ++predicted[p];
    if (l == p) {
      ++correct[l];
      ++total_correct;
    }
  }
  r.oa = static_cast<double>(total_correct) / static_cast<double>(preds.size());
  r.class_acc.assign(num_classes, kNaN);
  r.class_iou.assign(num_classes, kNaN);
  r.class_support = support;
  double acc_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (support[c]) {
      r.class_acc[c] = static_cast<double>(correct[c]) / static_cast<double>(support[c]);
      acc_sum += r.class_acc[c];
      ++present;
    }
    const std::size_t uni = support[c] + predicted[c] - correct[c];
    if (uni) r.class_iou[c] = static_cast<double>(correct[c]) / static_cast<double>(uni);
  }
  r.macc = acc_sum / static_cast<double>(present);

  std::vector<ShapeGroup> whole;
  if (groups.empty()) {
    whole.push_back(ShapeGroup{0, preds.size(), 0, {}});
    groups = whole;
  }
  std::map<std::int32_t, std::pair<double, std::size_t>> per_cat;
  double ins_sum = 0.0;
  for (const auto& g : groups) {
    if (g.begin >= g.end || g.end > preds.size()) {
      throw std::invalid_argument("metrics: shape group range out of bounds");
    }
    const double m = shape_miou(preds, labels, g, num_classes);
    ins_sum += m;
    auto& [sum, count] = per_cat[g.category];
    sum += m;
    ++count;
  }
  r.ins_miou = ins_sum / static_cast<double>(groups.size());
  double cat_sum = 0.0;
  for (const auto& [cat, acc] : per_cat) cat_sum += acc.first / static_cast<double>(acc.second);
  r.cat_miou = cat_sum / static_cast<double>(per_cat.size());
  return r;
}

std::string MetricsReport::to_text() const {
  std::string out;
  char buf[96];
  auto line = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    std::string value = buf;
    if (std::isfinite(v) && value.find_first_of(".e") == std::string::npos) value += ".0";
    out += key + "=" + value + "\n";
  };
  line("oa", oa);
  line("macc", macc);
  line("ins_miou", ins_miou);
  line("cat_miou", cat_miou);
  for (std::size_t c = 0; c < class_acc.size(); ++c) {
    line("class" + std::to_string(c) + "_acc", class_acc[c]);
    line("class" + std::to_string(c) + "_iou", class_iou[c]);
    out += "class" + std::to_string(c) + "_support=" + std::to_string(class_support[c]) + "\n";
  }
  return out;
}

}  // namespace cloudattn
