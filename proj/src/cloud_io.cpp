#include "cloudattn/cloud_io.h"

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cloudattn {

static_assert(std::endian::native == std::endian::little,
              "cloud file I/O assumes a little-endian host");

namespace {

std::string position_prefix(FormatError::Unit unit, std::size_t pos) {
  return unit == FormatError::Unit::Line ? "line " + std::to_string(pos) + ": "
                                         : "byte " + std::to_string(pos) + ": ";
}

[[noreturn]] void fail_line(std::size_t line, const std::string& msg) {
  throw FormatError(msg, FormatError::Unit::Line, line);
}

[[noreturn]] void fail_byte(std::size_t byte, const std::string& msg) {
  throw FormatError(msg, FormatError::Unit::Byte, byte);
}

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

bool parse_count(const std::string& s, std::size_t& out) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return false;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno) return false;
  out = static_cast<std::size_t>(v);
  return true;
}

bool parse_float(const std::string& s, float& out) {
  char* end = nullptr;
  errno = 0;
  out = std::strtof(s.c_str(), &end);
  return end == s.c_str() + s.size() && !s.empty();
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + at, 4);
  return v;
}

void split_columns(const std::vector<float>& values, std::size_t n, std::size_t d,
                   PointCloud& cloud) {
  cloud.coords = Tensor::matrix(n, 3);
  if (d > 3) cloud.feats = Tensor::matrix(n, d - 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double v = values[i * d + j];
      if (j < 3)
        cloud.coords.at(i, j) = v;
      else
        cloud.feats->at(i, j - 3) = v;
    }
  }
}

float column_value(const PointCloud& cloud, std::size_t i, std::size_t j) {
  return static_cast<float>(j < 3 ? cloud.coords.at(i, j) : cloud.feats->at(i, j - 3));
}

}  // namespace

FormatError::FormatError(const std::string& detail, Unit unit, std::size_t position,
                         const std::string& source)
    : std::runtime_error((source.empty() ? "" : source + ": ") + position_prefix(unit, position) +
                         detail),
      detail_(detail),
      unit_(unit),
      position_(position) {}

CloudFormat format_for_path(const std::string& path) {
  const std::string ext = ".pcat";
  if (path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
    return CloudFormat::Binary;
  return CloudFormat::Text;
}

PointCloud parse_cloud_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    ++lineno;
    header = tokens_of(line);
    if (!header.empty()) break;
  }
  if (header.empty()) fail_line(lineno ? lineno : 1, "missing header \"N d\"");
  std::size_t n = 0, d = 0;
  const bool labeled = header.size() == 3 && header[2] == "L";
  if ((header.size() != 2 && !labeled) || !parse_count(header[0], n) ||
      !parse_count(header[1], d)) {
    fail_line(lineno, "malformed header '" + line + "', expected \"N d\" or \"N d L\"");
  }
  if (n < 1) fail_line(lineno, "point count must be >= 1");
  if (d < 3) fail_line(lineno, "dimension must be >= 3 (x y z first), got " + std::to_string(d));

  const std::size_t cols = d + (labeled ? 1 : 0);
  std::vector<float> values;
  values.reserve(n * d);
  PointCloud cloud;
  std::size_t rows = 0;
  while (rows < n && std::getline(is, line)) {
    ++lineno;
    const auto t = tokens_of(line);
    if (t.empty()) continue;
    if (t.size() != cols) {
      fail_line(lineno, "expected " + std::to_string(cols) + " columns, found " +
                            std::to_string(t.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      float v;
      if (!parse_float(t[j], v)) fail_line(lineno, "column " + std::to_string(j + 1) + ": not a number: '" + t[j] + "'");
      if (!std::isfinite(v)) fail_line(lineno, "column " + std::to_string(j + 1) + ": non-finite value");
      values.push_back(v);
    }
    if (labeled) {
      std::size_t lab;
      if (!parse_count(t[d], lab) || lab > 0x7fffffffULL)
        fail_line(lineno, "label column: expected a non-negative integer, got '" + t[d] + "'");
      cloud.labels.push_back(static_cast<std::int32_t>(lab));
    }
    ++rows;
  }
  if (rows < n) {
    fail_line(lineno, "expected " + std::to_string(n) + " point rows, found " + std::to_string(rows));
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (!tokens_of(line).empty()) {
      fail_line(lineno, "unexpected data after " + std::to_string(n) + " point rows");
    }
  }
  split_columns(values, n, d, cloud);
  return cloud;
}

std::string format_cloud_text(const PointCloud& cloud) {
  cloud.validate();
  const std::size_t n = cloud.size(), d = 3 + cloud.feat_dim();
  std::string out = std::to_string(n) + " " + std::to_string(d) + (cloud.has_labels() ? " L" : "") + "\n";
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(column_value(cloud, i, j)));
      if (j) out += ' ';
      out += buf;
    }
    if (cloud.has_labels()) out += " " + std::to_string(cloud.labels[i]);
    out += '\n';
  }
  return out;
}

PointCloud parse_cloud_binary(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t header = 4 + 4 + 4 + 4 + 1;
  if (bytes.size() < header) {
    fail_byte(bytes.size(), "truncated header: expected " + std::to_string(header) + " bytes, got " +
                                std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), "PCAT", 4) != 0) fail_byte(0, "bad magic, expected \"PCAT\"");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCloudFormatVersion) {
    fail_byte(4, "unsupported version " + std::to_string(version));
  }
  const std::size_t n = get_u32(bytes, 8);
  const std::size_t d = get_u32(bytes, 12);
  const std::uint8_t has_labels = bytes[16];
  if (n < 1) fail_byte(8, "point count must be >= 1");
  if (d < 3) fail_byte(12, "dimension must be >= 3, got " + std::to_string(d));
  if (has_labels > 1) fail_byte(16, "has_labels flag must be 0 or 1");
  const std::size_t expected = header + n * d * 4 + (has_labels ? n * 4 : 0);
  if (bytes.size() < expected) {
    fail_byte(bytes.size(), "truncated body: expected " + std::to_string(expected) +
                                " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    fail_byte(expected, "trailing data: expected " + std::to_string(expected) + " bytes, got " +
                            std::to_string(bytes.size()));
  }
  std::vector<float> values(n * d);
  std::memcpy(values.data(), bytes.data() + header, n * d * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) fail_byte(header + 4 * i, "non-finite value");
  }
  PointCloud cloud;
  if (has_labels) {
    const std::size_t base = header + n * d * 4;
    cloud.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t lab = get_u32(bytes, base + 4 * i);
      if (lab > 0x7fffffffU) fail_byte(base + 4 * i, "label out of range");
      cloud.labels[i] = static_cast<std::int32_t>(lab);
    }
  }
  split_columns(values, n, d, cloud);
  return cloud;
}

std::vector<std::uint8_t> format_cloud_binary(const PointCloud& cloud) {
  cloud.validate();
  const std::size_t n = cloud.size(), d = 3 + cloud.feat_dim();
  std::vector<std::uint8_t> out{'P', 'C', 'A', 'T'};
  out.reserve(17 + n * d * 4 + n * 4);
  put_u32(out, kCloudFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(d));
  out.push_back(cloud.has_labels() ? 1 : 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const float v = column_value(cloud, i, j);
      std::uint8_t b[4];
      std::memcpy(b, &v, 4);
      out.insert(out.end(), b, b + 4);
    }
  if (cloud.has_labels()) {
    for (auto l : cloud.labels) {
      if (l < 0) throw std::invalid_argument("binary cloud labels must be non-negative");
      put_u32(out, static_cast<std::uint32_t>(l));
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

PointCloud load_cloud(const std::string& path) { return load_cloud(path, format_for_path(path)); }

PointCloud load_cloud(const std::string& path, CloudFormat format) {
  const auto bytes = read_file_bytes(path);
  try {
    if (format == CloudFormat::Binary) return parse_cloud_binary(bytes);
    return parse_cloud_text(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw FormatError(e.detail(), e.unit(), e.position(), path);
  }
}

void save_cloud(const std::string& path, const PointCloud& cloud) {
  save_cloud(path, cloud, format_for_path(path));
}

void save_cloud(const std::string& path, const PointCloud& cloud, CloudFormat format) {
  if (format == CloudFormat::Binary) {
    write_file_bytes(path, format_cloud_binary(cloud));
  } else {
    const std::string text = format_cloud_text(cloud);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
}

}  // namespace cloudattn
