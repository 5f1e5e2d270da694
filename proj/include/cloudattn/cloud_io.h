#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloudattn/spatial.h"

namespace cloudattn {

/// Malformed input. `position` is a 1-based line number for text, a byte offset for binary.
class FormatError : public std::runtime_error {
 public:
  enum class Unit { Line, Byte };
  FormatError(const std::string& detail, Unit unit, std::size_t position,
              const std::string& source = {});
  Unit unit() const { return unit_; }
  std::size_t position() const { return position_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  Unit unit_;
  std::size_t position_;
};

enum class CloudFormat { Text, Binary };

/// ".pcat" selects binary, anything else text.
CloudFormat format_for_path(const std::string& path);

// Text: header "N d" (or "N d L" with a trailing integer label column), then N rows of d
// whitespace-separated values; first three columns are coordinates.
// Binary: "PCAT", u32 version=1, u32 N, u32 d, u8 has_labels, N*d f32, then N u32 labels;
// little-endian throughout.
// Values are stored as f32; readers widen to f64, so write->read is exact for f32 values.

inline constexpr std::uint32_t kCloudFormatVersion = 1;

PointCloud parse_cloud_text(const std::string& text);
std::string format_cloud_text(const PointCloud& cloud);
PointCloud parse_cloud_binary(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> format_cloud_binary(const PointCloud& cloud);

/// File I/O wrappers. Errors mention the path.
PointCloud load_cloud(const std::string& path);
PointCloud load_cloud(const std::string& path, CloudFormat format);
void save_cloud(const std::string& path, const PointCloud& cloud);
void save_cloud(const std::string& path, const PointCloud& cloud, CloudFormat format);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace cloudattn
