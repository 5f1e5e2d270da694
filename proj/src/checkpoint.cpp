#include "cloudattn/checkpoint.h"

#include <cstring>

#include "cloudattn/cloud_io.h"

namespace cloudattn {

namespace {

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("truncated checkpoint reading ") + what + ": expected " +
                            std::to_string(pos_ + n) + " bytes, got " +
                            std::to_string(bytes_.size()),
                        FormatError::Unit::Byte, pos_);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() {
    float v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelConfig& cfg, const ParamStore& params) {
  std::vector<std::uint8_t> out{'P', 'C', 'C', 'K'};
  put_u32(out, kCheckpointVersion);
  put_str(out, cfg.to_kv().to_text());
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& name : params.names()) {
    const Tensor& t = params.get(name);
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      std::uint8_t b[4];
      std::memcpy(b, &f, 4);
      out.insert(out.end(), b, b + 4);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != "PCCK") throw FormatError("bad magic, expected \"PCCK\"", FormatError::Unit::Byte, 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version),
                      FormatError::Unit::Byte, 4);
  }
  const std::uint32_t cfg_len = r.u32("config length");
  Checkpoint ck;
  ck.config = ModelConfig::from_kv(KeyValues::parse(r.str(cfg_len, "config")));
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32("name length"), "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) {
      throw FormatError("tensor '" + name + "' has invalid rank " + std::to_string(rank),
                        FormatError::Unit::Byte, r.pos() - 4);
    }
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("dimension"));
    const std::size_t n = shape_numel(shape);
    r.need(n * 4, "tensor data");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f32();
    ck.params.add(name, Tensor(shape, std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", FormatError::Unit::Byte, r.pos());

  // The stored tensors must be exactly what the config implies.
  const ParamStore expected = init_params(ck.config);
  if (expected.names() != ck.params.names()) {
    throw FormatError("checkpoint parameters do not match its model config", FormatError::Unit::Byte, 0);
  }
  for (const auto& name : expected.names()) {
    if (expected.get(name).shape() != ck.params.get(name).shape()) {
      throw FormatError("parameter '" + name + "' has shape " +
                            shape_str(ck.params.get(name).shape()) + ", config implies " +
                            shape_str(expected.get(name).shape()),
                        FormatError::Unit::Byte, 0);
    }
  }
  return ck;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& params) {
  write_file_bytes(path, serialize_checkpoint(cfg, params));
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.detail(), e.unit(), e.position(), path);
  }
}

}  // namespace cloudattn
