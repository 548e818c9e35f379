#include "saccade/checkpoint.hpp"

#include "saccade/binary_io.hpp"

namespace saccade {
namespace {

constexpr std::uint8_t kVersion = 1;

std::string dims_str(const std::vector<std::uint32_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::string& magic,
                                            const std::vector<std::uint32_t>& dims,
                                            const ParameterRefs& params) {
  ByteWriter w;
  w.bytes(magic);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (std::uint32_t d : dims) w.u32(d);
  for (const Parameter* p : params) {
    for (double v : p->value.data()) w.f64(v);
  }
  return w.buffer();
}

void decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                       const std::string& magic,
                       const std::vector<std::uint32_t>& dims,
                       const ParameterRefs& params) {
  ByteReader r(bytes);
  try {
    if (r.bytes(magic.size()) != magic) {
      throw CheckpointError("bad magic: expected " + magic);
    }
    if (const auto v = r.u8(); v != kVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
    }
    std::vector<std::uint32_t> found(r.u32());
    if (found.size() > 64) throw CheckpointError("implausible dims header");
    for (auto& d : found) d = r.u32();
    if (found != dims) {
      throw CheckpointError(magic + " checkpoint dims " + dims_str(found) +
                            " do not match configuration " + dims_str(dims));
    }
    std::size_t total = 0;
    for (const Parameter* p : params) total += p->value.size();
    if (r.remaining() != total * 8) {
      throw CheckpointError(magic + " checkpoint payload holds " +
                            std::to_string(r.remaining()) + " bytes, expected " +
                            std::to_string(total * 8));
    }
    for (Parameter* p : params) {
      for (double& v : p->value.data()) v = r.f64();
    }
  } catch (const TruncatedError& e) {
    throw CheckpointError(e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const std::string& magic,
                     const std::vector<std::uint32_t>& dims,
                     const ParameterRefs& params) {
  write_file(path, encode_checkpoint(magic, dims, params));
}

void load_checkpoint(const std::filesystem::path& path, const std::string& magic,
                     const std::vector<std::uint32_t>& dims,
                     const ParameterRefs& params) {
  try {
    decode_checkpoint(read_file(path), magic, dims, params);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace saccade
