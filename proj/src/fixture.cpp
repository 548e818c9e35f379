#include "saccade/fixture.hpp"

#include <limits>

#include "saccade/binary_io.hpp"

namespace saccade {

std::vector<std::uint8_t> encode_stream(const Tensor& stream, const std::string& magic) {
  if (stream.rank() != 4) {
    throw DimMismatchError("fixture: expected a T x C x H x W stream, got " +
                           shape_str(stream.shape()));
  }
  for (std::size_t d : stream.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw DimMismatchError("fixture: dimension too large for the header");
    }
  }
  ByteWriter w;
  w.bytes(magic);
  w.u8(1);
  for (std::size_t d : stream.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : stream.data()) w.f32(static_cast<float>(v));
  return w.buffer();
}

Tensor decode_stream(const std::vector<std::uint8_t>& bytes, const std::string& magic) {
  ByteReader r(bytes);
  try {
    if (r.bytes(magic.size()) != magic) {
      throw BadMagicError("bad magic: expected '" + magic + "'");
    }
    const std::uint8_t version = r.u8();
    if (version != 1) {
      throw FixtureError("unsupported fixture version " + std::to_string(version));
    }
    Shape shape(4);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    if (n == 0) {
      throw DimMismatchError("dim/payload mismatch: header " + shape_str(shape) +
                             " describes an empty stream");
    }
    if (r.remaining() < n * 4) {
      throw TruncatedPayloadError("truncated payload: header " + shape_str(shape) +
                                  " needs " + std::to_string(n * 4) + " bytes, have " +
                                  std::to_string(r.remaining()));
    }
    if (r.remaining() > n * 4) {
      throw DimMismatchError("dim/payload mismatch: " +
                             std::to_string(r.remaining() - n * 4) +
                             " bytes beyond the payload of " + shape_str(shape));
    }
    Tensor out(shape);
    for (double& v : out.data()) v = r.f32();
    return out;
  } catch (const TruncatedError& e) {
    // Header itself cut short.
    if (bytes.size() < magic.size()) throw BadMagicError("bad magic: file too short");
    throw TruncatedPayloadError(std::string("truncated payload: ") + e.what());
  }
}

void write_fixture(const std::filesystem::path& path, const Tensor& stream,
                   const std::string& magic) {
  write_file(path, encode_stream(stream, magic));
}

Tensor read_fixture(const std::filesystem::path& path, const std::string& magic) {
  try {
    return decode_stream(read_file(path), magic);
  } catch (const FixtureError& e) {
    // Same error class, with the path attached.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const BadMagicError*>(&e)) throw BadMagicError(msg);
    if (dynamic_cast<const TruncatedPayloadError*>(&e)) throw TruncatedPayloadError(msg);
    if (dynamic_cast<const DimMismatchError*>(&e)) throw DimMismatchError(msg);
    throw FixtureError(msg);
  }
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw DimMismatchError("stack_frames: no frames");
  const Shape& s = frames.front().shape();
  if (s.size() != 3) {
    throw DimMismatchError("stack_frames: frames must be C x H x W, got " + shape_str(s));
  }
  Tensor out({frames.size(), s[0], s[1], s[2]});
  std::size_t off = 0;
  for (const Tensor& f : frames) {
    if (f.shape() != s) {
      throw DimMismatchError("stack_frames: frame " + shape_str(f.shape()) +
                             " differs from " + shape_str(s));
    }
    for (double v : f.data()) out[off++] = v;
  }
  return out;
}

std::vector<Tensor> unstack_frames(const Tensor& stream) {
  if (stream.rank() != 4) {
    throw DimMismatchError("unstack_frames: expected rank 4, got " +
                           shape_str(stream.shape()));
  }
  const Shape frame{stream.dim(1), stream.dim(2), stream.dim(3)};
  const std::size_t n = shape_numel(frame);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < stream.dim(0); ++t) {
    const auto src = stream.data().subspan(t * n, n);
    out.emplace_back(frame, std::vector<double>(src.begin(), src.end()));
  }
  return out;
}

std::vector<AttentionMap> to_attention(const Tensor& stream) {
  std::vector<AttentionMap> out;
  for (Tensor& t : unstack_frames(stream)) {
    out.push_back({std::move(t), AttentionKind::kNormalized});
  }
  return out;
}

}  // namespace saccade
