#include <dsnet/checkpoint.hpp>

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace dsnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "DSN1";
constexpr std::uint64_t kMaxRank = 8;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks so large files are fine.
  constexpr std::size_t kChunk = std::size_t{1} << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const auto n = static_cast<uInt>(std::min(kChunk, bytes.size() - off));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), n);
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(CheckpointErrc::truncated, std::string("checkpoint truncated while reading ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
Tensor<Scalar> read_payload(Reader& r, Shape shape) {
  Tensor<Scalar> t(std::move(shape));
  const auto raw = r.take(static_cast<std::size_t>(t.size()) * sizeof(Scalar), "payload");
  std::memcpy(t.data(), raw.data(), raw.size());
  return t;
}

}  // namespace

std::string_view to_string(CheckpointErrc code) {
  switch (code) {
    case CheckpointErrc::io: return "io";
    case CheckpointErrc::magic: return "magic";
    case CheckpointErrc::truncated: return "truncated";
    case CheckpointErrc::crc: return "crc";
    case CheckpointErrc::malformed: return "malformed";
    case CheckpointErrc::name_mismatch: return "name_mismatch";
    case CheckpointErrc::shape_mismatch: return "shape_mismatch";
    case CheckpointErrc::dtype_mismatch: return "dtype_mismatch";
  }
  return "unknown";
}

const Shape& CheckpointRecord::shape() const {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, tensor);
}

template <typename Scalar>
Checkpoint snapshot(const ParameterList<Scalar>& params) {
  Checkpoint c;
  c.reserve(params.size());
  for (const auto& p : params) c.push_back({p.name, p.var.value()});
  return c;
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic);
  put(out, static_cast<std::uint32_t>(checkpoint.size()));
  for (const auto& rec : checkpoint) {
    put(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    put(out, static_cast<std::uint32_t>(rec.shape().size()));
    for (Index e : rec.shape()) put(out, static_cast<std::uint64_t>(e));
    put(out, static_cast<std::uint8_t>(rec.dtype()));
    std::visit(
        [&](const auto& t) {
          out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(*t.data()));
        },
        rec.tensor);
  }
  put(out, crc32_of(std::string_view(out).substr(kMagic.size())));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
    throw CheckpointError(CheckpointErrc::magic, "not a checkpoint: magic bytes differ from DSN1");
  if (bytes.size() < kMagic.size() + 2 * sizeof(std::uint32_t))
    throw CheckpointError(CheckpointErrc::truncated, "checkpoint truncated: missing header or crc");
  const auto body = bytes.substr(kMagic.size(), bytes.size() - kMagic.size() - sizeof(std::uint32_t));
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored), sizeof(stored));

  // Parse first so a cut-off file reports truncation rather than a crc error.
  Reader r(body);
  Checkpoint c;
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = std::string(r.take(r.get<std::uint32_t>("name length"), "name"));
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > kMaxRank)
      throw CheckpointError(CheckpointErrc::malformed, "checkpoint record '" + rec.name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max()))
        throw CheckpointError(CheckpointErrc::malformed, "checkpoint record '" + rec.name + "' has an oversized extent");
      shape.push_back(static_cast<Index>(e));
    }
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype == static_cast<std::uint8_t>(DType::f32)) rec.tensor = read_payload<float>(r, std::move(shape));
    else if (dtype == static_cast<std::uint8_t>(DType::f64)) rec.tensor = read_payload<double>(r, std::move(shape));
    else
      throw CheckpointError(CheckpointErrc::malformed,
                            "checkpoint record '" + rec.name + "' has unknown dtype code " + std::to_string(dtype));
    c.push_back(std::move(rec));
  }
  if (!r.done()) throw CheckpointError(CheckpointErrc::malformed, "checkpoint has trailing bytes after the last record");
  if (crc32_of(body) != stored) throw CheckpointError(CheckpointErrc::crc, "checkpoint crc mismatch: payload is corrupted");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrc::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::io, "write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template <typename Scalar>
void restore(const Checkpoint& checkpoint, const ParameterList<Scalar>& params) {
  if (checkpoint.size() != params.size())
    throw CheckpointError(CheckpointErrc::name_mismatch, "checkpoint has " + std::to_string(checkpoint.size()) +
                                                             " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = checkpoint[i];
    const auto& p = params[i];
    if (rec.name != p.name)
      throw CheckpointError(CheckpointErrc::name_mismatch,
                            "checkpoint tensor " + std::to_string(i) + " is '" + rec.name + "', model expects '" + p.name + "'");
    if (rec.shape() != p.var.shape())
      throw CheckpointError(CheckpointErrc::shape_mismatch, "tensor '" + p.name + "': checkpoint shape " +
                                                                to_string(rec.shape()) + ", model shape " +
                                                                to_string(p.var.shape()));
    if (rec.dtype() != dtype_of<Scalar>())
      throw CheckpointError(CheckpointErrc::dtype_mismatch, "tensor '" + p.name + "' has a different dtype");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<Scalar> var = params[i].var;
    var.mutable_value() = std::get<Tensor<Scalar>>(checkpoint[i].tensor);
  }
}

template Checkpoint snapshot(const ParameterList<float>&);
template Checkpoint snapshot(const ParameterList<double>&);
template void restore(const Checkpoint&, const ParameterList<float>&);
template void restore(const Checkpoint&, const ParameterList<double>&);

}  // namespace dsnet
