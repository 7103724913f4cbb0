#include "mer/tsr.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>

#include "mer/error.hpp"

namespace mer {

static_assert(std::endian::native == std::endian::little, "TSR I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'S', 'R', '1'};

template <typename T>
void put(std::vector<unsigned char>& buf, T v) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.insert(buf.end(), raw, raw + sizeof(T));
}

template <typename T>
T take(const std::vector<unsigned char>& bytes, std::size_t& offset, const char* what) {
  if (bytes.size() - offset < sizeof(T)) throw ParseError(std::string("TSR: truncated ") + what, offset);
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return v;
}

}  // namespace

std::vector<unsigned char> encode_tsr(const Tensor& t) {
  const auto& shape = t.shape();
  if (shape.size() > 255) throw DimensionError("TSR: rank above 255");
  std::vector<unsigned char> buf(kMagic, kMagic + 4);
  buf.push_back(static_cast<unsigned char>(shape.size()));
  for (std::size_t d : shape) {
    if (d > UINT32_MAX) throw DimensionError("TSR: dimension exceeds u32");
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  }
  auto data = t.data();
  const auto* raw = reinterpret_cast<const unsigned char*>(data.data());
  buf.insert(buf.end(), raw, raw + data.size() * sizeof(float));
  return buf;
}

void write_tsr(std::ostream& out, const Tensor& t) {
  auto buf = encode_tsr(t);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void save_tsr(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_tsr(t)); }

Tensor decode_tsr(const std::vector<unsigned char>& bytes, std::size_t& offset) {
  if (offset > bytes.size() || bytes.size() - offset < 4) throw ParseError("TSR: truncated magic", offset);
  if (std::memcmp(bytes.data() + offset, kMagic, 4) != 0) throw ParseError("TSR: bad magic", offset);
  offset += 4;
  const auto rank = take<std::uint8_t>(bytes, offset, "rank");
  if (rank == 0) throw ParseError("TSR: rank 0", offset - 1);
  Shape shape;
  for (unsigned i = 0; i < rank; ++i) {
    const auto d = take<std::uint32_t>(bytes, offset, "dimension");
    if (d == 0) throw ParseError("TSR: zero dimension", offset - 4);
    shape.push_back(d);
  }
  const std::size_t count = shape_numel(shape);
  if ((bytes.size() - offset) / sizeof(float) < count) throw ParseError("TSR: truncated payload", bytes.size());
  std::vector<float> values(count);
  std::memcpy(values.data(), bytes.data() + offset, count * sizeof(float));
  offset += count * sizeof(float);
  return Tensor(std::move(shape), std::move(values));
}

Tensor load_tsr(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  Tensor t = decode_tsr(bytes, offset);
  if (offset != bytes.size()) throw ParseError("TSR: trailing bytes in " + path.string(), offset);
  return t;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mer
