#include "cfil/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "cfil/error.hpp"

namespace cfil::io {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'F', 'T', '1'};

void ensure_written(std::ostream& os) {
  if (!os) throw IoError("write failed");
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

void write_u16(std::ostream& os, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  os.write(bytes, 2);
}

void write_u32(std::ostream& os, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes, 4);
}

void read_exact(std::istream& is, char* dst, std::size_t n) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw ParseError("truncated input");
}

std::uint8_t read_u8(std::istream& is) {
  char c;
  read_exact(is, &c, 1);
  return static_cast<std::uint8_t>(c);
}

std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  read_exact(is, reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_cft1(std::ostream& os, const Tensor<float>& t) {
  const Shape& shape = t.shape();
  if (shape.rank() > std::numeric_limits<std::uint8_t>::max()) throw CapacityError("CFT1: rank above 255");
  os.write(kMagic.data(), kMagic.size());
  write_u8(os, static_cast<std::uint8_t>(shape.rank()));
  for (Index d : shape.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw CapacityError("CFT1: extent above 2^32-1");
    write_u32(os, static_cast<std::uint32_t>(d));
  }
  std::vector<char> payload(t.values().size() * 4);
  for (std::size_t i = 0; i < t.values().size(); ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(t.values()[i]);
    for (int b = 0; b < 4; ++b) payload[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  ensure_written(os);
}

Tensor<float> read_cft1(std::istream& is) {
  std::array<char, 4> magic{};
  read_exact(is, magic.data(), magic.size());
  if (magic != kMagic) throw ParseError("not a CFT1 tensor (bad magic)");
  const std::uint8_t rank = read_u8(is);
  std::vector<Index> dims(rank);
  for (auto& d : dims) {
    d = read_u32(is);
    if (d == 0) throw ParseError("CFT1: zero extent");
  }
  const Shape shape(std::move(dims));
  std::vector<unsigned char> payload(static_cast<std::size_t>(shape.numel()) * 4);
  read_exact(is, reinterpret_cast<char*>(payload.data()), payload.size());
  std::vector<float> values(static_cast<std::size_t>(shape.numel()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return Tensor<float>::from(shape, std::move(values));
}

void save_cft1(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_cft1(os, t);
}

Tensor<float> load_cft1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_cft1(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void NamedTensors::add(std::string name, Tensor<float> t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw CapacityError("tensor name too long");
  entries_.emplace_back(std::move(name), std::move(t));
}

std::optional<Tensor<float>> NamedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  return std::nullopt;
}

Tensor<float> NamedTensors::get(const std::string& name) const {
  auto t = find(name);
  if (!t) throw ParseError("missing tensor '" + name + "'");
  return *t;
}

void write_named(std::ostream& os, const NamedTensors& tensors) {
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors.entries()) {
    write_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_cft1(os, t);
  }
  ensure_written(os);
}

NamedTensors read_named(std::istream& is) {
  NamedTensors out;
  const std::uint32_t count = read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(read_u16(is), '\0');
    read_exact(is, name.data(), name.size());
    out.add(std::move(name), read_cft1(is));
  }
  return out;
}

void save_named(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_named(os, tensors);
}

NamedTensors load_named(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_named(is);
}

}  // namespace cfil::io
