#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cfil/tensor.hpp"

/// CFT1 tensor files and the named-tensor container built on them.
///
/// CFT1 layout (little endian):
///   "CFT1" | u8 rank | rank x u32 extent | numel x IEEE-754 float32
///
/// Container layout:
///   u32 count | count x (u16 name length | name bytes | CFT1 tensor)
namespace cfil::io {

void write_cft1(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_cft1(std::istream& is);

void save_cft1(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_cft1(const std::filesystem::path& path);

class NamedTensors {
 public:
  void add(std::string name, Tensor<float> t);
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor<float>>>& entries() const { return entries_; }
  std::optional<Tensor<float>> find(const std::string& name) const;
  /// Throws ParseError naming the entry when absent.
  Tensor<float> get(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, Tensor<float>>> entries_;
};

void write_named(std::ostream& os, const NamedTensors& tensors);
NamedTensors read_named(std::istream& is);

void save_named(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_named(const std::filesystem::path& path);

// Little-endian primitives shared by the checkpoint writer.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
std::uint8_t read_u8(std::istream& is);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
void read_exact(std::istream& is, char* dst, std::size_t n);

}  // namespace cfil::io
