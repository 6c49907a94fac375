#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace cfil {

using Index = std::int64_t;

/// Ordered list of positive extents, outermost first (N, C, H, W).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims);
  explicit Shape(std::vector<Index> dims);

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index numel() const { return numel_; }
  Index operator[](Index axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  const std::vector<Index>& dims() const { return dims_; }

  std::string to_string() const;

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }
  friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

 private:
  void validate();

  std::vector<Index> dims_;
  Index numel_ = 1;
};

}  // namespace cfil
