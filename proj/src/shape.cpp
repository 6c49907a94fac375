#include "cfil/shape.hpp"

#include <limits>
#include <sstream>

#include "cfil/error.hpp"

namespace cfil {

Shape::Shape(std::initializer_list<Index> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<Index> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() {
  numel_ = 1;
  for (Index d : dims_) {
    if (d < 1) throw DimensionError("shape extents must be >= 1, got " + to_string());
    if (numel_ > std::numeric_limits<Index>::max() / d) {
      throw CapacityError("shape " + to_string() + " overflows the element count");
    }
    numel_ *= d;
  }
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

}  // namespace cfil
