#include "ttl/core/tensor.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace ttl::core {

std::size_t element_count(std::span<const Extent> shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Shape row_major_strides(std::span<const Extent> shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t axis = shape.size(); axis-- > 1;) {
    strides[axis - 1] = strides[axis] * shape[axis];
  }
  return strides;
}

std::string shape_string(std::span<const Extent> shape) {
  return fmt::format("({})", fmt::join(shape, ", "));
}

}  // namespace ttl::core
