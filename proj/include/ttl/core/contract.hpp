#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "ttl/core/tensor.hpp"

namespace ttl::core {

/// Instrumentation: scalar multiplies actually executed by the kernels.
struct MultiplyCounter {
  std::uint64_t count = 0;
};

struct AxisPair {
  std::size_t lhs;
  std::size_t rhs;
};

/// Contracts `a` with `b` over the matched axis pairs. The result holds the kept
/// axes of `a` (in order) followed by the kept axes of `b`.
template <typename T>
Tensor<T> contract_pair(const Tensor<T>& a, const Tensor<T>& b, std::span<const AxisPair> axes,
                        MultiplyCounter* counter = nullptr);

/// Label-driven pairwise contraction: every label of `a` and `b` absent from
/// `out_labels` is summed. Performs exactly prod(extents of all distinct labels)
/// multiplies.
template <typename T>
Tensor<T> contract_labeled(const Tensor<T>& a, std::string_view a_labels, const Tensor<T>& b,
                           std::string_view b_labels, std::string_view out_labels,
                           MultiplyCounter* counter = nullptr);

/// Permutes `a` into `out_labels` order, summing labels not present in the output.
template <typename T>
Tensor<T> transpose_labeled(const Tensor<T>& a, std::string_view a_labels,
                            std::string_view out_labels);

}  // namespace ttl::core
