#include "ttl/layers/layer.hpp"

#include <fmt/format.h>

#include "ttl/core/contract.hpp"

namespace ttl::layers {

ForwardStrategy parse_forward(std::string_view name) {
  if (name == "einsum") return ForwardStrategy::einsum;
  if (name == "fixed") return ForwardStrategy::fixed;
  throw ParameterError(fmt::format("unknown forward strategy '{}' (einsum, fixed)", name));
}

BackwardStrategy parse_backward(std::string_view name) {
  if (name == "autodiff") return BackwardStrategy::autodiff;
  if (name == "full_einsum") return BackwardStrategy::full_einsum;
  if (name == "full_matrix") return BackwardStrategy::full_matrix;
  throw ParameterError(
      fmt::format("unknown backward strategy '{}' (autodiff, full_einsum, full_matrix)", name));
}

std::string_view to_string(ForwardStrategy s) {
  return s == ForwardStrategy::einsum ? "einsum" : "fixed";
}

std::string_view to_string(BackwardStrategy s) {
  switch (s) {
    case BackwardStrategy::autodiff: return "autodiff";
    case BackwardStrategy::full_einsum: return "full_einsum";
    case BackwardStrategy::full_matrix: return "full_matrix";
  }
  return "?";
}

template <typename T>
std::string LinearLayer<T>::explain(Extent batch) const {
  return fmt::format("{} layer {}x{}, batch {}: plain matrix products\n", kind(), d_in(), d_out(),
                     batch);
}

template <typename T>
void LinearLayer<T>::check_input(const Tensor<T>& x) const {
  if (x.rank() != 2 || x.extent(1) != d_in()) {
    throw DimensionError(fmt::format("{} layer expects input (B, {}), got {}", kind(), d_in(),
                                     core::shape_string(x.shape())));
  }
}

template <typename T>
void LinearLayer<T>::check_grad_out(const Tensor<T>& g, Extent batch) const {
  if (g.rank() != 2 || g.extent(0) != batch || g.extent(1) != d_out()) {
    throw DimensionError(fmt::format("{} layer expects output gradient ({}, {}), got {}", kind(),
                                     batch, d_out(), core::shape_string(g.shape())));
  }
}

template <typename T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const std::size_t cols = bias.size();
  const std::size_t rows = y.size() / cols;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bias[c];
}

template <typename T>
Tensor<T> column_sum(const Tensor<T>& g) {
  const std::size_t cols = g.extent(1);
  Tensor<T> out({cols});
  for (std::size_t r = 0; r < g.extent(0); ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += g[r * cols + c];
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return core::contract_labeled(a, "ik", b, "kj", "ij");
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  return core::contract_labeled(a, "ki", b, "kj", "ij");
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  return core::contract_labeled(a, "ik", b, "jk", "ij");
}

#define TTL_INSTANTIATE(T)                                           \
  template class LinearLayer<T>;                                     \
  template void add_bias(Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> column_sum(const Tensor<T>&);                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);

TTL_INSTANTIATE(float)
TTL_INSTANTIATE(double)
#undef TTL_INSTANTIATE

}  // namespace ttl::layers
