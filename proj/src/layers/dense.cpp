#include "ttl/layers/dense.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

namespace ttl::layers {

StrategyCost dense_cost_model(Extent d_in, Extent d_out, Extent batch, std::size_t element_bytes) {
  const std::uint64_t b = batch, eb = element_bytes;
  StrategyCost c;
  c.forward.add_step("Y = X W", b * d_in * d_out, b * d_out * eb, false);
  c.forward.saved_activation_bytes = b * d_in * eb;
  c.backward.add_step("dX = dY W^T", b * d_in * d_out, b * d_in * eb, false);
  c.backward.add_step("dW = X^T dY", b * d_in * d_out, std::uint64_t{d_in} * d_out * eb, false);
  c.backward.saved_activation_bytes = c.forward.saved_activation_bytes;
  return c;
}

template <typename T>
DenseLayer<T>::DenseLayer(Tensor<T> weight, Tensor<T> bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || bias_.rank() != 1 || bias_.extent(0) != weight_.extent(1)) {
    throw DimensionError(fmt::format("dense weight {} and bias {} do not fit",
                                     core::shape_string(weight_.shape()),
                                     core::shape_string(bias_.shape())));
  }
}

template <typename T>
DenseLayer<T> DenseLayer<T>::random(Extent d_in, Extent d_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(d_in + d_out)));
  Tensor<T> w({d_in, d_out});
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  return DenseLayer(std::move(w), Tensor<T>({d_out}));
}

template <typename T>
Tensor<T> DenseLayer<T>::forward(const Tensor<T>& x) {
  this->check_input(x);
  Tensor<T> y = matmul(x, weight_);
  add_bias(y, bias_);
  this->forward_cost_ = dense_cost_model(d_in(), d_out(), x.extent(0), sizeof(T)).forward;
  saved_x_ = x;
  return y;
}

template <typename T>
LayerGradients<T> DenseLayer<T>::backward(const Tensor<T>& grad_out) {
  if (!saved_x_) throw StateError("dense backward called without a preceding forward");
  const Tensor<T>& x = *saved_x_;
  this->check_grad_out(grad_out, x.extent(0));
  LayerGradients<T> g;
  g.grad_input = matmul_nt(grad_out, weight_);
  g.grad_params.push_back(matmul_tn(x, grad_out));
  g.grad_bias = column_sum(grad_out);
  this->backward_cost_ = dense_cost_model(d_in(), d_out(), x.extent(0), sizeof(T)).backward;
  return g;
}

template <typename T>
std::unique_ptr<LinearLayer<T>> DenseLayer<T>::clone() const {
  return std::make_unique<DenseLayer>(weight_, bias_);
}

template class DenseLayer<float>;
template class DenseLayer<double>;

}  // namespace ttl::layers
