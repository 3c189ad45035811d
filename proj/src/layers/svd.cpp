#include "ttl/layers/svd.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>
#include <fmt/format.h>

namespace ttl::layers {

template <typename T>
SVDLayer<T>::SVDLayer(Tensor<T> w1, Tensor<T> w2, Tensor<T> bias)
    : w1_(std::move(w1)), w2_(std::move(w2)), bias_(std::move(bias)) {
  if (w1_.rank() != 2 || w2_.rank() != 2 || bias_.rank() != 1 ||
      w2_.extent(1) != w1_.extent(0) || bias_.extent(0) != w1_.extent(1)) {
    throw DimensionError(fmt::format("svd factors w1 {}, w2 {}, bias {} do not fit",
                                     core::shape_string(w1_.shape()),
                                     core::shape_string(w2_.shape()),
                                     core::shape_string(bias_.shape())));
  }
}

template <typename T>
Tensor<T> SVDLayer<T>::forward(const Tensor<T>& x) {
  this->check_input(x);
  Tensor<T> h = matmul(x, w2_);
  Tensor<T> y = matmul(h, w1_);
  add_bias(y, bias_);
  this->forward_cost_ = svd_cost_model(d_in(), d_out(), rank(), x.extent(0), sizeof(T)).forward;
  saved_x_ = x;
  saved_h_ = std::move(h);
  return y;
}

template <typename T>
LayerGradients<T> SVDLayer<T>::backward(const Tensor<T>& grad_out) {
  if (!saved_x_ || !saved_h_) throw StateError("svd backward called without a preceding forward");
  const Tensor<T>& x = *saved_x_;
  const Tensor<T>& h = *saved_h_;
  this->check_grad_out(grad_out, x.extent(0));
  const Tensor<T> grad_h = matmul_nt(grad_out, w1_);
  LayerGradients<T> g;
  g.grad_params.push_back(matmul_tn(h, grad_out));
  g.grad_params.push_back(matmul_tn(x, grad_h));
  g.grad_input = matmul_nt(grad_h, w2_);
  g.grad_bias = column_sum(grad_out);
  this->backward_cost_ =
      svd_cost_model(d_in(), d_out(), rank(), x.extent(0), sizeof(T)).backward;
  return g;
}

template <typename T>
std::unique_ptr<LinearLayer<T>> SVDLayer<T>::clone() const {
  return std::make_unique<SVDLayer>(w1_, w2_, bias_);
}

template <typename T>
Tensor<T> SVDLayer<T>::reconstruct() const {
  return matmul(w2_, w1_);
}

template <typename T>
SVDLayer<T> svd_from_dense(const Tensor<T>& w, Extent r, Tensor<T> bias) {
  if (w.rank() != 2) throw DimensionError("svd_from_dense expects a matrix");
  const Extent n_in = w.extent(0), n_out = w.extent(1);
  if (r < 1 || r > std::min(n_in, n_out)) {
    throw ParameterError(
        fmt::format("svd rank {} out of range [1, {}] for a {}x{} matrix", r, std::min(n_in, n_out),
                    n_in, n_out));
  }
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Matrix m(n_in, n_out);
  for (Extent i = 0; i < n_in; ++i)
    for (Extent j = 0; j < n_out; ++j) m(i, j) = static_cast<double>(w[i * n_out + j]);
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& u = svd.matrixU();
  const auto& v = svd.matrixV();
  const auto& s = svd.singularValues();

  Tensor<T> w2({n_in, r});
  Tensor<T> w1({r, n_out});
  for (Extent k = 0; k < r; ++k) {
    const double root = std::sqrt(s(k));
    for (Extent i = 0; i < n_in; ++i) w2[i * r + k] = static_cast<T>(u(i, k) * root);
    for (Extent j = 0; j < n_out; ++j) w1[k * n_out + j] = static_cast<T>(root * v(j, k));
  }
  return SVDLayer<T>(std::move(w1), std::move(w2), std::move(bias));
}

StrategyCost svd_cost_model(Extent d_in, Extent d_out, Extent r, Extent batch,
                            std::size_t element_bytes) {
  const std::uint64_t b = batch, eb = element_bytes;
  StrategyCost c;
  c.forward.add_step("H = X W2", b * d_in * r, b * r * eb, true);
  c.forward.add_step("Y = H W1", b * r * d_out, b * d_out * eb, false);
  c.forward.peak_intermediate_bytes = b * r * eb;
  c.forward.saved_activation_bytes = b * (d_in + r) * eb;
  c.backward.add_step("dH = dY W1^T", b * r * d_out, b * r * eb, true);
  c.backward.add_step("dW1 = H^T dY", b * r * d_out, std::uint64_t{r} * d_out * eb, false);
  c.backward.add_step("dW2 = X^T dH", b * d_in * r, std::uint64_t{d_in} * r * eb, false);
  c.backward.add_step("dX = dH W2^T", b * d_in * r, b * d_in * eb, false);
  c.backward.peak_intermediate_bytes = b * r * eb;
  c.backward.saved_activation_bytes = c.forward.saved_activation_bytes;
  return c;
}

std::uint64_t svd_weight_count(Extent d_in, Extent d_out, Extent r) {
  return std::uint64_t{r} * (d_in + d_out);
}

template class SVDLayer<float>;
template class SVDLayer<double>;
template SVDLayer<float> svd_from_dense(const Tensor<float>&, Extent, Tensor<float>);
template SVDLayer<double> svd_from_dense(const Tensor<double>&, Extent, Tensor<double>);

}  // namespace ttl::layers
