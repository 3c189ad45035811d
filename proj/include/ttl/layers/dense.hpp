#pragma once

#include <optional>

#include "ttl/layers/layer.hpp"

namespace ttl::layers {

/// Forward Y = XW; backward dX = dY W^T and dW = X^T dY. Saves X.
StrategyCost dense_cost_model(Extent d_in, Extent d_out, Extent batch, std::size_t element_bytes);

/// Y = XW + b, W is (D_in x D_out).
template <typename T>
class DenseLayer final : public LinearLayer<T> {
 public:
  DenseLayer(Tensor<T> weight, Tensor<T> bias);
  /// Gaussian weights with variance 2 / (D_in + D_out), zero bias.
  static DenseLayer random(Extent d_in, Extent d_out, std::uint64_t seed);

  std::string kind() const override { return "dense"; }
  Extent d_in() const override { return weight_.extent(0); }
  Extent d_out() const override { return weight_.extent(1); }

  Tensor<T> forward(const Tensor<T>& x) override;
  LayerGradients<T> backward(const Tensor<T>& grad_out) override;

  std::vector<Tensor<T>*> parameters() override { return {&weight_, &bias_}; }
  std::vector<std::string> parameter_names() const override { return {"weight", "bias"}; }
  std::uint64_t weight_count() const override { return weight_.size(); }
  void parameters_changed() override { saved_x_.reset(); }
  std::unique_ptr<LinearLayer<T>> clone() const override;

  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  std::optional<Tensor<T>> saved_x_;
};

}  // namespace ttl::layers
