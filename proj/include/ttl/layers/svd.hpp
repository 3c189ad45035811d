#pragma once

#include <optional>

#include "ttl/layers/layer.hpp"

namespace ttl::layers {

/// Forward H = X W2, Y = H W1; backward through dH = dY W1^T. Saves X and H.
StrategyCost svd_cost_model(Extent d_in, Extent d_out, Extent r, Extent batch,
                            std::size_t element_bytes);

/// Y = (X W2) W1 + b with W2 (D_in x r) and W1 (r x D_out).
template <typename T>
class SVDLayer final : public LinearLayer<T> {
 public:
  SVDLayer(Tensor<T> w1, Tensor<T> w2, Tensor<T> bias);

  std::string kind() const override { return "svd"; }
  Extent d_in() const override { return w2_.extent(0); }
  Extent d_out() const override { return w1_.extent(1); }
  Extent rank() const { return w1_.extent(0); }

  Tensor<T> forward(const Tensor<T>& x) override;
  LayerGradients<T> backward(const Tensor<T>& grad_out) override;

  std::vector<Tensor<T>*> parameters() override { return {&w1_, &w2_, &bias_}; }
  std::vector<std::string> parameter_names() const override { return {"w1", "w2", "bias"}; }
  std::uint64_t weight_count() const override { return w1_.size() + w2_.size(); }
  void parameters_changed() override {
    saved_x_.reset();
    saved_h_.reset();
  }
  std::unique_ptr<LinearLayer<T>> clone() const override;

  const Tensor<T>& w1() const { return w1_; }
  const Tensor<T>& w2() const { return w2_; }
  const Tensor<T>& bias() const { return bias_; }

  /// W2 * W1
  Tensor<T> reconstruct() const;

 private:
  Tensor<T> w1_;
  Tensor<T> w2_;
  Tensor<T> bias_;
  std::optional<Tensor<T>> saved_x_;
  std::optional<Tensor<T>> saved_h_;
};

/// Truncated SVD W ~ U_r S_r V_r^T split as W2 = U_r sqrt(S_r), W1 = sqrt(S_r) V_r^T.
template <typename T>
SVDLayer<T> svd_from_dense(const Tensor<T>& w, Extent r, Tensor<T> bias);
/// Zero bias.
template <typename T>
SVDLayer<T> svd_from_dense(const Tensor<T>& w, Extent r) {
  return svd_from_dense(w, r, Tensor<T>({w.extent(1)}));
}

/// r (D_in + D_out)
std::uint64_t svd_weight_count(Extent d_in, Extent d_out, Extent r);

}  // namespace ttl::layers
