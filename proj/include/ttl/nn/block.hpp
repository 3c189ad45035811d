#pragma once

#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "ttl/layers/layer.hpp"

namespace ttl::nn {

using core::Extent;
using core::Tensor;
using layers::LayerGradients;
using layers::LinearLayer;

/// GELU, tanh approximation.
template <typename T>
class Gelu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out) const;
  void reset() { saved_x_.reset(); }

  static T value(T x);
  static T derivative(T x);

 private:
  std::optional<Tensor<T>> saved_x_;
};

template <typename T>
struct BlockGradients {
  Tensor<T> grad_input;
  // One entry per linear layer, in block order.
  std::vector<LayerGradients<T>> layers;
};

/// Ordered chain of linear layers and GELU activations.
template <typename T>
class Block {
 public:
  using Element = std::variant<std::unique_ptr<LinearLayer<T>>, Gelu<T>>;

  Block() = default;
  Block(Block&&) noexcept = default;
  Block& operator=(Block&&) noexcept = default;

  /// linear -> GELU -> linear
  static Block mlp(std::unique_ptr<LinearLayer<T>> first, std::unique_ptr<LinearLayer<T>> second);

  /// Throws DimensionError if the layer does not accept the previous layer's output.
  Block& add(std::unique_ptr<LinearLayer<T>> layer);
  Block& add_gelu();

  Tensor<T> forward(const Tensor<T>& x);
  BlockGradients<T> backward(const Tensor<T>& grad_out);

  /// Every trainable tensor, layer by layer (each layer's bias last).
  std::vector<Tensor<T>*> parameters();
  /// Same order as parameters(); true for weights, false for biases.
  std::vector<bool> decay_mask();
  /// Gradients flattened to the order of parameters().
  static std::vector<const Tensor<T>*> flatten(const BlockGradients<T>& grads);

  std::uint64_t param_count() const;
  void parameters_changed();
  Block clone() const;

  std::vector<LinearLayer<T>*> linear_layers();
  Extent d_in() const;
  Extent d_out() const;

 private:
  std::vector<Element> elements_;
  bool ran_forward_ = false;
};

}  // namespace ttl::nn
