#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ttl/core/cost.hpp"
#include "ttl/core/errors.hpp"
#include "ttl/core/tensor.hpp"

namespace ttl::layers {

using core::CostReport;
using core::Extent;
using core::Shape;
using core::Tensor;

enum class ForwardStrategy { einsum, fixed };
enum class BackwardStrategy { autodiff, full_einsum, full_matrix };

ForwardStrategy parse_forward(std::string_view name);
BackwardStrategy parse_backward(std::string_view name);
std::string_view to_string(ForwardStrategy s);
std::string_view to_string(BackwardStrategy s);

/// Modeled forward and backward cost of one strategy pair.
struct StrategyCost {
  CostReport forward;
  CostReport backward;
  /// False for combinations the layer refuses to run (einsum forward + autodiff).
  bool runnable = true;
  std::uint64_t saved_activation_bytes() const { return forward.saved_activation_bytes; }
  std::uint64_t total_flops() const { return forward.total_flops + backward.total_flops; }
};

template <typename T>
struct LayerGradients {
  Tensor<T> grad_input;
  std::vector<Tensor<T>> grad_params;  // same order as parameters(), bias excluded
  Tensor<T> grad_bias;
};

/// Y = f(X) + b for a (B x D_in) input. Backward needs the preceding forward's
/// cache; changing parameters invalidates it.
template <typename T>
class LinearLayer {
 public:
  virtual ~LinearLayer() = default;

  virtual std::string kind() const = 0;
  virtual Extent d_in() const = 0;
  virtual Extent d_out() const = 0;

  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual LayerGradients<T> backward(const Tensor<T>& grad_out) = 0;

  /// Trainable tensors, bias last.
  virtual std::vector<Tensor<T>*> parameters() = 0;
  virtual std::vector<std::string> parameter_names() const = 0;
  /// Weight parameters only (bias excluded).
  virtual std::uint64_t weight_count() const = 0;
  std::uint64_t param_count() const { return weight_count() + d_out(); }

  /// Call after editing parameters in place.
  virtual void parameters_changed() = 0;

  virtual std::unique_ptr<LinearLayer> clone() const = 0;

  const CostReport& last_forward_cost() const { return forward_cost_; }
  const CostReport& last_backward_cost() const { return backward_cost_; }

  /// Description of the contraction schedule for a batch size.
  virtual std::string explain(Extent batch) const;

 protected:
  void check_input(const Tensor<T>& x) const;
  void check_grad_out(const Tensor<T>& g, Extent batch) const;

  CostReport forward_cost_;
  CostReport backward_cost_;
};

/// y[b, :] += bias
template <typename T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias);

/// Sum over the batch (first) axis.
template <typename T>
Tensor<T> column_sum(const Tensor<T>& g);

/// Plain (n x k) * (k x m) product through the contraction kernel.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a^T * b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace ttl::layers
