#pragma once

#include <optional>

#include "ttl/core/einsum.hpp"
#include "ttl/core/program.hpp"
#include "ttl/layers/layer.hpp"
#include "ttl/ttm/ttm.hpp"

namespace ttl::layers {

using ttm::FactorizedShape;
using ttm::TTMCores;
using ttm::TTMRanks;

/// Single einsum over X and all cores (X labelled batch + i, output batch + j).
core::ContractionPlan ttm_forward_plan(const FactorizedShape& fs, const TTMRanks& ranks,
                                       Extent batch);

/// Cores contracted into X one at a time, 1..M. With keep_chain every
/// intermediate stays alive for the autodiff backward.
CostReport fixed_forward_cost(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch,
                              bool keep_chain, std::size_t element_bytes);

/// Joint program for the core gradients (full_einsum or full_matrix).
/// Leaves: X, dY, then the squeezed cores. Outputs: dG_1..dG_M.
core::ContractionProgram ttm_backward_program(const FactorizedShape& fs, const TTMRanks& ranks,
                                              Extent batch, BackwardStrategy strategy);

/// dX as a single einsum of dY with all cores over the j axes. Planned on its own,
/// so it shares nothing with the core-gradient program.
core::ContractionPlan ttm_input_grad_plan(const FactorizedShape& fs, const TTMRanks& ranks,
                                          Extent batch);

StrategyCost ttm_cost_model(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch,
                            ForwardStrategy fwd, BackwardStrategy bwd, std::size_t element_bytes);

template <typename T>
class TTMLayer final : public LinearLayer<T> {
 public:
  /// Throws ParameterError for einsum forward with autodiff backward.
  TTMLayer(TTMCores<T> cores, Tensor<T> bias, ForwardStrategy fwd, BackwardStrategy bwd);
  static TTMLayer random(const FactorizedShape& fs, const TTMRanks& ranks, ForwardStrategy fwd,
                         BackwardStrategy bwd, std::uint64_t seed);

  std::string kind() const override { return "ttm"; }
  Extent d_in() const override { return cores_.shape().d_in(); }
  Extent d_out() const override { return cores_.shape().d_out(); }
  ForwardStrategy forward_strategy() const { return fwd_; }
  BackwardStrategy backward_strategy() const { return bwd_; }

  Tensor<T> forward(const Tensor<T>& x) override;
  LayerGradients<T> backward(const Tensor<T>& grad_out) override;

  std::vector<Tensor<T>*> parameters() override;
  std::vector<std::string> parameter_names() const override;
  std::uint64_t weight_count() const override { return cores_.element_total(); }
  void parameters_changed() override { saved_.clear(); }
  std::unique_ptr<LinearLayer<T>> clone() const override;
  std::string explain(Extent batch) const override;

  const TTMCores<T>& cores() const { return cores_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  Tensor<T> forward_einsum(const Tensor<T>& x);
  Tensor<T> forward_fixed(const Tensor<T>& x);
  LayerGradients<T> backward_autodiff(const Tensor<T>& g);
  LayerGradients<T> backward_program(const Tensor<T>& g);
  std::vector<Tensor<T>> squeezed_cores() const;

  TTMCores<T> cores_;
  Tensor<T> bias_;
  ForwardStrategy fwd_;
  BackwardStrategy bwd_;
  ttm::TTMLabels labels_;

  // X reshaped to (B, I_1..I_M), or the chain Y_0..Y_{M-1} for autodiff.
  std::vector<Tensor<T>> saved_;
  Extent saved_batch_ = 0;

  // Plans are built on first use and rebuilt when the batch size changes.
  std::optional<core::ContractionPlan> forward_plan_;
  std::optional<core::ContractionProgram> backward_program_;
  std::optional<core::ContractionPlan> input_grad_plan_;
  Extent backward_batch_ = 0;
};

}  // namespace ttl::layers
