#include "ttl/layers/ttm_layer.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "ttl/core/contract.hpp"

namespace ttl::layers {

namespace {

using core::ContractionPlan;
using core::ContractionProgram;
using core::EinsumExpr;
using core::PathMode;
using ttm::TTMLabels;

// Labels of Y_k, the input after cores 0..k-1 have been contracted into it:
// batch, j_0..j_{k-1}, bond r_{k-1}, i_k..i_{M-1}.
std::string chain_labels(const TTMLabels& l, std::size_t k) {
  const std::size_t m = l.i.size();
  std::string s(1, l.batch);
  s += l.j.substr(0, k);
  if (k > 0 && k < m) s += l.r[k - 1];
  s += l.i.substr(k);
  return s;
}

std::uint64_t chain_elements(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch,
                             std::size_t k) {
  std::uint64_t n = batch * std::uint64_t{ranks.ranks[k]};
  for (std::size_t l = 0; l < fs.m(); ++l) n *= l < k ? fs.pairs[l].second : fs.pairs[l].first;
  return n;
}

// Multiplies in the step Y_k x G_k -> Y_{k+1} (also each autodiff step for core k).
std::uint64_t chain_step_flops(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch,
                               std::size_t k) {
  return chain_elements(fs, ranks, batch, k) * fs.pairs[k].second * ranks.ranks[k + 1];
}

Shape squeezed_shape(const FactorizedShape& fs, const TTMRanks& ranks, std::size_t k) {
  Shape s;
  if (k > 0) s.push_back(ranks.ranks[k]);
  s.push_back(fs.pairs[k].first);
  s.push_back(fs.pairs[k].second);
  if (k + 1 < fs.m()) s.push_back(ranks.ranks[k + 1]);
  return s;
}

Shape batched(Extent batch, const Shape& rest) {
  Shape s{batch};
  s.insert(s.end(), rest.begin(), rest.end());
  return s;
}

std::uint64_t x_bytes(const FactorizedShape& fs, Extent batch, std::size_t element_bytes) {
  return std::uint64_t{batch} * fs.d_in() * element_bytes;
}

CostReport einsum_forward_cost(const ContractionPlan& plan, const FactorizedShape& fs,
                               Extent batch, std::size_t element_bytes) {
  CostReport r = core::plan_cost(plan, element_bytes);
  r.saved_activation_bytes = x_bytes(fs, batch, element_bytes);
  return r;
}

CostReport autodiff_backward_cost(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch,
                                  std::size_t element_bytes) {
  const std::size_t m = fs.m();
  CostReport r;
  for (std::size_t k = m; k-- > 0;) {
    const std::uint64_t flops = chain_step_flops(fs, ranks, batch, k);
    const std::uint64_t core_bytes =
        core::element_count(squeezed_shape(fs, ranks, k)) * element_bytes;
    const std::uint64_t dy_bytes = chain_elements(fs, ranks, batch, k) * element_bytes;
    r.add_step(fmt::format("dG{} = Y{} * dY{}", k + 1, k, k + 1), flops, core_bytes, false);
    r.add_step(fmt::format("dY{} = dY{} * G{}", k, k + 1, k + 1), flops, dy_bytes, k > 0);
    // dY_{k+1} (unless it is the incoming gradient) and dY_k are live together.
    std::uint64_t live = k > 0 ? dy_bytes : 0;
    if (k + 1 < m) live += chain_elements(fs, ranks, batch, k + 1) * element_bytes;
    r.peak_intermediate_bytes = std::max(r.peak_intermediate_bytes, live);
  }
  for (std::size_t k = 0; k < m; ++k) {
    r.saved_activation_bytes += chain_elements(fs, ranks, batch, k) * element_bytes;
  }
  return r;
}

}  // namespace

ContractionPlan ttm_forward_plan(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch) {
  const TTMLabels l(fs.m());
  std::vector<std::string> terms{std::string(1, l.batch) + l.i};
  std::vector<Shape> shapes{batched(batch, fs.in_extents())};
  for (std::size_t k = 0; k < fs.m(); ++k) {
    terms.push_back(l.core(k));
    shapes.push_back(squeezed_shape(fs, ranks, k));
  }
  const EinsumExpr expr(terms, std::string(1, l.batch) + l.j);
  return core::optimize_path(expr, shapes, core::auto_mode(terms.size()));
}

CostReport fixed_forward_cost(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch,
                              bool keep_chain, std::size_t element_bytes) {
  const std::size_t m = fs.m();
  CostReport r;
  std::uint64_t chain_total = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const std::uint64_t out = chain_elements(fs, ranks, batch, k + 1) * element_bytes;
    const bool intermediate = k + 1 < m;
    r.add_step(fmt::format("Y{} = Y{} * G{}", k + 1, k, k + 1),
               chain_step_flops(fs, ranks, batch, k), out, intermediate);
    if (intermediate) chain_total += out;
    // Without the chain, Y_k (if not X) and Y_{k+1} (if not the output) are live together.
    std::uint64_t live = intermediate ? out : 0;
    if (k > 0) live += chain_elements(fs, ranks, batch, k) * element_bytes;
    if (!keep_chain) r.peak_intermediate_bytes = std::max(r.peak_intermediate_bytes, live);
  }
  if (keep_chain) {
    r.peak_intermediate_bytes = chain_total;
    for (std::size_t k = 0; k < m; ++k) {
      r.saved_activation_bytes += chain_elements(fs, ranks, batch, k) * element_bytes;
    }
  } else {
    r.saved_activation_bytes = x_bytes(fs, batch, element_bytes);
  }
  return r;
}

ContractionProgram ttm_backward_program(const FactorizedShape& fs, const TTMRanks& ranks,
                                        Extent batch, BackwardStrategy strategy) {
  if (strategy == BackwardStrategy::autodiff) {
    throw ParameterError("autodiff backward is not a contraction program");
  }
  const std::size_t m = fs.m();
  const TTMLabels l(m);
  std::vector<std::string> leaf_labels{std::string(1, l.batch) + l.i,
                                       std::string(1, l.batch) + l.j};
  std::vector<Shape> leaf_shapes{batched(batch, fs.in_extents()),
                                 batched(batch, fs.out_extents())};
  for (std::size_t k = 0; k < m; ++k) {
    leaf_labels.push_back(l.core(k));
    leaf_shapes.push_back(squeezed_shape(fs, ranks, k));
  }
  ContractionProgram program(leaf_labels, leaf_shapes);
  const ContractionProgram::NodeId x = 0, dy = 1;

  if (strategy == BackwardStrategy::full_einsum) {
    for (std::size_t k = 0; k < m; ++k) {
      std::vector<ContractionProgram::NodeId> inputs{x, dy};
      for (std::size_t c = 0; c < m; ++c) {
        if (c != k) inputs.push_back(2 + c);
      }
      program.add(inputs, l.core(k), core::auto_mode(inputs.size()), true);
    }
  } else {
    // Dense weight gradient first: contracts the batch axis only.
    const auto dw = program.add({x, dy}, l.i + l.j, PathMode::exact, false);
    for (std::size_t k = 0; k < m; ++k) {
      std::vector<ContractionProgram::NodeId> inputs{dw};
      for (std::size_t c = 0; c < m; ++c) {
        if (c != k) inputs.push_back(2 + c);
      }
      program.add(inputs, l.core(k), core::auto_mode(inputs.size()), true);
    }
  }
  return program;
}

ContractionPlan ttm_input_grad_plan(const FactorizedShape& fs, const TTMRanks& ranks,
                                    Extent batch) {
  const TTMLabels l(fs.m());
  std::vector<std::string> terms{std::string(1, l.batch) + l.j};
  std::vector<Shape> shapes{batched(batch, fs.out_extents())};
  for (std::size_t k = 0; k < fs.m(); ++k) {
    terms.push_back(l.core(k));
    shapes.push_back(squeezed_shape(fs, ranks, k));
  }
  const EinsumExpr expr(terms, std::string(1, l.batch) + l.i);
  return core::optimize_path(expr, shapes, core::auto_mode(terms.size()));
}

StrategyCost ttm_cost_model(const FactorizedShape& fs, const TTMRanks& ranks, Extent batch,
                            ForwardStrategy fwd, BackwardStrategy bwd, std::size_t element_bytes) {
  StrategyCost cost;
  const bool autodiff = bwd == BackwardStrategy::autodiff;
  if (fwd == ForwardStrategy::fixed) {
    cost.forward = fixed_forward_cost(fs, ranks, batch, autodiff, element_bytes);
  } else {
    const auto plan = ttm_forward_plan(fs, ranks, batch);
    cost.forward = einsum_forward_cost(plan, fs, batch, element_bytes);
    if (autodiff) {
      // Not runnable: modeled as keeping every plan intermediate for a reverse sweep
      // that costs two multiplies per forward multiply.
      cost.runnable = false;
      std::uint64_t kept = 0;
      for (const auto& step : cost.forward.per_step) {
        if (step.intermediate) kept += step.bytes;
      }
      cost.forward.saved_activation_bytes += kept;
      cost.forward.peak_intermediate_bytes = kept;
      cost.backward.add_step("reverse sweep over the forward plan (modeled)",
                             2 * cost.forward.total_flops, 0, false);
      cost.backward.peak_intermediate_bytes = cost.forward.peak_intermediate_bytes;
      cost.backward.saved_activation_bytes = cost.forward.saved_activation_bytes;
      return cost;
    }
  }
  if (autodiff) {
    cost.backward = autodiff_backward_cost(fs, ranks, batch, element_bytes);
  } else {
    cost.backward = core::sequence(ttm_backward_program(fs, ranks, batch, bwd).cost(element_bytes),
                                   core::plan_cost(ttm_input_grad_plan(fs, ranks, batch),
                                                   element_bytes));
    cost.backward.saved_activation_bytes = cost.forward.saved_activation_bytes;
  }
  return cost;
}

template <typename T>
TTMLayer<T>::TTMLayer(TTMCores<T> cores, Tensor<T> bias, ForwardStrategy fwd, BackwardStrategy bwd)
    : cores_(std::move(cores)),
      bias_(std::move(bias)),
      fwd_(fwd),
      bwd_(bwd),
      labels_(cores_.m()) {
  if (fwd == ForwardStrategy::einsum && bwd == BackwardStrategy::autodiff) {
    throw ParameterError(
        "autodiff backward needs the fixed forward (it consumes the per-core intermediate chain)");
  }
  if (bias_.rank() != 1 || bias_.extent(0) != d_out()) {
    throw DimensionError(fmt::format("ttm bias {} does not match output dimension {}",
                                     core::shape_string(bias_.shape()), d_out()));
  }
}

template <typename T>
TTMLayer<T> TTMLayer<T>::random(const FactorizedShape& fs, const TTMRanks& ranks,
                                ForwardStrategy fwd, BackwardStrategy bwd, std::uint64_t seed) {
  return TTMLayer(ttm::init_cores<T>(fs, ranks, seed), Tensor<T>({fs.d_out()}), fwd, bwd);
}

template <typename T>
std::vector<Tensor<T>*> TTMLayer<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (std::size_t k = 0; k < cores_.m(); ++k) out.push_back(&cores_.core(k));
  out.push_back(&bias_);
  return out;
}

template <typename T>
std::vector<std::string> TTMLayer<T>::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < cores_.m(); ++k) out.push_back(fmt::format("core{}", k + 1));
  out.push_back("bias");
  return out;
}

template <typename T>
std::unique_ptr<LinearLayer<T>> TTMLayer<T>::clone() const {
  return std::make_unique<TTMLayer>(cores_, bias_, fwd_, bwd_);
}

template <typename T>
std::vector<Tensor<T>> TTMLayer<T>::squeezed_cores() const {
  std::vector<Tensor<T>> out;
  for (std::size_t k = 0; k < cores_.m(); ++k) {
    out.push_back(TTMLabels::squeeze(cores_.core(k), k, cores_.m()));
  }
  return out;
}

template <typename T>
Tensor<T> TTMLayer<T>::forward(const Tensor<T>& x) {
  this->check_input(x);
  saved_.clear();
  Tensor<T> y = fwd_ == ForwardStrategy::einsum ? forward_einsum(x) : forward_fixed(x);
  add_bias(y, bias_);
  saved_batch_ = x.extent(0);
  return y;
}

template <typename T>
Tensor<T> TTMLayer<T>::forward_einsum(const Tensor<T>& x) {
  const Extent batch = x.extent(0);
  const auto& fs = cores_.shape();
  if (!forward_plan_ || forward_plan_->operand_shapes()[0][0] != batch) {
    forward_plan_ = ttm_forward_plan(fs, cores_.ranks(), batch);
  }
  Tensor<T> xr = x.reshaped(batched(batch, fs.in_extents()));
  const auto cores = squeezed_cores();
  core::Operands<T> ops{&xr};
  for (const auto& c : cores) ops.push_back(&c);
  auto [y, cost] = core::execute_plan(*forward_plan_, ops);
  cost.saved_activation_bytes = xr.bytes();
  this->forward_cost_ = std::move(cost);
  saved_.push_back(std::move(xr));
  return std::move(y).reshaped({batch, fs.d_out()});
}

template <typename T>
Tensor<T> TTMLayer<T>::forward_fixed(const Tensor<T>& x) {
  const Extent batch = x.extent(0);
  const auto& fs = cores_.shape();
  const bool keep_chain = bwd_ == BackwardStrategy::autodiff;
  const auto cores = squeezed_cores();
  Tensor<T> y = x.reshaped(batched(batch, fs.in_extents()));
  for (std::size_t k = 0; k < cores_.m(); ++k) {
    Tensor<T> next = core::contract_labeled(y, chain_labels(labels_, k), cores[k], labels_.core(k),
                                            chain_labels(labels_, k + 1));
    if (keep_chain || k == 0) saved_.push_back(std::move(y));
    y = std::move(next);
  }
  this->forward_cost_ = fixed_forward_cost(fs, cores_.ranks(), batch, keep_chain, sizeof(T));
  return std::move(y).reshaped({batch, fs.d_out()});
}

template <typename T>
LayerGradients<T> TTMLayer<T>::backward(const Tensor<T>& grad_out) {
  if (saved_.empty()) throw StateError("ttm backward called without a preceding forward");
  this->check_grad_out(grad_out, saved_batch_);
  LayerGradients<T> g =
      bwd_ == BackwardStrategy::autodiff ? backward_autodiff(grad_out) : backward_program(grad_out);
  g.grad_bias = column_sum(grad_out);
  return g;
}

template <typename T>
LayerGradients<T> TTMLayer<T>::backward_autodiff(const Tensor<T>& grad_out) {
  const std::size_t m = cores_.m();
  const auto& fs = cores_.shape();
  const Extent batch = saved_batch_;
  const auto cores = squeezed_cores();
  LayerGradients<T> g;
  g.grad_params.resize(m);
  Tensor<T> dy = grad_out.reshaped(batched(batch, fs.out_extents()));
  for (std::size_t k = m; k-- > 0;) {
    Tensor<T> dg = core::contract_labeled(saved_[k], chain_labels(labels_, k), dy,
                                          chain_labels(labels_, k + 1), labels_.core(k));
    g.grad_params[k] = TTMLabels::unsqueeze(std::move(dg), cores_.core_shape(k));
    dy = core::contract_labeled(dy, chain_labels(labels_, k + 1), cores[k], labels_.core(k),
                                chain_labels(labels_, k));
  }
  g.grad_input = std::move(dy).reshaped({batch, fs.d_in()});
  this->backward_cost_ = autodiff_backward_cost(fs, cores_.ranks(), batch, sizeof(T));
  return g;
}

template <typename T>
LayerGradients<T> TTMLayer<T>::backward_program(const Tensor<T>& grad_out) {
  const std::size_t m = cores_.m();
  const auto& fs = cores_.shape();
  const Extent batch = saved_batch_;
  if (!backward_program_ || backward_batch_ != batch) {
    backward_program_ = ttm_backward_program(fs, cores_.ranks(), batch, bwd_);
    input_grad_plan_ = ttm_input_grad_plan(fs, cores_.ranks(), batch);
    backward_batch_ = batch;
  }
  const Tensor<T> dy = grad_out.reshaped(batched(batch, fs.out_extents()));
  const auto cores = squeezed_cores();
  core::Operands<T> leaves{&saved_.front(), &dy};
  for (const auto& c : cores) leaves.push_back(&c);
  auto outs = backward_program_->run(leaves);

  LayerGradients<T> g;
  for (std::size_t k = 0; k < m; ++k) {
    g.grad_params.push_back(TTMLabels::unsqueeze(std::move(outs[k]), cores_.core_shape(k)));
  }
  core::Operands<T> dx_ops{&dy};
  for (const auto& c : cores) dx_ops.push_back(&c);
  auto [dx, dx_cost] = core::execute_plan(*input_grad_plan_, dx_ops);
  g.grad_input = std::move(dx).reshaped({batch, fs.d_in()});
  this->backward_cost_ = core::sequence(backward_program_->cost(sizeof(T)), dx_cost);
  this->backward_cost_.saved_activation_bytes = saved_.front().bytes();
  return g;
}

template <typename T>
std::string TTMLayer<T>::explain(Extent batch) const {
  const auto& fs = cores_.shape();
  const auto& ranks = cores_.ranks();
  std::string out = fmt::format("ttm layer {} ranks {} batch {} forward {} backward {}\n",
                                fs.str(), ranks.str(), batch, to_string(fwd_), to_string(bwd_));
  const StrategyCost cost = ttm_cost_model(fs, ranks, batch, fwd_, bwd_, sizeof(T));
  if (fwd_ == ForwardStrategy::einsum) {
    out += "forward plan:\n" + ttm_forward_plan(fs, ranks, batch).explain();
  } else {
    out += "forward schedule:\n" + cost.forward.to_string();
  }
  if (bwd_ == BackwardStrategy::autodiff) {
    out += "backward sweep:\n" + cost.backward.to_string();
  } else {
    out += "backward " + ttm_backward_program(fs, ranks, batch, bwd_).explain();
    out += "input gradient plan:\n" + ttm_input_grad_plan(fs, ranks, batch).explain();
  }
  return out;
}

template class TTMLayer<float>;
template class TTMLayer<double>;

}  // namespace ttl::layers
