#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ttl/layers/layer.hpp"

namespace ttl::layers {

struct TensorCheck {
  std::string name;
  double worst_relative_error = 0.0;
  std::size_t entries_checked = 0;
  // max|a-f| / max|f| over the same entries.
  double normwise_error = 0.0;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;

  double worst() const;
  double worst_normwise() const;
  bool passed(double tolerance) const { return worst() <= tolerance; }
  std::string to_string() const;
};

/// Elementwise |a-f| / max(|a|,|f|) over entries where max(|a|,|f|) > floor.
double elementwise_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric,
                                  double floor = 1e-8);

/// max|a-b| / max|b|
double normwise_relative_error(const Tensor<double>& a, const Tensor<double>& b);

/// Central differences of L = sum(forward() * weight) with respect to each entry
/// of `param`. The difference Y(+h) - Y(-h) is formed before weighting, which keeps
/// rounding noise proportional to the perturbation rather than to L.
Tensor<double> central_difference(Tensor<double>& param,
                                  const std::function<Tensor<double>()>& forward,
                                  const Tensor<double>& weight, double h);

/// Entry indices checked for a tensor of `size` entries: all of them when
/// max_entries is 0 or at least size, otherwise max_entries evenly spaced ones.
std::vector<std::size_t> sample_entries(std::size_t size, std::size_t max_entries);

/// Compares backward() of `layer` against central differences for every
/// parameter tensor and for the input, over sample_entries(size, max_entries).
GradcheckReport finite_difference_check(LinearLayer<double>& layer, const Tensor<double>& x,
                                        const Tensor<double>& grad_out, double h = 1e-5,
                                        double floor = 1e-8, std::size_t max_entries = 0);

/// Largest normwise relative difference over grad_input, each parameter gradient and
/// the bias gradient.
double gradient_difference(const LayerGradients<double>& a, const LayerGradients<double>& b);

}  // namespace ttl::layers
