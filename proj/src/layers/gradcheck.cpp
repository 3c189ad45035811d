#include "ttl/layers/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace ttl::layers {

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& t : tensors) w = std::max(w, t.worst_relative_error);
  return w;
}

double GradcheckReport::worst_normwise() const {
  double w = 0.0;
  for (const auto& t : tensors) w = std::max(w, t.normwise_error);
  return w;
}

std::string GradcheckReport::to_string() const {
  std::string out;
  for (const auto& t : tensors) {
    out += fmt::format("  {:<10} worst relative error {:.3e} over {} entries\n", t.name,
                       t.worst_relative_error, t.entries_checked);
  }
  return out;
}

double elementwise_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric,
                                  double floor) {
  if (analytic.shape() != numeric.shape()) {
    throw DimensionError(fmt::format("comparing shapes {} and {}",
                                     core::shape_string(analytic.shape()),
                                     core::shape_string(numeric.shape())));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double mag = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    if (!(mag > floor)) {
      if (std::isnan(mag)) return mag;
      continue;
    }
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / mag);
  }
  return worst;
}

double normwise_relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("comparing shapes {} and {}", core::shape_string(a.shape()),
                                     core::shape_string(b.shape())));
  }
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  if (scale == 0.0) return diff;
  return diff / scale;
}

Tensor<double> central_difference(Tensor<double>& param,
                                  const std::function<Tensor<double>()>& forward,
                                  const Tensor<double>& weight, double h) {
  Tensor<double> out(param.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param[i] = keep + h;
    const Tensor<double> plus = forward();
    param[i] = keep - h;
    const Tensor<double> minus = forward();
    param[i] = keep;
    double acc = 0.0;
    for (std::size_t n = 0; n < plus.size(); ++n) acc += (plus[n] - minus[n]) * weight[n];
    out[i] = acc / (2.0 * h);
  }
  return out;
}

std::vector<std::size_t> sample_entries(std::size_t size, std::size_t max_entries) {
  std::vector<std::size_t> out;
  if (max_entries == 0 || max_entries >= size) {
    out.resize(size);
    for (std::size_t i = 0; i < size; ++i) out[i] = i;
    return out;
  }
  for (std::size_t k = 0; k < max_entries; ++k) out.push_back(k * size / max_entries);
  return out;
}

namespace {

TensorCheck check_entries(std::string name, Tensor<double>& param, const Tensor<double>& analytic,
                          const std::function<Tensor<double>()>& forward,
                          const Tensor<double>& weight, double h, double floor,
                          std::size_t max_entries) {
  const auto entries = sample_entries(param.size(), max_entries);
  if (entries.size() == param.size()) {
    const Tensor<double> numeric = central_difference(param, forward, weight, h);
    return {std::move(name), elementwise_relative_error(analytic, numeric, floor), entries.size(),
            normwise_relative_error(analytic, numeric)};
  }
  Tensor<double> a({entries.size()}), n({entries.size()});
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const std::size_t i = entries[k];
    const double keep = param[i];
    param[i] = keep + h;
    const Tensor<double> plus = forward();
    param[i] = keep - h;
    const Tensor<double> minus = forward();
    param[i] = keep;
    double acc = 0.0;
    for (std::size_t e = 0; e < plus.size(); ++e) acc += (plus[e] - minus[e]) * weight[e];
    n[k] = acc / (2.0 * h);
    a[k] = analytic[i];
  }
  return {std::move(name), elementwise_relative_error(a, n, floor), entries.size(),
          normwise_relative_error(a, n)};
}

}  // namespace

GradcheckReport finite_difference_check(LinearLayer<double>& layer, const Tensor<double>& x,
                                        const Tensor<double>& grad_out, double h, double floor,
                                        std::size_t max_entries) {
  layer.forward(x);
  const LayerGradients<double> analytic = layer.backward(grad_out);

  Tensor<double> input = x;
  auto run = [&] {
    layer.parameters_changed();
    return layer.forward(input);
  };
  GradcheckReport report;
  const auto params = layer.parameters();
  const auto names = layer.parameter_names();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const bool is_bias = p + 1 == params.size();
    const Tensor<double>& a = is_bias ? analytic.grad_bias : analytic.grad_params[p];
    report.tensors.push_back(
        check_entries(names[p], *params[p], a, run, grad_out, h, floor, max_entries));
  }
  report.tensors.push_back(
      check_entries("input", input, analytic.grad_input, run, grad_out, h, floor, max_entries));
  layer.parameters_changed();
  return report;
}

double gradient_difference(const LayerGradients<double>& a, const LayerGradients<double>& b) {
  if (a.grad_params.size() != b.grad_params.size()) {
    throw DimensionError("gradient sets have different parameter counts");
  }
  double worst = std::max(normwise_relative_error(a.grad_input, b.grad_input),
                          normwise_relative_error(a.grad_bias, b.grad_bias));
  for (std::size_t p = 0; p < a.grad_params.size(); ++p) {
    worst = std::max(worst, normwise_relative_error(a.grad_params[p], b.grad_params[p]));
  }
  return worst;
}

}  // namespace ttl::layers
