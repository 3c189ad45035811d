#include "ttl/layers/factory.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "ttl/layers/dense.hpp"
#include "ttl/layers/svd.hpp"
#include "ttl/layers/ttm_layer.hpp"

namespace ttl::layers {

LayerKind parse_kind(std::string_view name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "ttm") return LayerKind::ttm;
  if (name == "svd") return LayerKind::svd;
  throw ParameterError(fmt::format("unknown layer kind '{}' (dense, ttm, svd)", name));
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::ttm: return "ttm";
    case LayerKind::svd: return "svd";
  }
  return "?";
}

void LayerConfig::validate() const {
  if (d_in == 0 || d_out == 0) throw ParameterError("d_in and d_out must be positive");
  switch (kind) {
    case LayerKind::dense:
      return;
    case LayerKind::svd:
      if (rank < 1 || rank > std::min(d_in, d_out)) {
        throw ParameterError(fmt::format("svd rank {} out of range [1, {}]", rank,
                                         std::min(d_in, d_out)));
      }
      return;
    case LayerKind::ttm: {
      const auto fs = factorized_shape();
      if (fs.d_in() != d_in || fs.d_out() != d_out) {
        throw DimensionError(fmt::format("pairs {} give {}x{}, layer is {}x{}", fs.str(),
                                         fs.d_in(), fs.d_out(), d_in, d_out));
      }
      if (fs.m() > ttm::TTMLabels::kMaxCores) {
        throw ParameterError(fmt::format("at most {} cores supported", ttm::TTMLabels::kMaxCores));
      }
      ttm_ranks().validate(fs.m());
      if (forward == ForwardStrategy::einsum && backward == BackwardStrategy::autodiff) {
        throw ParameterError(
            "forward 'einsum' cannot be combined with backward 'autodiff' (autodiff needs the "
            "fixed forward's intermediate chain)");
      }
      return;
    }
  }
}

ttm::FactorizedShape LayerConfig::factorized_shape() const {
  if (!pairs.empty()) {
    if (m != 0 && m != pairs.size()) {
      throw ParameterError(fmt::format("m = {} but {} pairs given", m, pairs.size()));
    }
    ttm::FactorizedShape fs{pairs};
    fs.validate();
    return fs;
  }
  if (m == 0) throw ParameterError("ttm layer needs m (core count) or explicit pairs");
  return ttm::factorize_shapes(d_in, d_out, m);
}

ttm::TTMRanks LayerConfig::ttm_ranks() const {
  const std::size_t cores = pairs.empty() ? m : pairs.size();
  if (!ranks.empty()) return ttm::TTMRanks{ranks};
  if (rank == 0) throw ParameterError("ttm layer needs rank or ranks");
  return ttm::TTMRanks::uniform(cores, rank);
}

std::uint64_t LayerConfig::weight_count() const {
  switch (kind) {
    case LayerKind::dense: return std::uint64_t{d_in} * d_out;
    case LayerKind::svd: return svd_weight_count(d_in, d_out, rank);
    case LayerKind::ttm: return ttm::ttm_param_count(factorized_shape(), ttm_ranks());
  }
  return 0;
}

std::string LayerConfig::describe() const {
  switch (kind) {
    case LayerKind::dense: return fmt::format("dense {}x{}", d_in, d_out);
    case LayerKind::svd: return fmt::format("svd {}x{} r={}", d_in, d_out, rank);
    case LayerKind::ttm:
      return fmt::format("ttm {}x{} pairs={} ranks={}", d_in, d_out, factorized_shape().str(),
                         ttm_ranks().str());
  }
  return "?";
}

StrategyCost modeled_cost(const LayerConfig& config, Extent batch, std::size_t element_bytes) {
  switch (config.kind) {
    case LayerKind::dense: return dense_cost_model(config.d_in, config.d_out, batch, element_bytes);
    case LayerKind::svd:
      return svd_cost_model(config.d_in, config.d_out, config.rank, batch, element_bytes);
    case LayerKind::ttm:
      return ttm_cost_model(config.factorized_shape(), config.ttm_ranks(), batch, config.forward,
                            config.backward, element_bytes);
  }
  throw ParameterError("unknown layer kind");
}

template <typename T>
std::unique_ptr<LinearLayer<T>> make_layer(const LayerConfig& config) {
  config.validate();
  switch (config.kind) {
    case LayerKind::dense:
      return std::make_unique<DenseLayer<T>>(DenseLayer<T>::random(config.d_in, config.d_out,
                                                                   config.seed));
    case LayerKind::svd: {
      const auto dense = DenseLayer<T>::random(config.d_in, config.d_out, config.seed);
      return std::make_unique<SVDLayer<T>>(svd_from_dense(dense.weight(), config.rank));
    }
    case LayerKind::ttm:
      return std::make_unique<TTMLayer<T>>(TTMLayer<T>::random(
          config.factorized_shape(), config.ttm_ranks(), config.forward, config.backward,
          config.seed));
  }
  throw ParameterError("unknown layer kind");
}

template std::unique_ptr<LinearLayer<float>> make_layer(const LayerConfig&);
template std::unique_ptr<LinearLayer<double>> make_layer(const LayerConfig&);

}  // namespace ttl::layers
