#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ttl/layers/layer.hpp"
#include "ttl/ttm/ttm.hpp"

namespace ttl::layers {

enum class LayerKind { dense, ttm, svd };

LayerKind parse_kind(std::string_view name);
std::string_view to_string(LayerKind kind);

struct LayerConfig {
  LayerKind kind = LayerKind::dense;
  Extent d_in = 0;
  Extent d_out = 0;
  // ttm: core count, or taken from `pairs` when those are given.
  std::size_t m = 0;
  // ttm: uniform internal rank; svd: truncation rank.
  Extent rank = 0;
  // ttm: explicit (R_0..R_M), overrides `rank`.
  std::vector<Extent> ranks;
  // ttm: explicit factorization, overrides factorize_shapes.
  std::vector<std::pair<Extent, Extent>> pairs;
  ForwardStrategy forward = ForwardStrategy::einsum;
  BackwardStrategy backward = BackwardStrategy::full_einsum;
  std::uint64_t seed = 0;

  /// Throws ParameterError (bad values) or DimensionError (inconsistent shapes).
  void validate() const;
  ttm::FactorizedShape factorized_shape() const;
  ttm::TTMRanks ttm_ranks() const;
  std::uint64_t weight_count() const;
  std::string describe() const;
};

/// Modeled cost of the configured layer and strategies at a batch size. TTM
/// einsum + autodiff comes back with runnable = false instead of throwing.
StrategyCost modeled_cost(const LayerConfig& config, Extent batch, std::size_t element_bytes);

/// Randomly initialised layer. Dense weights are N(0, 2/(D_in+D_out)); svd layers
/// are the truncated SVD of such a dense draw; ttm layers use init_cores.
template <typename T>
std::unique_ptr<LinearLayer<T>> make_layer(const LayerConfig& config);

}  // namespace ttl::layers
