#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ttl/core/errors.hpp"
#include "ttl/core/tensor.hpp"

namespace ttl::ttm {

using core::Extent;
using core::Shape;
using core::Tensor;

/// Per-core (I_k, J_k) pairs. Row and column indices are mixed-radix with the
/// first core most significant.
struct FactorizedShape {
  std::vector<std::pair<Extent, Extent>> pairs;

  std::size_t m() const noexcept { return pairs.size(); }
  Extent d_in() const;
  Extent d_out() const;
  Shape in_extents() const;
  Shape out_extents() const;
  /// Throws ParameterError on m = 0 or a zero factor.
  void validate() const;
  std::string str() const;  // "4x8,6x8,8x6,4x8"

  friend bool operator==(const FactorizedShape&, const FactorizedShape&) = default;
};

/// (R_0, ..., R_M) with R_0 = R_M = 1.
struct TTMRanks {
  std::vector<Extent> ranks;

  static TTMRanks uniform(std::size_t m, Extent r);
  Extent max_internal() const;
  void validate(std::size_t m) const;
  std::string str() const;  // "1,16,16,16,1"

  friend bool operator==(const TTMRanks&, const TTMRanks&) = default;
};

/// Chain of 4-way cores, core k shaped (R_{k-1}, I_k, J_k, R_k).
template <typename T>
class TTMCores {
 public:
  TTMCores(FactorizedShape shape, TTMRanks ranks, std::vector<Tensor<T>> cores);

  const FactorizedShape& shape() const noexcept { return shape_; }
  const TTMRanks& ranks() const noexcept { return ranks_; }
  std::size_t m() const noexcept { return cores_.size(); }
  const std::vector<Tensor<T>>& cores() const noexcept { return cores_; }
  Tensor<T>& core(std::size_t k) { return cores_.at(k); }
  const Tensor<T>& core(std::size_t k) const { return cores_.at(k); }
  Shape core_shape(std::size_t k) const;

  /// Sum of the actual buffer sizes.
  std::size_t element_total() const;

 private:
  FactorizedShape shape_;
  TTMRanks ranks_;
  std::vector<Tensor<T>> cores_;
};

/// Balanced factorization of d_in and d_out into m paired factors.
FactorizedShape factorize_shapes(Extent d_in, Extent d_out, std::size_t m);

/// sum_k R_{k-1} I_k J_k R_k
std::uint64_t ttm_param_count(const FactorizedShape& fs, const TTMRanks& ranks);

/// ttm_param_count / prod_k I_k J_k
double compression_rate(const FactorizedShape& fs, const TTMRanks& ranks);

/// Dense D_in x D_out matrix represented by the cores.
template <typename T>
Tensor<T> ttm_to_dense(const TTMCores<T>& cores);

/// i.i.d. Gaussian cores scaled so reconstructed entries have variance
/// about 2 / (D_in + D_out).
template <typename T>
TTMCores<T> init_cores(const FactorizedShape& fs, const TTMRanks& ranks, std::uint64_t seed);

/// Per-core standard deviation used by init_cores.
double init_core_stddev(const FactorizedShape& fs, const TTMRanks& ranks);

/// Einsum labels for a TTM with m cores: one batch label, then i_k, j_k and
/// the internal bonds r_1..r_{m-1}. Boundary bonds of extent 1 get no label.
struct TTMLabels {
  explicit TTMLabels(std::size_t m);

  static constexpr std::size_t kMaxCores = 17;

  char batch;
  std::string i;
  std::string j;
  std::string r;  // r[k] links core k and core k+1

  /// Labels of core k with unit boundary axes dropped.
  std::string core(std::size_t k) const;
  /// Core k reshaped to match core(k).
  template <typename T>
  static Tensor<T> squeeze(const Tensor<T>& core, std::size_t k, std::size_t m);
  /// Inverse of squeeze.
  template <typename T>
  static Tensor<T> unsqueeze(Tensor<T> squeezed, const Shape& core_shape);
};

// "TTM1 m=<M> ranks=<..> pairs=<IxJ,..> dtype=f64" then raw little-endian data.
void write_cores(std::ostream& out, const TTMCores<double>& cores);
TTMCores<double> read_cores(std::istream& in);
void save_cores(const std::filesystem::path& path, const TTMCores<double>& cores);
TTMCores<double> load_cores(const std::filesystem::path& path);

}  // namespace ttl::ttm
