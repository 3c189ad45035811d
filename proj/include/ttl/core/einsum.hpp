#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ttl/core/contract.hpp"
#include "ttl/core/cost.hpp"
#include "ttl/core/tensor.hpp"

namespace ttl::core {

/// Extent bound to each label character (0 = unbound).
class LabelExtents {
 public:
  Extent operator[](char label) const { return table_[static_cast<unsigned char>(label)]; }
  Extent& operator[](char label) { return table_[static_cast<unsigned char>(label)]; }
  bool bound(char label) const { return (*this)[label] != 0; }

  /// Product of extents over the labels (saturating).
  std::uint64_t product(std::string_view labels) const;

 private:
  std::array<Extent, 128> table_{};
};

/// Explicit-mode einsum subscripts: "ab,bc->ac". Labels are ASCII letters;
/// a label may not repeat inside one term.
class EinsumExpr {
 public:
  EinsumExpr(std::vector<std::string> operands, std::string output);

  static EinsumExpr parse(std::string_view text);

  const std::vector<std::string>& operands() const noexcept { return operands_; }
  const std::string& output() const noexcept { return output_; }
  std::size_t operand_count() const noexcept { return operands_.size(); }

  /// Binds labels to extents; throws DimensionError on rank or extent conflicts.
  LabelExtents bind(std::span<const Shape> shapes) const;

  std::string str() const;

 private:
  std::vector<std::string> operands_;
  std::string output_;
};

enum class PathMode { exact, greedy };

/// Exact search handles at most this many operands.
inline constexpr std::size_t kMaxExactOperands = 8;

/// Exact when the operand count allows it, greedy otherwise.
PathMode auto_mode(std::size_t operand_count);

/// One pairwise contraction. Ids are SSA-style: operands are 0..n-1 and step s
/// produces id n+s.
struct PlanStep {
  std::size_t lhs;
  std::size_t rhs;
  std::size_t result;
  std::string contracted;      // labels summed away in this step
  std::string result_labels;   // axis order of the result
  std::uint64_t flops;         // product of all distinct extents in the step
  std::uint64_t result_elements;
};

class ContractionPlan {
 public:
  ContractionPlan(EinsumExpr expr, std::vector<Shape> shapes, LabelExtents extents,
                  std::vector<PlanStep> steps);

  const EinsumExpr& expr() const noexcept { return expr_; }
  const std::vector<Shape>& operand_shapes() const noexcept { return shapes_; }
  const LabelExtents& extents() const noexcept { return extents_; }
  const std::vector<PlanStep>& steps() const noexcept { return steps_; }

  std::uint64_t total_flops() const;

  /// Labels of an SSA id (operand or step result).
  const std::string& labels_of(std::size_t id) const;

  /// Human-readable step list.
  std::string explain() const;

 private:
  EinsumExpr expr_;
  std::vector<Shape> shapes_;
  LabelExtents extents_;
  std::vector<PlanStep> steps_;
  std::vector<std::string> id_labels_;
};

/// Minimal-flop plan over all pairwise contraction trees (exact, <= 8 operands)
/// or the greedy heuristic.
ContractionPlan optimize_path(const EinsumExpr& expr, std::span<const Shape> shapes,
                              PathMode mode);

/// Plan following a caller-chosen order of SSA id pairs.
ContractionPlan plan_from_pairs(const EinsumExpr& expr, std::span<const Shape> shapes,
                                std::span<const std::pair<std::size_t, std::size_t>> pairs);

/// Analytic cost of a plan under eager free-after-last-use.
CostReport plan_cost(const ContractionPlan& plan, std::size_t element_bytes);

template <typename T>
using Operands = std::vector<const Tensor<T>*>;

/// Runs the plan. Throws PlanMismatchError if operand shapes differ from the plan's.
template <typename T>
std::pair<Tensor<T>, CostReport> execute_plan(const ContractionPlan& plan,
                                              const Operands<T>& operands,
                                              MultiplyCounter* counter = nullptr);

/// Parse, plan (auto_mode) and execute in one call.
template <typename T>
Tensor<T> einsum(std::string_view expr, const Operands<T>& operands,
                 MultiplyCounter* counter = nullptr);

}  // namespace ttl::core
