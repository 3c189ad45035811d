#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttl/core/einsum.hpp"

namespace ttl::core {

/// Several einsum expressions over one shared set of leaf tensors, lowered to a
/// single DAG of pairwise contractions.
///
/// Each expression is planned independently; its steps are then merged into the
/// DAG keyed by (set of leaves covered, open labels). Two steps with the same key
/// denote the same tensor, so the second one reuses the first result instead of
/// recomputing it. Intermediates live until their last consumer in DAG order.
class ContractionProgram {
 public:
  using NodeId = std::size_t;

  /// Leaves are the program's inputs; at most 64.
  ContractionProgram(std::vector<std::string> leaf_labels, std::vector<Shape> leaf_shapes);

  /// Adds einsum(inputs -> output_labels) planned with `mode` and returns its node.
  /// Nodes added with `is_output` are returned by run() in insertion order and are
  /// excluded from intermediate memory accounting.
  NodeId add(const std::vector<NodeId>& inputs, const std::string& output_labels, PathMode mode,
             bool is_output);

  std::size_t leaf_count() const noexcept { return leaf_count_; }
  const std::string& labels(NodeId node) const { return nodes_.at(node).labels; }
  Shape shape(NodeId node) const;

  /// Number of pairwise steps whose result was taken from an earlier step.
  std::size_t reused_steps() const noexcept { return reused_; }

  CostReport cost(std::size_t element_bytes) const;

  /// Evaluates every output node. Leaf shapes must match construction.
  template <typename T>
  std::vector<Tensor<T>> run(const Operands<T>& leaves, MultiplyCounter* counter = nullptr) const;

  std::string explain() const;

 private:
  struct Node {
    std::string labels;
    std::uint64_t leaf_mask = 0;
    std::uint64_t elements = 1;
    // -1 for leaves; unary nodes (pure permutation) have rhs == -1.
    long lhs = -1;
    long rhs = -1;
    std::uint64_t flops = 0;
    bool is_output = false;
    std::string description;
  };

  NodeId find_or_add(Node node);

  std::size_t leaf_count_;
  std::vector<Node> nodes_;
  std::vector<NodeId> outputs_;
  LabelExtents extents_;
  std::size_t reused_ = 0;
};

}  // namespace ttl::core
