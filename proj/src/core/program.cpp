#include "ttl/core/program.hpp"

#include <algorithm>
#include <optional>

#include <fmt/format.h>

namespace ttl::core {

namespace {

std::string sorted(std::string s) {
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

ContractionProgram::ContractionProgram(std::vector<std::string> leaf_labels,
                                       std::vector<Shape> leaf_shapes)
    : leaf_count_(leaf_labels.size()) {
  if (leaf_labels.size() != leaf_shapes.size()) {
    throw DimensionError("leaf label and shape lists differ in length");
  }
  if (leaf_count_ == 0 || leaf_count_ > 64) {
    throw DimensionError("a contraction program takes between 1 and 64 leaves");
  }
  // Binding all leaves at once checks label extents agree across the whole program.
  const EinsumExpr all(leaf_labels, "");
  extents_ = all.bind(leaf_shapes);
  for (std::size_t i = 0; i < leaf_count_; ++i) {
    Node leaf;
    leaf.labels = std::move(leaf_labels[i]);
    leaf.leaf_mask = std::uint64_t{1} << i;
    leaf.elements = element_count(leaf_shapes[i]);
    leaf.description = fmt::format("leaf {} [{}]", i, leaf.labels);
    nodes_.push_back(std::move(leaf));
  }
}

Shape ContractionProgram::shape(NodeId node) const {
  Shape s;
  for (char c : nodes_.at(node).labels) s.push_back(extents_[c]);
  return s;
}

ContractionProgram::NodeId ContractionProgram::find_or_add(Node node) {
  const std::string key = sorted(node.labels);
  for (NodeId id = leaf_count_; id < nodes_.size(); ++id) {
    const Node& existing = nodes_[id];
    if (existing.rhs >= 0 && existing.leaf_mask == node.leaf_mask &&
        sorted(existing.labels) == key) {
      ++reused_;
      return id;
    }
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

ContractionProgram::NodeId ContractionProgram::add(const std::vector<NodeId>& inputs,
                                                   const std::string& output_labels,
                                                   PathMode mode, bool is_output) {
  std::vector<std::string> terms;
  std::vector<Shape> shapes;
  for (NodeId id : inputs) {
    if (id >= nodes_.size()) throw DimensionError(fmt::format("unknown program node {}", id));
    terms.push_back(nodes_[id].labels);
    shapes.push_back(shape(id));
  }
  const EinsumExpr expr(terms, output_labels);
  const ContractionPlan plan = optimize_path(expr, shapes, mode);

  auto add_unary = [&](NodeId source) {
    Node node;
    node.labels = output_labels;
    node.leaf_mask = nodes_[source].leaf_mask;
    node.elements = extents_.product(output_labels);
    node.lhs = static_cast<long>(source);
    node.description = fmt::format("n{}[{}] -> [{}]", source, nodes_[source].labels, output_labels);
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  };

  NodeId result;
  if (plan.steps().empty()) {
    const NodeId source = inputs.front();
    const bool identity = nodes_[source].labels == output_labels;
    result = (identity && source >= leaf_count_) ? source : add_unary(source);
  } else {
    std::vector<NodeId> ssa(inputs.begin(), inputs.end());
    for (const auto& step : plan.steps()) {
      const NodeId lhs = ssa[step.lhs];
      const NodeId rhs = ssa[step.rhs];
      Node node;
      node.labels = step.result_labels;
      node.leaf_mask = nodes_[lhs].leaf_mask | nodes_[rhs].leaf_mask;
      node.elements = step.result_elements;
      node.lhs = static_cast<long>(lhs);
      node.rhs = static_cast<long>(rhs);
      node.flops = step.flops;
      node.description = fmt::format("n{}[{}] * n{}[{}] -> [{}]", lhs, nodes_[lhs].labels, rhs,
                                     nodes_[rhs].labels, step.result_labels);
      ssa.push_back(find_or_add(std::move(node)));
    }
    result = ssa.back();
    if (nodes_[result].labels != output_labels) result = add_unary(result);
  }
  if (is_output) {
    nodes_[result].is_output = true;
    outputs_.push_back(result);
  }
  return result;
}

CostReport ContractionProgram::cost(std::size_t element_bytes) const {
  CostReport report;
  std::vector<std::size_t> last_use(nodes_.size(), 0);
  for (NodeId id = leaf_count_; id < nodes_.size(); ++id) {
    last_use[id] = id;
    for (long in : {nodes_[id].lhs, nodes_[id].rhs}) {
      if (in >= 0) last_use[static_cast<std::size_t>(in)] = id;
    }
  }
  std::uint64_t live = 0;
  for (NodeId id = leaf_count_; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    const std::uint64_t bytes = node.elements * element_bytes;
    report.add_step(fmt::format("n{} = {}", id, node.description), node.flops, bytes,
                    !node.is_output);
    if (!node.is_output) live += bytes;
    report.peak_intermediate_bytes = std::max(report.peak_intermediate_bytes, live);
    for (long in : {node.lhs, node.rhs}) {
      if (in < static_cast<long>(leaf_count_)) continue;
      const auto src = static_cast<std::size_t>(in);
      if (last_use[src] == id && !nodes_[src].is_output) live -= nodes_[src].elements * element_bytes;
    }
    if (last_use[id] == id && !node.is_output) live -= bytes;
  }
  return report;
}

template <typename T>
std::vector<Tensor<T>> ContractionProgram::run(const Operands<T>& leaves,
                                               MultiplyCounter* counter) const {
  if (leaves.size() != leaf_count_) {
    throw PlanMismatchError(fmt::format("program expects {} leaves, got {}", leaf_count_,
                                        leaves.size()));
  }
  for (std::size_t i = 0; i < leaf_count_; ++i) {
    if (leaves[i] == nullptr || leaves[i]->shape() != shape(i)) {
      throw PlanMismatchError(fmt::format("leaf {} has shape {}, program built for {}", i,
                                          leaves[i] ? shape_string(leaves[i]->shape()) : "(null)",
                                          shape_string(shape(i))));
    }
  }
  std::vector<std::size_t> last_use(nodes_.size(), 0);
  for (NodeId id = leaf_count_; id < nodes_.size(); ++id) {
    for (long in : {nodes_[id].lhs, nodes_[id].rhs}) {
      if (in >= 0) last_use[static_cast<std::size_t>(in)] = id;
    }
  }
  std::vector<std::optional<Tensor<T>>> values(nodes_.size());
  auto get = [&](long id) -> const Tensor<T>& {
    const auto i = static_cast<std::size_t>(id);
    return i < leaf_count_ ? *leaves[i] : *values[i];
  };
  for (NodeId id = leaf_count_; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.rhs < 0) {
      values[id] = transpose_labeled(get(node.lhs), nodes_[node.lhs].labels, node.labels);
    } else {
      values[id] = contract_labeled(get(node.lhs), nodes_[node.lhs].labels, get(node.rhs),
                                    nodes_[node.rhs].labels, node.labels, counter);
    }
    for (long in : {node.lhs, node.rhs}) {
      if (in < static_cast<long>(leaf_count_)) continue;
      const auto src = static_cast<std::size_t>(in);
      if (last_use[src] == id && !nodes_[src].is_output) values[src].reset();
    }
  }
  std::vector<Tensor<T>> out;
  out.reserve(outputs_.size());
  for (NodeId id : outputs_) out.push_back(*values[id]);
  return out;
}

std::string ContractionProgram::explain() const {
  std::string out = fmt::format("contraction program: {} leaves, {} nodes, {} reused steps\n",
                                leaf_count_, nodes_.size() - leaf_count_, reused_);
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    out += fmt::format("  n{}: {}  flops {}  elements {}{}\n", id, node.description, node.flops,
                       node.elements, node.is_output ? "  (output)" : "");
  }
  return out;
}

template std::vector<Tensor<float>> ContractionProgram::run(const Operands<float>&,
                                                            MultiplyCounter*) const;
template std::vector<Tensor<double>> ContractionProgram::run(const Operands<double>&,
                                                             MultiplyCounter*) const;

}  // namespace ttl::core
