#include "ttl/core/einsum.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <limits>
#include <optional>

#include <fmt/format.h>

namespace ttl::core {

namespace {

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    return std::numeric_limits<std::uint64_t>::max();
  }
  return a * b;
}

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
  const auto max = std::numeric_limits<std::uint64_t>::max();
  return a > max - b ? max : a + b;
}

void check_term(const std::string& term, const char* what) {
  std::array<bool, 128> seen{};
  for (char c : term) {
    if (!std::isalpha(static_cast<unsigned char>(c))) {
      throw ExpressionError(fmt::format("invalid label '{}' in {} '{}'", c, what, term));
    }
    if (seen[static_cast<unsigned char>(c)]) {
      throw ExpressionError(fmt::format("label '{}' repeats in {} '{}'", c, what, term));
    }
    seen[static_cast<unsigned char>(c)] = true;
  }
}

bool contains(std::string_view labels, char c) { return labels.find(c) != std::string_view::npos; }

// Builds plan steps from a sequence of SSA pairs, deciding which labels each
// intermediate keeps (those still needed by another live tensor or the output).
class StepBuilder {
 public:
  StepBuilder(const EinsumExpr& expr, const LabelExtents& extents)
      : expr_(expr), extents_(extents), labels_(expr.operands()) {
    live_.resize(labels_.size(), true);
  }

  std::size_t live_count() const {
    return static_cast<std::size_t>(std::count(live_.begin(), live_.end(), true));
  }

  const std::string& labels(std::size_t id) const { return labels_.at(id); }
  bool live(std::size_t id) const { return id < live_.size() && live_[id]; }

  // Step that would contract lhs with rhs, without committing it.
  PlanStep preview(std::size_t lhs, std::size_t rhs) const {
    const bool final_step = live_count() == 2;
    const std::string& la = labels_[lhs];
    const std::string& lb = labels_[rhs];
    std::string result;
    if (final_step) {
      result = expr_.output();
    } else {
      std::string needed = expr_.output();
      for (std::size_t id = 0; id < labels_.size(); ++id) {
        if (live_[id] && id != lhs && id != rhs) needed += labels_[id];
      }
      for (char c : la) {
        if (contains(needed, c)) result += c;
      }
      for (char c : lb) {
        if (contains(needed, c) && !contains(la, c)) result += c;
      }
    }
    std::string all = la;
    for (char c : lb) {
      if (!contains(la, c)) all += c;
    }
    std::string contracted;
    for (char c : all) {
      if (!contains(result, c)) contracted += c;
    }
    return PlanStep{lhs, rhs, labels_.size(), contracted, result, extents_.product(all),
                    extents_.product(result)};
  }

  PlanStep commit(std::size_t lhs, std::size_t rhs) {
    if (lhs == rhs || !live(lhs) || !live(rhs)) {
      throw ExpressionError(fmt::format("invalid contraction pair ({}, {})", lhs, rhs));
    }
    PlanStep step = preview(lhs, rhs);
    live_[lhs] = false;
    live_[rhs] = false;
    labels_.push_back(step.result_labels);
    live_.push_back(true);
    steps_.push_back(step);
    return step;
  }

  std::vector<PlanStep> take_steps() { return std::move(steps_); }

 private:
  const EinsumExpr& expr_;
  const LabelExtents& extents_;
  std::vector<std::string> labels_;
  std::vector<bool> live_;
  std::vector<PlanStep> steps_;
};

// Memoized DP over operand subsets; returns SSA pairs in post-order.
std::vector<std::pair<std::size_t, std::size_t>> exact_order(const EinsumExpr& expr,
                                                             const LabelExtents& extents) {
  const std::size_t n = expr.operand_count();
  std::string alphabet;
  for (const auto& term : expr.operands()) {
    for (char c : term) {
      if (!contains(alphabet, c)) alphabet += c;
    }
  }
  auto to_mask = [&](std::string_view labels) {
    std::uint64_t m = 0;
    for (char c : labels) m |= std::uint64_t{1} << alphabet.find(c);
    return m;
  };
  auto mask_product = [&](std::uint64_t m) {
    std::uint64_t p = 1;
    for (std::size_t bit = 0; bit < alphabet.size(); ++bit) {
      if (m >> bit & 1U) p = saturating_mul(p, extents[alphabet[bit]]);
    }
    return p;
  };

  std::vector<std::uint64_t> operand_mask(n);
  for (std::size_t i = 0; i < n; ++i) operand_mask[i] = to_mask(expr.operands()[i]);
  const std::uint64_t out_mask = to_mask(expr.output());

  const std::size_t full = (std::size_t{1} << n) - 1;
  std::vector<std::uint64_t> union_labels(full + 1, 0);
  for (std::size_t s = 1; s <= full; ++s) {
    const std::size_t low = static_cast<std::size_t>(__builtin_ctzll(s));
    union_labels[s] = union_labels[s & (s - 1)] | operand_mask[low];
  }
  // Labels a subset's result carries: its own labels that the rest or the output needs.
  // A single operand always carries all of its labels.
  auto open_labels = [&](std::size_t s) -> std::uint64_t {
    if ((s & (s - 1)) == 0) return operand_mask[static_cast<std::size_t>(__builtin_ctzll(s))];
    return union_labels[s] & (union_labels[full & ~s] | out_mask);
  };

  constexpr auto kUnset = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::uint64_t> best(full + 1, kUnset);
  std::vector<std::size_t> split(full + 1, 0);
  for (std::size_t i = 0; i < n; ++i) best[std::size_t{1} << i] = 0;
  for (std::size_t s = 1; s <= full; ++s) {
    if ((s & (s - 1)) == 0) continue;
    const std::size_t low = s & (~s + 1);
    // Enumerate proper subsets containing the lowest member so each split appears once.
    for (std::size_t sub = (s - 1) & s; sub != 0; sub = (sub - 1) & s) {
      if ((sub & low) == 0) continue;
      const std::size_t other = s ^ sub;
      const std::uint64_t step = mask_product(open_labels(sub) | open_labels(other));
      const std::uint64_t cost = saturating_add(saturating_add(best[sub], best[other]), step);
      if (cost < best[s]) {
        best[s] = cost;
        split[s] = sub;
      }
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t next_id = n;
  auto emit = [&](auto&& self, std::size_t s) -> std::size_t {
    if ((s & (s - 1)) == 0) return static_cast<std::size_t>(__builtin_ctzll(s));
    const std::size_t left = self(self, split[s]);
    const std::size_t right = self(self, s ^ split[s]);
    pairs.emplace_back(left, right);
    return next_id++;
  };
  emit(emit, full);
  return pairs;
}

std::vector<PlanStep> greedy_steps(const EinsumExpr& expr, const LabelExtents& extents) {
  StepBuilder builder(expr, extents);
  const std::size_t n = expr.operand_count();
  for (std::size_t round = 0; round + 1 < n; ++round) {
    std::optional<std::pair<std::size_t, std::size_t>> best_pair;
    __int128 best_score = 0;
    const std::size_t ids = n + round;
    for (std::size_t i = 0; i < ids; ++i) {
      if (!builder.live(i)) continue;
      for (std::size_t j = i + 1; j < ids; ++j) {
        if (!builder.live(j)) continue;
        const PlanStep step = builder.preview(i, j);
        const __int128 freed = static_cast<__int128>(extents.product(builder.labels(i))) +
                               static_cast<__int128>(extents.product(builder.labels(j)));
        const __int128 score = static_cast<__int128>(step.flops) - freed;
        if (!best_pair || score < best_score) {
          best_pair = {i, j};
          best_score = score;
        }
      }
    }
    builder.commit(best_pair->first, best_pair->second);
  }
  return builder.take_steps();
}

}  // namespace

std::uint64_t LabelExtents::product(std::string_view labels) const {
  std::uint64_t p = 1;
  for (char c : labels) p = saturating_mul(p, (*this)[c]);
  return p;
}

EinsumExpr::EinsumExpr(std::vector<std::string> operands, std::string output)
    : operands_(std::move(operands)), output_(std::move(output)) {
  if (operands_.empty()) throw ExpressionError("einsum needs at least one operand");
  for (const auto& term : operands_) check_term(term, "operand");
  check_term(output_, "output");
  for (char c : output_) {
    const bool found = std::any_of(operands_.begin(), operands_.end(),
                                   [c](const std::string& t) { return contains(t, c); });
    if (!found) {
      throw ExpressionError(fmt::format("output label '{}' appears in no operand", c));
    }
  }
}

EinsumExpr EinsumExpr::parse(std::string_view text) {
  std::string compact;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
  }
  const auto arrow = compact.find("->");
  if (arrow == std::string::npos) {
    throw ExpressionError(fmt::format("einsum '{}' needs explicit '->' output", text));
  }
  std::vector<std::string> operands;
  std::string lhs = compact.substr(0, arrow);
  std::size_t start = 0;
  while (true) {
    const auto comma = lhs.find(',', start);
    operands.push_back(lhs.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return EinsumExpr(std::move(operands), compact.substr(arrow + 2));
}

LabelExtents EinsumExpr::bind(std::span<const Shape> shapes) const {
  if (shapes.size() != operands_.size()) {
    throw DimensionError(fmt::format("einsum '{}' expects {} operands, got {}", str(),
                                     operands_.size(), shapes.size()));
  }
  LabelExtents extents;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& term = operands_[i];
    if (term.size() != shapes[i].size()) {
      throw DimensionError(fmt::format("operand {} of '{}' has shape {} but subscripts '{}'", i,
                                       str(), shape_string(shapes[i]), term));
    }
    for (std::size_t axis = 0; axis < term.size(); ++axis) {
      const char c = term[axis];
      const Extent e = shapes[i][axis];
      if (extents.bound(c) && extents[c] != e) {
        throw DimensionError(fmt::format("label '{}' of '{}' bound to both {} and {}", c, str(),
                                         extents[c], e));
      }
      extents[c] = e;
    }
  }
  return extents;
}

std::string EinsumExpr::str() const {
  std::string s;
  for (std::size_t i = 0; i < operands_.size(); ++i) {
    if (i > 0) s += ',';
    s += operands_[i];
  }
  return s + "->" + output_;
}

PathMode auto_mode(std::size_t operand_count) {
  return operand_count <= kMaxExactOperands ? PathMode::exact : PathMode::greedy;
}

ContractionPlan::ContractionPlan(EinsumExpr expr, std::vector<Shape> shapes,
                                 LabelExtents extents, std::vector<PlanStep> steps)
    : expr_(std::move(expr)),
      shapes_(std::move(shapes)),
      extents_(extents),
      steps_(std::move(steps)),
      id_labels_(expr_.operands()) {
  for (const auto& step : steps_) id_labels_.push_back(step.result_labels);
}

std::uint64_t ContractionPlan::total_flops() const {
  std::uint64_t total = 0;
  for (const auto& step : steps_) total = saturating_add(total, step.flops);
  return total;
}

const std::string& ContractionPlan::labels_of(std::size_t id) const { return id_labels_.at(id); }

std::string ContractionPlan::explain() const {
  std::string out = fmt::format("einsum {}  ({} operand{}, {} step{}, total flops {})\n",
                                expr_.str(), shapes_.size(), shapes_.size() == 1 ? "" : "s",
                                steps_.size(), steps_.size() == 1 ? "" : "s", total_flops());
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    out += fmt::format("  #{} {} {}\n", i, expr_.operands()[i], shape_string(shapes_[i]));
  }
  if (steps_.empty()) {
    out += fmt::format("  (no contraction: permute/reduce to '{}')\n", expr_.output());
  }
  for (std::size_t s = 0; s < steps_.size(); ++s) {
    const auto& st = steps_[s];
    out += fmt::format("  step {}: #{} = #{}[{}] * #{}[{}] -> [{}]  sum over [{}]  flops {}  "
                       "elements {}\n",
                       s, st.result, st.lhs, labels_of(st.lhs), st.rhs, labels_of(st.rhs),
                       st.result_labels, st.contracted, st.flops, st.result_elements);
  }
  return out;
}

ContractionPlan plan_from_pairs(const EinsumExpr& expr, std::span<const Shape> shapes,
                                std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  const LabelExtents extents = expr.bind(shapes);
  if (pairs.size() + 1 != expr.operand_count()) {
    throw ExpressionError(fmt::format("{} operands need {} pairwise steps, got {}",
                                      expr.operand_count(), expr.operand_count() - 1,
                                      pairs.size()));
  }
  StepBuilder builder(expr, extents);
  for (const auto& [lhs, rhs] : pairs) builder.commit(lhs, rhs);
  return ContractionPlan(expr, std::vector<Shape>(shapes.begin(), shapes.end()), extents,
                         builder.take_steps());
}

ContractionPlan optimize_path(const EinsumExpr& expr, std::span<const Shape> shapes,
                              PathMode mode) {
  const LabelExtents extents = expr.bind(shapes);
  std::vector<Shape> shape_list(shapes.begin(), shapes.end());
  if (expr.operand_count() == 1) return ContractionPlan(expr, std::move(shape_list), extents, {});
  if (mode == PathMode::exact) {
    if (expr.operand_count() > kMaxExactOperands) {
      throw PathSearchError(fmt::format(
          "exact path search supports at most {} operands ({} given); use greedy mode",
          kMaxExactOperands, expr.operand_count()));
    }
    const auto pairs = exact_order(expr, extents);
    return plan_from_pairs(expr, shapes, pairs);
  }
  return ContractionPlan(expr, std::move(shape_list), extents, greedy_steps(expr, extents));
}

CostReport plan_cost(const ContractionPlan& plan, std::size_t element_bytes) {
  CostReport report;
  const std::size_t n = plan.operand_shapes().size();
  const auto& steps = plan.steps();
  std::uint64_t live = 0;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const auto& st = steps[s];
    const bool final_step = s + 1 == steps.size();
    const std::uint64_t bytes = st.result_elements * element_bytes;
    report.add_step(fmt::format("#{}[{}] * #{}[{}] -> [{}]", st.lhs, plan.labels_of(st.lhs),
                                st.rhs, plan.labels_of(st.rhs), st.result_labels),
                    st.flops, bytes, !final_step);
    if (!final_step) live += bytes;
    report.peak_intermediate_bytes = std::max(report.peak_intermediate_bytes, live);
    // Each SSA intermediate is consumed exactly once.
    for (std::size_t id : {st.lhs, st.rhs}) {
      if (id >= n) live -= steps[id - n].result_elements * element_bytes;
    }
  }
  return report;
}

template <typename T>
std::pair<Tensor<T>, CostReport> execute_plan(const ContractionPlan& plan,
                                              const Operands<T>& operands,
                                              MultiplyCounter* counter) {
  const auto& shapes = plan.operand_shapes();
  if (operands.size() != shapes.size()) {
    throw PlanMismatchError(fmt::format("plan for '{}' expects {} operands, got {}",
                                        plan.expr().str(), shapes.size(), operands.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (operands[i] == nullptr || operands[i]->shape() != shapes[i]) {
      throw PlanMismatchError(fmt::format(
          "operand {} of '{}' has shape {}, plan was built for {}", i, plan.expr().str(),
          operands[i] ? shape_string(operands[i]->shape()) : "(null)", shape_string(shapes[i])));
    }
  }
  CostReport report = plan_cost(plan, sizeof(T));
  const std::size_t n = shapes.size();
  if (plan.steps().empty()) {
    return {transpose_labeled(*operands[0], plan.labels_of(0), plan.expr().output()), report};
  }
  std::vector<std::optional<Tensor<T>>> temps(plan.steps().size());
  auto get = [&](std::size_t id) -> const Tensor<T>& {
    return id < n ? *operands[id] : *temps[id - n];
  };
  for (std::size_t s = 0; s < plan.steps().size(); ++s) {
    const auto& st = plan.steps()[s];
    temps[s] = contract_labeled(get(st.lhs), plan.labels_of(st.lhs), get(st.rhs),
                                plan.labels_of(st.rhs), st.result_labels, counter);
    if (st.lhs >= n) temps[st.lhs - n].reset();
    if (st.rhs >= n) temps[st.rhs - n].reset();
  }
  return {std::move(*temps.back()), report};
}

template <typename T>
Tensor<T> einsum(std::string_view text, const Operands<T>& operands, MultiplyCounter* counter) {
  const EinsumExpr expr = EinsumExpr::parse(text);
  std::vector<Shape> shapes;
  for (const auto* op : operands) {
    if (op == nullptr) throw DimensionError("null einsum operand");
    shapes.push_back(op->shape());
  }
  const ContractionPlan plan = optimize_path(expr, shapes, auto_mode(shapes.size()));
  return execute_plan(plan, operands, counter).first;
}

template std::pair<Tensor<float>, CostReport> execute_plan(const ContractionPlan&,
                                                           const Operands<float>&,
                                                           MultiplyCounter*);
template std::pair<Tensor<double>, CostReport> execute_plan(const ContractionPlan&,
                                                            const Operands<double>&,
                                                            MultiplyCounter*);
template Tensor<float> einsum(std::string_view, const Operands<float>&, MultiplyCounter*);
template Tensor<double> einsum(std::string_view, const Operands<double>&, MultiplyCounter*);

}  // namespace ttl::core
