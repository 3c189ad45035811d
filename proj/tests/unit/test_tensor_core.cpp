#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "support/instances.hpp"
#include "support/oracles.hpp"
#include "ttl/core/contract.hpp"
#include "ttl/core/einsum.hpp"
#include "ttl/core/program.hpp"

using namespace ttl;
using namespace ttl::core;
using ttl::testing::relative_error;
using ttl::testing::naive_einsum;
using ttl::testing::random_tensor;

using ttl::testing::all_orders;
using ttl::testing::Instance;
using ttl::testing::random_instance;

TEST_CASE("contract_pair: matrix product and flop count") {
  std::mt19937_64 rng(1);
  const Tensor64 a = random_tensor({2, 3}, rng);
  const Tensor64 b = random_tensor({3, 4}, rng);
  MultiplyCounter counter;
  const AxisPair axes[] = {{1, 0}};
  const Tensor64 c = contract_pair(a, b, axes, &counter);
  CHECK(c.shape() == Shape{2, 4});
  CHECK(counter.count == 24);
  CHECK(relative_error(c, ttl::testing::naive_matmul(a, b)) < 1e-14);
}

TEST_CASE("contract_pair: identity") {
  const Tensor64 a({2, 2}, {1, 2, 3, 4});
  const Tensor64 eye({2, 2}, {1, 0, 0, 1});
  const AxisPair axes[] = {{1, 0}};
  CHECK(contract_pair(a, eye, axes) == a);
}

TEST_CASE("contract_pair: rank-3 by rank-2 matches nested loops") {
  std::mt19937_64 rng(2);
  const Tensor64 a = random_tensor({2, 2, 3}, rng);
  const Tensor64 b = random_tensor({3, 2}, rng);
  const AxisPair axes[] = {{2, 0}};
  const Tensor64 c = contract_pair(a, b, axes);
  Tensor64 expected({2, 2, 2});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        double acc = 0;
        for (std::size_t s = 0; s < 3; ++s) acc += a.at({i, j, s}) * b.at({s, k});
        expected.at({i, j, k}) = acc;
      }
  CHECK(c.shape() == expected.shape());
  CHECK(relative_error(c, expected) < 1e-14);
}

TEST_CASE("contract_pair: extent mismatch reports both shapes") {
  const Tensor64 a({2, 3});
  const Tensor64 b({4, 5});
  const AxisPair axes[] = {{1, 0}};
  try {
    contract_pair(a, b, axes);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("(2, 3)") != std::string::npos);
    CHECK(what.find("(4, 5)") != std::string::npos);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor64({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor64({2, 2}, {1.0, 2.0}), DimensionError);
  const Tensor64 scalar;
  CHECK(scalar.rank() == 0);
  CHECK(scalar.size() == 1);
  CHECK_THROWS_AS(Tensor64({2, 3}).reshaped({5}), DimensionError);
}

TEST_CASE("einsum expression parsing and binding") {
  const auto expr = EinsumExpr::parse("ab, bc -> ac");
  CHECK(expr.operands() == std::vector<std::string>{"ab", "bc"});
  CHECK(expr.output() == "ac");
  CHECK_THROWS_AS(EinsumExpr::parse("ab,bc"), ExpressionError);
  CHECK_THROWS_AS(EinsumExpr::parse("ab,bc->ad"), ExpressionError);
  CHECK_THROWS_AS(EinsumExpr::parse("aab->b"), ExpressionError);
  const std::vector<Shape> bad = {{2, 3}, {4, 5}};
  CHECK_THROWS_AS(expr.bind(bad), DimensionError);
  const std::vector<Shape> wrong_rank = {{2, 3}, {3}};
  CHECK_THROWS_AS(expr.bind(wrong_rank), DimensionError);
}

TEST_CASE("optimize_path: matrix chain picks the cheap order") {
  const auto expr = EinsumExpr::parse("ab,bc,cd->ad");
  const std::vector<Shape> shapes = {{2, 100}, {100, 3}, {3, 100}};
  const auto plan = optimize_path(expr, shapes, PathMode::exact);
  REQUIRE(plan.steps().size() == 2);
  CHECK(plan.steps()[0].lhs == 0);
  CHECK(plan.steps()[0].rhs == 1);
  CHECK(plan.total_flops() == 1200);

  const std::pair<std::size_t, std::size_t> other[] = {{1, 2}, {0, 3}};
  CHECK(plan_from_pairs(expr, shapes, other).total_flops() == 50000);
  CHECK(optimize_path(expr, shapes, PathMode::greedy).total_flops() == 1200);
}

TEST_CASE("optimize_path: matrix-chain sanity I*J*S") {
  const auto expr = EinsumExpr::parse("is,sj->ij");
  const std::vector<Shape> shapes = {{7, 5}, {5, 3}};
  CHECK(optimize_path(expr, shapes, PathMode::exact).total_flops() == 7 * 3 * 5);
}

TEST_CASE("optimize_path: single operand is a pure transpose") {
  std::mt19937_64 rng(3);
  const Tensor64 a = random_tensor({2, 3, 4}, rng);
  const auto expr = EinsumExpr::parse("abc->cab");
  const std::vector<Shape> shapes = {a.shape()};
  const auto plan = optimize_path(expr, shapes, PathMode::exact);
  CHECK(plan.steps().empty());
  CHECK(plan.total_flops() == 0);
  MultiplyCounter counter;
  const auto [out, cost] = execute_plan<double>(plan, {&a}, &counter);
  CHECK(counter.count == 0);
  CHECK(cost.total_flops == 0);
  CHECK(out == naive_einsum({"abc"}, "cab", {&a}));
}

TEST_CASE("optimize_path: errors") {
  const auto expr = EinsumExpr::parse("ab,bc->ac");
  const std::vector<Shape> inconsistent = {{2, 3}, {4, 5}};
  CHECK_THROWS_AS(optimize_path(expr, inconsistent, PathMode::exact), DimensionError);

  const auto big = EinsumExpr::parse("ab,bc,cd,de,ef,fg,gh,hi,ij->aj");
  const std::vector<Shape> shapes(9, Shape{2, 2});
  CHECK_THROWS_AS(optimize_path(big, shapes, PathMode::exact), PathSearchError);
  CHECK(optimize_path(big, shapes, PathMode::greedy).steps().size() == 8);
}

TEST_CASE("execute_plan: two operands equal contract_pair") {
  std::mt19937_64 rng(4);
  const Tensor64 a = random_tensor({3, 4, 2}, rng);
  const Tensor64 b = random_tensor({2, 4, 5}, rng);
  const auto expr = EinsumExpr::parse("abc,cbd->ad");
  const std::vector<Shape> shapes = {a.shape(), b.shape()};
  const auto plan = optimize_path(expr, shapes, PathMode::exact);
  const auto [out, cost] = execute_plan<double>(plan, {&a, &b});
  const AxisPair axes[] = {{1, 1}, {2, 0}};
  CHECK(out == contract_pair(a, b, axes));
  CHECK(cost.total_flops == 3 * 4 * 2 * 5);
}

TEST_CASE("execute_plan: exact and greedy agree on a 3-operand instance") {
  std::mt19937_64 rng(5);
  const Tensor64 a = random_tensor({4, 3}, rng);
  const Tensor64 b = random_tensor({3, 5, 2}, rng);
  const Tensor64 c = random_tensor({2, 6}, rng);
  const auto expr = EinsumExpr::parse("ab,bcd,de->ace");
  const std::vector<Shape> shapes = {a.shape(), b.shape(), c.shape()};
  const auto exact = execute_plan<double>(optimize_path(expr, shapes, PathMode::exact), {&a, &b, &c});
  const auto greedy = execute_plan<double>(optimize_path(expr, shapes, PathMode::greedy), {&a, &b, &c});
  CHECK(relative_error(exact.first, greedy.first) < 1e-12);
  CHECK(relative_error(exact.first, naive_einsum({"ab", "bcd", "de"}, "ace", {&a, &b, &c})) <
        1e-12);
}

TEST_CASE("execute_plan: shape drift is a plan mismatch") {
  const Tensor64 a({2, 3});
  const Tensor64 b({3, 4});
  const Tensor64 wrong({3, 5});
  const auto expr = EinsumExpr::parse("ab,bc->ac");
  const std::vector<Shape> shapes = {a.shape(), b.shape()};
  const auto plan = optimize_path(expr, shapes, PathMode::exact);
  CHECK_THROWS_AS(execute_plan<double>(plan, {&a, &wrong}), PlanMismatchError);
  CHECK_THROWS_AS(execute_plan<double>(plan, {&a}), PlanMismatchError);
}

TEST_CASE("property: every contraction order gives the same result") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 60; ++trial) {
    const Instance inst = random_instance(rng, 5, 6);
    const auto shapes = inst.shapes();
    const EinsumExpr expr(inst.terms, inst.output);
    const Tensor64 reference = naive_einsum(inst.terms, inst.output, inst.ptrs());

    std::vector<std::size_t> ids(inst.terms.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    std::vector<std::pair<std::size_t, std::size_t>> prefix;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> orders;
    all_orders(ids, ids.size(), prefix, orders);
    for (const auto& order : orders) {
      const auto plan = plan_from_pairs(expr, shapes, order);
      MultiplyCounter counter;
      const auto [out, cost] = execute_plan(plan, inst.ptrs(), &counter);
      REQUIRE(out.shape() == reference.shape());
      CHECK(relative_error(out, reference) < 1e-12);
      CHECK(counter.count == cost.total_flops);
      CHECK(cost.total_flops == plan.total_flops());
      CHECK(cost.peak_intermediate_bytes >= cost.largest_intermediate_bytes());
    }
  }
}

TEST_CASE("property: exact never costs more than greedy") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Instance inst = random_instance(rng, 4, 6);
    const auto shapes = inst.shapes();
    const EinsumExpr expr(inst.terms, inst.output);
    const auto exact = optimize_path(expr, shapes, PathMode::exact);
    const auto greedy = optimize_path(expr, shapes, PathMode::greedy);
    CHECK(exact.total_flops() <= greedy.total_flops());

    // Exhaustive enumeration is the ground truth for the minimum.
    std::vector<std::size_t> ids(inst.terms.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    std::vector<std::pair<std::size_t, std::size_t>> prefix;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> orders;
    all_orders(ids, ids.size(), prefix, orders);
    std::uint64_t best = UINT64_MAX;
    for (const auto& order : orders) {
      best = std::min(best, plan_from_pairs(expr, shapes, order).total_flops());
    }
    CHECK(exact.total_flops() == best);
  }
}

TEST_CASE("plan_cost: eager free and per-step totals") {
  // a-b-c-d chain of vectors/matrices; the middle intermediate is freed before the last step.
  const auto expr = EinsumExpr::parse("ab,bc,cd,de->ae");
  const std::vector<Shape> shapes = {{2, 3}, {3, 4}, {4, 5}, {5, 6}};
  const std::pair<std::size_t, std::size_t> order[] = {{0, 1}, {4, 2}, {5, 3}};
  const auto plan = plan_from_pairs(expr, shapes, order);
  const CostReport cost = plan_cost(plan, 8);
  std::uint64_t sum = 0;
  for (const auto& s : cost.per_step) sum += s.flops;
  CHECK(cost.total_flops == sum);
  CHECK(cost.total_flops == 2 * 3 * 4 + 2 * 4 * 5 + 2 * 5 * 6);
  // (2x4) then (2x5): both live during step 2 -> (8 + 10) * 8 bytes.
  CHECK(cost.peak_intermediate_bytes == (8 + 10) * 8);
  CHECK_FALSE(cost.per_step.back().intermediate);
}

TEST_CASE("contraction program shares common subexpressions") {
  std::mt19937_64 rng(8);
  const Tensor64 a = random_tensor({3, 4}, rng);
  const Tensor64 b = random_tensor({4, 5}, rng);
  const Tensor64 c = random_tensor({5, 6}, rng);
  const Tensor64 d = random_tensor({6, 2}, rng);
  ContractionProgram program({"ab", "bc", "cd", "de"}, {a.shape(), b.shape(), c.shape(), d.shape()});
  // Both expressions need (a*b); the second reuses it.
  program.add({0, 1, 2}, "ad", PathMode::exact, true);
  program.add({0, 1, 3}, "acde", PathMode::exact, true);
  MultiplyCounter counter;
  const auto outs = program.run<double>({&a, &b, &c, &d}, &counter);
  REQUIRE(outs.size() == 2);
  CHECK(relative_error(outs[0], naive_einsum({"ab", "bc", "cd"}, "ad", {&a, &b, &c})) < 1e-12);
  CHECK(relative_error(outs[1], naive_einsum({"ab", "bc", "de"}, "acde", {&a, &b, &d})) <
        1e-12);
  CHECK(program.reused_steps() == 1);
  const CostReport cost = program.cost(8);
  CHECK(counter.count == cost.total_flops);
  CHECK(cost.total_flops == 3 * 4 * 5 + 3 * 5 * 6 + 3 * 5 * 6 * 2);
}

TEST_CASE("einsum convenience and float path") {
  Tensor32 a({2, 2}, {1, 2, 3, 4});
  Tensor32 b({2, 2}, {1, 0, 0, 1});
  const Tensor32 c = einsum<float>("ij,jk->ki", {&a, &b});
  CHECK(c == Tensor32({2, 2}, {1, 3, 2, 4}));
}
