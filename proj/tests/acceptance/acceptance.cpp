#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "support/instances.hpp"
#include "support/oracles.hpp"
#include "ttl/bench/commands.hpp"
#include "ttl/core/einsum.hpp"
#include "ttl/layers/dense.hpp"
#include "ttl/layers/factory.hpp"
#include "ttl/layers/gradcheck.hpp"
#include "ttl/layers/svd.hpp"
#include "ttl/layers/ttm_layer.hpp"
#include "ttl/nn/train.hpp"

using namespace ttl;
using namespace ttl::layers;
using core::Tensor64;
using ttl::testing::naive_matmul;
using ttl::testing::random_tensor;
using ttl::testing::relative_error;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

bool run_criterion(int number, const char* title, double budget_seconds,
                   const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o{false, ""};
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, fmt::format("exception: {}", e.what())};
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (seconds > budget_seconds) {
    o.pass = false;
    o.detail += fmt::format("; over the {:.0f} s budget", budget_seconds);
  }
  std::cout << fmt::format("{} criterion {}: {} | {} ({:.1f} s)\n", o.pass ? "PASS" : "FAIL",
                           number, title, o.detail, seconds)
            << std::flush;
  return o.pass;
}

struct RandomTTM {
  FactorizedShape fs;
  TTMRanks ranks;
  TTMCores<double> cores;
  Tensor64 bias;
};

// m in {2,3,4}, extents <= 4, ranks <= 5, unit-scale cores.
RandomTTM random_ttm(std::mt19937_64& rng) {
  const std::size_t m = 2 + rng() % 3;
  FactorizedShape fs;
  TTMRanks ranks{{1}};
  for (std::size_t k = 0; k < m; ++k) {
    fs.pairs.emplace_back(1 + rng() % 4, 1 + rng() % 4);
    ranks.ranks.push_back(k + 1 == m ? 1 : 1 + rng() % 5);
  }
  auto cores = ttm::init_cores<double>(fs, ranks, rng());
  for (std::size_t k = 0; k < m; ++k) cores.core(k) = random_tensor(cores.core_shape(k), rng);
  return {fs, ranks, cores, random_tensor({fs.d_out()}, rng)};
}

constexpr ForwardStrategy kForwards[] = {ForwardStrategy::einsum, ForwardStrategy::fixed};
constexpr BackwardStrategy kBackwards[] = {BackwardStrategy::autodiff,
                                           BackwardStrategy::full_einsum,
                                           BackwardStrategy::full_matrix};

Outcome dense_equivalence() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const RandomTTM t = random_ttm(rng);
    const Tensor64 x = random_tensor({1 + rng() % 4, t.fs.d_in()}, rng);
    Tensor64 oracle = naive_matmul(x, ttm::ttm_to_dense(t.cores));
    for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i] += t.bias[i % t.bias.size()];
    for (auto f : kForwards) {
      const auto b = f == ForwardStrategy::fixed ? BackwardStrategy::autodiff
                                                 : BackwardStrategy::full_einsum;
      TTMLayer<double> layer(t.cores, t.bias, f, b);
      worst = std::max(worst, relative_error(layer.forward(x), oracle));
    }
  }
  return {worst <= 1e-12,
          fmt::format("200 layers, both forwards, worst relative error {:.2e} (limit 1e-12)", worst)};
}

struct FdTally {
  double worst = 0.0;
  double worst_normwise = 0.0;
  std::size_t over = 0;

  void add(const GradcheckReport& r) {
    worst = std::max(worst, r.worst());
    worst_normwise = std::max(worst_normwise, r.worst_normwise());
    if (!r.passed(1e-5)) ++over;
  }
  std::string str() const {
    return fmt::format("{:.2e} [{} over, normwise {:.1e}]", worst, over, worst_normwise);
  }
};

Outcome gradient_correctness() {
  std::mt19937_64 rng(202);
  FdTally ttm, dense, svd;
  double worst_pair = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const RandomTTM t = random_ttm(rng);
    const Tensor64 x = random_tensor({3, t.fs.d_in()}, rng);
    const Tensor64 g = random_tensor({3, t.fs.d_out()}, rng);
    std::vector<LayerGradients<double>> grads;
    for (auto b : kBackwards) {
      const auto f = b == BackwardStrategy::autodiff ? ForwardStrategy::fixed
                                                     : ForwardStrategy::einsum;
      TTMLayer<double> layer(t.cores, t.bias, f, b);
      ttm.add(finite_difference_check(layer, x, g));
      layer.forward(x);
      grads.push_back(layer.backward(g));
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      for (std::size_t j = i + 1; j < grads.size(); ++j) {
        worst_pair = std::max(worst_pair, gradient_difference(grads[i], grads[j]));
      }
    }
    // Dense and svd layers on the same shapes, with unit-scale factors like the cores.
    DenseLayer<double> d(random_tensor({t.fs.d_in(), t.fs.d_out()}, rng), t.bias);
    dense.add(finite_difference_check(d, x, g));
    const Extent r = 1 + rng() % std::min(t.fs.d_in(), t.fs.d_out());
    SVDLayer<double> s(random_tensor({r, t.fs.d_out()}, rng), random_tensor({t.fs.d_in(), r}, rng),
                       t.bias);
    svd.add(finite_difference_check(s, x, g));
  }
  const bool pass = ttm.worst <= 1e-5 && dense.worst <= 1e-5 && svd.worst <= 1e-5 &&
                    worst_pair <= 1e-10;
  return {pass, fmt::format("200 shapes, elementwise on entries > 1e-8 (limit 1e-5): ttm {}, "
                            "dense {}, svd {}; ttm strategies pairwise {:.2e} (limit 1e-10)",
                            ttm.str(), dense.str(), svd.str(), worst_pair)};
}

Outcome formula_reproduction() {
  const auto fs = ttm::factorize_shapes(768, 3072, 4);
  auto in = fs.in_extents();
  auto out = fs.out_extents();
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  const bool multisets = in == std::vector<Extent>{4, 4, 6, 8} && out == std::vector<Extent>{6, 8, 8, 8};
  const auto ranks = TTMRanks::uniform(4, 16);
  const std::uint64_t formula = ttm::ttm_param_count(fs, ranks);
  const auto cores = ttm::init_cores<double>(fs, ranks, 0);
  std::uint64_t enumerated = 0;
  for (const auto& c : cores.cores()) enumerated += c.size();
  const std::uint64_t svd = svd_weight_count(768, 3072, 50);
  const SVDLayer<float> svd_buffers(core::Tensor<float>({50, 3072}),
                                    core::Tensor<float>({768, 50}), core::Tensor<float>({3072}));
  const bool pass = multisets && formula == 25600 && enumerated == formula && svd == 192000 &&
                    svd_buffers.weight_count() == svd;
  return {pass, fmt::format("pairs {}; ttm R=16 formula {} enumerated {}; svd r=50 {} buffers {}",
                            fs.str(), formula, enumerated, svd, svd_buffers.weight_count())};
}

Outcome table3_ordering() {
  bench::NamedLayer layer{"fc768", {}};
  layer.config.kind = LayerKind::ttm;
  layer.config.d_in = 768;
  layer.config.d_out = 3072;
  layer.config.m = 4;
  layer.config.rank = 16;
  const Extent batch = 16 * 512;
  const auto rows = bench::run_bench(layer, batch, 1, true);
  auto find = [&](ForwardStrategy f, BackwardStrategy b) -> const bench::BenchResult& {
    for (const auto& r : rows) {
      if (r.forward == to_string(f) && r.backward == to_string(b)) return r;
    }
    throw StateError("missing bench row");
  };
  bool pass = rows.size() == 6;
  std::uint64_t max_saved = 0;
  for (const auto& r : rows) max_saved = std::max(max_saved, r.cost.saved_activation_bytes());
  for (auto f : kForwards) {
    const auto& ad = find(f, BackwardStrategy::autodiff);
    const auto& fe = find(f, BackwardStrategy::full_einsum);
    const auto& fm = find(f, BackwardStrategy::full_matrix);
    pass = pass && fm.cost.saved_activation_bytes() == fe.cost.saved_activation_bytes() &&
           fe.cost.saved_activation_bytes() < ad.cost.saved_activation_bytes() &&
           fm.cost.backward.total_flops < fe.cost.backward.total_flops;
  }
  const auto& fixed_ad = find(ForwardStrategy::fixed, BackwardStrategy::autodiff);
  const auto& fe = find(ForwardStrategy::fixed, BackwardStrategy::full_einsum);
  const auto& fm = find(ForwardStrategy::fixed, BackwardStrategy::full_matrix);
  pass = pass && fixed_ad.cost.saved_activation_bytes() == max_saved;
  // The modeled costs must also be what a layer reports for the same configuration.
  const auto direct = ttm_cost_model(layer.config.factorized_shape(), layer.config.ttm_ranks(),
                                     batch, ForwardStrategy::fixed, BackwardStrategy::autodiff, 4);
  pass = pass && direct.saved_activation_bytes() == fixed_ad.cost.saved_activation_bytes();
  return {pass, fmt::format("batch {}: saved bytes FM {} = FE {} < fixed+AD {} (max of six); "
                            "backward GFLOP FM {:.2f} < FE {:.2f}",
                            batch, fm.cost.saved_activation_bytes(),
                            fe.cost.saved_activation_bytes(),
                            fixed_ad.cost.saved_activation_bytes(),
                            fm.cost.backward.total_flops * 1e-9,
                            fe.cost.backward.total_flops * 1e-9)};
}

Outcome einsum_soundness() {
  std::mt19937_64 rng(505);
  double worst = 0.0;
  std::size_t plans = 0, count_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = ttl::testing::random_instance(rng, 4, 6);
    const core::EinsumExpr expr(inst.terms, inst.output);
    const Tensor64 reference = ttl::testing::naive_einsum(inst.terms, inst.output, inst.ptrs());
    std::vector<std::size_t> ids(inst.terms.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    std::vector<std::pair<std::size_t, std::size_t>> prefix;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> orders;
    ttl::testing::all_orders(ids, ids.size(), prefix, orders);
    for (const auto& order : orders) {
      const auto plan = core::plan_from_pairs(expr, inst.shapes(), order);
      core::MultiplyCounter counter;
      const auto [out, cost] = core::execute_plan(plan, inst.ptrs(), &counter);
      if (out.shape() != reference.shape()) throw DimensionError("plan output shape differs");
      worst = std::max(worst, relative_error(out, reference));
      if (counter.count != cost.total_flops) ++count_mismatch;
      ++plans;
    }
  }
  return {worst <= 1e-12 && count_mismatch == 0,
          fmt::format("100 expressions, {} contraction orders; worst relative error {:.2e} "
                      "(limit 1e-12); multiply-count mismatches {}",
                      plans, worst, count_mismatch)};
}

Outcome svd_optimality() {
  std::mt19937_64 rng(606);
  bool monotone = true;
  double worst_full = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor64 w = random_tensor({8, 6}, rng);
    double previous = std::numeric_limits<double>::infinity();
    for (Extent r = 1; r <= 6; ++r) {
      const Tensor64 approx = svd_from_dense(w, r).reconstruct();
      double sq = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) sq += (approx[i] - w[i]) * (approx[i] - w[i]);
      const double err = std::sqrt(sq);
      monotone = monotone && err <= previous;
      previous = err;
      if (r == 6) worst_full = std::max(worst_full, err);
    }
  }
  return {monotone && worst_full <= 1e-10,
          fmt::format("50 random 8x6 matrices; error non-increasing in r: {}; worst at r=6 {:.2e} "
                      "(limit 1e-10)",
                      monotone ? "yes" : "no", worst_full)};
}

Outcome toy_trainability() {
  bool pass = true;
  std::string detail;
  for (auto kind : {LayerKind::dense, LayerKind::ttm, LayerKind::svd}) {
    detail += fmt::format("{}:", to_string(kind));
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      LayerConfig up, down;
      up.kind = down.kind = kind;
      up.d_in = down.d_out = 32;
      up.d_out = down.d_in = 128;
      up.m = down.m = 2;
      up.rank = down.rank = 8;
      up.seed = 2 * seed;
      down.seed = 2 * seed + 1;
      auto block = nn::Block<double>::mlp(make_layer<double>(up), make_layer<double>(down));
      nn::TrainConfig cfg;
      cfg.data_seed = seed;
      const auto trace = nn::train_teacher_student(block, cfg);
      const double reduction =
          nn::trailing_mean(trace, 100) / nn::trailing_mean(trace, trace.size());
      pass = pass && trace.size() == 2000 && reduction >= 5.0;
      detail += fmt::format(" {:.2f}x", reduction);
    }
    detail += kind == LayerKind::svd ? " (need >= 5x each)" : "; ";
  }
  return {pass, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::pair<int, std::string> cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ttl_bench");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = bench::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str() + err.str()};
}

Outcome serialization() {
  const fs::path dir = fs::temp_directory_path() / "ttl_acceptance";
  fs::create_directories(dir);
  std::mt19937_64 rng(808);
  bool cores_exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    const RandomTTM t = random_ttm(rng);
    const fs::path p = dir / "cores.ttm";
    ttm::save_cores(p, t.cores);
    const auto back = ttm::load_cores(p);
    cores_exact = cores_exact && back.shape() == t.cores.shape() &&
                  back.ranks().ranks == t.cores.ranks().ranks;
    for (std::size_t k = 0; k < t.cores.m() && cores_exact; ++k) {
      const auto& a = t.cores.core(k);
      const auto& b = back.core(k);
      cores_exact = a.shape() == b.shape() &&
                    std::memcmp(a.data().data(), b.data().data(), a.bytes()) == 0;
    }
  }
  const fs::path cfgs = fs::path(TTL_SOURCE_DIR) / "configs";
  bool cli_same = true;
  std::string runs;
  const std::vector<std::vector<std::string>> commands = {
      {"params", "--config", (cfgs / "all_kinds.cfg").string()},
      {"gradcheck", "--config", (cfgs / "ttm_small.cfg").string(), "--seed", "5"},
      {"train-toy", "--config", (cfgs / "toy_ttm.cfg").string(), "--seed", "5", "--steps", "300"}};
  for (const auto& cmd : commands) {
    std::vector<std::string> first = cmd, second = cmd;
    first.insert(first.end(), {"--out", (dir / "a.csv").string()});
    second.insert(second.end(), {"--out", (dir / "b.csv").string()});
    const auto a = cli(first);
    const auto b = cli(second);
    const bool same = a.first == b.first && a.second == b.second &&
                      slurp(dir / "a.csv") == slurp(dir / "b.csv") &&
                      !slurp(dir / "a.csv").empty();
    cli_same = cli_same && same;
    runs += fmt::format(" {} {}", cmd[0], same ? "identical" : "DIFFERENT");
  }
  fs::remove_all(dir);
  return {cores_exact && cli_same,
          fmt::format("20 core files reload bit-exactly: {}; same-seed CLI runs:{}",
                      cores_exact ? "yes" : "no", runs)};
}

}  // namespace

int main() {
  bool all = true;
  all &= run_criterion(1, "dense equivalence", 30, dense_equivalence);
  all &= run_criterion(2, "gradient correctness", 120, gradient_correctness);
  all &= run_criterion(3, "formula reproduction", 60, formula_reproduction);
  all &= run_criterion(4, "strategy memory and flop ordering", 60, table3_ordering);
  all &= run_criterion(5, "einsum engine soundness", 120, einsum_soundness);
  all &= run_criterion(6, "svd optimality", 60, svd_optimality);
  all &= run_criterion(7, "toy trainability", 300, toy_trainability);
  all &= run_criterion(8, "serialization and reproducibility", 120, serialization);
  return all ? 0 : 1;
}
