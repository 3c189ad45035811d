#include "ttl/bench/commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "ttl/bench/alloc.hpp"
#include "ttl/core/threads.hpp"
#include "ttl/layers/dense.hpp"
#include "ttl/layers/gradcheck.hpp"
#include "ttl/layers/svd.hpp"
#include "ttl/layers/ttm_layer.hpp"
#include "ttl/nn/train.hpp"

namespace ttl::bench {

using layers::BackwardStrategy;
using layers::ForwardStrategy;
using layers::LayerConfig;
using layers::LayerKind;

namespace {

constexpr ForwardStrategy kForwards[] = {ForwardStrategy::einsum, ForwardStrategy::fixed};
constexpr BackwardStrategy kBackwards[] = {BackwardStrategy::autodiff,
                                           BackwardStrategy::full_einsum,
                                           BackwardStrategy::full_matrix};

bool runnable(ForwardStrategy f, BackwardStrategy b) {
  return !(f == ForwardStrategy::einsum && b == BackwardStrategy::autodiff);
}

template <typename T>
core::Tensor<T> normal_tensor(core::Shape shape, std::mt19937_64& rng) {
  core::Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

LayerConfig with_strategies(LayerConfig c, ForwardStrategy f, BackwardStrategy b) {
  c.forward = f;
  c.backward = b;
  return c;
}

std::string sci(double v) { return fmt::format("{:.3e}", v); }
std::string fixed3(double v) { return fmt::format("{:.3f}", v); }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(fmt::format("cannot write '{}'", path));
  f << text;
}

std::uint64_t run_seed(const RunConfig& config, const CommandOptions& options) {
  return options.seed.value_or(config.seed.value_or(0));
}

}  // namespace

double median(std::vector<double> samples) {
  if (samples.empty()) throw ParameterError("median of no samples");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

double BenchResult::median_forward_ms() const { return median(forward_ms); }
double BenchResult::median_backward_ms() const { return median(backward_ms); }
double BenchResult::median_total_ms() const {
  std::vector<double> total(forward_ms.size());
  for (std::size_t i = 0; i < total.size(); ++i) total[i] = forward_ms[i] + backward_ms[i];
  return median(std::move(total));
}

std::uint64_t BenchResult::modeled_peak_bytes() const {
  return cost.saved_activation_bytes() +
         std::max(cost.forward.peak_intermediate_bytes, cost.backward.peak_intermediate_bytes);
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
  const Extent batch = options.batch.value_or(kDefaultGradcheckBatch);
  const std::uint64_t seed = run_seed(config, options);
  out << fmt::format("gradcheck: batch {}, seed {}, float64, h = 1e-5, up to {} entries per tensor\n",
                     batch, seed, options.gradcheck_entries ? options.gradcheck_entries : 0);
  Table table;
  table.columns = {"layer", "forward", "backward", "check", "entries", "worst_error", "limit",
                   "status"};
  bool ok = true;
  auto record = [&](const std::string& layer, std::string_view f, std::string_view b,
                    const std::string& check, std::size_t entries, double err, double limit) {
    const bool pass = err <= limit;
    ok = ok && pass;
    table.add_row({layer, std::string(f), std::string(b), check, std::to_string(entries), sci(err),
                   sci(limit), pass ? "pass" : "FAIL"});
  };

  for (const auto& named : config.layers) {
    LayerConfig base = named.config;
    base.seed += seed;
    std::mt19937_64 rng(base.seed ^ 0x5eedULL);
    const auto x = normal_tensor<double>({batch, base.d_in}, rng);
    const auto g = normal_tensor<double>({batch, base.d_out}, rng);
    out << fmt::format("layer {}: {}\n", named.name, base.describe());

    if (base.kind != LayerKind::ttm) {
      auto layer = layers::make_layer<double>(base);
      const auto report = layers::finite_difference_check(*layer, x, g, 1e-5, 1e-8,
                                                          options.gradcheck_entries);
      for (const auto& t : report.tensors) {
        record(named.name, "-", "-", "fd " + t.name, t.entries_checked, t.worst_relative_error,
               kGradcheckTolerance);
      }
      continue;
    }

    // Same cores under every runnable strategy pair.
    const auto cores =
        ttm::init_cores<double>(base.factorized_shape(), base.ttm_ranks(), base.seed);
    core::Tensor<double> bias({base.d_out});
    std::vector<std::pair<std::string, layers::LayerGradients<double>>> grads;
    std::optional<core::Tensor<double>> reference_y;
    for (auto f : kForwards) {
      for (auto b : kBackwards) {
        if (!runnable(f, b)) continue;
        layers::TTMLayer<double> layer(cores, bias, f, b);
        const auto y = layer.forward(x);
        const std::string pair = fmt::format("{}/{}", layers::to_string(f), layers::to_string(b));
        if (reference_y) {
          record(named.name, layers::to_string(f), layers::to_string(b), "forward vs einsum",
                 y.size(), layers::normwise_relative_error(y, *reference_y), kForwardTolerance);
        } else {
          reference_y = y;
        }
        grads.emplace_back(pair, layer.backward(g));
        // One finite-difference sweep per backward strategy.
        const auto sweep_forward =
            b == BackwardStrategy::autodiff ? ForwardStrategy::fixed : base.forward;
        if (f == sweep_forward) {
          const auto report = layers::finite_difference_check(layer, x, g, 1e-5, 1e-8,
                                                              options.gradcheck_entries);
          for (const auto& t : report.tensors) {
            record(named.name, layers::to_string(f), layers::to_string(b), "fd " + t.name,
                   t.entries_checked, t.worst_relative_error, kGradcheckTolerance);
          }
        }
      }
    }
    double worst = 0.0;
    std::string worst_pair = "-";
    for (std::size_t i = 0; i < grads.size(); ++i) {
      for (std::size_t j = i + 1; j < grads.size(); ++j) {
        const double d = layers::gradient_difference(grads[i].second, grads[j].second);
        if (d >= worst) {
          worst = d;
          worst_pair = grads[i].first + " vs " + grads[j].first;
        }
      }
    }
    record(named.name, "all", "all", "gradient agreement (" + worst_pair + ")", grads.size(), worst,
           kAgreementTolerance);
  }
  out << table.markdown();
  if (!options.out_path.empty()) write_file(options.out_path, table.csv());
  out << (ok ? "result: PASS\n" : "result: FAIL\n");
  return ok ? kSuccess : kCheckFailed;
}

// ---------------------------------------------------------------- bench

namespace {

template <typename Fn>
double time_ms(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void measure(BenchResult& r, layers::LinearLayer<float>& layer, const core::Tensor<float>& x,
             const core::Tensor<float>& g, std::size_t repeats, bool model_only) {
  if (model_only) {
    r.status = "model only";
    return;
  }
  try {
    for (std::size_t i = 0; i < kWarmups; ++i) {
      layer.forward(x);
      layer.backward(g);
    }
    r.warmups = kWarmups;
    std::uint64_t peak = 0;
    for (std::size_t i = 0; i < repeats; ++i) {
      layer.parameters_changed();
      const std::uint64_t base = live_allocated_bytes();
      reset_allocation_peak();
      {
        core::Tensor<float> y;
        r.forward_ms.push_back(time_ms([&] { y = layer.forward(x); }));
        layers::LayerGradients<float> grads;
        r.backward_ms.push_back(time_ms([&] { grads = layer.backward(g); }));
      }
      peak = std::max(peak, peak_allocated_bytes() - base);
    }
    r.repeats = repeats;
    r.measured_peak_bytes = peak;
    r.status = "ok";
  } catch (const std::bad_alloc&) {
    r.forward_ms.clear();
    r.backward_ms.clear();
    r.status = "out of memory";
  }
  layer.parameters_changed();
}

}  // namespace

std::vector<BenchResult> run_bench(const NamedLayer& named, Extent batch, std::size_t repeats,
                                   bool model_only) {
  const LayerConfig& cfg = named.config;
  std::vector<BenchResult> results;
  std::mt19937_64 rng(cfg.seed ^ 0xbe7cULL);
  std::optional<core::Tensor<float>> x, g;
  if (!model_only) {
    x = normal_tensor<float>({batch, cfg.d_in}, rng);
    g = normal_tensor<float>({batch, cfg.d_out}, rng);
  }
  auto base_result = [&](std::string f, std::string b, const LayerConfig& c) {
    BenchResult r;
    r.layer = named.name;
    r.description = c.describe();
    r.forward = std::move(f);
    r.backward = std::move(b);
    r.batch = batch;
    r.threads = core::thread_limit();
    r.cost = layers::modeled_cost(c, batch, sizeof(float));
    return r;
  };

  if (cfg.kind != LayerKind::ttm) {
    BenchResult r = base_result("-", "-", cfg);
    if (!model_only) {
      auto layer = layers::make_layer<float>(cfg);
      measure(r, *layer, *x, *g, repeats, false);
    } else {
      r.status = "model only";
    }
    results.push_back(std::move(r));
    return results;
  }

  std::optional<ttm::TTMCores<float>> cores;
  if (!model_only) cores = ttm::init_cores<float>(cfg.factorized_shape(), cfg.ttm_ranks(), cfg.seed);
  for (auto f : kForwards) {
    for (auto b : kBackwards) {
      const LayerConfig c = with_strategies(cfg, f, b);
      BenchResult r =
          base_result(std::string(layers::to_string(f)), std::string(layers::to_string(b)), c);
      if (!runnable(f, b)) {
        r.status = "modeled only (not runnable)";
      } else if (model_only) {
        r.status = "model only";
      } else {
        layers::TTMLayer<float> layer(*cores, core::Tensor<float>({cfg.d_out}), f, b);
        measure(r, layer, *x, *g, repeats, false);
      }
      results.push_back(std::move(r));
    }
  }
  return results;
}

Table bench_table(const std::vector<BenchResult>& results) {
  Table t;
  t.columns = {"layer",     "config",    "forward",       "backward",         "status",
               "batch",     "threads",   "warmups",       "repeats",          "fwd_ms",
               "bwd_ms",    "total_ms",  "fwd_gflop",     "bwd_gflop",        "saved_bytes",
               "model_peak_bytes",       "measured_peak_bytes"};
  for (const auto& r : results) {
    const bool timed = r.timed();
    t.add_row({r.layer, r.description, r.forward, r.backward, r.status, std::to_string(r.batch),
               std::to_string(r.threads), std::to_string(r.warmups), std::to_string(r.repeats),
               timed ? fixed3(r.median_forward_ms()) : "-",
               timed ? fixed3(r.median_backward_ms()) : "-",
               timed ? fixed3(r.median_total_ms()) : "-",
               fmt::format("{:.4f}", static_cast<double>(r.cost.forward.total_flops) * 1e-9),
               fmt::format("{:.4f}", static_cast<double>(r.cost.backward.total_flops) * 1e-9),
               std::to_string(r.cost.saved_activation_bytes()),
               std::to_string(r.modeled_peak_bytes()),
               r.measured_peak_bytes ? std::to_string(*r.measured_peak_bytes) : "-"});
  }
  return t;
}

int cmd_bench(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
  const Extent batch = options.batch.value_or(config.batch.value_or(kDefaultBenchBatch));
  const std::size_t repeats = options.repeats.value_or(config.repeats.value_or(kDefaultRepeats));
  const char* batch_source = options.batch ? "--batch" : config.batch ? "config" : "default";
  out << fmt::format(
      "bench: batch {} ({}), float32, threads {}, {} warmups, median of {} repeats{}\n", batch,
      batch_source, core::thread_limit(), kWarmups, repeats,
      options.model_only ? ", model only" : "");
  std::vector<BenchResult> all;
  for (const auto& named : config.layers) {
    if (options.explain) {
      out << fmt::format("\n## {}\n", named.name);
      if (named.config.kind == LayerKind::ttm) {
        const auto cores =
            ttm::init_cores<float>(named.config.factorized_shape(), named.config.ttm_ranks(), 0);
        for (auto f : kForwards) {
          for (auto b : kBackwards) {
            if (!runnable(f, b)) continue;
            layers::TTMLayer<float> layer(cores, core::Tensor<float>({named.config.d_out}), f, b);
            out << layer.explain(batch) << "\n";
          }
        }
      } else {
        out << layers::make_layer<float>(named.config)->explain(batch);
      }
      out << "\n";
    }
    auto rows = run_bench(named, batch, repeats, options.model_only);
    all.insert(all.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  }
  const Table table = bench_table(all);
  out << table.markdown();
  if (!options.out_path.empty()) write_file(options.out_path, table.csv());
  return kSuccess;
}

// ---------------------------------------------------------------- params

namespace {

// Weight count read back from freshly built buffers rather than from the formula.
std::uint64_t enumerated_weights(const LayerConfig& c) {
  switch (c.kind) {
    case LayerKind::dense:
      return layers::DenseLayer<float>(core::Tensor<float>({c.d_in, c.d_out}),
                                       core::Tensor<float>({c.d_out}))
          .weight_count();
    case LayerKind::svd:
      return layers::SVDLayer<float>(core::Tensor<float>({c.rank, c.d_out}),
                                     core::Tensor<float>({c.d_in, c.rank}),
                                     core::Tensor<float>({c.d_out}))
          .weight_count();
    case LayerKind::ttm: {
      const auto fs = c.factorized_shape();
      const auto ranks = c.ttm_ranks();
      std::vector<core::Tensor<float>> buffers;
      for (std::size_t k = 0; k < fs.m(); ++k) {
        buffers.emplace_back(core::Shape{ranks.ranks[k], fs.pairs[k].first, fs.pairs[k].second,
                                         ranks.ranks[k + 1]});
      }
      std::uint64_t n = 0;
      for (const auto& b : buffers) n += b.size();
      return n;
    }
  }
  return 0;
}

std::string structure(const LayerConfig& c) {
  switch (c.kind) {
    case LayerKind::dense: return "-";
    case LayerKind::svd: return fmt::format("r={}", c.rank);
    case LayerKind::ttm:
      return fmt::format("pairs={} ranks={}", c.factorized_shape().str(), c.ttm_ranks().str());
  }
  return "-";
}

}  // namespace

Table params_table(const RunConfig& config) {
  Table t;
  t.columns = {"layer",  "kind",        "d_in",          "d_out",        "structure",
               "weights", "enumerated", "bias",          "total",        "dense_weights",
               "compression_rate"};
  for (const auto& named : config.layers) {
    const auto& c = named.config;
    const std::uint64_t w = c.weight_count();
    const std::uint64_t dense = std::uint64_t{c.d_in} * c.d_out;
    t.add_row({named.name, std::string(layers::to_string(c.kind)), std::to_string(c.d_in),
               std::to_string(c.d_out), structure(c), std::to_string(w),
               std::to_string(enumerated_weights(c)), std::to_string(c.d_out),
               std::to_string(w + c.d_out), std::to_string(dense),
               fmt::format("{:.6f}", static_cast<double>(w) / static_cast<double>(dense))});
  }
  return t;
}

int cmd_params(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
  const Table table = params_table(config);
  out << table.markdown();
  if (!options.out_path.empty()) write_file(options.out_path, table.csv());
  for (const auto& row : table.rows) {
    if (row[5] != row[6]) {
      out << fmt::format("layer {}: formula {} != enumerated {}\n", row[0], row[5], row[6]);
      return kCheckFailed;
    }
  }
  return kSuccess;
}

// ---------------------------------------------------------------- train-toy

int cmd_train_toy(const RunConfig& config, const CommandOptions& options, std::ostream& out,
                  std::ostream& err) {
  const std::uint64_t seed = run_seed(config, options);
  nn::Block<double> block;
  std::string kinds;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    LayerConfig c = config.layers[i].config;
    c.seed += seed;
    if (i) {
      block.add_gelu();
      kinds += "+";
    }
    block.add(layers::make_layer<double>(c));
    kinds += layers::to_string(c.kind);
  }
  nn::TrainConfig tc;
  tc.steps = options.steps.value_or(config.steps.value_or(kDefaultTrainSteps));
  tc.batch = options.batch.value_or(config.batch.value_or(kDefaultTrainBatch));
  tc.data_seed = seed;
  tc.teacher_seed = config.teacher_seed.value_or(tc.teacher_seed);
  tc.teacher_hidden = config.teacher_hidden.value_or(4 * block.d_in());

  std::vector<nn::TracePoint> trace;
  try {
    trace = nn::train_teacher_student(block, tc);
  } catch (const TrainingError& e) {
    err << fmt::format("training diverged at step {}: {}\n", e.step(), e.what());
    return kCheckFailed;
  }

  std::ofstream file;
  if (!options.out_path.empty()) {
    file.open(options.out_path, std::ios::binary);
    if (!file) throw FormatError(fmt::format("cannot write '{}'", options.out_path));
  }
  nn::write_trace_csv(options.out_path.empty() ? out : file, trace);

  const std::string head = fmt::format(
      "# train-toy {}: steps {}, batch {}, seed {}, teacher {}->{}->{} seed {}", kinds, tc.steps,
      tc.batch, seed, block.d_in(), tc.teacher_hidden, block.d_out(), tc.teacher_seed);
  if (tc.steps < 2 * kTrailingWindow) {
    out << fmt::format("{}, initial loss {:.6g}: insufficient steps for two {}-step windows, no "
                       "pass/fail\n",
                       head, trace.front().loss, kTrailingWindow);
    return kSuccess;
  }
  const double initial = nn::trailing_mean(trace, kTrailingWindow, kTrailingWindow);
  const double final = nn::trailing_mean(trace, trace.size(), kTrailingWindow);
  const double reduction = initial / final;
  const bool pass = reduction >= kRequiredReduction;
  out << fmt::format("{}, trailing mean initial {:.6g} final {:.6g}, reduction {:.2f}x (need {}x): "
                     "{}\n",
                     head, initial, final, reduction, kRequiredReduction, pass ? "PASS" : "FAIL");
  return pass ? kSuccess : kCheckFailed;
}

}  // namespace ttl::bench
