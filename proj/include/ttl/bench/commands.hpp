#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ttl/bench/config.hpp"
#include "ttl/bench/table.hpp"

namespace ttl::bench {

enum ExitCode : int { kSuccess = 0, kCheckFailed = 1, kUsageError = 2 };

inline constexpr Extent kDefaultBenchBatch = 8192;
inline constexpr Extent kDefaultGradcheckBatch = 4;
inline constexpr Extent kDefaultTrainBatch = 64;
inline constexpr std::size_t kDefaultRepeats = 20;
inline constexpr std::size_t kWarmups = 3;
inline constexpr std::size_t kDefaultTrainSteps = 2000;
inline constexpr std::size_t kDefaultGradcheckEntries = 64;
inline constexpr double kGradcheckTolerance = 1e-5;
inline constexpr double kAgreementTolerance = 1e-10;
inline constexpr double kForwardTolerance = 1e-12;
inline constexpr std::size_t kTrailingWindow = 100;
inline constexpr double kRequiredReduction = 5.0;

/// Command-line overrides; unset values fall back to the config file, then defaults.
struct CommandOptions {
  std::optional<Extent> batch;
  std::optional<std::size_t> repeats;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string out_path;
  bool explain = false;
  bool model_only = false;
  std::size_t gradcheck_entries = kDefaultGradcheckEntries;
};

/// One forward x backward combination of one layer.
struct BenchResult {
  std::string layer;
  std::string description;
  std::string forward;
  std::string backward;
  std::string status;
  Extent batch = 0;
  unsigned threads = 1;
  std::size_t warmups = 0;
  std::size_t repeats = 0;
  std::vector<double> forward_ms;
  std::vector<double> backward_ms;
  layers::StrategyCost cost;
  std::optional<std::uint64_t> measured_peak_bytes;

  bool timed() const { return !forward_ms.empty(); }
  double median_forward_ms() const;
  double median_backward_ms() const;
  double median_total_ms() const;
  /// Saved activations plus the larger of the forward and backward intermediate peaks.
  std::uint64_t modeled_peak_bytes() const;
};

double median(std::vector<double> samples);

/// Runs every forward x backward combination of a ttm layer (einsum + autodiff as a
/// modeled-only row), or the single strategy of a dense / svd layer, in float32.
std::vector<BenchResult> run_bench(const NamedLayer& layer, Extent batch, std::size_t repeats,
                                   bool model_only);
Table bench_table(const std::vector<BenchResult>& results);
Table params_table(const RunConfig& config);

int cmd_gradcheck(const RunConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_bench(const RunConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_params(const RunConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_train_toy(const RunConfig& config, const CommandOptions& options, std::ostream& out,
                  std::ostream& err);

/// Full command line: `ttl_bench <gradcheck|bench|params|train-toy> --config PATH ...`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ttl::bench
