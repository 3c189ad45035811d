#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ttl::core {

struct CostStep {
  std::string description;
  std::uint64_t flops = 0;
  // Size of the buffer this step produces.
  std::uint64_t bytes = 0;
  // False when the step writes a caller-visible output (excluded from peak accounting).
  bool intermediate = true;
};

/// FLOP and memory accounting for one strategy run.
///
/// One FLOP is one scalar multiply. Peak bytes cover intermediates only, each
/// freed right after its last consumer; operand and output buffers are excluded.
struct CostReport {
  std::uint64_t total_flops = 0;
  std::uint64_t peak_intermediate_bytes = 0;
  std::uint64_t saved_activation_bytes = 0;
  std::vector<CostStep> per_step;

  void add_step(std::string description, std::uint64_t flops, std::uint64_t bytes,
                bool intermediate) {
    total_flops += flops;
    per_step.push_back({std::move(description), flops, bytes, intermediate});
  }

  std::uint64_t largest_intermediate_bytes() const {
    std::uint64_t largest = 0;
    for (const auto& s : per_step) {
      if (s.intermediate && s.bytes > largest) largest = s.bytes;
    }
    return largest;
  }

  std::string to_string() const;
};

/// Report for `first` followed by `second`: flops and steps add, peaks take the
/// max, saved activations come from `first` (the pass that saves them).
CostReport sequence(const CostReport& first, const CostReport& second);

}  // namespace ttl::core
