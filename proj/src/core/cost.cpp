#include "ttl/core/cost.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace ttl::core {

std::string CostReport::to_string() const {
  std::string out = fmt::format("total_flops={} peak_intermediate_bytes={} saved_activation_bytes={}\n",
                                total_flops, peak_intermediate_bytes, saved_activation_bytes);
  for (std::size_t i = 0; i < per_step.size(); ++i) {
    const auto& s = per_step[i];
    out += fmt::format("  [{}] {}  flops={} bytes={}{}\n", i, s.description, s.flops, s.bytes,
                       s.intermediate ? "" : " (output)");
  }
  return out;
}

CostReport sequence(const CostReport& first, const CostReport& second) {
  CostReport out = first;
  out.total_flops += second.total_flops;
  out.peak_intermediate_bytes =
      std::max(first.peak_intermediate_bytes, second.peak_intermediate_bytes);
  out.per_step.insert(out.per_step.end(), second.per_step.begin(), second.per_step.end());
  return out;
}

}  // namespace ttl::core
