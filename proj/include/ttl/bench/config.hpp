#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttl/layers/factory.hpp"

namespace ttl::bench {

using core::Extent;

struct NamedLayer {
  std::string name;
  layers::LayerConfig config;
};

/// Run file: top-level `key = value` lines followed by `[layer NAME]` blocks.
///
///   batch = 8192
///   [layer fc]
///   kind = ttm
///   d_in = 768
///   d_out = 3072
///   m = 4
///   rank = 16
///
/// Top-level keys: batch, seed, repeats, steps, teacher_hidden, teacher_seed.
/// Layer keys: kind, d_in, d_out, m, rank, ranks (comma list), pairs (4x8,6x8,...),
/// forward, backward, seed. `#` starts a comment.
struct RunConfig {
  std::optional<Extent> batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeats;
  std::optional<std::size_t> steps;
  std::optional<Extent> teacher_hidden;
  std::optional<std::uint64_t> teacher_seed;
  std::vector<NamedLayer> layers;
};

/// Throws FormatError (syntax, unknown key, bad number) with source:line, and
/// ParameterError / DimensionError from layer validation.
RunConfig parse_config(std::istream& in, std::string_view source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace ttl::bench
