#include "ttl/bench/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>

#include <fmt/format.h>

namespace ttl::bench {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

class Reader {
 public:
  Reader(std::string_view source, std::size_t line) : source_(source), line_(line) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(fmt::format("{}:{}: {}", source_, line_, what));
  }

  std::uint64_t number(std::string_view key, std::string_view text) const {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc{} || ptr != end) {
      fail(fmt::format("'{}' expects a non-negative integer, got '{}'", key, text));
    }
    return v;
  }

  Extent positive(std::string_view key, std::string_view text) const {
    const auto v = number(key, text);
    if (v == 0) fail(fmt::format("'{}' must be positive", key));
    return static_cast<Extent>(v);
  }

 private:
  std::string_view source_;
  std::size_t line_;
};

void set_layer_key(layers::LayerConfig& c, std::string_view key, std::string_view value,
                   const Reader& r) {
  try {
    if (key == "kind") {
      c.kind = layers::parse_kind(value);
    } else if (key == "d_in") {
      c.d_in = r.positive(key, value);
    } else if (key == "d_out") {
      c.d_out = r.positive(key, value);
    } else if (key == "m") {
      c.m = r.positive(key, value);
    } else if (key == "rank") {
      c.rank = r.positive(key, value);
    } else if (key == "ranks") {
      c.ranks.clear();
      for (auto part : split(value, ',')) c.ranks.push_back(r.positive(key, part));
    } else if (key == "pairs") {
      c.pairs.clear();
      for (auto part : split(value, ',')) {
        const auto x = part.find('x');
        if (x == std::string_view::npos) r.fail(fmt::format("pair '{}' is not IxJ", part));
        c.pairs.emplace_back(r.positive(key, trim(part.substr(0, x))),
                             r.positive(key, trim(part.substr(x + 1))));
      }
    } else if (key == "forward") {
      c.forward = layers::parse_forward(value);
    } else if (key == "backward") {
      c.backward = layers::parse_backward(value);
    } else if (key == "seed") {
      c.seed = r.number(key, value);
    } else {
      r.fail(fmt::format("unknown layer key '{}'", key));
    }
  } catch (const ParameterError& e) {
    r.fail(e.what());
  }
}

void set_top_key(RunConfig& c, std::string_view key, std::string_view value, const Reader& r) {
  if (key == "batch") {
    c.batch = r.positive(key, value);
  } else if (key == "seed") {
    c.seed = r.number(key, value);
  } else if (key == "repeats") {
    c.repeats = r.positive(key, value);
  } else if (key == "steps") {
    c.steps = r.positive(key, value);
  } else if (key == "teacher_hidden") {
    c.teacher_hidden = r.positive(key, value);
  } else if (key == "teacher_seed") {
    c.teacher_seed = r.number(key, value);
  } else {
    r.fail(fmt::format("unknown key '{}'", key));
  }
}

}  // namespace

RunConfig parse_config(std::istream& in, std::string_view source) {
  RunConfig cfg;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const Reader r(source, line);
    std::string_view text = raw;
    if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    text = trim(text);
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') r.fail("unterminated section header");
      const auto inner = trim(text.substr(1, text.size() - 2));
      if (inner.substr(0, 5) != "layer") r.fail(fmt::format("unknown section '[{}]'", inner));
      std::string name(trim(inner.substr(5)));
      if (name.empty()) name = fmt::format("layer{}", cfg.layers.size() + 1);
      for (const auto& l : cfg.layers) {
        if (l.name == name) r.fail(fmt::format("duplicate layer name '{}'", name));
      }
      cfg.layers.push_back({std::move(name), {}});
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) r.fail(fmt::format("expected 'key = value', got '{}'", text));
    const auto key = trim(text.substr(0, eq));
    const auto value = trim(text.substr(eq + 1));
    if (key.empty() || value.empty()) r.fail("empty key or value");
    if (cfg.layers.empty()) {
      set_top_key(cfg, key, value, r);
    } else {
      set_layer_key(cfg.layers.back().config, key, value, r);
    }
  }
  if (cfg.layers.empty()) throw FormatError(fmt::format("{}: no [layer] block", source));
  for (const auto& l : cfg.layers) {
    try {
      l.config.validate();
    } catch (const ParameterError& e) {
      throw ParameterError(fmt::format("layer '{}': {}", l.name, e.what()));
    } catch (const DimensionError& e) {
      throw DimensionError(fmt::format("layer '{}': {}", l.name, e.what()));
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open config '{}'", path.string()));
  return parse_config(in, path.string());
}

}  // namespace ttl::bench
