#include "ttl/ttm/ttm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "ttl/core/einsum.hpp"

namespace ttl::ttm {

namespace {

std::vector<Extent> prime_factors(Extent n) {
  std::vector<Extent> out;
  for (Extent p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      out.push_back(p);
      n /= p;
    }
  }
  if (n > 1) out.push_back(n);
  return out;
}

// Largest factor into the currently smallest bucket; lowest index wins ties.
std::vector<Extent> fill_buckets(Extent n, std::size_t m) {
  std::vector<Extent> buckets(m, 1);
  auto factors = prime_factors(n);
  std::sort(factors.rbegin(), factors.rend());
  for (Extent f : factors) {
    auto smallest = std::min_element(buckets.begin(), buckets.end());
    *smallest *= f;
  }
  return buckets;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

Extent parse_extent(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw FormatError(fmt::format("bad integer '{}' in core header", s));
  }
  if (used != s.size() || v == 0) throw FormatError(fmt::format("bad integer '{}' in core header", s));
  return static_cast<Extent>(v);
}

}  // namespace

Extent FactorizedShape::d_in() const {
  Extent p = 1;
  for (auto [i, j] : pairs) p *= i;
  return p;
}

Extent FactorizedShape::d_out() const {
  Extent p = 1;
  for (auto [i, j] : pairs) p *= j;
  return p;
}

Shape FactorizedShape::in_extents() const {
  Shape s;
  for (auto [i, j] : pairs) s.push_back(i);
  return s;
}

Shape FactorizedShape::out_extents() const {
  Shape s;
  for (auto [i, j] : pairs) s.push_back(j);
  return s;
}

void FactorizedShape::validate() const {
  if (pairs.empty()) throw ParameterError("a factorized shape needs at least one core");
  for (auto [i, j] : pairs) {
    if (i == 0 || j == 0) throw ParameterError(fmt::format("zero factor in shape {}", str()));
  }
}

std::string FactorizedShape::str() const {
  std::string out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    out += fmt::format("{}{}x{}", k ? "," : "", pairs[k].first, pairs[k].second);
  }
  return out;
}

TTMRanks TTMRanks::uniform(std::size_t m, Extent r) {
  TTMRanks out;
  out.ranks.assign(m + 1, r);
  out.ranks.front() = 1;
  out.ranks.back() = 1;
  return out;
}

Extent TTMRanks::max_internal() const {
  Extent r = 1;
  for (std::size_t k = 1; k + 1 < ranks.size(); ++k) r = std::max(r, ranks[k]);
  return r;
}

void TTMRanks::validate(std::size_t m) const {
  if (ranks.size() != m + 1) {
    throw ParameterError(fmt::format("{} cores need {} ranks, got {}", m, m + 1, ranks.size()));
  }
  if (ranks.front() != 1 || ranks.back() != 1) {
    throw ParameterError(fmt::format("boundary ranks must be 1, got {}", str()));
  }
  for (Extent r : ranks) {
    if (r == 0) throw ParameterError(fmt::format("zero rank in {}", str()));
  }
}

std::string TTMRanks::str() const {
  std::string out;
  for (std::size_t k = 0; k < ranks.size(); ++k) out += fmt::format("{}{}", k ? "," : "", ranks[k]);
  return out;
}

template <typename T>
TTMCores<T>::TTMCores(FactorizedShape shape, TTMRanks ranks, std::vector<Tensor<T>> cores)
    : shape_(std::move(shape)), ranks_(std::move(ranks)), cores_(std::move(cores)) {
  shape_.validate();
  ranks_.validate(shape_.m());
  if (cores_.size() != shape_.m()) {
    throw DimensionError(fmt::format("expected {} cores, got {}", shape_.m(), cores_.size()));
  }
  for (std::size_t k = 0; k < cores_.size(); ++k) {
    if (cores_[k].shape() != core_shape(k)) {
      throw DimensionError(fmt::format("core {} has shape {}, expected {}", k,
                                       core::shape_string(cores_[k].shape()),
                                       core::shape_string(core_shape(k))));
    }
  }
}

template <typename T>
Shape TTMCores<T>::core_shape(std::size_t k) const {
  return {ranks_.ranks.at(k), shape_.pairs.at(k).first, shape_.pairs.at(k).second,
          ranks_.ranks.at(k + 1)};
}

template <typename T>
std::size_t TTMCores<T>::element_total() const {
  std::size_t n = 0;
  for (const auto& c : cores_) n += c.size();
  return n;
}

FactorizedShape factorize_shapes(Extent d_in, Extent d_out, std::size_t m) {
  if (m == 0) throw ParameterError("core count must be at least 1");
  if (d_in == 0 || d_out == 0) throw ParameterError("dimensions must be positive");
  auto in = fill_buckets(d_in, m);
  auto out = fill_buckets(d_out, m);
  std::sort(in.begin(), in.end());
  std::sort(out.rbegin(), out.rend());
  std::vector<std::pair<Extent, Extent>> paired;
  for (std::size_t k = 0; k < m; ++k) paired.emplace_back(in[k], out[k]);

  // Smallest products at both ends, largest in the middle.
  std::stable_sort(paired.begin(), paired.end(), [](const auto& a, const auto& b) {
    return a.first * a.second < b.first * b.second;
  });
  FactorizedShape fs;
  fs.pairs.resize(m);
  std::size_t front = 0, back = m;
  for (std::size_t k = 0; k < m; ++k) {
    if (k % 2 == 0) {
      fs.pairs[front++] = paired[k];
    } else {
      fs.pairs[--back] = paired[k];
    }
  }
  return fs;
}

std::uint64_t ttm_param_count(const FactorizedShape& fs, const TTMRanks& ranks) {
  fs.validate();
  ranks.validate(fs.m());
  std::uint64_t n = 0;
  for (std::size_t k = 0; k < fs.m(); ++k) {
    n += std::uint64_t{ranks.ranks[k]} * fs.pairs[k].first * fs.pairs[k].second *
         ranks.ranks[k + 1];
  }
  return n;
}

double compression_rate(const FactorizedShape& fs, const TTMRanks& ranks) {
  const double dense = static_cast<double>(fs.d_in()) * static_cast<double>(fs.d_out());
  return static_cast<double>(ttm_param_count(fs, ranks)) / dense;
}

TTMLabels::TTMLabels(std::size_t m) {
  static constexpr std::string_view alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
  if (m == 0 || m > kMaxCores) {
    throw ParameterError(fmt::format("core count must be in [1, {}], got {}", kMaxCores, m));
  }
  batch = alphabet[0];
  i = std::string(alphabet.substr(1, m));
  j = std::string(alphabet.substr(1 + m, m));
  r = std::string(alphabet.substr(1 + 2 * m, m - 1));
}

std::string TTMLabels::core(std::size_t k) const {
  std::string out;
  if (k > 0) out += r[k - 1];
  out += i[k];
  out += j[k];
  if (k + 1 < i.size()) out += r[k];
  return out;
}

template <typename T>
Tensor<T> TTMLabels::squeeze(const Tensor<T>& core, std::size_t k, std::size_t m) {
  const Shape& s = core.shape();
  Shape out;
  if (k > 0) out.push_back(s[0]);
  out.push_back(s[1]);
  out.push_back(s[2]);
  if (k + 1 < m) out.push_back(s[3]);
  return core.reshaped(out);
}

template <typename T>
Tensor<T> TTMLabels::unsqueeze(Tensor<T> squeezed, const Shape& core_shape) {
  return std::move(squeezed).reshaped(core_shape);
}

template <typename T>
Tensor<T> ttm_to_dense(const TTMCores<T>& cores) {
  const std::size_t m = cores.m();
  const TTMLabels labels(m);
  std::vector<Tensor<T>> squeezed;
  std::vector<std::string> terms;
  std::vector<Shape> shapes;
  for (std::size_t k = 0; k < m; ++k) {
    squeezed.push_back(TTMLabels::squeeze(cores.core(k), k, m));
    terms.push_back(labels.core(k));
    shapes.push_back(squeezed.back().shape());
  }
  core::Operands<T> ops;
  for (const auto& t : squeezed) ops.push_back(&t);
  const core::EinsumExpr expr(terms, labels.i + labels.j);
  const auto plan = core::optimize_path(expr, shapes, core::auto_mode(m));
  auto [dense, cost] = core::execute_plan(plan, ops);
  return std::move(dense).reshaped({cores.shape().d_in(), cores.shape().d_out()});
}

double init_core_stddev(const FactorizedShape& fs, const TTMRanks& ranks) {
  const double m = static_cast<double>(fs.m());
  const double var_w = 2.0 / static_cast<double>(fs.d_in() + fs.d_out());
  const double r = static_cast<double>(ranks.max_internal());
  return std::pow(var_w / std::pow(r, m - 1.0), 1.0 / (2.0 * m));
}

template <typename T>
TTMCores<T> init_cores(const FactorizedShape& fs, const TTMRanks& ranks, std::uint64_t seed) {
  fs.validate();
  ranks.validate(fs.m());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, init_core_stddev(fs, ranks));
  std::vector<Tensor<T>> cores;
  for (std::size_t k = 0; k < fs.m(); ++k) {
    Tensor<T> core({ranks.ranks[k], fs.pairs[k].first, fs.pairs[k].second, ranks.ranks[k + 1]});
    for (auto& v : core.data()) v = static_cast<T>(dist(rng));
    cores.push_back(std::move(core));
  }
  return TTMCores<T>(fs, ranks, std::move(cores));
}

void write_cores(std::ostream& out, const TTMCores<double>& cores) {
  out << fmt::format("TTM1 m={} ranks={} pairs={} dtype=f64\n", cores.m(), cores.ranks().str(),
                     cores.shape().str());
  std::vector<char> bytes;
  for (const auto& core : cores.cores()) {
    bytes.resize(core.size() * 8);
    for (std::size_t n = 0; n < core.size(); ++n) {
      auto bits = std::bit_cast<std::uint64_t>(core[n]);
      for (int b = 0; b < 8; ++b) bytes[n * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw FormatError("failed writing core data");
}

TTMCores<double> read_cores(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("missing core file header");
  const auto fields = split(header, ' ');
  if (fields.size() != 5 || fields[0] != "TTM1") {
    throw FormatError(fmt::format("unrecognized core file header '{}'", header));
  }
  auto value = [&](std::size_t idx, std::string_view key) {
    const std::string prefix = std::string(key) + "=";
    if (fields[idx].rfind(prefix, 0) != 0) {
      throw FormatError(fmt::format("expected '{}' in header '{}'", prefix, header));
    }
    return fields[idx].substr(prefix.size());
  };
  const std::size_t m = parse_extent(value(1, "m"));
  TTMRanks ranks;
  for (const auto& r : split(value(2, "ranks"), ',')) ranks.ranks.push_back(parse_extent(r));
  FactorizedShape fs;
  for (const auto& p : split(value(3, "pairs"), ',')) {
    const auto x = p.find('x');
    if (x == std::string::npos) throw FormatError(fmt::format("bad pair '{}'", p));
    fs.pairs.emplace_back(parse_extent(p.substr(0, x)), parse_extent(p.substr(x + 1)));
  }
  if (value(4, "dtype") != "f64") throw FormatError("only dtype=f64 is supported");
  if (fs.m() != m) throw FormatError(fmt::format("header says m={} but lists {} pairs", m, fs.m()));
  try {
    fs.validate();
    ranks.validate(m);
  } catch (const ParameterError& e) {
    throw FormatError(e.what());
  }

  std::vector<Tensor<double>> cores;
  std::vector<char> bytes;
  for (std::size_t k = 0; k < m; ++k) {
    Tensor<double> core({ranks.ranks[k], fs.pairs[k].first, fs.pairs[k].second, ranks.ranks[k + 1]});
    bytes.resize(core.size() * 8);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
      throw FormatError(fmt::format("core {} data is truncated", k));
    }
    for (std::size_t n = 0; n < core.size(); ++n) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= std::uint64_t{static_cast<unsigned char>(bytes[n * 8 + b])} << (8 * b);
      }
      core[n] = std::bit_cast<double>(bits);
    }
    cores.push_back(std::move(core));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after core data");
  return TTMCores<double>(fs, ranks, std::move(cores));
}

void save_cores(const std::filesystem::path& path, const TTMCores<double>& cores) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot open '{}' for writing", path.string()));
  write_cores(out, cores);
}

TTMCores<double> load_cores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
  return read_cores(in);
}

template class TTMCores<float>;
template class TTMCores<double>;
template Tensor<float> ttm_to_dense(const TTMCores<float>&);
template Tensor<double> ttm_to_dense(const TTMCores<double>&);
template TTMCores<float> init_cores(const FactorizedShape&, const TTMRanks&, std::uint64_t);
template TTMCores<double> init_cores(const FactorizedShape&, const TTMRanks&, std::uint64_t);
template Tensor<float> TTMLabels::squeeze(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> TTMLabels::squeeze(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> TTMLabels::unsqueeze(Tensor<float>, const Shape&);
template Tensor<double> TTMLabels::unsqueeze(Tensor<double>, const Shape&);

}  // namespace ttl::ttm
