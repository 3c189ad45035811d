#include "ttl/core/contract.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ttl/core/einsum.hpp"
#include "ttl/core/threads.hpp"

namespace ttl::core {

namespace {

constexpr std::string_view kLabelAlphabet =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";

// Inner-loop length below which the dot-product form beats the axpy form.
constexpr std::size_t kAxpyMinWidth = 8;

struct LabelTable {
  std::array<std::size_t, 128> stride{};
  std::array<Extent, 128> extent{};
  std::array<bool, 128> present{};

  static std::size_t key(char c) { return static_cast<unsigned char>(c); }
  bool has(char c) const { return present[key(c)]; }
};

void check_labels(std::string_view labels, std::size_t rank, const char* what) {
  if (labels.size() != rank) {
    throw DimensionError(fmt::format("{} has rank {} but {} labels '{}'", what, rank,
                                     labels.size(), labels));
  }
  std::array<bool, 128> seen{};
  for (char c : labels) {
    auto k = static_cast<unsigned char>(c);
    if (k >= 128 || seen[k]) {
      throw ExpressionError(fmt::format("repeated or invalid label '{}' in '{}'", c, labels));
    }
    seen[k] = true;
  }
}

LabelTable describe(const Shape& shape, std::string_view labels) {
  LabelTable t;
  const Shape strides = row_major_strides(shape);
  for (std::size_t axis = 0; axis < labels.size(); ++axis) {
    const auto k = LabelTable::key(labels[axis]);
    t.present[k] = true;
    t.stride[k] = strides[axis];
    t.extent[k] = shape[axis];
  }
  return t;
}

// Copies `src` into `dst` so that dst axis d walks extents[d] with source stride strides[d].
template <typename T>
void gather(const T* src, std::span<const Extent> extents, std::span<const std::size_t> strides,
            T* dst) {
  const std::size_t rank = extents.size();
  if (rank == 0) {
    dst[0] = src[0];
    return;
  }
  const std::size_t inner = extents[rank - 1];
  const std::size_t inner_stride = strides[rank - 1];
  const std::size_t outer = element_count(extents) / inner;
  std::vector<std::size_t> index(rank, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    const T* s = src + offset;
    if (inner_stride == 1) {
      std::copy(s, s + inner, dst);
    } else {
      for (std::size_t j = 0; j < inner; ++j) dst[j] = s[j * inner_stride];
    }
    dst += inner;
    for (std::size_t axis = rank - 1; axis-- > 0;) {
      if (++index[axis] < extents[axis]) {
        offset += strides[axis];
        break;
      }
      offset -= strides[axis] * (extents[axis] - 1);
      index[axis] = 0;
    }
  }
}

bool is_row_major(std::span<const Extent> extents, std::span<const std::size_t> strides) {
  std::size_t expected = 1;
  for (std::size_t axis = extents.size(); axis-- > 0;) {
    if (extents[axis] != 1 && strides[axis] != expected) return false;
    expected *= extents[axis];
  }
  return true;
}

// Returns a pointer to `src` laid out as `order`, packing into `buffer` only if needed.
// Labels absent from the source are broadcast (stride 0).
template <typename T>
const T* pack(const Tensor<T>& src, const LabelTable& table, const LabelExtents& extents,
              std::string_view order, std::vector<T>& buffer) {
  Shape ext;
  std::vector<std::size_t> strides;
  ext.reserve(order.size());
  for (char c : order) {
    ext.push_back(extents[c]);
    strides.push_back(table.has(c) ? table.stride[LabelTable::key(c)] : 0);
  }
  const bool broadcasts = std::any_of(order.begin(), order.end(),
                                      [&](char c) { return !table.has(c) && extents[c] > 1; });
  if (!broadcasts && is_row_major(ext, strides) && element_count(ext) == src.size()) {
    return src.data().data();
  }
  buffer.resize(element_count(ext));
  gather(src.data().data(), ext, strides, buffer.data());
  return buffer.data();
}

std::string labels_for(std::size_t count, std::size_t offset) {
  if (offset + count > kLabelAlphabet.size()) {
    throw DimensionError("contraction involves more than 52 distinct axes");
  }
  return std::string(kLabelAlphabet.substr(offset, count));
}

}  // namespace

template <typename T>
Tensor<T> contract_labeled(const Tensor<T>& a, std::string_view a_labels, const Tensor<T>& b,
                           std::string_view b_labels, std::string_view out_labels,
                           MultiplyCounter* counter) {
  check_labels(a_labels, a.rank(), "left operand");
  check_labels(b_labels, b.rank(), "right operand");
  const LabelTable ta = describe(a.shape(), a_labels);
  const LabelTable tb = describe(b.shape(), b_labels);

  LabelExtents extents;
  for (char c : a_labels) extents[c] = ta.extent[LabelTable::key(c)];
  for (char c : b_labels) {
    const Extent e = tb.extent[LabelTable::key(c)];
    if (extents.bound(c) && extents[c] != e) {
      throw DimensionError(fmt::format("extent mismatch on label '{}': left shape {} vs right shape {}",
                                       c, shape_string(a.shape()), shape_string(b.shape())));
    }
    extents[c] = e;
  }

  std::string batch, left, right, summed;
  {
    std::array<bool, 128> seen{};
    for (char c : out_labels) {
      const auto k = static_cast<unsigned char>(c);
      if (k >= 128 || seen[k]) throw ExpressionError(fmt::format("repeated output label '{}'", c));
      seen[k] = true;
      const bool in_a = ta.has(c), in_b = tb.has(c);
      if (in_a && in_b) {
        batch += c;
      } else if (in_a) {
        left += c;
      } else if (in_b) {
        right += c;
      } else {
        throw ExpressionError(fmt::format("output label '{}' not found in either operand", c));
      }
    }
    for (char c : a_labels) {
      if (!seen[static_cast<unsigned char>(c)]) summed += c;
    }
    for (char c : b_labels) {
      if (!seen[static_cast<unsigned char>(c)] && !ta.has(c)) summed += c;
    }
  }

  const std::size_t nb = extents.product(batch);
  const std::size_t nl = extents.product(left);
  const std::size_t nr = extents.product(right);
  const std::size_t ns = extents.product(summed);
  const bool axpy_form = nr >= kAxpyMinWidth;

  std::vector<T> a_buffer, b_buffer;
  const T* pa = pack(a, ta, extents, batch + left + summed, a_buffer);
  const T* pb = pack(b, tb, extents, axpy_form ? batch + summed + right : batch + right + summed,
                     b_buffer);

  std::vector<T> c(nb * nl * nr, T{0});
  std::atomic<std::uint64_t> executed{0};
  parallel_for(nb * nl, ns * nr, [&](std::size_t begin, std::size_t end) {
    std::uint64_t local = 0;
    for (std::size_t row = begin; row < end; ++row) {
      const std::size_t p = row / nl;
      T* c_row = c.data() + row * nr;
      const T* a_row = pa + row * ns;
      if (axpy_form) {
        const T* b_base = pb + p * ns * nr;
        for (std::size_t s = 0; s < ns; ++s) {
          const T av = a_row[s];
          const T* b_row = b_base + s * nr;
          for (std::size_t j = 0; j < nr; ++j) c_row[j] += av * b_row[j];
        }
      } else {
        const T* b_base = pb + p * nr * ns;
        for (std::size_t j = 0; j < nr; ++j) {
          const T* b_col = b_base + j * ns;
          T acc{0};
          for (std::size_t s = 0; s < ns; ++s) acc += a_row[s] * b_col[s];
          c_row[j] = acc;
        }
      }
      local += ns * nr;
    }
    executed.fetch_add(local, std::memory_order_relaxed);
  });
  if (counter != nullptr) counter->count += executed.load();

  const std::string natural = batch + left + right;
  Shape natural_shape;
  for (char ch : natural) natural_shape.push_back(extents[ch]);
  Tensor<T> result(natural_shape, std::move(c));
  if (natural == out_labels) return result;
  return transpose_labeled(result, natural, out_labels);
}

template <typename T>
Tensor<T> transpose_labeled(const Tensor<T>& a, std::string_view a_labels,
                            std::string_view out_labels) {
  check_labels(a_labels, a.rank(), "operand");
  const LabelTable ta = describe(a.shape(), a_labels);
  LabelExtents extents;
  for (char c : a_labels) extents[c] = ta.extent[LabelTable::key(c)];

  std::array<bool, 128> in_out{};
  Shape out_shape;
  for (char c : out_labels) {
    const auto k = static_cast<unsigned char>(c);
    if (k >= 128 || in_out[k]) throw ExpressionError(fmt::format("repeated output label '{}'", c));
    if (!ta.has(c)) throw ExpressionError(fmt::format("output label '{}' not in operand", c));
    in_out[k] = true;
    out_shape.push_back(extents[c]);
  }
  std::string summed;
  for (char c : a_labels) {
    if (!in_out[static_cast<unsigned char>(c)]) summed += c;
  }

  std::vector<T> buffer;
  const T* packed = pack(a, ta, extents, std::string(out_labels) + summed, buffer);
  const std::size_t n_out = element_count(out_shape);
  const std::size_t n_sum = extents.product(summed);
  std::vector<T> out(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    T acc{0};
    for (std::size_t s = 0; s < n_sum; ++s) acc += packed[i * n_sum + s];
    out[i] = acc;
  }
  return Tensor<T>(std::move(out_shape), std::move(out));
}

template <typename T>
Tensor<T> contract_pair(const Tensor<T>& a, const Tensor<T>& b, std::span<const AxisPair> axes,
                        MultiplyCounter* counter) {
  std::string la = labels_for(a.rank(), 0);
  std::string lb(b.rank(), '\0');
  std::vector<bool> a_matched(a.rank(), false);
  for (const auto& pair : axes) {
    if (pair.lhs >= a.rank() || pair.rhs >= b.rank()) {
      throw DimensionError(fmt::format("axis pair ({}, {}) out of range for shapes {} and {}",
                                       pair.lhs, pair.rhs, shape_string(a.shape()),
                                       shape_string(b.shape())));
    }
    if (a_matched[pair.lhs] || lb[pair.rhs] != '\0') {
      throw DimensionError("axis matched more than once");
    }
    if (a.extent(pair.lhs) != b.extent(pair.rhs)) {
      throw DimensionError(fmt::format(
          "extent mismatch contracting axis {} of {} with axis {} of {}", pair.lhs,
          shape_string(a.shape()), pair.rhs, shape_string(b.shape())));
    }
    a_matched[pair.lhs] = true;
    lb[pair.rhs] = la[pair.lhs];
  }
  const std::string fresh = labels_for(b.rank() - axes.size(), a.rank());
  std::size_t next = 0;
  std::string out;
  for (std::size_t axis = 0; axis < a.rank(); ++axis) {
    if (!a_matched[axis]) out += la[axis];
  }
  for (auto& c : lb) {
    if (c == '\0') {
      c = fresh[next++];
      out += c;
    }
  }
  return contract_labeled(a, la, b, lb, out, counter);
}

#define TTL_INSTANTIATE(T)                                                                   \
  template Tensor<T> contract_labeled(const Tensor<T>&, std::string_view, const Tensor<T>&,  \
                                      std::string_view, std::string_view, MultiplyCounter*); \
  template Tensor<T> transpose_labeled(const Tensor<T>&, std::string_view, std::string_view); \
  template Tensor<T> contract_pair(const Tensor<T>&, const Tensor<T>&,                        \
                                   std::span<const AxisPair>, MultiplyCounter*);

TTL_INSTANTIATE(float)
TTL_INSTANTIATE(double)
#undef TTL_INSTANTIATE

}  // namespace ttl::core
