#include "ttl/nn/block.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace ttl::nn {

namespace {

template <class... Fs>
struct Overload : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overload(Fs...) -> Overload<Fs...>;

}  // namespace

template <typename T>
T Gelu<T>::value(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T u = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T Gelu<T>::derivative(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T u = c * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  const T du = c * (T(1) + T(3 * 0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
Tensor<T> Gelu<T>::forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = value(x[i]);
  saved_x_ = x;
  return y;
}

template <typename T>
Tensor<T> Gelu<T>::backward(const Tensor<T>& grad_out) const {
  if (!saved_x_) throw StateError("gelu backward called without a preceding forward");
  if (grad_out.shape() != saved_x_->shape()) {
    throw DimensionError(fmt::format("gelu gradient shape {} does not match input {}",
                                     core::shape_string(grad_out.shape()),
                                     core::shape_string(saved_x_->shape())));
  }
  Tensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * derivative((*saved_x_)[i]);
  return g;
}

template <typename T>
Block<T> Block<T>::mlp(std::unique_ptr<LinearLayer<T>> first,
                       std::unique_ptr<LinearLayer<T>> second) {
  Block b;
  b.add(std::move(first)).add_gelu().add(std::move(second));
  return b;
}

template <typename T>
Block<T>& Block<T>::add(std::unique_ptr<LinearLayer<T>> layer) {
  if (!layer) throw ParameterError("null layer");
  for (auto it = elements_.rbegin(); it != elements_.rend(); ++it) {
    if (auto* prev = std::get_if<std::unique_ptr<LinearLayer<T>>>(&*it)) {
      if ((*prev)->d_out() != layer->d_in()) {
        throw DimensionError(fmt::format("{} layer outputs {} but next {} layer takes {}",
                                         (*prev)->kind(), (*prev)->d_out(), layer->kind(),
                                         layer->d_in()));
      }
      break;
    }
  }
  elements_.emplace_back(std::move(layer));
  return *this;
}

template <typename T>
Block<T>& Block<T>::add_gelu() {
  elements_.emplace_back(Gelu<T>{});
  return *this;
}

template <typename T>
Tensor<T> Block<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = x;
  for (auto& e : elements_) {
    h = std::visit(Overload{[&](std::unique_ptr<LinearLayer<T>>& l) { return l->forward(h); },
                            [&](Gelu<T>& g) { return g.forward(h); }},
                   e);
  }
  ran_forward_ = true;
  return h;
}

template <typename T>
BlockGradients<T> Block<T>::backward(const Tensor<T>& grad_out) {
  if (!ran_forward_) throw StateError("block backward called without a preceding forward");
  BlockGradients<T> out;
  Tensor<T> g = grad_out;
  for (auto it = elements_.rbegin(); it != elements_.rend(); ++it) {
    if (auto* l = std::get_if<std::unique_ptr<LinearLayer<T>>>(&*it)) {
      LayerGradients<T> lg = (*l)->backward(g);
      g = lg.grad_input;
      out.layers.push_back(std::move(lg));
    } else {
      g = std::get<Gelu<T>>(*it).backward(g);
    }
  }
  std::reverse(out.layers.begin(), out.layers.end());
  out.grad_input = std::move(g);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Block<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto* l : linear_layers()) {
    for (auto* p : l->parameters()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<bool> Block<T>::decay_mask() {
  std::vector<bool> out;
  for (auto* l : linear_layers()) {
    const auto n = l->parameters().size();
    for (std::size_t i = 0; i < n; ++i) out.push_back(i + 1 < n);
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Block<T>::flatten(const BlockGradients<T>& grads) {
  std::vector<const Tensor<T>*> out;
  for (const auto& lg : grads.layers) {
    for (const auto& g : lg.grad_params) out.push_back(&g);
    out.push_back(&lg.grad_bias);
  }
  return out;
}

template <typename T>
std::uint64_t Block<T>::param_count() const {
  std::uint64_t n = 0;
  for (const auto& e : elements_) {
    if (auto* l = std::get_if<std::unique_ptr<LinearLayer<T>>>(&e)) n += (*l)->param_count();
  }
  return n;
}

template <typename T>
void Block<T>::parameters_changed() {
  for (auto& e : elements_) {
    if (auto* l = std::get_if<std::unique_ptr<LinearLayer<T>>>(&e)) {
      (*l)->parameters_changed();
    } else {
      std::get<Gelu<T>>(e).reset();
    }
  }
  ran_forward_ = false;
}

template <typename T>
Block<T> Block<T>::clone() const {
  Block b;
  for (const auto& e : elements_) {
    if (auto* l = std::get_if<std::unique_ptr<LinearLayer<T>>>(&e)) {
      b.add((*l)->clone());
    } else {
      b.add_gelu();
    }
  }
  return b;
}

template <typename T>
std::vector<LinearLayer<T>*> Block<T>::linear_layers() {
  std::vector<LinearLayer<T>*> out;
  for (auto& e : elements_) {
    if (auto* l = std::get_if<std::unique_ptr<LinearLayer<T>>>(&e)) out.push_back(l->get());
  }
  return out;
}

template <typename T>
Extent Block<T>::d_in() const {
  for (const auto& e : elements_) {
    if (auto* l = std::get_if<std::unique_ptr<LinearLayer<T>>>(&e)) return (*l)->d_in();
  }
  throw StateError("block has no linear layer");
}

template <typename T>
Extent Block<T>::d_out() const {
  for (auto it = elements_.rbegin(); it != elements_.rend(); ++it) {
    if (auto* l = std::get_if<std::unique_ptr<LinearLayer<T>>>(&*it)) return (*l)->d_out();
  }
  throw StateError("block has no linear layer");
}

template class Gelu<float>;
template class Gelu<double>;
template class Block<float>;
template class Block<double>;

}  // namespace ttl::nn
