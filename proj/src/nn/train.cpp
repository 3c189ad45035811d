#include "ttl/nn/train.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "ttl/layers/dense.hpp"

namespace ttl::nn {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>*> params, std::vector<bool> decay, AdamWConfig config)
    : params_(std::move(params)), decay_(std::move(decay)), config_(config) {
  if (decay_.size() != params_.size()) {
    throw ParameterError("decay mask and parameter list differ in length");
  }
  for (auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(const std::vector<const Tensor<T>*>& grads, double lr) {
  if (grads.size() != params_.size()) {
    throw DimensionError(fmt::format("{} gradients for {} parameters", grads.size(), params_.size()));
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor<T>& w = *params_[p];
    const Tensor<T>& g = *grads[p];
    if (g.shape() != w.shape()) {
      throw DimensionError(fmt::format("gradient {} does not match parameter {}",
                                       core::shape_string(g.shape()),
                                       core::shape_string(w.shape())));
    }
    auto& m = m_[p];
    auto& v = v_[p];
    const double decay = decay_[p] ? lr * config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      double wi = static_cast<double>(w[i]);
      wi -= decay * wi;
      wi -= lr * update;
      w[i] = static_cast<T>(wi);
    }
  }
}

double cosine_warmup_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak) {
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t span = total > warmup ? total - warmup : 1;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
Block<T> make_teacher(Extent d_in, Extent hidden, Extent d_out, std::uint64_t seed) {
  using layers::DenseLayer;
  return Block<T>::mlp(std::make_unique<DenseLayer<T>>(DenseLayer<T>::random(d_in, hidden, seed)),
                       std::make_unique<DenseLayer<T>>(
                           DenseLayer<T>::random(hidden, d_out, seed + 0x9e3779b97f4a7c15ULL)));
}

template <typename T>
std::vector<TracePoint> train_teacher_student(Block<T>& student, const TrainConfig& config) {
  if (config.steps == 0) throw ParameterError("training needs at least one step");
  if (config.batch == 0) throw ParameterError("training batch must be positive");
  const Extent d_in = student.d_in(), d_out = student.d_out();
  const Extent hidden = config.teacher_hidden ? config.teacher_hidden : 4 * d_in;
  Block<T> teacher = make_teacher<T>(d_in, hidden, d_out, config.teacher_seed);

  AdamW<T> opt(student.parameters(), student.decay_mask(), config.optimizer);
  const std::size_t warmup = std::max<std::size_t>(1, config.steps / 10);
  std::mt19937_64 rng(config.data_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<TracePoint> trace;
  trace.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Tensor<T> x({config.batch, d_in});
    for (auto& v : x.data()) v = static_cast<T>(normal(rng));
    const Tensor<T> target = teacher.forward(x);
    const Tensor<T> y = student.forward(x);

    const double n = static_cast<double>(y.size());
    double loss = 0.0;
    Tensor<T> grad(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = static_cast<double>(y[i]) - static_cast<double>(target[i]);
      loss += d * d;
      grad[i] = static_cast<T>(2.0 * d / n);
    }
    loss /= n;
    if (!std::isfinite(loss)) {
      throw TrainingError(fmt::format("non-finite loss at step {}", step), step);
    }
    const double lr = cosine_warmup_lr(step, config.steps, warmup, config.peak_lr);
    const BlockGradients<T> grads = student.backward(grad);
    opt.step(Block<T>::flatten(grads), lr);
    student.parameters_changed();
    trace.push_back({step, loss, lr});
  }
  return trace;
}

double trailing_mean(const std::vector<TracePoint>& trace, std::size_t end, std::size_t window) {
  end = std::min(end, trace.size());
  const std::size_t begin = end > window ? end - window : 0;
  if (begin == end) return std::nan("");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += trace[i].loss;
  return s / static_cast<double>(end - begin);
}

void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace) {
  out << "step,loss,lr\n";
  for (const auto& p : trace) out << fmt::format("{},{:.17g},{:.17g}\n", p.step, p.loss, p.lr);
}

template class AdamW<float>;
template class AdamW<double>;
template Block<float> make_teacher(Extent, Extent, Extent, std::uint64_t);
template Block<double> make_teacher(Extent, Extent, Extent, std::uint64_t);
template std::vector<TracePoint> train_teacher_student(Block<float>&, const TrainConfig&);
template std::vector<TracePoint> train_teacher_student(Block<double>&, const TrainConfig&);

}  // namespace ttl::nn
