#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ttl/nn/block.hpp"

namespace ttl::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay. Decay applies only where the mask is true.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>*> params, std::vector<bool> decay, AdamWConfig config = {});

  void step(const std::vector<const Tensor<T>*>& grads, double lr);
  std::size_t steps() const noexcept { return steps_; }
  const AdamWConfig& config() const noexcept { return config_; }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<bool> decay_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWConfig config_;
  std::size_t steps_ = 0;
};

/// Linear warmup over `warmup` steps to `peak`, then cosine decay to zero at `total`.
double cosine_warmup_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 64;
  std::uint64_t data_seed = 0;
  std::uint64_t teacher_seed = 1;
  // Hidden width of the teacher block (d_in -> teacher_hidden -> d_out).
  Extent teacher_hidden = 0;
  double peak_lr = 1e-3;
  AdamWConfig optimizer;
};

struct TracePoint {
  std::size_t step;
  double loss;
  double lr;
};

/// Fixed random dense teacher: linear -> GELU -> linear with the dense layer init.
template <typename T>
Block<T> make_teacher(Extent d_in, Extent hidden, Extent d_out, std::uint64_t seed);

/// Fits `student` to the teacher by mean-squared error on N(0, 1) inputs with AdamW
/// and a cosine schedule warmed up over the first tenth of the steps. The trace
/// holds each step's loss before its update. Throws TrainingError on a non-finite loss.
template <typename T>
std::vector<TracePoint> train_teacher_student(Block<T>& student, const TrainConfig& config);

/// Mean loss over `window` trace points ending at index `end` (exclusive).
double trailing_mean(const std::vector<TracePoint>& trace, std::size_t end, std::size_t window = 100);

void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace);

}  // namespace ttl::nn
