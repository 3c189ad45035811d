#include <doctest.h>

#include "ttl/layers/factory.hpp"
#include "ttl/nn/train.hpp"

using namespace ttl;
using namespace ttl::nn;

namespace {

Block<double> toy_block(layers::LayerKind kind, std::uint64_t seed) {
  layers::LayerConfig a, c;
  a.kind = c.kind = kind;
  a.d_in = c.d_out = 32;
  a.d_out = c.d_in = 128;
  a.m = c.m = 2;
  a.rank = c.rank = 8;
  a.seed = 2 * seed;
  c.seed = 2 * seed + 1;
  return Block<double>::mlp(layers::make_layer<double>(a), layers::make_layer<double>(c));
}

std::vector<TracePoint> run(layers::LayerKind kind, std::uint64_t seed) {
  auto b = toy_block(kind, seed);
  TrainConfig cfg;
  cfg.data_seed = seed;
  return train_teacher_student(b, cfg);
}

}  // namespace

TEST_CASE("dense student fits the teacher") {
  const auto trace = run(layers::LayerKind::dense, 0);
  REQUIRE(trace.size() == 2000);
  const double initial = trace.front().loss;
  const double final = trailing_mean(trace, trace.size());
  INFO("initial ", initial, " final ", final);
  CHECK(final < 0.05 * initial);
}

TEST_CASE("ttm student with m = 2, R = 8 fits the teacher") {
  const auto trace = run(layers::LayerKind::ttm, 0);
  const double initial = trace.front().loss;
  const double final = trailing_mean(trace, trace.size());
  INFO("initial ", initial, " final ", final);
  CHECK(final < 0.2 * initial);
}

TEST_CASE("trailing mean falls for every layer kind and seed") {
  for (auto kind : {layers::LayerKind::dense, layers::LayerKind::ttm, layers::LayerKind::svd}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto trace = run(kind, seed);
      const double early = trailing_mean(trace, 100);
      const double late = trailing_mean(trace, trace.size());
      INFO(layers::to_string(kind), " seed ", seed, " early ", early, " late ", late);
      CHECK(late < early);
    }
  }
}
