#include <benchmark/benchmark.h>

#include "grapam/clustering.hpp"
#include "grapam/merge.hpp"

using namespace grapam;

namespace {

Checkpoint make_checkpoint(uint64_t seed, size_t tensors, size_t elems) {
  Rng rng(seed);
  Checkpoint c;
  for (size_t i = 0; i < tensors; ++i) {
    Tensor t;
    t.shape = {elems};
    t.data.resize(elems);
    for (auto& v : t.data) v = float(rng.next_gaussian());
    c.put("block." + std::to_string(i), std::move(t));
  }
  return c;
}

void BM_Merge(benchmark::State& state) {
  size_t members = size_t(state.range(0));
  size_t elems = size_t(state.range(1));
  std::vector<Checkpoint> ckpts;
  for (size_t i = 0; i < members; ++i)
    ckpts.push_back(make_checkpoint(i + 1, 8, elems));
  MergePlan plan;
  for (size_t i = 0; i < members; ++i)
    plan.members.push_back({"m" + std::to_string(i), &ckpts[i]});
  plan.weights = uniform_weights(members);
  for (auto _ : state) {
    auto [out, report] = merge(plan);
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(members * 8 * elems));
}

BENCHMARK(BM_Merge)->Args({2, 1024})->Args({4, 1024})->Args({4, 65536})->Args({8, 65536});

}  // namespace

BENCHMARK_MAIN();
