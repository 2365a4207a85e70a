#include <benchmark/benchmark.h>

#include "grapam/clustering.hpp"

using namespace grapam;

namespace {

EmbeddingSet make_embeddings(uint64_t seed, size_t n, size_t d) {
  Rng rng(seed);
  EmbeddingSet emb;
  emb.dim = d;
  for (size_t i = 0; i < n; ++i) {
    emb.ids.push_back("e" + std::to_string(i));
    for (size_t j = 0; j < d; ++j) emb.vectors.push_back(rng.next_gaussian());
  }
  return emb;
}

void BM_Kmeans(benchmark::State& state) {
  EmbeddingSet emb = make_embeddings(1, size_t(state.range(0)), size_t(state.range(1)));
  for (auto _ : state) {
    ClusterAssignment a = kmeans(emb, 4, 17);
    benchmark::DoNotOptimize(a);
  }
}

BENCHMARK(BM_Kmeans)->Args({100, 2})->Args({1000, 2})->Args({1000, 16});

void BM_PcaFit(benchmark::State& state) {
  EmbeddingSet emb = make_embeddings(2, size_t(state.range(0)), size_t(state.range(1)));
  for (auto _ : state) {
    PcaModel m = pca_fit(emb, 2);
    benchmark::DoNotOptimize(m);
  }
}

BENCHMARK(BM_PcaFit)->Args({200, 5})->Args({1000, 16});

}  // namespace
