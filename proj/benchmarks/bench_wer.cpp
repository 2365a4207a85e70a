#include <benchmark/benchmark.h>

#include "grapam/clustering.hpp"
#include "grapam/wer.hpp"

using namespace grapam;

namespace {

std::vector<TranscriptPair> make_corpus(uint64_t seed, size_t pairs, size_t len) {
  Rng rng(seed);
  std::vector<std::string> words = {"the", "cat", "sat", "on", "a", "mat",
                                    "dog", "ran", "far", "away"};
  std::vector<TranscriptPair> out;
  for (size_t i = 0; i < pairs; ++i) {
    TranscriptPair p;
    p.id = "u" + std::to_string(i);
    for (size_t t = 0; t < len; ++t) {
      std::string w = words[rng.next_index(words.size())];
      p.reference.push_back(w);
      p.hypothesis.push_back(rng.next_double() < 0.85
                                 ? w
                                 : words[rng.next_index(words.size())]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

void BM_CorpusWer(benchmark::State& state) {
  auto corpus = make_corpus(7, size_t(state.range(0)), size_t(state.range(1)));
  for (auto _ : state) {
    WerReport r = corpus_wer(corpus);
    benchmark::DoNotOptimize(r);
  }
}

BENCHMARK(BM_CorpusWer)->Args({100, 20})->Args({1000, 20})->Args({100, 200});

}  // namespace
