#pragma once

#include <string>
#include <vector>

#include "grapam/clustering.hpp"
#include "grapam/selector.hpp"
#include "grapam/tensor_store.hpp"

namespace grapam {

enum class ToyArch { LINEAR, TINY_TRANSFORMER };

std::string to_string(ToyArch a);
ToyArch toy_arch_from_string(const std::string& s);

/// Desk-scale model configuration. LINEAR is a per-token softmax classifier
/// whose NLL is convex in its parameters; TINY_TRANSFORMER is a small
/// encoder-decoder with self-attention, cross-attention and FFN blocks that
/// exercises the FFN/ATTN selector presets structurally.
struct ToyConfig {
  ToyArch architecture = ToyArch::LINEAR;
  size_t vocab = 16;
  size_t width = 8;       // transformer only
  size_t layers = 2;      // transformer only
  size_t heads = 2;       // transformer only
  uint64_t seed = 0;

  void validate() const;
};

struct SynthSpec {
  size_t group_count = 3;
  uint64_t seed = 0;          // drives per-group transformations and sampling
  size_t samples_per_group = 64;
  size_t eval_samples_per_group = 16;
  size_t seq_len_min = 24;
  size_t seq_len_max = 48;
  double label_noise = 0.0;   // in [0,1)
  size_t vocab = 16;

  void validate() const;
};

enum class ToyOptimizer { SGD, ADAM };

struct TrainConfig {
  double learning_rate = 1e-5;
  size_t batch_size = 16;
  size_t epochs = 1;
  ToyOptimizer optimizer = ToyOptimizer::SGD;
  Selector mask = Selector::all();
  uint64_t seed = 0;

  void validate() const;
};

struct Utterance {
  std::string id;
  std::vector<size_t> input;   // token ids
  std::vector<size_t> target;  // token ids, same length
  size_t group = 0;            // ground truth, diagnostics only
};

struct SynthData {
  Manifest train_manifest;
  Manifest eval_manifest;
  EmbeddingSet embeddings;  // 2-D GENERIC projections for the train split
};

struct TrainResult {
  Checkpoint model;
  std::vector<double> step_losses;
};

/// Deterministic seeded initialization; parameter names follow the
/// enc.<L>.attn.{q,k,v,o}.{w,b} / enc.<L>.ffn.{w1,w2}.{w,b} convention.
Checkpoint init_model(const ToyConfig& cfg);

SynthData gen_synth(const SynthSpec& spec);

/// Partial fine-tuning: frozen tensors come back bit-identical, selected
/// tensors are updated by the optimizer on NLL loss.
TrainResult train(const Checkpoint& model, const Manifest& data, const TrainConfig& cfg);

/// Mean NLL per token, averaged over utterances.
double eval_loss(const Checkpoint& model, const Manifest& data);

/// Greedy-decode hypotheses, one space-joined token string per utterance.
std::vector<std::pair<std::string, std::string>> decode(const Checkpoint& model,
                                                        const Manifest& data);

/// Parses toy utterances back out of a manifest (input/target fields).
std::vector<Utterance> manifest_utterances(const Manifest& m);

/// Loss and analytic gradient for one batch, both computed in f64 from a
/// flat parameter vector in canonical (lexicographic) tensor order. This is
/// the surface the finite-difference gradient check probes.
struct ToyObjective {
  ToyConfig cfg;
  std::vector<Utterance> batch;
  std::vector<std::string> param_names;   // canonical order
  std::vector<size_t> param_offsets;      // into the flat vector
  size_t param_count = 0;

  explicit ToyObjective(const ToyConfig& cfg_, std::vector<Utterance> batch_);
  std::vector<double> flatten(const Checkpoint& ckpt) const;
  Checkpoint unflatten(const std::vector<double>& flat, const Checkpoint& like) const;
  double loss(const std::vector<double>& params) const;
  double loss_grad(const std::vector<double>& params, std::vector<double>& grad) const;
  std::vector<size_t> greedy(const std::vector<double>& params,
                             const std::vector<size_t>& input) const;
};

/// Infers the ToyConfig stored in a checkpoint's meta.
ToyConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace grapam
