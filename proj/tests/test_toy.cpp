#include <doctest.h>

#include <cmath>
#include <map>

#include "grapam/toy.hpp"
#include "oracles.hpp"

using namespace grapam;

namespace {

ToyConfig linear_cfg(size_t vocab = 4, uint64_t seed = 1) {
  ToyConfig cfg;
  cfg.architecture = ToyArch::LINEAR;
  cfg.vocab = vocab;
  cfg.seed = seed;
  return cfg;
}

ToyConfig tiny_transformer_cfg() {
  ToyConfig cfg;
  cfg.architecture = ToyArch::TINY_TRANSFORMER;
  cfg.vocab = 3;
  cfg.width = 2;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.seed = 2;
  return cfg;
}

std::vector<Utterance> tiny_batch(size_t vocab, uint64_t seed, size_t count = 3) {
  Rng rng(seed);
  std::vector<Utterance> out;
  for (size_t i = 0; i < count; ++i) {
    Utterance u;
    u.id = "t" + std::to_string(i);
    size_t len = 3 + rng.next_index(4);
    for (size_t t = 0; t < len; ++t) {
      u.input.push_back(rng.next_index(vocab));
      u.target.push_back(rng.next_index(vocab));
    }
    out.push_back(std::move(u));
  }
  return out;
}

Manifest batch_manifest(const std::vector<Utterance>& utts) {
  Manifest m;
  for (const auto& u : utts) {
    ManifestRecord rec;
    rec.id = u.id;
    std::string in, tg;
    for (size_t i = 0; i < u.input.size(); ++i)
      in += (i ? "," : "") + std::to_string(u.input[i]);
    for (size_t i = 0; i < u.target.size(); ++i)
      tg += (i ? "," : "") + std::to_string(u.target[i]);
    rec.raw_json = "{\"id\":\"" + u.id + "\",\"group\":" + std::to_string(u.group) +
                   ",\"input\":[" + in + "],\"target\":[" + tg + "]}";
    m.records.push_back(rec);
  }
  return m;
}

}  // namespace

TEST_CASE("init is deterministic and follows the naming convention") {
  ToyConfig cfg;
  cfg.architecture = ToyArch::TINY_TRANSFORMER;
  Checkpoint a = init_model(cfg);
  Checkpoint b = init_model(cfg);
  REQUIRE(schema_equal(a, b));
  for (const auto& [name, t] : a.entries) CHECK(t.bit_equal(b.at(name)));

  CHECK(a.contains("embed.tok"));
  CHECK(a.contains("enc.0.attn.q.w"));
  CHECK(a.contains("dec.1.ffn.w2.b"));
  CHECK(a.contains("head.out.w"));

  cfg.seed = 99;
  Checkpoint c = init_model(cfg);
  CHECK(content_hash(a) != content_hash(c));
}

TEST_CASE("FFN preset selects exactly 16 tensors on a 2-layer transformer") {
  ToyConfig cfg;
  cfg.architecture = ToyArch::TINY_TRANSFORMER;
  cfg.layers = 2;
  Checkpoint ckpt = init_model(cfg);
  FreezeMask mask = resolve(Selector::ffn(), ckpt);
  size_t weights = 0, biases = 0;
  for (const auto& name : mask.selected) {
    if (name.ends_with(".w")) ++weights;
    if (name.ends_with(".b")) ++biases;
  }
  CHECK(weights == 8);
  CHECK(biases == 8);
}

TEST_CASE("ATTN preset on LINEAR selects nothing and errors") {
  Checkpoint ckpt = init_model(linear_cfg());
  CHECK_THROWS_AS(resolve(Selector::attn(), ckpt), Error);
}

TEST_CASE("invalid configs are rejected") {
  ToyConfig cfg;
  cfg.architecture = ToyArch::TINY_TRANSFORMER;
  cfg.width = 5;
  cfg.heads = 2;
  CHECK_THROWS_AS(init_model(cfg), Error);
  cfg = ToyConfig{};
  cfg.vocab = 0;
  CHECK_THROWS_AS(init_model(cfg), Error);
}

TEST_CASE("uniform-output model has loss ln(V)") {
  for (auto arch : {ToyArch::LINEAR, ToyArch::TINY_TRANSFORMER}) {
    ToyConfig cfg = arch == ToyArch::LINEAR ? linear_cfg(5) : tiny_transformer_cfg();
    if (arch == ToyArch::TINY_TRANSFORMER) cfg.vocab = 5;
    Checkpoint ckpt = init_model(cfg);
    for (auto& [name, t] : ckpt.entries)
      std::fill(t.data.begin(), t.data.end(), 0.0f);
    Manifest m = batch_manifest(tiny_batch(5, 3));
    CHECK(eval_loss(ckpt, m) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
}

TEST_CASE("training with lr=0 is the bit-exact identity") {
  Checkpoint model = init_model(linear_cfg());
  Manifest data = batch_manifest(tiny_batch(4, 5));
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  TrainResult res = train(model, data, cfg);
  for (const auto& [name, t] : model.entries)
    CHECK(t.bit_equal(res.model.at(name)));
}

TEST_CASE("LINEAR training reduces the loss") {
  Checkpoint model = init_model(linear_cfg(6));
  Manifest data = batch_manifest(tiny_batch(6, 8, 12));
  double before = eval_loss(model, data);
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 5;
  cfg.batch_size = 12;  // full batch keeps the descent argument clean
  TrainResult res = train(model, data, cfg);
  double after = eval_loss(res.model, data);
  CHECK(after < before);
  CHECK(res.step_losses.front() >= res.step_losses.back());
}

TEST_CASE("transformer training with ADAM reduces the loss") {
  ToyConfig cfg = tiny_transformer_cfg();
  cfg.vocab = 4;
  cfg.width = 4;
  cfg.heads = 2;
  Checkpoint model = init_model(cfg);
  Manifest data = batch_manifest(tiny_batch(4, 13, 8));
  double before = eval_loss(model, data);
  TrainConfig tcfg;
  tcfg.learning_rate = 0.01;
  tcfg.epochs = 20;
  tcfg.optimizer = ToyOptimizer::ADAM;
  double after = eval_loss(train(model, data, tcfg).model, data);
  CHECK(after < before);
}

TEST_CASE("frozen tensors are bit-identical after training") {
  for (const char* mask : {"FFN", "ATTN"}) {
    ToyConfig cfg = tiny_transformer_cfg();
    cfg.vocab = 4;
    cfg.width = 4;
    cfg.heads = 2;
    Checkpoint model = init_model(cfg);
    Manifest data = batch_manifest(tiny_batch(4, 21, 6));
    TrainConfig tcfg;
    tcfg.learning_rate = 0.05;
    tcfg.epochs = 3;
    tcfg.mask = Selector::parse_word(mask);
    TrainResult res = train(model, data, tcfg);
    FreezeMask fm = resolve(tcfg.mask, model);
    for (const auto& name : fm.frozen)
      CHECK(res.model.at(name).bit_equal(model.at(name)));
    bool any_changed = false;
    for (const auto& name : fm.selected)
      if (!res.model.at(name).bit_equal(model.at(name))) any_changed = true;
    CHECK(any_changed);
  }
}

TEST_CASE("training is deterministic given seeds") {
  Checkpoint model = init_model(linear_cfg(5));
  Manifest data = batch_manifest(tiny_batch(5, 30, 10));
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 7;
  TrainResult a = train(model, data, cfg);
  TrainResult b = train(model, data, cfg);
  for (const auto& [name, t] : a.model.entries)
    CHECK(t.bit_equal(b.model.at(name)));
  CHECK(a.step_losses == b.step_losses);
}

TEST_CASE("analytic gradients match central finite differences") {
  SUBCASE("LINEAR") {
    ToyConfig cfg = linear_cfg(3, 17);  // 3*3 + 3 = 12 parameters
    ToyObjective obj(cfg, tiny_batch(3, 40, 2));
    std::vector<double> params = obj.flatten(init_model(cfg));
    std::vector<double> grad;
    obj.loss_grad(params, grad);
    auto fd = oracle::finite_difference(
        [&](const std::vector<double>& p) { return obj.loss(p); }, params);
    for (size_t i = 0; i < params.size(); ++i)
      CHECK(std::abs(grad[i] - fd[i]) <=
            1e-5 * std::max(1.0, std::abs(grad[i])));
  }
  SUBCASE("TINY_TRANSFORMER") {
    ToyConfig cfg = tiny_transformer_cfg();  // 87 parameters
    ToyObjective obj(cfg, tiny_batch(3, 41, 2));
    REQUIRE(obj.param_count <= 200);
    std::vector<double> params = obj.flatten(init_model(cfg));
    std::vector<double> grad;
    obj.loss_grad(params, grad);
    auto fd = oracle::finite_difference(
        [&](const std::vector<double>& p) { return obj.loss(p); }, params);
    for (size_t i = 0; i < params.size(); ++i)
      CHECK(std::abs(grad[i] - fd[i]) <=
            1e-5 * std::max(1.0, std::abs(grad[i])));
  }
}

TEST_CASE("gen_synth is deterministic and recoverable by k-means") {
  SynthSpec spec;
  spec.seed = 4242;
  SynthData a = gen_synth(spec);
  SynthData b = gen_synth(spec);
  CHECK(a.train_manifest.records.size() == b.train_manifest.records.size());
  for (size_t i = 0; i < a.train_manifest.records.size(); ++i)
    CHECK(a.train_manifest.records[i].raw_json ==
          b.train_manifest.records[i].raw_json);
  CHECK(a.embeddings.vectors == b.embeddings.vectors);

  // k-means on the shipped embeddings recovers the groups up to permutation
  ClusterAssignment assign = kmeans(a.embeddings, 3, 17);
  std::map<std::string, size_t> truth;
  for (const auto& u : manifest_utterances(a.train_manifest)) truth[u.id] = u.group;
  // majority vote per cluster
  std::map<size_t, std::map<size_t, size_t>> votes;
  for (const auto& [id, k] : assign.labels) ++votes[k][truth.at(id)];
  size_t correct = 0;
  for (const auto& [k, hist] : votes) {
    size_t best = 0;
    for (const auto& [g, n] : hist) best = std::max(best, n);
    correct += best;
  }
  double accuracy = double(correct) / double(assign.labels.size());
  CHECK(accuracy >= 0.95);
}

TEST_CASE("single-group synth is trivially clustered") {
  SynthSpec spec;
  spec.group_count = 1;
  spec.samples_per_group = 10;
  SynthData d = gen_synth(spec);
  ClusterAssignment assign = kmeans(d.embeddings, 1, 0);
  for (const auto& [id, k] : assign.labels) CHECK(k == 0);
}

TEST_CASE("greedy decode emits one token per input position") {
  Checkpoint model = init_model(linear_cfg(4));
  auto batch = tiny_batch(4, 50, 3);
  Manifest data = batch_manifest(batch);
  auto hyps = decode(model, data);
  REQUIRE(hyps.size() == batch.size());
  for (size_t i = 0; i < hyps.size(); ++i) {
    size_t tokens = 1 + std::count(hyps[i].second.begin(), hyps[i].second.end(), ' ');
    CHECK(tokens == batch[i].input.size());
  }
}

TEST_CASE("train errors") {
  Checkpoint model = init_model(linear_cfg());
  Manifest empty;
  TrainConfig cfg;
  CHECK_THROWS_AS(train(model, empty, cfg), Error);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(model, batch_manifest(tiny_batch(4, 1)), cfg), Error);
}
