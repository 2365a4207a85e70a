// Command-line front end for the GRAPAM toolkit: clustering, partial
// fine-tuning of the toy models, constrained linear merging, WER scoring
// and the end-to-end experiment drivers.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "grapam/clustering.hpp"
#include "grapam/merge.hpp"
#include "grapam/pipeline.hpp"
#include "grapam/toy.hpp"
#include "grapam/wer.hpp"

using nlohmann::json;
using namespace grapam;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  return json::parse(f);
}

int cmd_merge(const std::string& plan_path, const std::string& out_path) {
  json j = read_json_file(plan_path);

  std::vector<std::pair<std::string, Checkpoint>> loaded;
  for (auto& [id, path] : j.at("members").items())
    loaded.emplace_back(id, load_checkpoint(path.get<std::string>()));

  MergePlan plan;
  for (auto& [id, ckpt] : loaded) plan.members.push_back({id, &ckpt});

  if (j.at("weights").is_string()) {
    if (j["weights"].get<std::string>() != "uniform")
      throw Error("weights must be a list or the string \"uniform\"");
    plan.weights = uniform_weights(plan.members.size());
  } else {
    plan.weights = j["weights"].get<std::vector<double>>();
  }

  Checkpoint base;
  if (j.contains("scope")) {
    if (j["scope"].is_string())
      plan.scope = Selector::parse_word(j["scope"].get<std::string>());
    else
      plan.scope = Selector::parse(j["scope"].get<std::vector<std::string>>());
  }
  if (j.contains("base")) {
    base = load_checkpoint(j["base"].get<std::string>());
    plan.base = &base;
  }

  auto [merged, report] = merge(plan);
  save_checkpoint(merged, out_path);

  json jr;
  jr["members"] = report.member_ids;
  jr["weights"] = report.weights;
  jr["lineage_hash"] = report.lineage_hash;
  jr["warnings"] = report.warnings;
  json deltas = json::object();
  for (const auto& [name, d] : report.max_abs_delta) deltas[name] = d;
  jr["max_abs_delta"] = deltas;
  std::ofstream rf(out_path + ".report.json");
  rf << jr.dump(2) << "\n";

  std::cout << "merged " << plan.members.size() << " models -> " << out_path
            << "\n";
  return 0;
}

int cmd_cluster(const std::string& emb_path, size_t k, uint64_t seed,
                const std::string& out_path, bool random) {
  EmbeddingSet emb = load_embeddings(emb_path);
  ClusterAssignment assign =
      random ? random_assign(emb.ids, k, seed, &emb) : kmeans(emb, k, seed);
  json j;
  j["K"] = assign.K;
  j["seed"] = assign.seed;
  if (assign.objective) j["objective"] = *assign.objective;
  j["iterations_run"] = assign.iterations_run;
  j["labels"] = assign.labels;
  std::ofstream f(out_path);
  if (!f) throw IoError("cannot open for writing: " + out_path);
  f << j.dump(2) << "\n";
  std::cout << "clustered " << emb.count() << " utterances into " << assign.K
            << " groups";
  if (assign.objective) std::cout << " (objective " << *assign.objective << ")";
  std::cout << "\n";
  return 0;
}

int cmd_pca(const std::string& emb_path, size_t dims, bool standardize,
            const std::string& out_path) {
  EmbeddingSet emb = load_embeddings(emb_path);
  PcaModel model = pca_fit(emb, dims, standardize);
  EmbeddingSet projected = pca_project(model, emb);
  save_embeddings(projected, out_path);
  std::cout << "projected " << emb.count() << " vectors from " << emb.dim
            << " to " << dims << " dims\n";
  return 0;
}

int cmd_wer(const std::string& ref_path, const std::string& hyp_path,
            const std::string& out_path, const std::string& per_utt_path) {
  auto refs = load_transcripts(ref_path);
  auto hyps = load_transcripts(hyp_path);
  std::map<std::string, std::string> hyp_by_id(hyps.begin(), hyps.end());

  std::vector<TranscriptPair> pairs;
  for (const auto& [id, text] : refs) {
    auto it = hyp_by_id.find(id);
    if (it == hyp_by_id.end())
      throw Error("no hypothesis for utterance \"" + id + "\"");
    TranscriptPair p;
    p.id = id;
    p.reference = normalize_tokens(text);
    p.hypothesis = normalize_tokens(it->second);
    pairs.push_back(std::move(p));
  }
  WerReport report = corpus_wer(pairs);

  json j;
  j["wer"] = report.wer;
  j["substitutions"] = report.counts.substitutions;
  j["deletions"] = report.counts.deletions;
  j["insertions"] = report.counts.insertions;
  j["ref_tokens"] = report.ref_tokens;
  j["normalizer"] = report.normalizer;
  j["per_utterance"] = json::array();
  for (const auto& u : report.per_utterance)
    j["per_utterance"].push_back({{"id", u.id},
                                  {"wer", u.wer},
                                  {"substitutions", u.counts.substitutions},
                                  {"deletions", u.counts.deletions},
                                  {"insertions", u.counts.insertions},
                                  {"ref_tokens", u.ref_tokens}});
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    f << j.dump(2) << "\n";
  }
  if (!per_utt_path.empty()) {
    // 1-D ZSWER embedding file consumed by the clustering stage
    EmbeddingSet emb;
    emb.dim = 1;
    emb.kind = EmbeddingKind::ZSWER;
    for (const auto& u : report.per_utterance) {
      emb.ids.push_back(u.id);
      emb.vectors.push_back(u.wer);
    }
    save_embeddings(emb, per_utt_path);
  }
  std::cout << "corpus WER " << report.wer * 100.0 << "% over "
            << report.ref_tokens << " reference tokens\n";
  return 0;
}

SynthSpec synth_spec_from_json(const json& s) {
  SynthSpec spec;
  spec.group_count = s.value("group_count", size_t(3));
  spec.seed = s.value("seed", uint64_t(0));
  spec.samples_per_group = s.value("samples_per_group", size_t(64));
  spec.eval_samples_per_group = s.value("eval_samples_per_group", size_t(16));
  spec.seq_len_min = s.value("seq_len_min", size_t(24));
  spec.seq_len_max = s.value("seq_len_max", size_t(48));
  spec.label_noise = s.value("label_noise", 0.0);
  spec.vocab = s.value("vocab", size_t(16));
  return spec;
}

ToyConfig toy_config_from_json(const json& m) {
  ToyConfig cfg;
  cfg.architecture = toy_arch_from_string(m.value("architecture", "LINEAR"));
  cfg.vocab = m.value("vocab", size_t(16));
  cfg.width = m.value("width", size_t(8));
  cfg.layers = m.value("layers", size_t(2));
  cfg.heads = m.value("heads", size_t(2));
  cfg.seed = m.value("seed", uint64_t(0));
  return cfg;
}

int cmd_toy_gen(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec = synth_spec_from_json(read_json_file(spec_path));
  SynthData data = gen_synth(spec);
  std::filesystem::create_directories(out_dir);
  save_manifest(data.train_manifest, out_dir + "/train.jsonl");
  save_manifest(data.eval_manifest, out_dir + "/eval.jsonl");
  save_embeddings(data.embeddings, out_dir + "/embeddings.tsv");
  std::cout << "wrote " << data.train_manifest.records.size() << " train / "
            << data.eval_manifest.records.size() << " eval utterances to "
            << out_dir << "\n";
  return 0;
}

int cmd_toy_init(const std::string& cfg_path, const std::string& out_path) {
  ToyConfig cfg = toy_config_from_json(read_json_file(cfg_path));
  Checkpoint ckpt = init_model(cfg);
  save_checkpoint(ckpt, out_path);
  std::cout << "initialized " << to_string(cfg.architecture) << " with "
            << ckpt.size() << " tensors -> " << out_path << "\n";
  return 0;
}

int cmd_toy_train(const std::string& model_path, const std::string& data_path,
                  const std::string& mask, double lr, size_t batch,
                  size_t epochs, const std::string& optimizer, uint64_t seed,
                  const std::string& out_path) {
  Checkpoint model = load_checkpoint(model_path);
  Manifest data = load_manifest(data_path);
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.batch_size = batch;
  cfg.epochs = epochs;
  cfg.optimizer = optimizer == "ADAM" ? ToyOptimizer::ADAM : ToyOptimizer::SGD;
  cfg.mask = Selector::parse_word(mask);
  cfg.seed = seed;
  TrainResult res = train(model, data, cfg);
  save_checkpoint(res.model, out_path);
  std::cout << "trained " << res.step_losses.size() << " steps, loss "
            << res.step_losses.front() << " -> " << res.step_losses.back()
            << ", saved " << out_path << "\n";
  return 0;
}

int cmd_toy_eval(const std::string& model_path, const std::string& data_path,
                 const std::string& hyp_out) {
  Checkpoint model = load_checkpoint(model_path);
  Manifest data = load_manifest(data_path);
  double loss = eval_loss(model, data);
  std::cout << "mean NLL " << loss << " over " << data.records.size()
            << " utterances\n";
  if (!hyp_out.empty()) {
    save_transcripts(decode(model, data), hyp_out);
    std::cout << "wrote greedy transcripts to " << hyp_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRAPAM: group-aware partial model merging toolkit"};
  app.require_subcommand(1);

  // merge
  std::string plan_path, merge_out;
  auto* merge_cmd = app.add_subcommand("merge", "Merge checkpoints per a plan file");
  merge_cmd->add_option("--plan", plan_path, "Merge plan JSON")->required();
  merge_cmd->add_option("--out", merge_out, "Output checkpoint")->required();

  // cluster
  std::string emb_path, cluster_out;
  size_t cluster_k = 3;
  uint64_t cluster_seed = 17;
  bool cluster_random = false;
  auto* cluster_cmd = app.add_subcommand("cluster", "K-means over utterance embeddings");
  cluster_cmd->add_option("--emb", emb_path, "Embedding TSV")->required();
  cluster_cmd->add_option("--k", cluster_k, "Cluster count");
  cluster_cmd->add_option("--seed", cluster_seed, "Seed");
  cluster_cmd->add_option("--out", cluster_out, "Assignment JSON")->required();
  cluster_cmd->add_flag("--random", cluster_random, "Uniform random assignment");

  // pca
  std::string pca_emb, pca_out;
  size_t pca_dims = 16;
  bool pca_standardize = false;
  auto* pca_cmd = app.add_subcommand("pca", "PCA dimensionality reduction");
  pca_cmd->add_option("--emb", pca_emb, "Embedding TSV")->required();
  pca_cmd->add_option("--dims", pca_dims, "Output dimensions");
  pca_cmd->add_flag("--standardize", pca_standardize, "Z-score dims before fitting");
  pca_cmd->add_option("--out", pca_out, "Projected TSV")->required();

  // wer
  std::string ref_path, hyp_path, wer_out, per_utt;
  auto* wer_cmd = app.add_subcommand("wer", "Word error rate scoring");
  wer_cmd->add_option("--ref", ref_path, "Reference JSONL")->required();
  wer_cmd->add_option("--hyp", hyp_path, "Hypothesis JSONL")->required();
  wer_cmd->add_option("--out", wer_out, "Report JSON");
  wer_cmd->add_option("--per-utt", per_utt, "Per-utterance ZSWER embedding TSV");

  // toy
  auto* toy_cmd = app.add_subcommand("toy", "Toy model operations");
  toy_cmd->require_subcommand(1);
  std::string toy_spec, toy_out_dir;
  auto* toy_gen = toy_cmd->add_subcommand("gen", "Generate synthetic grouped data");
  toy_gen->add_option("--spec", toy_spec, "SynthSpec JSON")->required();
  toy_gen->add_option("--out", toy_out_dir, "Output directory")->required();

  std::string toy_cfg, toy_init_out;
  auto* toy_init = toy_cmd->add_subcommand("init", "Initialize a model checkpoint");
  toy_init->add_option("--config", toy_cfg, "ToyConfig JSON")->required();
  toy_init->add_option("--out", toy_init_out, "Output checkpoint")->required();

  std::string tr_model, tr_data, tr_mask = "ALL", tr_opt = "SGD", tr_out;
  double tr_lr = 1e-5;
  size_t tr_batch = 16, tr_epochs = 1;
  uint64_t tr_seed = 0;
  auto* toy_train = toy_cmd->add_subcommand("train", "Partial fine-tuning");
  toy_train->add_option("--model", tr_model, "Input checkpoint")->required();
  toy_train->add_option("--data", tr_data, "Training manifest")->required();
  toy_train->add_option("--mask", tr_mask, "Selector: ALL | FFN | ATTN");
  toy_train->add_option("--lr", tr_lr, "Learning rate");
  toy_train->add_option("--batch", tr_batch, "Batch size");
  toy_train->add_option("--epochs", tr_epochs, "Epochs");
  toy_train->add_option("--optimizer", tr_opt, "SGD | ADAM");
  toy_train->add_option("--seed", tr_seed, "Shuffle seed");
  toy_train->add_option("--out", tr_out, "Output checkpoint")->required();

  std::string ev_model, ev_data, ev_hyp;
  auto* toy_eval = toy_cmd->add_subcommand("eval", "Mean NLL and greedy decode");
  toy_eval->add_option("--model", ev_model, "Checkpoint")->required();
  toy_eval->add_option("--data", ev_data, "Manifest")->required();
  toy_eval->add_option("--hyp-out", ev_hyp, "Write greedy transcripts JSONL");

  // pipeline drivers
  std::string run_cfg;
  auto* run_cmd = app.add_subcommand("run", "Full GRAPAM pipeline");
  run_cmd->add_option("--config", run_cfg, "ExperimentConfig JSON")->required();

  std::string it_cfg;
  size_t it_turns = 3;
  auto* it_cmd = app.add_subcommand("iterate", "Iterative GRAPAM");
  it_cmd->add_option("--config", it_cfg, "ExperimentConfig JSON")->required();
  it_cmd->add_option("--turns", it_turns, "Iteration count");

  std::vector<std::string> het_cfgs;
  bool het_merge_all = false;
  auto* het_cmd = app.add_subcommand("hetero", "Heterogeneous merging");
  het_cmd->add_option("--configs", het_cfgs, "ExperimentConfig JSON files")
      ->required()
      ->expected(-2);
  het_cmd->add_flag("--merge-all", het_merge_all, "Include the MERGE ALL plan");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*merge_cmd) return cmd_merge(plan_path, merge_out);
    if (*cluster_cmd)
      return cmd_cluster(emb_path, cluster_k, cluster_seed, cluster_out,
                         cluster_random);
    if (*pca_cmd) return cmd_pca(pca_emb, pca_dims, pca_standardize, pca_out);
    if (*wer_cmd) return cmd_wer(ref_path, hyp_path, wer_out, per_utt);
    if (*toy_cmd) {
      if (*toy_gen) return cmd_toy_gen(toy_spec, toy_out_dir);
      if (*toy_init) return cmd_toy_init(toy_cfg, toy_init_out);
      if (*toy_train)
        return cmd_toy_train(tr_model, tr_data, tr_mask, tr_lr, tr_batch,
                             tr_epochs, tr_opt, tr_seed, tr_out);
      if (*toy_eval) return cmd_toy_eval(ev_model, ev_data, ev_hyp);
    }
    if (*run_cmd) {
      RunReport report = run_grapam(ExperimentConfig::from_json_file(run_cfg));
      std::cout << report.to_table();
      return 0;
    }
    if (*it_cmd) {
      ExperimentConfig cfg = ExperimentConfig::from_json_file(it_cfg);
      cfg.turns = it_turns;
      RunReport report = run_iterative(cfg);
      std::cout << report.to_table();
      return 0;
    }
    if (*het_cmd) {
      std::vector<ExperimentConfig> cfgs;
      for (const auto& p : het_cfgs)
        cfgs.push_back(ExperimentConfig::from_json_file(p));
      RunReport report = run_heterogeneous(cfgs, het_merge_all);
      std::cout << report.to_table();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
