// mivise command-line entry point.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mivise/checkpoint.hpp"
#include "mivise/diagnostics.hpp"
#include "mivise/run_config.hpp"
#include "mivise/synthetic.hpp"
#include "mivise/trainer.hpp"

namespace fs = std::filesystem;
using namespace mivise;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config, "JSON file of dotted keys")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides, "Override a key: key=value (repeatable)");
  cmd->add_option("-o,--out-dir", args.out_dir, "Output directory (key out_dir)");
}

/// defaults < config file < --set < dedicated flags
RunConfig resolve(const CommonArgs& args, const std::vector<std::pair<std::string, json>>& flags) {
  RunConfig cfg;
  if (!args.config.empty()) cfg.merge_file(args.config);
  for (const auto& o : args.overrides) cfg.set(o);
  if (!args.out_dir.empty()) cfg.set("out_dir", args.out_dir);
  for (const auto& [k, v] : flags) cfg.set(k, v);
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

Dataset load_data(const RunConfig& cfg) {
  const std::string manifest = cfg.str("data.manifest");
  if (manifest.empty()) throw ContractError("config key 'data.manifest' is not set");
  const std::string emb = cfg.str("data.embeddings");
  std::optional<EmbeddingTable> table;
  if (!emb.empty()) table = load_embedding_table(emb);
  return load_dataset(manifest, table ? &*table : nullptr);
}

Model load_model(const RunConfig& cfg) {
  const std::string path = cfg.str("data.checkpoint");
  if (path.empty()) throw ContractError("config key 'data.checkpoint' is not set");
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path);
  return load_checkpoint(path).model;
}

std::vector<std::size_t> split_indices(const Dataset& data, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(data.pairs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  return data.indices(parse_split(split));
}

void print_table(const std::vector<ConfigResult>& rows) {
  std::cout << table_header() << '\n';
  for (const auto& r : rows) std::cout << mean_table_row(r.name, r.mean) << '\n';
}

json results_json(const std::vector<ConfigResult>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json reports = json::array();
    for (const auto& rep : r.reports) reports.push_back(to_json(rep));
    out.push_back({{"name", r.name},
                   {"config", to_json(r.config)},
                   {"mean", {{"MR", r.mean.MR}, {"nMR", r.mean.nMR}, {"R1", r.mean.R1}, {"R5", r.mean.R5}, {"R10", r.mean.R10}}},
                   {"reports", reports}});
  }
  return out;
}

int cmd_synth(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const SyntheticCorpus corpus = generate_synthetic(cfg.synthetic_spec());
  write_synthetic(corpus, out);
  std::cout << "wrote " << corpus.manifest.size() << " pairs to " << (out / "manifest.tsv").string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const Dataset data = load_data(cfg);
  const TrainConfig tc = cfg.train_config();
  std::ofstream log(out / "loss_log.tsv", std::ios::trunc);
  log << "epoch\tmean_objective\tval_nMR\n";
  auto on_epoch = [&](const EpochLog& e) {
    log << e.epoch << '\t' << e.mean_objective << '\t';
    if (e.val_nMR) log << *e.val_nMR;
    log << '\n';
    std::fprintf(stderr, "epoch %d objective %.6f%s\n", e.epoch, e.mean_objective,
                 e.val_nMR ? (" val nMR " + std::to_string(*e.val_nMR)).c_str() : "");
  };
  Checkpoint ck;
  if (tc.grid.empty()) {
    TrainResult r = train(data, tc, on_epoch);
    ck.model = std::move(r.model);
    ck.epoch = r.best_epoch;
    ck.running_loss = r.loss_log.at(static_cast<std::size_t>(r.best_epoch - 1));
  } else {
    GridResult g = grid_search(data, tc, on_epoch);
    json entries = json::array();
    for (const auto& e : g.entries) entries.push_back({{"d", e.d}, {"K", e.K}, {"alpha", e.alpha}, {"val_nMR", e.val_nMR}});
    write_json(out / "grid.json", {{"entries", entries}, {"best", to_json(g.best_config)}});
    ck.model = std::move(g.best.model);
    ck.epoch = g.best.best_epoch;
    ck.running_loss = g.best.loss_log.at(static_cast<std::size_t>(g.best.best_epoch - 1));
  }
  save_checkpoint(out / "model.mvck", ck);
  std::cout << "saved " << (out / "model.mvck").string() << " (epoch " << ck.epoch << ")\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const Dataset data = load_data(cfg);
  const Model model = load_model(cfg);
  const auto idx = split_indices(data, cfg.str("data.split"));
  const RetrievalReport r = evaluate(data, std::span<const std::size_t>(idx), model);
  write_json(out / "report.json", to_json(r));
  std::cout << table_header() << '\n' << table_row(cfg.str("data.split"), r) << '\n';
  return 0;
}

int cmd_query(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const Dataset data = load_data(cfg);
  const Model model = load_model(cfg);
  const std::string sentence = cfg.str("query.sentence");
  if (sentence.empty()) throw ContractError("query needs --sentence");
  const auto top = cfg.get("query.top").get<long long>();
  if (top < 1) throw ContractError("config key 'query.top': must be >= 1");

  Matrix<float> features;
  if (const auto ref = parse_feature_ref(sentence)) {
    if (!fs::exists(ref->path)) throw std::runtime_error("missing feature file " + ref->path);
    bool found = false;
    for (auto& item : read_features(ref->path))
      if (item.id == ref->id) {
        features = std::move(item.frames);
        found = true;
      }
    if (!found) throw std::runtime_error("feature id '" + ref->id + "' not in " + ref->path);
  } else {
    const std::string emb = cfg.str("data.embeddings");
    if (emb.empty()) throw ContractError("a text query needs config key 'data.embeddings'");
    features = featurize_sentence(sentence, load_embedding_table(emb));
  }

  std::vector<FeatureItem> videos;
  std::set<std::string> seen;
  for (std::size_t p : split_indices(data, cfg.str("data.split"))) {
    if (seen.insert(data.pairs[p].video_id).second) videos.push_back({data.pairs[p].video_id, data.pairs[p].video});
  }
  const EmbeddingIndex index = build_index(model, videos);
  const QueryResult result = query(model, features, index, static_cast<std::size_t>(top));
  json hits = json::array();
  for (std::size_t i = 0; i < result.hits.size(); ++i) {
    std::printf("%zu\t%s\t%.6f\n", i + 1, result.hits[i].id.c_str(), static_cast<double>(result.hits[i].score));
    hits.push_back({{"rank", i + 1}, {"id", result.hits[i].id}, {"score", result.hits[i].score}});
  }
  write_json(out / "query.json", {{"sentence", sentence}, {"N", index.size()}, {"row_pairs", result.row_pairs}, {"hits", hits}});
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const Dataset data = load_data(cfg);
  auto on_run = [](const std::string& name, std::uint64_t seed, const RetrievalReport& r) {
    std::fprintf(stderr, "%s seed %llu: nMR %.2f\n", name.c_str(), static_cast<unsigned long long>(seed), r.nMR);
  };
  const auto rows = run_ablation(data, cfg.train_config(), AblationSpec::standard(), cfg.seeds("ablate.seeds"), on_run);
  write_json(out / "ablation.json", results_json(rows));
  print_table(rows);
  return 0;
}

int cmd_sweep_k(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const Dataset data = load_data(cfg);
  std::vector<Index> Ks;
  for (const auto& v : cfg.get("sweep.K")) Ks.push_back(v.get<Index>());
  auto on_run = [](const std::string& name, std::uint64_t seed, const RetrievalReport& r) {
    std::fprintf(stderr, "%s seed %llu: nMR %.2f\n", name.c_str(), static_cast<unsigned long long>(seed), r.nMR);
  };
  const auto rows = sweep_k(data, cfg.train_config(), Ks, cfg.seeds("sweep.seeds"), on_run);
  write_json(out / "sweep_k.json", results_json(rows));
  print_table(rows);
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const auto reports = gradcheck_all(cfg.gradcheck_spec());
  json j = json::array();
  double worst = 0;
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-12s %-8s max relative error %.3e %s\n", to_string(r.loss_kind).c_str(),
                to_string(r.similarity_kind).c_str(), r.report.max_error, r.report.passed ? "ok" : "FAIL");
    json e = to_json(r.report);
    e["loss_kind"] = to_string(r.loss_kind);
    e["similarity_kind"] = to_string(r.similarity_kind);
    j.push_back(e);
    worst = std::max(worst, r.report.max_error);
    ok = ok && r.report.passed;
  }
  write_json(out / "gradcheck.json", j);
  // Both ranking losses against the score gap, to show the pseudo-Huber
  // penalty on both sides of the margin.
  const TrainConfig tc = cfg.train_config();
  std::ofstream curve(out / "loss_curve.tsv");
  curve << "delta_score\thinge\tpseudo_huber\n";
  for (int i = 0; i <= 80; ++i) {
    const double x = -1.0 + 0.05 * i;
    curve << x << '\t' << hinge_loss(x, tc.loss.rho) << '\t' << pseudo_huber_loss(x, tc.loss.rho, tc.loss.delta) << '\n';
  }
  std::printf("%s max relative error %.3e (tolerance %.1e)\n", ok ? "PASS" : "FAIL", worst,
              reports.front().report.tolerance);
  return ok ? 0 : 1;
}

int cmd_export_attention(const RunConfig& cfg) {
  const fs::path out = cfg.str("out_dir");
  cfg.write_resolved(out);
  const std::string pair_id = cfg.str("export.pair");
  if (pair_id.empty()) throw ContractError("export-attention needs --pair");
  const Dataset data = load_data(cfg);
  const Model model = load_model(cfg);
  const PairData& pair = data.find(pair_id);
  auto rows = [](const EmbeddingSet<float>& e, Index length) {
    json m = json::array();
    for (Index k = 0; k < e.attention.rows(); ++k) {
      json r = json::array();
      for (Index t = 0; t < length; ++t) r.push_back(e.attention(k, t));
      m.push_back(r);
    }
    return m;
  };
  const auto v = embed_video(model, pair.video);
  const auto s = embed_sentence(model, pair.sentence);
  const Index vlen = std::min(pair.video.cols(), model.config.video.max_len);
  const Index slen = std::min(pair.sentence.cols(), model.config.sentence.max_len);
  const fs::path path = out / ("attention_" + pair_id + ".json");
  write_json(path, {{"pair", pair_id},
                    {"video", {{"id", pair.video_id}, {"K", v.attention.rows()}, {"T", vlen}, {"attention", rows(v, vlen)}}},
                    {"sentence", {{"text", pair.sentence_text}, {"K", s.attention.rows()}, {"T", slen}, {"attention", rows(s, slen)}}},
                    {"similarity", similarity(v.phi, s.phi, model.config.loss.similarity_kind)}});
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiple-instance visual-semantic embedding: training, retrieval and diagnostics"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, eval_args, query_args, ablate_args, sweep_args, grad_args, export_args;
  std::string eval_ck, eval_split, query_ck, query_sentence, query_split, export_ck, export_pair;
  int query_top = 0;

  auto* synth = app.add_subcommand("synth", "Generate a planted-concept synthetic corpus");
  add_common(synth, synth_args);
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes model.mvck and loss_log.tsv");
  add_common(train_cmd, train_args);
  auto* eval = app.add_subcommand("eval", "Sentence-to-video retrieval report for a split");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_ck, "Checkpoint (key data.checkpoint)");
  eval->add_option("--split", eval_split, "train | val | test | all (key data.split)");
  auto* query_cmd = app.add_subcommand("query", "Top-k videos for one sentence");
  add_common(query_cmd, query_args);
  query_cmd->add_option("--checkpoint", query_ck, "Checkpoint (key data.checkpoint)");
  query_cmd->add_option("--sentence", query_sentence, "Sentence text or <file>.mvft#<id> (key query.sentence)");
  query_cmd->add_option("--top", query_top, "Number of results (key query.top)");
  query_cmd->add_option("--split", query_split, "Videos to index: train | val | test | all (key data.split)");
  auto* ablate = app.add_subcommand("ablate", "Five-row ablation table over shared seeds");
  add_common(ablate, ablate_args);
  auto* sweep = app.add_subcommand("sweep-k", "Test nMR for each K in sweep.K");
  add_common(sweep, sweep_args);
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full objective");
  add_common(grad, grad_args);
  auto* exp = app.add_subcommand("export-attention", "Write both attention maps of one pair");
  add_common(exp, export_args);
  exp->add_option("--checkpoint", export_ck, "Checkpoint (key data.checkpoint)");
  exp->add_option("--pair", export_pair, "Pair id (key export.pair)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto flag = [](std::vector<std::pair<std::string, json>>& f, const std::string& key, const std::string& v) {
    if (!v.empty()) f.emplace_back(key, v);
  };
  try {
    if (synth->parsed()) return cmd_synth(resolve(synth_args, {}));
    if (train_cmd->parsed()) return cmd_train(resolve(train_args, {}));
    if (eval->parsed()) {
      std::vector<std::pair<std::string, json>> f;
      flag(f, "data.checkpoint", eval_ck);
      flag(f, "data.split", eval_split);
      return cmd_eval(resolve(eval_args, f));
    }
    if (query_cmd->parsed()) {
      std::vector<std::pair<std::string, json>> f;
      flag(f, "data.checkpoint", query_ck);
      flag(f, "query.sentence", query_sentence);
      flag(f, "data.split", query_split);
      if (query_top != 0) f.emplace_back("query.top", query_top);
      return cmd_query(resolve(query_args, f));
    }
    if (ablate->parsed()) return cmd_ablate(resolve(ablate_args, {}));
    if (sweep->parsed()) return cmd_sweep_k(resolve(sweep_args, {}));
    if (grad->parsed()) return cmd_gradcheck(resolve(grad_args, {}));
    if (exp->parsed()) {
      std::vector<std::pair<std::string, json>> f;
      flag(f, "data.checkpoint", export_ck);
      flag(f, "export.pair", export_pair);
      return cmd_export_attention(resolve(export_args, f));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mivise: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
