#include "mivise/trainer.hpp"

#include <cmath>
#include <cstdio>

namespace mivise {

namespace {

constexpr std::uint64_t kNegativeStream = 0x4e67;
constexpr std::uint64_t kShuffleStream = 0x5368;
constexpr std::uint64_t kSubsampleStream = 0x5375;
constexpr std::uint64_t kDropoutStream = 0x4470;

Var<float> build_objective(Graph<float>& g, const Model& model, const TripletBatch& batch, Rng* dropout) {
  const std::size_t B = batch.videos.size();
  if (B == 0) throw ContractError("train_step: empty batch");
  if (batch.positives.size() != B || batch.negatives.size() != B) {
    throw ContractError("train_step: video, positive and negative lists differ in length");
  }
  const auto& cfg = model.config;
  auto videos = encode_batch(g, kVideoPrefix, cfg.video, std::span<const SequenceItem* const>(batch.videos), dropout);
  std::vector<const SequenceItem*> sentences = batch.positives;
  sentences.insert(sentences.end(), batch.negatives.begin(), batch.negatives.end());
  auto sents = encode_batch(g, kSentencePrefix, cfg.sentence, std::span<const SequenceItem* const>(sentences), dropout);
  std::vector<TripletTerms<float>> terms;
  terms.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& v = videos[b];
    const auto& p = sents[b];
    const auto& n = sents[B + b];
    terms.push_back({v.phi, p.phi, n.phi, v.attention, p.attention, n.attention});
  }
  return total_objective(g, std::span<const TripletTerms<float>>(terms), cfg.loss);
}

}  // namespace

std::vector<TripletRecord> resample_negatives(const std::vector<std::size_t>& train, std::uint64_t epoch,
                                              std::uint64_t seed) {
  if (train.size() < 2) throw ContractError("resample_negatives: need at least 2 training pairs");
  Rng rng = Rng::derive(seed, kNegativeStream, epoch);
  std::vector<TripletRecord> out;
  out.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    // Uniform over the other n - 1 positions.
    std::size_t j = static_cast<std::size_t>(rng.uniform_index(train.size() - 1));
    if (j >= i) ++j;
    out.push_back({train[i], train[j]});
  }
  return out;
}

double train_step(Model& model, const AdamConfig& adam, const TripletBatch& batch, Rng* dropout) {
  Graph<float> g(&model.params);
  Var<float> loss = build_objective(g, model, batch, dropout);
  const double value = loss.scalar();
  if (!std::isfinite(value)) throw DivergenceError("objective became non-finite");
  const auto grads = g.backward(loss);
  adam_step(model.params, grads, adam);
  return value;
}

double batch_objective(const Model& model, const TripletBatch& batch, Rng* dropout) {
  Graph<float> g(&model.params);
  return build_objective(g, model, batch, dropout).scalar();
}

TrainResult train(const Dataset& data, const TrainConfig& cfg_in, const EpochCallback& on_epoch) {
  const std::vector<std::size_t> train_idx = data.indices(Split::train);
  if (train_idx.empty()) throw ContractError("train: empty train split");
  const std::vector<std::size_t> val_idx = data.indices(Split::val);

  TrainResult result;
  Model model = init_model(cfg_in, data.video_dim, data.sentence_dim);
  const TrainConfig& cfg = model.config;
  const AdamConfig adam{cfg.learning_rate};

  // Per-epoch subsampled sequences, addressed by pair index.
  std::vector<SequenceItem> video_items(data.pairs.size());
  std::vector<SequenceItem> sentence_items(data.pairs.size());
  std::uint64_t global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    auto triplets = resample_negatives(train_idx, e, cfg.seed);
    Rng shuffle = Rng::derive(cfg.seed, kShuffleStream, e);
    shuffle.shuffle(triplets);
    Rng sub = Rng::derive(cfg.seed, kSubsampleStream, e);
    for (std::size_t p : train_idx) {
      video_items[p] = subsample_sequence(data.pairs[p].video, cfg.video.max_len, SubsampleMode::train, &sub);
      sentence_items[p] = subsample_sequence(data.pairs[p].sentence, cfg.sentence.max_len, SubsampleMode::train, &sub);
    }

    double total = 0;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < triplets.size(); start += bs) {
      const std::size_t end = std::min(triplets.size(), start + bs);
      TripletBatch batch;
      for (std::size_t t = start; t < end; ++t) {
        batch.videos.push_back(&video_items[triplets[t].positive]);
        batch.positives.push_back(&sentence_items[triplets[t].positive]);
        batch.negatives.push_back(&sentence_items[triplets[t].negative]);
      }
      Rng dropout = Rng::derive(cfg.seed, kDropoutStream, ++global_step);
      try {
        total += train_step(model, adam, batch, &dropout);
      } catch (const DivergenceError&) {
        throw DivergenceError("train: objective became non-finite at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(global_step));
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.mean_objective = total / static_cast<double>(triplets.size());
    result.loss_log.push_back(log.mean_objective);
    const bool eval_now = !val_idx.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (eval_now) {
      log.val_nMR = evaluate(data, std::span<const std::size_t>(val_idx), model).nMR;
      if (!result.best_val_nMR || *log.val_nMR < *result.best_val_nMR) {
        result.best_val_nMR = log.val_nMR;
        result.best_epoch = epoch;
        result.model = model;
      }
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (!result.best_val_nMR) {
    result.model = model;
    result.best_epoch = cfg.epochs;
  }
  result.last = std::move(model);
  return result;
}

GridResult grid_search(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (data.indices(Split::val).empty()) throw ContractError("grid_search: needs a validation split");
  const std::vector<Index> ds = cfg.grid.d.empty() ? std::vector<Index>{cfg.video.d} : cfg.grid.d;
  const std::vector<Index> Ks = cfg.grid.K.empty() ? std::vector<Index>{cfg.video.K} : cfg.grid.K;
  std::vector<double> alphas;
  if (cfg.grid.p.empty()) {
    alphas.push_back(cfg.loss.alpha);
  } else {
    for (int p : cfg.grid.p) alphas.push_back(std::pow(10.0, -p));
  }
  GridResult out;
  bool have = false;
  for (Index d : ds) {
    for (Index K : Ks) {
      for (double alpha : alphas) {
        TrainConfig c = cfg;
        c.set_d(d);
        c.set_K(K);
        c.loss.alpha = alpha;
        c.grid = {};
        TrainResult r = train(data, c, on_epoch);
        const double nmr = r.best_val_nMR.value_or(HUGE_VAL);
        out.entries.push_back({d, K, alpha, nmr});
        if (!have || nmr < *out.best.best_val_nMR) {
          have = true;
          out.best_config = r.model.config;
          out.best = std::move(r);
        }
      }
    }
  }
  return out;
}

AblationSpec AblationSpec::standard() {
  AblationSpec s;
  s.rows = {
      {"deviseq", LossKind::hinge, PoolingKind::last_states, false, SimilarityKind::concat},
      {"base", LossKind::pseudo_huber, PoolingKind::last_states, false, SimilarityKind::concat},
      {"sa", LossKind::pseudo_huber, PoolingKind::attention, false, SimilarityKind::concat},
      {"sa_me", LossKind::pseudo_huber, PoolingKind::attention, true, SimilarityKind::concat},
      {"mivise", LossKind::pseudo_huber, PoolingKind::attention, true, SimilarityKind::mil_max},
  };
  return s;
}

TrainConfig AblationSpec::apply(const TrainConfig& base, const AblationRow& row) {
  TrainConfig c = base;
  c.loss.loss_kind = row.loss;
  c.loss.similarity_kind = row.similarity;
  c.pooling = row.pooling;
  if (!row.multiple_embeddings) c.set_K(1);
  if (row.multiple_embeddings && c.video.K < 2) {
    throw ContractError("ablation row '" + row.name + "' needs K >= 2");
  }
  return c.resolved();
}

MeanReport mean_report(const std::vector<RetrievalReport>& reports) {
  MeanReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.MR += static_cast<double>(r.MR);
    m.nMR += r.nMR;
    m.R1 += r.R1;
    m.R5 += r.R5;
    m.R10 += r.R10;
  }
  const double n = static_cast<double>(reports.size());
  m.MR /= n;
  m.nMR /= n;
  m.R1 /= n;
  m.R5 /= n;
  m.R10 /= n;
  return m;
}

namespace {

ConfigResult run_config(const Dataset& data, const std::string& name, const TrainConfig& cfg,
                        const std::vector<std::uint64_t>& seeds, const RunCallback& on_run) {
  if (seeds.empty()) throw ContractError("run: need at least one seed");
  ConfigResult out;
  out.name = name;
  out.config = cfg;
  for (std::uint64_t seed : seeds) {
    TrainConfig c = cfg;
    c.seed = seed;
    const TrainResult r = train(data, c);
    out.reports.push_back(evaluate(data, Split::test, r.model));
    if (on_run) on_run(name, seed, out.reports.back());
  }
  out.mean = mean_report(out.reports);
  return out;
}

}  // namespace

std::vector<ConfigResult> run_ablation(const Dataset& data, const TrainConfig& base, const AblationSpec& spec,
                                       const std::vector<std::uint64_t>& seeds, const RunCallback& on_run) {
  std::vector<TrainConfig> configs;
  for (const auto& row : spec.rows) {
    configs.push_back(AblationSpec::apply(base, row));
    configs.back().validate();
  }
  std::vector<ConfigResult> out;
  for (std::size_t i = 0; i < spec.rows.size(); ++i) out.push_back(run_config(data, spec.rows[i].name, configs[i], seeds, on_run));
  return out;
}

std::vector<ConfigResult> sweep_k(const Dataset& data, const TrainConfig& base, const std::vector<Index>& Ks,
                                  const std::vector<std::uint64_t>& seeds, const RunCallback& on_run) {
  if (Ks.empty()) throw ContractError("sweep_k: empty K list");
  for (Index K : Ks)
    if (K < 2) throw ContractError("sweep_k: K values must be >= 2, got " + std::to_string(K));
  std::vector<ConfigResult> out;
  for (Index K : Ks) {
    TrainConfig c = base;
    c.set_K(K);
    c = c.resolved();
    out.push_back(run_config(data, "K=" + std::to_string(K), c, seeds, on_run));
  }
  return out;
}

std::string mean_table_row(const std::string& name, const MeanReport& m) {
  char mr[64];
  std::snprintf(mr, sizeof(mr), "%.1f (%.2f)", m.MR, m.nMR);
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-12s | %-16s | %6.2f | %6.2f | %6.2f", name.c_str(), mr, m.R1, m.R5, m.R10);
  return buf;
}

}  // namespace mivise
