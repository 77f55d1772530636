#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mivise/data.hpp"
#include "mivise/model.hpp"
#include "mivise/retrieval.hpp"

namespace mivise {

/// Indices into Dataset::pairs. The anchor video and the positive sentence
/// come from the same pair.
struct TripletRecord {
  std::size_t positive = 0;
  std::size_t negative = 0;
};

/// One negative per training pair, uniform over the other training pairs.
/// Deterministic in (seed, epoch).
std::vector<TripletRecord> resample_negatives(const std::vector<std::size_t>& train, std::uint64_t epoch,
                                              std::uint64_t seed);

/// Prepared sequences for one minibatch; all three lists have equal length.
struct TripletBatch {
  std::vector<const SequenceItem*> videos;
  std::vector<const SequenceItem*> positives;
  std::vector<const SequenceItem*> negatives;
};

/// Forward, backward and one ADAM update. Returns the summed objective of the
/// batch before the update. Dropout is drawn from `dropout` when given.
double train_step(Model& model, const AdamConfig& adam, const TripletBatch& batch, Rng* dropout);

/// Objective of a batch without touching the parameters.
double batch_objective(const Model& model, const TripletBatch& batch, Rng* dropout = nullptr);

struct EpochLog {
  int epoch = 0;
  double mean_objective = 0;
  std::optional<double> val_nMR;
};

struct TrainResult {
  Model model;  // best by validation nMR, or the last one without a validation split
  Model last;
  std::vector<double> loss_log;  // mean objective per triplet, one entry per epoch
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  std::optional<double> best_val_nMR;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains on the train split and keeps the best model by validation nMR.
TrainResult train(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct GridEntry {
  Index d = 0;
  Index K = 0;
  double alpha = 0;
  double val_nMR = 0;
};

struct GridResult {
  TrainConfig best_config;
  TrainResult best;
  std::vector<GridEntry> entries;
};

/// Cross-validates d, K and alpha = 10^-p over cfg.grid; empty axes keep the
/// configured value. Needs a validation split.
GridResult grid_search(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// One row of the ablation table: which axes are switched on.
struct AblationRow {
  std::string name;
  LossKind loss = LossKind::pseudo_huber;
  PoolingKind pooling = PoolingKind::attention;
  bool multiple_embeddings = true;
  SimilarityKind similarity = SimilarityKind::mil_max;
};

struct AblationSpec {
  std::vector<AblationRow> rows;

  /// deviseq, base, sa, sa_me, mivise: one feature added per row.
  static AblationSpec standard();

  /// `base` with the row's axes applied; rows without multiple embeddings use K = 1.
  static TrainConfig apply(const TrainConfig& base, const AblationRow& row);
};

struct MeanReport {
  double MR = 0;
  double nMR = 0;
  double R1 = 0;
  double R5 = 0;
  double R10 = 0;
};

MeanReport mean_report(const std::vector<RetrievalReport>& reports);

struct ConfigResult {
  std::string name;
  TrainConfig config;
  std::vector<RetrievalReport> reports;  // test split, one per seed
  MeanReport mean;
};

using RunCallback = std::function<void(const std::string& name, std::uint64_t seed, const RetrievalReport&)>;

/// Trains and tests every row on every seed; rows keep the spec order.
std::vector<ConfigResult> run_ablation(const Dataset& data, const TrainConfig& base, const AblationSpec& spec,
                                       const std::vector<std::uint64_t>& seeds, const RunCallback& on_run = {});

/// One configuration per K (each >= 2), everything else fixed.
std::vector<ConfigResult> sweep_k(const Dataset& data, const TrainConfig& base, const std::vector<Index>& Ks,
                                  const std::vector<std::uint64_t>& seeds, const RunCallback& on_run = {});

std::string mean_table_row(const std::string& name, const MeanReport& m);

}  // namespace mivise
