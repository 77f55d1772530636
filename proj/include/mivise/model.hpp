#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mivise/encoder.hpp"
#include "mivise/objective.hpp"

namespace mivise {

inline const std::string kVideoPrefix = "video";
inline const std::string kSentencePrefix = "sentence";

/// Optional cross-validation grid; alpha candidates are 10^-p.
struct HyperGrid {
  std::vector<Index> d;
  std::vector<Index> K;
  std::vector<int> p;

  bool empty() const { return d.empty() && K.empty() && p.empty(); }
};

struct TrainConfig {
  EncoderConfig video;
  EncoderConfig sentence;
  LossConfig loss;
  PoolingKind pooling = PoolingKind::attention;
  double learning_rate = 2e-4;
  int epochs = 500;
  int batch_size = 100;
  std::uint64_t seed = 1;
  int eval_every = 1;
  HyperGrid grid;

  TrainConfig() {
    video.input_dim = 2048;
    sentence.input_dim = 200;
  }

  /// Shared width/count setters; both encoders must agree on d and K.
  void set_d(Index d) { video.d = sentence.d = d; video.u = sentence.u = d; }
  void set_K(Index K) { video.K = sentence.K = K; }
  void set_dropout(double r) { video.dropout_rate = sentence.dropout_rate = r; }
  void set_max_len(Index n) { video.max_len = sentence.max_len = n; }

  /// Copies `pooling` into both encoders and forces K = 1 for last-state pooling.
  TrainConfig resolved() const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

std::string to_string(LossKind k);
std::string to_string(SimilarityKind k);
std::string to_string(PoolingKind k);
LossKind parse_loss_kind(const std::string& s);
SimilarityKind parse_similarity_kind(const std::string& s);
PoolingKind parse_pooling_kind(const std::string& s);

/// Trained or freshly initialised parameters with the configuration that shaped them.
struct Model {
  TrainConfig config;
  ParamStore<float> params;
};

/// Seeded initialisation; input widths come from the data.
Model init_model(const TrainConfig& cfg, Index video_dim, Index sentence_dim);

enum class SubsampleMode { train, eval };

/// Fit a raw sequence into max_len steps, zero padded. Long sequences are
/// strided: at train time with a random stride in [1, floor(len / max_len)]
/// and a random start, at eval time at indices round(i (len-1) / (max_len-1)).
SequenceItem subsample_sequence(const Matrix<float>& frames, Index max_len, SubsampleMode mode, Rng* rng);

/// Inference-mode embeddings (eval subsampling, no dropout).
EmbeddingSet<float> embed_video(const Model& model, const Matrix<float>& frames);
EmbeddingSet<float> embed_sentence(const Model& model, const Matrix<float>& frames);

}  // namespace mivise
