#include "mivise/model.hpp"

#include <cmath>

namespace mivise {

using nlohmann::json;

std::string to_string(LossKind k) { return k == LossKind::hinge ? "hinge" : "pseudo_huber"; }
std::string to_string(SimilarityKind k) { return k == SimilarityKind::concat ? "concat" : "mil_max"; }
std::string to_string(PoolingKind k) { return k == PoolingKind::last_states ? "last_states" : "attention"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "hinge") return LossKind::hinge;
  if (s == "pseudo_huber") return LossKind::pseudo_huber;
  throw ContractError("unknown loss kind '" + s + "' (hinge | pseudo_huber)");
}

SimilarityKind parse_similarity_kind(const std::string& s) {
  if (s == "concat") return SimilarityKind::concat;
  if (s == "mil_max") return SimilarityKind::mil_max;
  throw ContractError("unknown similarity kind '" + s + "' (concat | mil_max)");
}

PoolingKind parse_pooling_kind(const std::string& s) {
  if (s == "last_states") return PoolingKind::last_states;
  if (s == "attention") return PoolingKind::attention;
  throw ContractError("unknown pooling kind '" + s + "' (last_states | attention)");
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig out = *this;
  out.video.pooling = out.sentence.pooling = pooling;
  if (pooling == PoolingKind::last_states) out.set_K(1);
  return out;
}

void TrainConfig::validate() const {
  video.validate();
  sentence.validate();
  loss.validate();
  if (video.d != sentence.d || video.K != sentence.K) {
    throw ContractError("TrainConfig: video and sentence encoders must share d and K");
  }
  if (video.pooling != pooling || sentence.pooling != pooling) throw ContractError("TrainConfig: unresolved pooling");
  if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw ContractError("TrainConfig: epochs must be >= 1");
  if (!(learning_rate >= 0)) throw ContractError("TrainConfig: learning_rate must be >= 0");
  if (eval_every < 1) throw ContractError("TrainConfig: eval_every must be >= 1");
  for (int p : grid.p)
    if (p < 1) throw ContractError("TrainConfig: grid exponents p must be >= 1");
}

namespace {

json encoder_json(const EncoderConfig& e) {
  return {{"input_dim", e.input_dim}, {"d", e.d},   {"u", e.u}, {"K", e.K}, {"dropout", e.dropout_rate},
          {"max_len", e.max_len},     {"pooling", to_string(e.pooling)}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig e;
  e.input_dim = j.at("input_dim").get<Index>();
  e.d = j.at("d").get<Index>();
  e.u = j.at("u").get<Index>();
  e.K = j.at("K").get<Index>();
  e.dropout_rate = j.at("dropout").get<double>();
  e.max_len = j.at("max_len").get<Index>();
  e.pooling = parse_pooling_kind(j.at("pooling").get<std::string>());
  return e;
}

}  // namespace

json to_json(const TrainConfig& cfg) {
  return {{"video", encoder_json(cfg.video)},
          {"sentence", encoder_json(cfg.sentence)},
          {"loss",
           {{"rho", cfg.loss.rho},
            {"delta", cfg.loss.delta},
            {"alpha", cfg.loss.alpha},
            {"beta", cfg.loss.beta},
            {"kind", to_string(cfg.loss.loss_kind)},
            {"similarity", to_string(cfg.loss.similarity_kind)}}},
          {"pooling", to_string(cfg.pooling)},
          {"learning_rate", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"eval_every", cfg.eval_every},
          {"grid", {{"d", cfg.grid.d}, {"K", cfg.grid.K}, {"p", cfg.grid.p}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.video = encoder_from_json(j.at("video"));
  cfg.sentence = encoder_from_json(j.at("sentence"));
  const json& l = j.at("loss");
  cfg.loss.rho = l.at("rho").get<double>();
  cfg.loss.delta = l.at("delta").get<double>();
  cfg.loss.alpha = l.at("alpha").get<double>();
  cfg.loss.beta = l.at("beta").get<double>();
  cfg.loss.loss_kind = parse_loss_kind(l.at("kind").get<std::string>());
  cfg.loss.similarity_kind = parse_similarity_kind(l.at("similarity").get<std::string>());
  cfg.pooling = parse_pooling_kind(j.at("pooling").get<std::string>());
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.eval_every = j.at("eval_every").get<int>();
  cfg.grid.d = j.at("grid").at("d").get<std::vector<Index>>();
  cfg.grid.K = j.at("grid").at("K").get<std::vector<Index>>();
  cfg.grid.p = j.at("grid").at("p").get<std::vector<int>>();
  return cfg;
}

Model init_model(const TrainConfig& cfg_in, Index video_dim, Index sentence_dim) {
  Model m;
  m.config = cfg_in.resolved();
  m.config.video.input_dim = video_dim;
  m.config.sentence.input_dim = sentence_dim;
  m.config.validate();
  Rng rng = Rng::derive(m.config.seed, 0x1417);
  init_encoder_params(m.params, kVideoPrefix, m.config.video, rng);
  init_encoder_params(m.params, kSentencePrefix, m.config.sentence, rng);
  return m;
}

SequenceItem subsample_sequence(const Matrix<float>& frames, Index max_len, SubsampleMode mode, Rng* rng) {
  const Index len = frames.cols();
  if (len < 1) throw ContractError("subsample_sequence: empty sequence");
  if (max_len < 1) throw ContractError("subsample_sequence: max_len must be >= 1");
  SequenceItem out;
  out.features = Matrix<float>::Zero(frames.rows(), max_len);
  if (len <= max_len) {
    out.features.leftCols(len) = frames;
    out.length = len;
    return out;
  }
  out.length = max_len;
  if (mode == SubsampleMode::train) {
    if (rng == nullptr) throw ContractError("subsample_sequence: train mode needs a generator");
    const Index stride = rng->uniform_int(1, len / max_len);
    const Index start = rng->uniform_int(0, len - stride * max_len);
    for (Index i = 0; i < max_len; ++i) out.features.col(i) = frames.col(start + stride * i);
  } else {
    for (Index i = 0; i < max_len; ++i) {
      const double pos = max_len == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(len - 1) /
                                                  static_cast<double>(max_len - 1);
      out.features.col(i) = frames.col(static_cast<Index>(std::llround(pos)));
    }
  }
  return out;
}

EmbeddingSet<float> embed_video(const Model& model, const Matrix<float>& frames) {
  const auto item = subsample_sequence(frames, model.config.video.max_len, SubsampleMode::eval, nullptr);
  return encode(model.params, kVideoPrefix, model.config.video, item, false);
}

EmbeddingSet<float> embed_sentence(const Model& model, const Matrix<float>& frames) {
  const auto item = subsample_sequence(frames, model.config.sentence.max_len, SubsampleMode::eval, nullptr);
  return encode(model.params, kSentencePrefix, model.config.sentence, item, false);
}

}  // namespace mivise
