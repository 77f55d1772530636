#include "mivise/diagnostics.hpp"

namespace mivise {

GradReport gradcheck_objective(const ToyGradcheckSpec& spec, LossKind loss, SimilarityKind similarity) {
  if (spec.triplets < 1 || spec.length < 1) throw ContractError("gradcheck: need at least one triplet and one step");
  EncoderConfig video;
  video.input_dim = spec.video_dim;
  video.d = video.u = spec.d;
  video.K = spec.K;
  video.dropout_rate = spec.dropout;
  video.max_len = spec.length;
  video.pooling = spec.pooling;
  EncoderConfig sentence = video;
  sentence.input_dim = spec.sentence_dim;
  LossConfig lc;
  lc.alpha = spec.alpha;
  lc.loss_kind = loss;
  lc.similarity_kind = similarity;
  lc.validate();

  Rng rng = Rng::derive(spec.seed, 1);
  ParamStore<double> params;
  init_encoder_params(params, kVideoPrefix, video, rng);
  init_encoder_params(params, kSentencePrefix, sentence, rng);

  // The last item of each modality is one step short so padding is exercised.
  auto make = [&](Index dim, Index i, Index count) {
    SequenceItem it;
    it.features = Matrix<float>::Zero(dim, spec.length);
    it.length = (i == count - 1 && spec.length > 1) ? spec.length - 1 : spec.length;
    for (Index t = 0; t < it.length; ++t)
      for (Index r = 0; r < dim; ++r) it.features(r, t) = static_cast<float>(rng.normal());
    return it;
  };
  std::vector<SequenceItem> videos, sentences;
  for (Index i = 0; i < spec.triplets; ++i) videos.push_back(make(spec.video_dim, i, spec.triplets));
  for (Index i = 0; i < 2 * spec.triplets; ++i) sentences.push_back(make(spec.sentence_dim, i, 2 * spec.triplets));
  std::vector<const SequenceItem*> vptr, sptr;
  for (const auto& v : videos) vptr.push_back(&v);
  for (const auto& s : sentences) sptr.push_back(&s);

  const std::uint64_t dropout_seed = Rng::derive(spec.seed, 2).next();
  const LossBuilder build = [&](Graph<double>& g) {
    Rng dropout(dropout_seed);  // identical masks on every evaluation
    auto ev = encode_batch(g, kVideoPrefix, video, std::span<const SequenceItem* const>(vptr), &dropout);
    auto es = encode_batch(g, kSentencePrefix, sentence, std::span<const SequenceItem* const>(sptr), &dropout);
    std::vector<TripletTerms<double>> terms;
    const auto B = static_cast<std::size_t>(spec.triplets);
    for (std::size_t b = 0; b < B; ++b) {
      terms.push_back({ev[b].phi, es[b].phi, es[B + b].phi, ev[b].attention, es[b].attention, es[B + b].attention});
    }
    return total_objective(g, std::span<const TripletTerms<double>>(terms), lc);
  };
  GradCheckOptions opts;
  opts.tolerance = spec.tolerance;
  return check_gradients(build, params, spec.eps, opts);
}

std::vector<ObjectiveGradReport> gradcheck_all(const ToyGradcheckSpec& spec) {
  std::vector<ObjectiveGradReport> out;
  for (LossKind l : {LossKind::hinge, LossKind::pseudo_huber})
    for (SimilarityKind s : {SimilarityKind::concat, SimilarityKind::mil_max})
      out.push_back({l, s, gradcheck_objective(spec, l, s)});
  return out;
}

nlohmann::json to_json(const GradReport& r) {
  return {{"max_error", r.max_error},
          {"tolerance", r.tolerance},
          {"coordinates_checked", r.coordinates_checked},
          {"passed", r.passed},
          {"max_relative_error", r.max_relative_error}};
}

}  // namespace mivise
