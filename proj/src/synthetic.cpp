#include "mivise/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

#include "mivise/rng.hpp"

namespace mivise {

namespace {

constexpr std::uint64_t kConceptStream = 0xc0;
constexpr std::uint64_t kPairStream = 0xc1;
constexpr std::uint64_t kSplitSeedStream = 0xc2;

Matrix<float> unit_directions(Index dim, std::size_t count, Rng& rng) {
  Matrix<float> m(dim, static_cast<Index>(count));
  for (Index c = 0; c < m.cols(); ++c) {
    Vector<double> v(dim);
    do {
      for (Index i = 0; i < dim; ++i) v(i) = rng.normal();
    } while (v.norm() < 1e-6);
    m.col(c) = (v / v.norm()).cast<float>();
  }
  return m;
}

// Distinct draws from `pool`, order randomised.
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t n, Rng& rng) {
  rng.shuffle(pool);
  pool.resize(n);
  return pool;
}

std::vector<Index> segment_lengths(Index total, std::size_t parts, Rng& rng) {
  std::vector<Index> out(parts, total / static_cast<Index>(parts));
  const auto extra = static_cast<std::size_t>(total % static_cast<Index>(parts));
  std::vector<std::size_t> idx(parts);
  for (std::size_t i = 0; i < parts; ++i) idx[i] = i;
  rng.shuffle(idx);
  for (std::size_t i = 0; i < extra; ++i) ++out[idx[i]];
  return out;
}

std::string numbered(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%05zu", prefix, i);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (pairs < 1) throw ContractError("SyntheticSpec: pairs must be >= 1");
  if (!(shared >= 1 && shared <= per_modality && per_modality <= concepts)) {
    throw ContractError("SyntheticSpec: need 1 <= shared <= per_modality <= concepts");
  }
  if (concepts < 2 * per_modality - shared) {
    throw ContractError("SyntheticSpec: concepts must be >= 2*per_modality - shared so private concepts stay unlinked");
  }
  if (!(noise >= 0)) throw ContractError("SyntheticSpec: noise must be >= 0");
  if (video_dim < 1 || sentence_dim < 1) throw ContractError("SyntheticSpec: feature widths must be >= 1");
  if (min_len < static_cast<Index>(per_modality) || max_len < min_len) {
    throw ContractError("SyntheticSpec: need per_modality <= min_len <= max_len");
  }
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus c;
  c.spec = spec;
  Rng concept_rng = Rng::derive(spec.seed, kConceptStream);
  c.video_concepts = unit_directions(spec.video_dim, spec.concepts, concept_rng);
  c.sentence_concepts = unit_directions(spec.sentence_dim, spec.concepts, concept_rng);
  c.pairing.resize(spec.concepts);
  for (std::size_t j = 0; j < spec.concepts; ++j) c.pairing[j] = j;
  concept_rng.shuffle(c.pairing);
  std::vector<std::size_t> inverse(spec.concepts);
  for (std::size_t j = 0; j < spec.concepts; ++j) inverse[c.pairing[j]] = j;

  Rng rng = Rng::derive(spec.seed, kPairStream);
  const std::size_t priv = spec.per_modality - spec.shared;

  auto render = [&](const Matrix<float>& concepts, const std::vector<std::size_t>& ids, std::vector<Segment>& segs) {
    const Index total = rng.uniform_int(spec.min_len, spec.max_len);
    const auto lens = segment_lengths(total, ids.size(), rng);
    Matrix<float> frames(concepts.rows(), total);
    Index at = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      segs.push_back({ids[k], at, lens[k]});
      for (Index t = at; t < at + lens[k]; ++t) {
        for (Index i = 0; i < frames.rows(); ++i) {
          frames(i, t) = concepts(i, static_cast<Index>(ids[k])) + static_cast<float>(spec.noise * rng.normal());
        }
      }
      at += lens[k];
    }
    return frames;
  };

  for (std::size_t n = 0; n < spec.pairs; ++n) {
    std::vector<std::size_t> all(spec.concepts);
    for (std::size_t j = 0; j < spec.concepts; ++j) all[j] = j;
    const auto shared = draw(all, spec.shared, rng);

    // Sentence privates: any textual concept not already shared.
    std::vector<std::size_t> pool;
    for (std::size_t j : all)
      if (std::find(shared.begin(), shared.end(), j) == shared.end()) pool.push_back(j);
    const auto sent_priv = draw(pool, priv, rng);
    std::vector<std::size_t> sentence_ids = shared;
    sentence_ids.insert(sentence_ids.end(), sent_priv.begin(), sent_priv.end());

    // Video privates: visual concepts whose textual mate is absent from the sentence.
    std::set<std::size_t> sentence_set(sentence_ids.begin(), sentence_ids.end());
    pool.clear();
    for (std::size_t v = 0; v < spec.concepts; ++v)
      if (sentence_set.count(inverse[v]) == 0) pool.push_back(v);
    const auto video_priv = draw(pool, priv, rng);
    std::vector<std::size_t> video_ids;
    for (std::size_t j : shared) video_ids.push_back(c.pairing[j]);
    video_ids.insert(video_ids.end(), video_priv.begin(), video_priv.end());

    rng.shuffle(sentence_ids);
    rng.shuffle(video_ids);

    PlantedPair truth;
    truth.pair_id = numbered('p', n);
    truth.shared_concepts = shared;
    FeatureItem video{numbered('v', n), render(c.video_concepts, video_ids, truth.video_segments)};
    FeatureItem sentence{numbered('s', n), render(c.sentence_concepts, sentence_ids, truth.sentence_segments)};
    c.manifest.push_back({truth.pair_id, "videos.mvft#" + video.id, "sentences.mvft#" + sentence.id, Split::none});
    c.videos.push_back(std::move(video));
    c.sentences.push_back(std::move(sentence));
    c.truth.push_back(std::move(truth));
  }
  if (spec.pairs >= 10) c.manifest = split_dataset(std::move(c.manifest), Rng::derive(spec.seed, kSplitSeedStream).next());
  return c;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_features(dir / "videos.mvft", corpus.videos);
  write_features(dir / "sentences.mvft", corpus.sentences);
  write_manifest(dir / "manifest.tsv", corpus.manifest);

  using nlohmann::json;
  auto segs = [](const std::vector<Segment>& s) {
    json a = json::array();
    for (const auto& x : s) a.push_back({{"concept", x.concept_id}, {"start", x.start}, {"length", x.length}});
    return a;
  };
  json j;
  const auto& s = corpus.spec;
  j["spec"] = {{"pairs", s.pairs},         {"concepts", s.concepts}, {"per_modality", s.per_modality},
               {"shared", s.shared},       {"video_dim", s.video_dim}, {"sentence_dim", s.sentence_dim},
               {"min_len", s.min_len},     {"max_len", s.max_len},   {"noise", s.noise},
               {"seed", s.seed}};
  j["pairing"] = corpus.pairing;
  j["pairs"] = json::array();
  for (const auto& t : corpus.truth) {
    j["pairs"].push_back({{"id", t.pair_id},
                          {"shared", t.shared_concepts},
                          {"video_segments", segs(t.video_segments)},
                          {"sentence_segments", segs(t.sentence_segments)}});
  }
  std::ofstream os(dir / "concepts.json", std::ios::trunc);
  os << j.dump(1) << '\n';
}

Dataset to_dataset(const SyntheticCorpus& corpus) {
  Dataset ds;
  ds.video_dim = corpus.spec.video_dim;
  ds.sentence_dim = corpus.spec.sentence_dim;
  for (std::size_t i = 0; i < corpus.manifest.size(); ++i) {
    PairData p;
    p.id = corpus.manifest[i].pair_id;
    p.video_id = corpus.videos[i].id;
    p.video = corpus.videos[i].frames;
    p.sentence = corpus.sentences[i].frames;
    p.split = corpus.manifest[i].split;
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

}  // namespace mivise
