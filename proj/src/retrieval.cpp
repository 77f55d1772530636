#include "mivise/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

namespace mivise {

NormalizedEmbedding normalize_embedding(const Matrix<float>& phi) {
  NormalizedEmbedding out;
  const Vector<float> norms = phi.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > static_cast<float>(kNormEpsilon))) {
      throw DegenerateError("normalize_embedding: row " + std::to_string(i) + " has near-zero norm");
    }
  }
  out.rows = norms.cwiseInverse().asDiagonal() * phi;
  out.weights = norms / phi.norm();
  return out;
}

float mil_score(const Matrix<float>& query, const Matrix<float>& item, ScoreCounter* counter) {
  if (query.cols() != item.cols()) throw_shape_mismatch("mil_score", query, item);
  const Matrix<float> dots = query * item.transpose();
  if (counter != nullptr) counter->row_pairs += static_cast<std::uint64_t>(query.rows() * item.rows());
  return dots.maxCoeff();
}

float concat_score(const NormalizedEmbedding& query, const Matrix<float>& item_rows, const Vector<float>& item_weights,
                   ScoreCounter* counter) {
  if (query.rows.rows() != item_rows.rows() || query.rows.cols() != item_rows.cols()) {
    throw_shape_mismatch("concat_score", query.rows, item_rows);
  }
  const Vector<float> dots = query.rows.cwiseProduct(item_rows).rowwise().sum();
  if (counter != nullptr) counter->row_pairs += static_cast<std::uint64_t>(item_rows.rows());
  return dots.cwiseProduct(query.weights).cwiseProduct(item_weights).sum();
}

EmbeddingIndex make_index(const std::vector<std::string>& ids, const std::vector<Matrix<float>>& embeddings,
                          SimilarityKind similarity) {
  if (ids.size() != embeddings.size()) throw ContractError("make_index: id and embedding counts differ");
  EmbeddingIndex index;
  index.similarity = similarity;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw ContractError("build_index: duplicate id '" + ids[i] + "'");
    const auto& phi = embeddings[i];
    if (index.items.empty()) {
      index.K = phi.rows();
      index.d = phi.cols();
    } else if (phi.rows() != index.K || phi.cols() != index.d) {
      throw_shape_mismatch("build_index", index.items.front(), phi);
    }
    auto n = normalize_embedding(phi);
    index.ids.push_back(ids[i]);
    index.items.push_back(std::move(n.rows));
    index.row_weights.push_back(std::move(n.weights));
  }
  return index;
}

EmbeddingIndex build_index(const Model& model, const std::vector<FeatureItem>& videos) {
  std::vector<std::string> ids;
  std::vector<Matrix<float>> phis;
  for (const auto& v : videos) {
    if (v.frames.rows() != model.config.video.input_dim) {
      throw DimensionError("build_index: video '" + v.id + "' has width " + std::to_string(v.frames.rows()) +
                           ", model expects " + std::to_string(model.config.video.input_dim));
    }
    ids.push_back(v.id);
    phis.push_back(embed_video(model, v.frames).phi);
  }
  EmbeddingIndex index = make_index(ids, phis, model.config.loss.similarity_kind);
  if (index.empty()) {
    index.K = model.config.video.K;
    index.d = model.config.video.d;
  }
  return index;
}

std::vector<float> score_all(const Matrix<float>& query_phi, const EmbeddingIndex& index, ScoreCounter* counter) {
  if (index.empty()) throw ContractError("query: empty index");
  std::vector<float> scores(index.size());
  const NormalizedEmbedding q = normalize_embedding(query_phi);
  for (std::size_t i = 0; i < index.size(); ++i) {
    scores[i] = index.similarity == SimilarityKind::mil_max
                    ? mil_score(q.rows, index.items[i], counter)
                    : concat_score(q, index.items[i], index.row_weights[i], counter);
  }
  return scores;
}

QueryResult query_embedding(const Matrix<float>& query_phi, const EmbeddingIndex& index, std::size_t k) {
  if (k < 1) throw ContractError("query: k must be >= 1");
  ScoreCounter counter;
  const auto scores = score_all(query_phi, index, &counter);
  std::vector<std::size_t> order(index.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.ids[a] < index.ids[b];
  };
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), better);
  QueryResult out;
  out.row_pairs = counter.row_pairs;
  for (std::size_t i = 0; i < n; ++i) out.hits.push_back({index.ids[order[i]], scores[order[i]]});
  return out;
}

QueryResult query(const Model& model, const Matrix<float>& sentence, const EmbeddingIndex& index, std::size_t k) {
  if (index.empty()) throw ContractError("query: empty index");
  return query_embedding(embed_sentence(model, sentence).phi, index, k);
}

namespace {

template <typename T>
std::size_t rank_impl(std::span<const T> scores, std::size_t truth) {
  if (truth >= scores.size()) throw ContractError("rank_of: truth index out of range");
  const T s = scores[truth];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == truth) continue;
    if (scores[i] >= s) ++rank;
  }
  return rank;
}

}  // namespace

std::size_t pessimistic_rank(std::span<const float> scores, std::size_t truth) { return rank_impl(scores, truth); }
std::size_t pessimistic_rank(std::span<const double> scores, std::size_t truth) { return rank_impl(scores, truth); }

std::size_t rank_of(const Model& model, const Matrix<float>& sentence, const EmbeddingIndex& index,
                    const std::string& truth_id) {
  const auto it = std::find(index.ids.begin(), index.ids.end(), truth_id);
  if (it == index.ids.end()) throw ContractError("rank_of: unknown truth id '" + truth_id + "'");
  const auto scores = score_all(embed_sentence(model, sentence).phi, index);
  return pessimistic_rank(std::span<const float>(scores), static_cast<std::size_t>(it - index.ids.begin()));
}

double normalized_median_rank(std::size_t MR, std::size_t N) {
  if (N == 0) throw ContractError("normalized_median_rank: N must be >= 1");
  return 100.0 * static_cast<double>(MR) / static_cast<double>(N);
}

RetrievalReport report_from_ranks(std::vector<std::size_t> ranks, std::size_t N) {
  if (ranks.empty()) throw ContractError("evaluate: empty split");
  RetrievalReport r;
  r.N = N;
  r.Q = ranks.size();
  std::vector<std::size_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  r.MR = sorted[(r.Q + 1) / 2 - 1];
  r.nMR = normalized_median_rank(r.MR, N);
  auto recall = [&](std::size_t k) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t x) { return x <= k; });
    return 100.0 * static_cast<double>(hits) / static_cast<double>(r.Q);
  };
  r.R1 = recall(1);
  r.R5 = recall(5);
  r.R10 = recall(10);
  r.ranks = std::move(ranks);
  return r;
}

RetrievalReport evaluate_scores(const Matrix<double>& scores, std::span<const std::size_t> truth) {
  if (static_cast<std::size_t>(scores.rows()) != truth.size()) throw ContractError("evaluate: one truth per query");
  std::vector<std::size_t> ranks;
  std::vector<double> row(static_cast<std::size_t>(scores.cols()));
  for (Index q = 0; q < scores.rows(); ++q) {
    for (Index j = 0; j < scores.cols(); ++j) row[static_cast<std::size_t>(j)] = scores(q, j);
    ranks.push_back(pessimistic_rank(std::span<const double>(row), truth[static_cast<std::size_t>(q)]));
  }
  return report_from_ranks(std::move(ranks), static_cast<std::size_t>(scores.cols()));
}

RetrievalReport evaluate(const Dataset& data, std::span<const std::size_t> pairs, const Model& model) {
  if (pairs.empty()) throw ContractError("evaluate: empty split");
  // Pairs sharing a video share one index entry.
  std::vector<FeatureItem> videos;
  std::map<std::string, std::size_t> slot;
  for (std::size_t p : pairs) {
    const auto& pair = data.pairs.at(p);
    if (slot.emplace(pair.video_id, videos.size()).second) videos.push_back({pair.video_id, pair.video});
  }
  const EmbeddingIndex index = build_index(model, videos);
  std::vector<std::size_t> ranks;
  ranks.reserve(pairs.size());
  for (std::size_t p : pairs) {
    const auto& pair = data.pairs[p];
    const auto scores = score_all(embed_sentence(model, pair.sentence).phi, index);
    ranks.push_back(pessimistic_rank(std::span<const float>(scores), slot.at(pair.video_id)));
  }
  return report_from_ranks(std::move(ranks), index.size());
}

RetrievalReport evaluate(const Dataset& data, Split split, const Model& model) {
  const auto idx = data.indices(split);
  if (idx.empty()) throw ContractError("evaluate: split '" + to_string(split) + "' is empty");
  return evaluate(data, std::span<const std::size_t>(idx), model);
}

nlohmann::json to_json(const RetrievalReport& r) {
  return {{"N", r.N}, {"Q", r.Q}, {"MR", r.MR}, {"nMR", r.nMR}, {"R1", r.R1}, {"R5", r.R5}, {"R10", r.R10},
          {"ranks", r.ranks}};
}

std::string table_header() {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s | %-16s | %6s | %6s | %6s", "Method", "MR (nMR)", "R@1", "R@5", "R@10");
  return buf;
}

std::string table_row(const std::string& name, const RetrievalReport& r) {
  char mr[64];
  std::snprintf(mr, sizeof(mr), "%zu (%.2f)", r.MR, r.nMR);
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-12s | %-16s | %6.2f | %6.2f | %6.2f", name.c_str(), mr, r.R1, r.R5, r.R10);
  return buf;
}

}  // namespace mivise
