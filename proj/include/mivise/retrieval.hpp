#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mivise/data.hpp"
#include "mivise/model.hpp"

namespace mivise {

/// Normalised video embeddings. Rows are unit length; for concat similarity
/// each item also keeps its row weights ||phi_i|| / ||Phi||_F so that the
/// flattened cosine can be recovered from unit rows.
struct EmbeddingIndex {
  std::vector<std::string> ids;
  std::vector<Matrix<float>> items;
  std::vector<Vector<float>> row_weights;
  Index K = 0;
  Index d = 0;
  SimilarityKind similarity = SimilarityKind::mil_max;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

/// An embedding brought into index form: unit rows plus concat row weights.
struct NormalizedEmbedding {
  Matrix<float> rows;
  Vector<float> weights;
};

NormalizedEmbedding normalize_embedding(const Matrix<float>& phi);

/// Counts row-pair dot products touched by scoring.
struct ScoreCounter {
  std::uint64_t row_pairs = 0;
};

/// max_{i,j} <q_i, v_j> over unit rows: K^2 row pairs.
float mil_score(const Matrix<float>& query, const Matrix<float>& item, ScoreCounter* counter = nullptr);

/// Flattened cosine from unit rows and weights: K row pairs.
float concat_score(const NormalizedEmbedding& query, const Matrix<float>& item_rows, const Vector<float>& item_weights,
                   ScoreCounter* counter = nullptr);

/// Index over precomputed (unnormalised) embeddings.
EmbeddingIndex make_index(const std::vector<std::string>& ids, const std::vector<Matrix<float>>& embeddings,
                          SimilarityKind similarity);

/// Encodes every video in eval mode and indexes it.
EmbeddingIndex build_index(const Model& model, const std::vector<FeatureItem>& videos);

/// Scores of one query against every item, in index order.
std::vector<float> score_all(const Matrix<float>& query_phi, const EmbeddingIndex& index,
                             ScoreCounter* counter = nullptr);

struct Hit {
  std::string id;
  float score = 0;
};

struct QueryResult {
  std::vector<Hit> hits;
  std::uint64_t row_pairs = 0;
};

/// Top-k by score descending, id ascending on ties.
QueryResult query_embedding(const Matrix<float>& query_phi, const EmbeddingIndex& index, std::size_t k);
QueryResult query(const Model& model, const Matrix<float>& sentence, const EmbeddingIndex& index, std::size_t k);

/// 1 + #(strictly greater) + #(equal, other item).
std::size_t pessimistic_rank(std::span<const float> scores, std::size_t truth);
std::size_t pessimistic_rank(std::span<const double> scores, std::size_t truth);

std::size_t rank_of(const Model& model, const Matrix<float>& sentence, const EmbeddingIndex& index,
                    const std::string& truth_id);

struct RetrievalReport {
  std::vector<std::size_t> ranks;
  std::size_t MR = 0;
  double nMR = 0;
  double R1 = 0;
  double R5 = 0;
  double R10 = 0;
  std::size_t N = 0;
  std::size_t Q = 0;
};

/// 100 * MR / N.
double normalized_median_rank(std::size_t MR, std::size_t N);

/// Lower median and recall percentages from per-query ranks.
RetrievalReport report_from_ranks(std::vector<std::size_t> ranks, std::size_t N);

/// Q x N score matrix with the truth column per query.
RetrievalReport evaluate_scores(const Matrix<double>& scores, std::span<const std::size_t> truth);

/// Sentence-to-video retrieval over the pairs of one split: the index holds
/// that split's videos, each sentence queries for its paired video.
RetrievalReport evaluate(const Dataset& data, Split split, const Model& model);
RetrievalReport evaluate(const Dataset& data, std::span<const std::size_t> pairs, const Model& model);

nlohmann::json to_json(const RetrievalReport& r);
std::string table_header();
std::string table_row(const std::string& name, const RetrievalReport& r);

}  // namespace mivise
