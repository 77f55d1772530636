#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "mivise/retrieval.hpp"
#include "test_util.hpp"

using namespace mivise;
using testutil::mat;

namespace {

Model small_model(SimilarityKind sim, Index K = 3) {
  TrainConfig cfg;
  cfg.set_d(8);
  cfg.set_K(K);
  cfg.set_max_len(6);
  cfg.loss.similarity_kind = sim;
  return init_model(cfg, 5, 4);
}

std::vector<FeatureItem> random_videos(std::size_t n, Rng& rng, const std::string& prefix = "v") {
  std::vector<FeatureItem> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({prefix + std::to_string(i), testutil::random<float>(5, 3 + static_cast<Index>(i % 4), rng)});
  }
  return out;
}

}  // namespace

TEST_CASE("score examples") {
  const auto e = mat<float>(2, 2, {1, 0, 0, 1});
  CHECK(mil_score(e, e) == doctest::Approx(1.0));
  CHECK(mil_score(mat<float>(1, 2, {1, 0}), mat<float>(1, 2, {0, 1})) == doctest::Approx(0.0));
  CHECK(mil_score(e, mat<float>(2, 2, {0.6f, 0.8f, -1, 0})) == doctest::Approx(0.8));

  // Concat score is the cosine of the flattened matrices.
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix<float> a = testutil::random<float>(3, 5, rng), b = testutil::random<float>(3, 5, rng);
    const auto na = normalize_embedding(a), nb = normalize_embedding(b);
    const double flat = static_cast<double>(a.cwiseProduct(b).sum()) / (a.norm() * b.norm());
    CHECK(concat_score(na, nb.rows, nb.weights) == doctest::Approx(flat).epsilon(1e-5));
    CHECK(concat_score(na, nb.rows, nb.weights) == doctest::Approx(concat_score(nb, na.rows, na.weights)));
    CHECK(mil_score(na.rows, nb.rows) == doctest::Approx(mil_score(nb.rows, na.rows)));
  }
}

TEST_CASE("normalisation") {
  Rng rng(5);
  const Matrix<float> phi = testutil::random<float>(4, 6, rng, 10.0);
  const auto n = normalize_embedding(phi);
  for (Index i = 0; i < 4; ++i) CHECK(std::abs(n.rows.row(i).norm() - 1.0f) < 1e-6f);
  CHECK(n.weights.squaredNorm() == doctest::Approx(1.0));
  Matrix<float> zero = phi;
  zero.row(2).setZero();
  CHECK_THROWS_WITH_AS(normalize_embedding(zero), doctest::Contains("row 2"), DegenerateError);
}

TEST_CASE("pessimistic rank examples") {
  const std::vector<float> tie = {0.5f, 0.5f, 0.5f, 0.5f};
  for (std::size_t t = 0; t < 4; ++t) CHECK(pessimistic_rank(std::span<const float>(tie), t) == 4);
  const std::vector<double> s = {0.9, 0.7, 0.8, 0.1};
  CHECK(pessimistic_rank(std::span<const double>(s), 1) == 3);
  CHECK(pessimistic_rank(std::span<const double>(s), 0) == 1);
  CHECK(pessimistic_rank(std::span<const double>(s), 3) == 4);
  CHECK_THROWS_AS(pessimistic_rank(std::span<const double>(s), 4), ContractError);
}

TEST_CASE("report from ranks") {
  const auto r = report_from_ranks({1, 3, 7, 20}, 50);
  CHECK(r.MR == 3);
  CHECK(r.nMR == doctest::Approx(6.0));
  CHECK(r.R1 == doctest::Approx(25.0));
  CHECK(r.R5 == doctest::Approx(50.0));
  CHECK(r.R10 == doctest::Approx(75.0));
  CHECK(report_from_ranks({4, 2, 9}, 10).MR == 4);
  CHECK(report_from_ranks({5}, 10).MR == 5);
  CHECK(normalized_median_rank(5, 10) == doctest::Approx(50.0));
  CHECK(normalized_median_rank(1, 1) == doctest::Approx(100.0));
  CHECK_THROWS_AS(report_from_ranks({}, 10), ContractError);
  CHECK_THROWS_AS(normalized_median_rank(1, 0), ContractError);

  const auto j = to_json(r);
  for (const char* key : {"N", "Q", "MR", "nMR", "R1", "R5", "R10", "ranks"}) CHECK(j.contains(key));
  CHECK(table_row("x", r).find("3 (6.00)") != std::string::npos);
}

TEST_CASE("evaluate_scores matches brute force") {
  Rng rng(6);
  const Matrix<double> s = testutil::random<double>(7, 11, rng);
  std::vector<std::size_t> truth;
  for (Index q = 0; q < 7; ++q) truth.push_back(static_cast<std::size_t>(q));
  const auto r = evaluate_scores(s, truth);
  for (Index q = 0; q < 7; ++q) {
    std::size_t rank = 1;
    for (Index j = 0; j < 11; ++j) rank += (j != q && s(q, j) >= s(q, q));
    CHECK(r.ranks[static_cast<std::size_t>(q)] == rank);
  }
  CHECK(r.N == 11);
}

TEST_CASE("query: full permutation, ordering and tie-breaking") {
  for (auto sim : {SimilarityKind::mil_max, SimilarityKind::concat}) {
    CAPTURE(to_string(sim));
    const Model m = small_model(sim);
    Rng rng(7);
    const auto videos = random_videos(9, rng);
    const auto index = build_index(m, videos);
    const Matrix<float> sentence = testutil::random<float>(4, 5, rng);
    const auto all = query(m, sentence, index, 9);
    REQUIRE(all.hits.size() == 9);
    std::set<std::string> ids;
    for (const auto& h : all.hits) ids.insert(h.id);
    CHECK(ids.size() == 9);
    for (std::size_t i = 1; i < 9; ++i) CHECK(all.hits[i - 1].score >= all.hits[i].score);
    const auto top3 = query(m, sentence, index, 3);
    REQUIRE(top3.hits.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(top3.hits[i].id == all.hits[i].id);
    CHECK(query(m, sentence, index, 50).hits.size() == 9);
    CHECK_THROWS_AS(query(m, sentence, index, 0), ContractError);

    // Position in the ranked list agrees with the pessimistic rank when scores are distinct.
    for (std::size_t pos = 0; pos < 9; ++pos) CHECK(rank_of(m, sentence, index, all.hits[pos].id) == pos + 1);

    const Index K = m.config.video.K;
    const std::uint64_t per_item = sim == SimilarityKind::mil_max ? static_cast<std::uint64_t>(K * K)
                                                                  : static_cast<std::uint64_t>(K);
    CHECK(all.row_pairs == 9 * per_item);
  }

  // Identical videos under different ids tie; ascending id breaks it.
  const Model m = small_model(SimilarityKind::mil_max);
  Rng rng(8);
  const Matrix<float> frames = testutil::random<float>(5, 4, rng);
  const auto index = build_index(m, {{"b", frames}, {"c", frames}, {"a", frames}});
  const auto hits = query(m, testutil::random<float>(4, 3, rng), index, 3).hits;
  CHECK(hits[0].id == "a");
  CHECK(hits[1].id == "b");
  CHECK(hits[2].id == "c");
  CHECK(rank_of(m, testutil::random<float>(4, 3, rng), index, "a") == 3);
}

TEST_CASE("index contracts") {
  const Model m = small_model(SimilarityKind::mil_max);
  Rng rng(9);
  const auto empty = build_index(m, {});
  CHECK(empty.empty());
  CHECK(empty.K == 3);
  const Matrix<float> sentence = testutil::random<float>(4, 3, rng);
  CHECK_THROWS_WITH_AS(query(m, sentence, empty, 5), doctest::Contains("empty index"), ContractError);

  const auto one = build_index(m, random_videos(1, rng));
  CHECK(rank_of(m, sentence, one, "v0") == 1);
  CHECK(query(m, sentence, one, 10).hits.size() == 1);

  auto dup = random_videos(2, rng);
  dup[1].id = dup[0].id;
  CHECK_THROWS_WITH_AS(build_index(m, dup), doctest::Contains("duplicate id"), ContractError);
  CHECK_THROWS_AS(build_index(m, {{"x", testutil::random<float>(6, 3, rng)}}), DimensionError);
  CHECK_THROWS_AS(rank_of(m, sentence, one, "nope"), ContractError);

  const auto idx = build_index(m, random_videos(5, rng));
  for (const auto& item : idx.items)
    for (Index i = 0; i < item.rows(); ++i) CHECK(std::abs(item.row(i).norm() - 1.0f) < 1e-6f);
}

TEST_CASE("work counter is N*K^2 for the max similarity") {
  for (Index K : {1, 4}) {
    const Model m = small_model(SimilarityKind::mil_max, K);
    Rng rng(10);
    for (std::size_t N : {1u, 10u, 25u}) {
      const auto index = build_index(m, random_videos(N, rng));
      ScoreCounter c;
      score_all(embed_sentence(m, testutil::random<float>(4, 3, rng)).phi, index, &c);
      CHECK(c.row_pairs == N * static_cast<std::uint64_t>(K * K));
    }
  }
}

TEST_CASE("evaluate over a dataset") {
  const Model m = small_model(SimilarityKind::mil_max);
  Rng rng(11);
  Dataset ds;
  ds.video_dim = 5;
  ds.sentence_dim = 4;
  const auto vids = random_videos(4, rng);
  for (std::size_t i = 0; i < 6; ++i) {
    // Pairs 4 and 5 reuse videos 0 and 1.
    const auto& v = vids[i % 4];
    ds.pairs.push_back({"p" + std::to_string(i), v.id, v.frames, testutil::random<float>(4, 3, rng), "", Split::test});
  }
  const auto r = evaluate(ds, Split::test, m);
  CHECK(r.N == 4);
  CHECK(r.Q == 6);
  const auto index = build_index(m, vids);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.ranks[i] == rank_of(m, ds.pairs[i].sentence, index, vids[i % 4].id));
  CHECK_THROWS_AS(evaluate(ds, Split::val, m), ContractError);
}
