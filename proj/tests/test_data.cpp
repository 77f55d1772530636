#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "mivise/data.hpp"
#include "mivise/synthetic.hpp"
#include "test_util.hpp"

using namespace mivise;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mivise_test_data";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<FeatureItem> sample_items(Rng& rng) {
  std::vector<FeatureItem> items;
  for (int i = 0; i < 4; ++i) items.push_back({"item_" + std::to_string(i), testutil::random<float>(5, 1 + i * 3, rng)});
  items[1].frames(0, 0) = -0.0f;
  items[2].frames(1, 1) = std::numeric_limits<float>::denorm_min();
  items[3].frames(2, 3) = std::numeric_limits<float>::max();
  items.push_back({"ünïcode id", testutil::random<float>(5, 2, rng)});
  return items;
}

bool bit_equal(const Matrix<float>& a, const Matrix<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("feature files round-trip bit-exactly") {
  Rng rng(1);
  const auto items = sample_items(rng);
  const auto path = scratch("roundtrip.mvft");
  write_features(path, items);
  const auto back = read_features(path);
  REQUIRE(back.size() == items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(back[i].id == items[i].id);
    CHECK(bit_equal(back[i].frames, items[i].frames));
  }

  write_features(path, {});
  CHECK(read_features(path).empty());
  CHECK(slurp(path).size() == 12);
}

TEST_CASE("feature file byte layout") {
  FeatureItem it{"ab", testutil::mat<float>(2, 3, {1, 2, 3, 4, 5, 6})};  // D = 2, T = 3
  const auto path = scratch("layout.mvft");
  write_features(path, {it});
  const std::string bytes = slurp(path);
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(k)]);
    return v;
  };
  auto f32 = [&](std::size_t at) {
    const std::uint32_t v = u32(at);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  };
  CHECK(bytes.substr(0, 4) == "MVFT");
  CHECK(u32(4) == 1);
  CHECK(u32(8) == 1);
  CHECK(u32(12) == 2);
  CHECK(bytes.substr(16, 2) == "ab");
  CHECK(u32(18) == 3);  // T
  CHECK(u32(22) == 2);  // D
  // Row-major T x D: frame 0 = (1, 4), frame 1 = (2, 5), frame 2 = (3, 6).
  const float expected[] = {1, 4, 2, 5, 3, 6};
  for (std::size_t k = 0; k < 6; ++k) CHECK(f32(26 + 4 * k) == expected[k]);
  CHECK(bytes.size() == 26 + 24);
}

TEST_CASE("feature file errors are distinct") {
  Rng rng(2);
  const auto items = sample_items(rng);
  const auto good = scratch("good.mvft");
  write_features(good, items);
  const std::string bytes = slurp(good);

  const auto bad = scratch("bad.mvft");
  {
    std::ofstream os(bad, std::ios::binary);
    os << "MVFX" << bytes.substr(4);
  }
  CHECK_THROWS_WITH_AS(read_features(bad), doctest::Contains("bad magic"), FormatError);

  // Cut inside the third item's values.
  std::size_t cut = 12;
  for (int i = 0; i < 2; ++i) cut += 4 + items[static_cast<std::size_t>(i)].id.size() + 8 + 4 * static_cast<std::size_t>(items[static_cast<std::size_t>(i)].frames.size());
  cut += 4 + items[2].id.size() + 8 + 10;
  {
    std::ofstream os(bad, std::ios::binary);
    os << bytes.substr(0, cut);
  }
  CHECK_THROWS_WITH_AS(read_features(bad), doctest::Contains("item 2"), FormatError);
  CHECK_THROWS_WITH_AS(read_features(bad), doctest::Contains("truncated"), FormatError);

  std::vector<FeatureItem> dup = {items[0], items[0]};
  CHECK_THROWS_WITH_AS(write_features(bad, dup), doctest::Contains("duplicate id"), ContractError);
  // Craft a duplicate on disk by rewriting the second id to the first.
  write_features(bad, {{"aa", testutil::random<float>(2, 1, rng)}, {"ab", testutil::random<float>(2, 1, rng)}});
  std::string twin = slurp(bad);
  const auto second = twin.find("ab");
  twin[second + 1] = 'a';
  {
    std::ofstream os(bad, std::ios::binary);
    os << twin;
  }
  CHECK_THROWS_WITH_AS(read_features(bad), doctest::Contains("duplicate id"), FormatError);
}

TEST_CASE("sentence featurization") {
  EmbeddingTable table;
  table.dim = 3;
  table.vectors["dog"] = Vector<float>::Constant(3, 0.5f);
  table.vectors["cat"] = Vector<float>::Constant(3, -1.0f);
  const auto one = featurize_sentence("Dog", table);
  REQUIRE(one.cols() == 1);
  CHECK(one.col(0) == table.vectors["dog"]);
  const auto three = featurize_sentence("dog zzzqq dog", table);
  REQUIRE(three.cols() == 3);
  CHECK(three.col(0) == table.vectors["dog"]);
  CHECK(three.col(1) == Vector<float>::Zero(3));
  CHECK(three.col(2) == table.vectors["dog"]);
  CHECK(tokenize("MFW I can't remember") == std::vector<std::string>{"mfw", "i", "cant", "remember"});
  CHECK(tokenize("  ... !! ").empty());
  CHECK_THROWS_AS(featurize_sentence("zzzqq qqq", table), ContractError);
  CHECK_THROWS_AS(featurize_sentence("", table), ContractError);
  CHECK_THROWS_AS(featurize_sentence("dog", EmbeddingTable{}), ContractError);

  const auto path = scratch("glove.txt");
  {
    std::ofstream os(path);
    os << "dog 0.5 0.5 0.5\ncat -1 -1 -1\n";
  }
  const auto loaded = load_embedding_table(path);
  CHECK(loaded.dim == 3);
  CHECK(featurize_sentence("Cat, dog!", loaded) == testutil::mat<float>(3, 2, {-1, 0.5, -1, 0.5, -1, 0.5}));
  {
    std::ofstream os(path);
    os << "dog 0.5 0.5 0.5\ncat -1 -1\n";
  }
  CHECK_THROWS_AS(load_embedding_table(path), FormatError);
}

namespace {

std::vector<ManifestRecord> records(std::size_t n) {
  std::vector<ManifestRecord> r;
  for (std::size_t i = 0; i < n; ++i) r.push_back({"p" + std::to_string(i), "v.mvft#v" + std::to_string(i), "text", Split::none});
  return r;
}

std::array<std::size_t, 3> counts(const std::vector<ManifestRecord>& r) {
  std::array<std::size_t, 3> c{};
  for (const auto& x : r) {
    REQUIRE(x.split != Split::none);
    ++c[x.split == Split::train ? 0 : x.split == Split::val ? 1 : 2];
  }
  return c;
}

}  // namespace

TEST_CASE("split_dataset") {
  CHECK(counts(split_dataset(records(10), 1)) == std::array<std::size_t, 3>{8, 1, 1});
  const auto big = counts(split_dataset(records(47172), 1));
  CHECK(big[0] == 37738);
  CHECK(big[1] >= 4716);
  CHECK(big[1] <= 4718);
  CHECK(big[0] + big[1] + big[2] == 47172);
  const auto a = split_dataset(records(100), 9), b = split_dataset(records(100), 9), c = split_dataset(records(100), 10);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < 100; ++i) {
    same = same && a[i].split == b[i].split;
    differs = differs || a[i].split != c[i].split;
  }
  CHECK(same);
  CHECK(differs);
  CHECK_THROWS_AS(split_dataset(records(9), 1), ContractError);
  for (std::size_t n : {10, 11, 19, 33, 250}) {
    const auto k = counts(split_dataset(records(n), 3));
    CHECK(k[0] + k[1] + k[2] == n);
    CHECK(std::abs(static_cast<double>(k[0]) - 0.8 * static_cast<double>(n)) <= 1.0);
    CHECK(std::abs(static_cast<double>(k[1]) - 0.1 * static_cast<double>(n)) <= 1.0);
  }
}

TEST_CASE("manifest round-trip and dataset loading") {
  Rng rng(3);
  const fs::path dir = scratch("ds");
  fs::create_directories(dir);
  write_features(dir / "v.mvft", {{"v0", testutil::random<float>(4, 3, rng)}, {"v1", testutil::random<float>(4, 5, rng)}});
  write_features(dir / "s.mvft", {{"s0", testutil::random<float>(2, 2, rng)}});
  {
    std::ofstream os(dir / "glove.txt");
    os << "happy 1 0\nsad 0 1\n";
  }
  const std::vector<ManifestRecord> recs = {{"a", "v.mvft#v0", "s.mvft#s0", Split::train},
                                            {"b", "v.mvft#v1", "so happy", Split::test}};
  write_manifest(dir / "m.tsv", recs);
  const auto back = read_manifest(dir / "m.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].sentence == "so happy");
  CHECK(back[1].split == Split::test);

  const auto table = load_embedding_table(dir / "glove.txt");
  const Dataset ds = load_dataset(dir / "m.tsv", &table);
  REQUIRE(ds.pairs.size() == 2);
  CHECK(ds.video_dim == 4);
  CHECK(ds.sentence_dim == 2);
  CHECK(ds.pairs[1].video.cols() == 5);
  CHECK(ds.pairs[1].sentence.cols() == 2);
  CHECK(ds.indices(Split::test) == std::vector<std::size_t>{1});
  CHECK(ds.find("b").video_id == "v1");
  CHECK_THROWS_AS(load_dataset(dir / "m.tsv", nullptr), ContractError);

  write_manifest(dir / "missing.tsv", {{"a", "nowhere.mvft#v0", "s.mvft#s0", Split::train}});
  CHECK_THROWS_WITH(load_dataset(dir / "missing.tsv", &table), doctest::Contains("nowhere.mvft"));
  {
    std::ofstream os(dir / "dup.tsv");
    os << "a\tv.mvft#v0\ts.mvft#s0\ttrain\na\tv.mvft#v1\ts.mvft#s0\n";
  }
  CHECK_THROWS_WITH_AS(read_manifest(dir / "dup.tsv"), doctest::Contains("duplicate pair id"), FormatError);

  std::vector<FeatureItem> vids;
  std::vector<ManifestRecord> unsplit;
  for (int i = 0; i < 20; ++i) {
    vids.push_back({"u" + std::to_string(i), testutil::random<float>(4, 2, rng)});
    unsplit.push_back({"q" + std::to_string(i), "u.mvft#u" + std::to_string(i), "s.mvft#s0", Split::none});
  }
  write_features(dir / "u.mvft", vids);
  write_manifest(dir / "unsplit.tsv", unsplit);
  const Dataset auto_split = load_dataset(dir / "unsplit.tsv");
  CHECK(auto_split.indices(Split::train).size() == 16);
  CHECK(auto_split.indices(Split::val).size() == 2);
  CHECK(auto_split.indices(Split::test).size() == 2);
  unsplit[3].split = Split::test;
  write_manifest(dir / "mixed.tsv", unsplit);
  CHECK_THROWS_AS(load_dataset(dir / "mixed.tsv"), FormatError);
}

TEST_CASE("synthetic: noiseless single-concept pairs are ranked first by the planted pairing") {
  SyntheticSpec s;
  s.pairs = 40;
  s.per_modality = 1;
  s.shared = 1;
  s.noise = 0.0;
  const auto c = generate_synthetic(s);
  for (std::size_t q = 0; q < c.sentences.size(); ++q) {
    const std::size_t text = c.truth[q].sentence_segments[0].concept_id;
    auto score = [&](std::size_t v) { return c.truth[v].video_segments[0].concept_id == c.pairing[text] ? 1 : 0; };
    std::size_t better = 0;
    for (std::size_t v = 0; v < c.videos.size(); ++v) better += score(v) > score(q);
    CHECK(score(q) == 1);
    CHECK(better == 0);
  }
}

TEST_CASE("synthetic: noiseless segments recover their concept exactly") {
  SyntheticSpec s;
  s.pairs = 30;
  s.noise = 0.0;
  const auto c = generate_synthetic(s);
  auto nearest = [](const Matrix<float>& concepts, const Vector<float>& x) {
    Index best = 0;
    (concepts.colwise() - x).colwise().norm().minCoeff(&best);
    return static_cast<std::size_t>(best);
  };
  for (std::size_t n = 0; n < c.truth.size(); ++n) {
    for (const auto& seg : c.truth[n].video_segments)
      for (Index t = seg.start; t < seg.start + seg.length; ++t) {
        CHECK(nearest(c.video_concepts, c.videos[n].frames.col(t)) == seg.concept_id);
        CHECK(c.videos[n].frames.col(t) == c.video_concepts.col(static_cast<Index>(seg.concept_id)));
      }
    for (const auto& seg : c.truth[n].sentence_segments)
      for (Index t = seg.start; t < seg.start + seg.length; ++t)
        CHECK(nearest(c.sentence_concepts, c.sentences[n].frames.col(t)) == seg.concept_id);
  }
}

TEST_CASE("synthetic: implicit pairs relate exactly one of nine segment pairs") {
  SyntheticSpec s;
  s.pairs = 300;
  const auto c = generate_synthetic(s);
  std::size_t related = 0, total = 0;
  for (const auto& t : c.truth) {
    REQUIRE(t.video_segments.size() == 3);
    REQUIRE(t.sentence_segments.size() == 3);
    std::size_t here = 0;
    for (const auto& v : t.video_segments)
      for (const auto& w : t.sentence_segments) here += c.pairing[w.concept_id] == v.concept_id;
    CHECK(here == 1);
    related += here;
    total += 9;
    std::set<std::size_t> vc, sc;
    for (const auto& v : t.video_segments) vc.insert(v.concept_id);
    for (const auto& w : t.sentence_segments) sc.insert(w.concept_id);
    CHECK(vc.size() == 3);
    CHECK(sc.size() == 3);
  }
  CHECK(static_cast<double>(related) / static_cast<double>(total) == doctest::Approx(1.0 / 9));

  SyntheticSpec e = s;
  e.shared = 3;
  for (const auto& t : generate_synthetic(e).truth) {
    std::size_t here = 0;
    for (const auto& v : t.video_segments)
      for (const auto& w : t.sentence_segments) here += generate_synthetic(e).pairing[w.concept_id] == v.concept_id;
    CHECK(here == 3);
    break;
  }
}

TEST_CASE("synthetic: shapes, splits, determinism and validation") {
  SyntheticSpec s;
  s.pairs = 50;
  const auto c = generate_synthetic(s);
  CHECK(c.videos.size() == 50);
  CHECK(c.videos[0].frames.rows() == s.video_dim);
  CHECK(c.sentences[0].frames.rows() == s.sentence_dim);
  for (const auto& v : c.videos) {
    CHECK(v.frames.cols() >= s.min_len);
    CHECK(v.frames.cols() <= s.max_len);
  }
  CHECK(counts(c.manifest) == std::array<std::size_t, 3>{40, 5, 5});
  for (Index k = 0; k < c.video_concepts.cols(); ++k) CHECK(c.video_concepts.col(k).norm() == doctest::Approx(1.0));

  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  write_synthetic(c, a);
  write_synthetic(generate_synthetic(s), b);
  for (const char* f : {"videos.mvft", "sentences.mvft", "manifest.tsv", "concepts.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
    CHECK(!slurp(a / f).empty());
  }
  const Dataset ds = load_dataset(a / "manifest.tsv", nullptr);
  const Dataset direct = to_dataset(c);
  REQUIRE(ds.pairs.size() == direct.pairs.size());
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    CHECK(ds.pairs[i].id == direct.pairs[i].id);
    CHECK(ds.pairs[i].split == direct.pairs[i].split);
    CHECK(bit_equal(ds.pairs[i].video, direct.pairs[i].video));
  }

  SyntheticSpec bad = s;
  bad.shared = 4;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = s;
  bad.noise = -1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = s;
  bad.concepts = 4;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}
