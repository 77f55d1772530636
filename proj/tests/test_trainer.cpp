#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <fstream>
#include <iterator>

#include "mivise/checkpoint.hpp"
#include "mivise/run_config.hpp"
#include "mivise/synthetic.hpp"
#include "mivise/trainer.hpp"
#include "test_util.hpp"

using namespace mivise;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mivise_test_trainer";
  fs::create_directories(dir);
  return dir / name;
}

bool bit_equal(const Matrix<float>& a, const Matrix<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_params(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.names() != b.names()) return false;
  for (const auto& n : a.names())
    if (!bit_equal(a.value(n), b.value(n))) return false;
  return true;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.set_d(8);
  cfg.set_K(2);
  cfg.set_max_len(8);
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  return cfg.resolved();
}

Dataset tiny_data(std::size_t pairs = 30) {
  SyntheticSpec s;
  s.pairs = pairs;
  s.video_dim = 6;
  s.sentence_dim = 5;
  return to_dataset(generate_synthetic(s));
}

}  // namespace

TEST_CASE("subsampling") {
  Rng rng(1);
  const Matrix<float> short_seq = testutil::random<float>(3, 10, rng);
  for (auto mode : {SubsampleMode::train, SubsampleMode::eval}) {
    const auto item = subsample_sequence(short_seq, 32, mode, &rng);
    CHECK(item.length == 10);
    CHECK(item.features.cols() == 32);
    CHECK(item.features.leftCols(10) == short_seq);
    CHECK(item.features.rightCols(22).isZero());
  }

  Matrix<float> ramp(1, 64);
  for (Index t = 0; t < 64; ++t) ramp(0, t) = static_cast<float>(t);
  const auto eval = subsample_sequence(ramp, 32, SubsampleMode::eval, nullptr);
  CHECK(eval.length == 32);
  CHECK(eval.features(0, 0) == 0);
  CHECK(eval.features(0, 31) == 63);
  for (Index i = 1; i < 32; ++i) CHECK(eval.features(0, i) > eval.features(0, i - 1));

  Rng a(5), b(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = subsample_sequence(ramp, 16, SubsampleMode::train, &a);
    const auto y = subsample_sequence(ramp, 16, SubsampleMode::train, &b);
    CHECK(x.features == y.features);
    CHECK(x.length == 16);
    // Constant stride between consecutive picks, inside the sequence.
    const float stride = x.features(0, 1) - x.features(0, 0);
    CHECK(stride >= 1);
    CHECK(stride <= 4);
    for (Index i = 1; i < 16; ++i) CHECK(x.features(0, i) - x.features(0, i - 1) == stride);
    CHECK(x.features(0, 15) <= 63);
  }
  CHECK_THROWS_AS(subsample_sequence(ramp, 16, SubsampleMode::train, nullptr), ContractError);
}

TEST_CASE("negative resampling") {
  const auto two = resample_negatives({4, 9}, 1, 1);
  REQUIRE(two.size() == 2);
  CHECK(two[0].positive == 4);
  CHECK(two[0].negative == 9);
  CHECK(two[1].negative == 4);
  CHECK_THROWS_AS(resample_negatives({3}, 1, 1), ContractError);

  std::vector<std::size_t> train(10);
  for (std::size_t i = 0; i < 10; ++i) train[i] = i;
  const auto x = resample_negatives(train, 3, 7), y = resample_negatives(train, 3, 7);
  bool same = true;
  for (std::size_t i = 0; i < 10; ++i) same = same && x[i].negative == y[i].negative;
  CHECK(same);

  std::vector<std::vector<int>> hits(10, std::vector<int>(10, 0));
  const int epochs = 1000;
  for (int e = 1; e <= epochs; ++e)
    for (const auto& t : resample_negatives(train, static_cast<std::uint64_t>(e), 7)) {
      REQUIRE(t.negative != t.positive);
      ++hits[t.positive][t.negative];
    }
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j)
      if (i != j) CHECK(std::abs(hits[i][j] / static_cast<double>(epochs) - 1.0 / 9) < 0.03);
}

TEST_CASE("train_step") {
  const Dataset ds = tiny_data();
  const TrainConfig cfg = tiny_config();
  std::vector<SequenceItem> v, s;
  for (std::size_t i = 0; i < 3; ++i) {
    v.push_back(subsample_sequence(ds.pairs[i].video, 8, SubsampleMode::eval, nullptr));
    s.push_back(subsample_sequence(ds.pairs[i].sentence, 8, SubsampleMode::eval, nullptr));
  }
  TripletBatch batch{{&v[0], &v[1]}, {&s[0], &s[1]}, {&s[2], &s[0]}};

  SUBCASE("zero learning rate leaves parameters untouched") {
    Model m = init_model(cfg, ds.video_dim, ds.sentence_dim);
    const Model before = m;
    Rng dropout(3);
    train_step(m, AdamConfig{0.0}, batch, &dropout);
    CHECK(same_params(m.params, before.params));
  }

  SUBCASE("repeated steps on one triplet lower its loss") {
    TrainConfig c = cfg;
    c.loss.loss_kind = LossKind::pseudo_huber;
    c.set_dropout(0);
    Model m = init_model(c, ds.video_dim, ds.sentence_dim);
    TripletBatch one{{&v[0]}, {&s[0]}, {&s[1]}};
    const double first = batch_objective(m, one);
    for (int i = 0; i < 60; ++i) train_step(m, AdamConfig{1e-2}, one, nullptr);
    CHECK(batch_objective(m, one) < first);
  }

  SUBCASE("returned value is the pre-update objective") {
    TrainConfig c = cfg;
    c.set_dropout(0);
    Model m = init_model(c, ds.video_dim, ds.sentence_dim);
    const double expected = batch_objective(m, batch);
    CHECK(train_step(m, AdamConfig{1e-3}, batch, nullptr) == doctest::Approx(expected));
  }

  CHECK_THROWS_AS(batch_objective(init_model(cfg, ds.video_dim, ds.sentence_dim), TripletBatch{}), ContractError);
}

TEST_CASE("training is deterministic and keeps the best validation model") {
  const Dataset ds = tiny_data();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  std::vector<EpochLog> seen;
  const auto a = train(ds, cfg, [&](const EpochLog& l) { seen.push_back(l); });
  const auto b = train(ds, cfg);
  CHECK(a.loss_log == b.loss_log);
  CHECK(same_params(a.model.params, b.model.params));
  REQUIRE(seen.size() == 3);
  REQUIRE(a.best_val_nMR.has_value());
  double best = 1e9;
  for (const auto& l : seen) {
    REQUIRE(l.val_nMR.has_value());
    best = std::min(best, *l.val_nMR);
  }
  CHECK(*a.best_val_nMR == best);
  CHECK(evaluate(ds, Split::val, a.model).nMR == doctest::Approx(best));
  for (double x : a.loss_log) CHECK(std::isfinite(x));

  cfg.seed = 2;
  CHECK(train(ds, cfg).loss_log != a.loss_log);
}

TEST_CASE("checkpoint round-trip") {
  const Dataset ds = tiny_data();
  TrainConfig cfg = tiny_config();
  cfg.loss.loss_kind = LossKind::hinge;
  cfg.loss.similarity_kind = SimilarityKind::concat;
  cfg.loss.alpha = 0.25;
  Checkpoint ck{init_model(cfg, ds.video_dim, ds.sentence_dim), 7, 0.125};
  Rng rng(2);
  for (const auto& n : ck.model.params.names()) ck.model.params.value(n) = testutil::random<float>(ck.model.params.value(n).rows(), ck.model.params.value(n).cols(), rng);
  const auto path = scratch("model.mvck");
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.epoch == 7);
  CHECK(back.running_loss == 0.125);
  CHECK(same_params(back.model.params, ck.model.params));
  CHECK(to_json(back.model.config) == to_json(ck.model.config));
  CHECK(back.model.config.loss.loss_kind == LossKind::hinge);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(bit_equal(embed_video(back.model, ds.pairs[i].video).phi, embed_video(ck.model, ds.pairs[i].video).phi));
    CHECK(bit_equal(embed_sentence(back.model, ds.pairs[i].sentence).phi,
                    embed_sentence(ck.model, ds.pairs[i].sentence).phi));
  }

  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }
  CHECK(bytes.substr(0, 4) == "MVCK");
  const auto bad = scratch("bad.mvck");
  auto write = [&](const std::string& b) {
    std::ofstream os(bad, std::ios::binary);
    os << b;
  };
  write("MVCX" + bytes.substr(4));
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
  write(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
  std::string version = bytes;
  version[4] = 9;
  write(version);
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("version"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(scratch("absent.mvck")), std::exception);
}

TEST_CASE("ablation rows") {
  const auto spec = AblationSpec::standard();
  REQUIRE(spec.rows.size() == 5);
  const char* names[] = {"deviseq", "base", "sa", "sa_me", "mivise"};
  for (std::size_t i = 0; i < 5; ++i) CHECK(spec.rows[i].name == names[i]);

  TrainConfig base = tiny_config();
  base.set_K(4);
  const auto deviseq = AblationSpec::apply(base, spec.rows[0]);
  const auto plain = AblationSpec::apply(base, spec.rows[1]);
  CHECK(deviseq.loss.loss_kind == LossKind::hinge);
  CHECK(plain.loss.loss_kind == LossKind::pseudo_huber);
  auto j0 = to_json(deviseq), j1 = to_json(plain);
  j0["loss"].erase("kind");
  j1["loss"].erase("kind");
  CHECK(j0 == j1);
  const Model m0 = init_model(deviseq, 6, 5), m1 = init_model(plain, 6, 5);
  REQUIRE(m0.params.names() == m1.params.names());
  for (const auto& n : m0.params.names()) CHECK(m0.params.value(n).rows() == m1.params.value(n).rows());

  CHECK(deviseq.video.K == 1);
  CHECK(deviseq.pooling == PoolingKind::last_states);
  CHECK(AblationSpec::apply(base, spec.rows[2]).pooling == PoolingKind::attention);
  CHECK(AblationSpec::apply(base, spec.rows[3]).video.K == 4);
  CHECK(AblationSpec::apply(base, spec.rows[3]).loss.similarity_kind == SimilarityKind::concat);
  CHECK(AblationSpec::apply(base, spec.rows[4]).loss.similarity_kind == SimilarityKind::mil_max);
  base.set_K(1);
  CHECK_THROWS_AS(AblationSpec::apply(base, spec.rows[4]), ContractError);

  const Dataset ds = tiny_data(20);
  CHECK_THROWS_AS(sweep_k(ds, tiny_config(), {1, 2}, {1}), ContractError);
  CHECK_THROWS_AS(sweep_k(ds, tiny_config(), {}, {1}), ContractError);
}

TEST_CASE("mean report") {
  const auto a = report_from_ranks({1, 2, 3}, 10), b = report_from_ranks({3, 4, 5}, 10);
  const auto m = mean_report({a, b});
  CHECK(m.MR == doctest::Approx(3.0));
  CHECK(m.nMR == doctest::Approx(30.0));
  CHECK(m.R1 == doctest::Approx(100.0 / 6));
  CHECK(mean_table_row("x", m).find("3.0 (30.00)") != std::string::npos);
}

TEST_CASE("run configuration") {
  RunConfig rc;
  CHECK(rc.get("model.K") == 8);
  rc.set("model.K=3");
  rc.set("loss.similarity=concat");
  rc.set("train.learning_rate=0.01");
  const auto tc = rc.train_config();
  CHECK(tc.video.K == 3);
  CHECK(tc.sentence.K == 3);
  CHECK(tc.loss.similarity_kind == SimilarityKind::concat);
  CHECK(tc.learning_rate == doctest::Approx(0.01));

  CHECK_THROWS_WITH_AS(rc.set("model.kk=3"), doctest::Contains("model.kk"), ContractError);
  CHECK_THROWS_AS(rc.set("model.K=abc"), ContractError);
  CHECK_THROWS_AS(rc.set("model.K=2.5"), ContractError);
  CHECK_THROWS_AS(rc.set("loss.kind=3"), ContractError);
  CHECK_THROWS_AS(rc.set("noequals"), ContractError);

  const auto file = scratch("cfg.json");
  {
    std::ofstream os(file);
    os << R"({"model.d": 16, "train.epochs": 4, "ablate.seeds": [5, 6]})";
  }
  RunConfig from = RunConfig::from_file(file);
  CHECK(from.get("model.d") == 16);
  CHECK(from.get("train.epochs") == 4);
  CHECK(from.seeds("ablate.seeds") == std::vector<std::uint64_t>{5, 6});
  from.set("train.epochs=9");
  CHECK(from.train_config().epochs == 9);
  {
    std::ofstream os(file);
    os << R"({"model.dd": 16})";
  }
  CHECK_THROWS_AS(RunConfig::from_file(file), ContractError);
  {
    std::ofstream os(file);
    os << "{ not json";
  }
  CHECK_THROWS_AS(RunConfig::from_file(file), ContractError);

  const fs::path dir = scratch("resolved");
  const auto written = from.write_resolved(dir);
  CHECK(RunConfig::from_file(written).values() == from.values());

  RunConfig bad;
  bad.set("model.d=7");
  CHECK_THROWS_AS(bad.train_config(), ContractError);
}
