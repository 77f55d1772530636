#include "mivise/run_config.hpp"

#include <fstream>

namespace mivise {

using nlohmann::json;

namespace {

json defaults() {
  return json{
      {"model.d", 256},
      {"model.u", 256},
      {"model.K", 8},
      {"model.dropout", 0.2},
      {"model.max_len", 32},
      {"model.pooling", "attention"},
      {"loss.kind", "pseudo_huber"},
      {"loss.similarity", "mil_max"},
      {"loss.rho", 1.0},
      {"loss.delta", 1.0},
      {"loss.alpha", 1e-4},
      {"loss.beta", 0.5},
      {"train.learning_rate", 2e-4},
      {"train.epochs", 500},
      {"train.batch_size", 100},
      {"train.seed", 1},
      {"train.eval_every", 1},
      {"grid.d", json::array()},
      {"grid.K", json::array()},
      {"grid.p", json::array()},
      {"data.manifest", ""},
      {"data.embeddings", ""},
      {"data.checkpoint", ""},
      {"data.split", "test"},
      {"synth.pairs", 2000},
      {"synth.concepts", 8},
      {"synth.per_modality", 3},
      {"synth.shared", 1},
      {"synth.video_dim", 32},
      {"synth.sentence_dim", 24},
      {"synth.min_len", 6},
      {"synth.max_len", 12},
      {"synth.noise", 0.1},
      {"synth.seed", 1},
      {"ablate.seeds", {1, 2, 3}},
      {"sweep.K", {2, 4, 6, 8, 10, 12}},
      {"sweep.seeds", {1}},
      {"gradcheck.triplets", 2},
      {"gradcheck.length", 3},
      {"gradcheck.video_dim", 3},
      {"gradcheck.sentence_dim", 2},
      {"gradcheck.d", 4},
      {"gradcheck.K", 2},
      {"gradcheck.alpha", 0.1},
      {"gradcheck.dropout", 0.2},
      {"gradcheck.eps", 1e-6},
      {"gradcheck.tolerance", 1e-4},
      {"gradcheck.seed", 11},
      {"query.sentence", ""},
      {"query.top", 10},
      {"export.pair", ""},
      {"out_dir", "out"},
  };
}

bool same_kind(const json& expected, const json& v) {
  if (expected.is_number_integer()) {
    return v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>())));
  }
  if (expected.is_number()) return v.is_number();
  if (expected.is_string()) return v.is_string();
  if (expected.is_array()) return v.is_array();
  return expected.type() == v.type();
}

const char* kind_name(const json& j) {
  if (j.is_number_integer()) return "an integer";
  if (j.is_number()) return "a number";
  if (j.is_string()) return "a string";
  if (j.is_array()) return "a list";
  return "a value";
}

template <typename T>
T number(const json& j, const std::string& key) {
  if constexpr (std::is_integral_v<T>) {
    const double v = j.get<double>();
    if (v != static_cast<double>(static_cast<long long>(v))) {
      throw ContractError("config key '" + key + "': expected an integer");
    }
    return static_cast<T>(v);
  } else {
    return j.get<T>();
  }
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig c;
  c.merge_file(path);
  return c;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ContractError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  merge(j, path.string());
}

void RunConfig::merge(const json& flat, const std::string& origin) {
  if (!flat.is_object()) throw ContractError(origin + ": config must be a JSON object of dotted keys");
  for (const auto& [key, value] : flat.items()) {
    try {
      set(key, value);
    } catch (const ContractError& e) {
      throw ContractError(origin + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const json& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
  if (!same_kind(*it, value)) {
    throw ContractError("config key '" + key + "': expected " + kind_name(*it));
  }
  *it = value;
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ContractError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set(key, value);
}

const json& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
  return *it;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  auto num = [&](const std::string& k, auto tag) { return number<decltype(tag)>(get(k), k); };
  try {
    c.set_d(num("model.d", Index{}));
    c.video.u = c.sentence.u = num("model.u", Index{});
    c.set_K(num("model.K", Index{}));
    c.set_dropout(num("model.dropout", double{}));
    c.set_max_len(num("model.max_len", Index{}));
    c.pooling = parse_pooling_kind(str("model.pooling"));
    c.loss.loss_kind = parse_loss_kind(str("loss.kind"));
    c.loss.similarity_kind = parse_similarity_kind(str("loss.similarity"));
    c.loss.rho = num("loss.rho", double{});
    c.loss.delta = num("loss.delta", double{});
    c.loss.alpha = num("loss.alpha", double{});
    c.loss.beta = num("loss.beta", double{});
    c.learning_rate = num("train.learning_rate", double{});
    c.epochs = num("train.epochs", int{});
    c.batch_size = num("train.batch_size", int{});
    c.seed = num("train.seed", std::uint64_t{});
    c.eval_every = num("train.eval_every", int{});
    for (const auto& v : get("grid.d")) c.grid.d.push_back(number<Index>(v, "grid.d"));
    for (const auto& v : get("grid.K")) c.grid.K.push_back(number<Index>(v, "grid.K"));
    for (const auto& v : get("grid.p")) c.grid.p.push_back(number<int>(v, "grid.p"));
  } catch (const json::exception& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  TrainConfig r = c.resolved();
  r.validate();
  return r;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s;
  s.pairs = number<std::size_t>(get("synth.pairs"), "synth.pairs");
  s.concepts = number<std::size_t>(get("synth.concepts"), "synth.concepts");
  s.per_modality = number<std::size_t>(get("synth.per_modality"), "synth.per_modality");
  s.shared = number<std::size_t>(get("synth.shared"), "synth.shared");
  s.video_dim = number<Index>(get("synth.video_dim"), "synth.video_dim");
  s.sentence_dim = number<Index>(get("synth.sentence_dim"), "synth.sentence_dim");
  s.min_len = number<Index>(get("synth.min_len"), "synth.min_len");
  s.max_len = number<Index>(get("synth.max_len"), "synth.max_len");
  s.noise = number<double>(get("synth.noise"), "synth.noise");
  s.seed = number<std::uint64_t>(get("synth.seed"), "synth.seed");
  s.validate();
  return s;
}

ToyGradcheckSpec RunConfig::gradcheck_spec() const {
  ToyGradcheckSpec s;
  s.triplets = number<Index>(get("gradcheck.triplets"), "gradcheck.triplets");
  s.length = number<Index>(get("gradcheck.length"), "gradcheck.length");
  s.video_dim = number<Index>(get("gradcheck.video_dim"), "gradcheck.video_dim");
  s.sentence_dim = number<Index>(get("gradcheck.sentence_dim"), "gradcheck.sentence_dim");
  s.d = number<Index>(get("gradcheck.d"), "gradcheck.d");
  s.K = number<Index>(get("gradcheck.K"), "gradcheck.K");
  s.alpha = number<double>(get("gradcheck.alpha"), "gradcheck.alpha");
  s.dropout = number<double>(get("gradcheck.dropout"), "gradcheck.dropout");
  s.eps = number<double>(get("gradcheck.eps"), "gradcheck.eps");
  s.tolerance = number<double>(get("gradcheck.tolerance"), "gradcheck.tolerance");
  s.seed = number<std::uint64_t>(get("gradcheck.seed"), "gradcheck.seed");
  return s;
}

std::vector<std::uint64_t> RunConfig::seeds(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& v : get(key)) out.push_back(number<std::uint64_t>(v, key));
  if (out.empty()) throw ContractError("config key '" + key + "': needs at least one seed");
  return out;
}

std::filesystem::path RunConfig::write_resolved(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto path = dir / "resolved_config.json";
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << values_.dump(2) << '\n';
  return path;
}

}  // namespace mivise
