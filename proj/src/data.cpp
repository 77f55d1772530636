#include "mivise/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mivise/binary_io.hpp"
#include "mivise/rng.hpp"

namespace mivise {

namespace fs = std::filesystem;

namespace {
constexpr std::uint64_t kSplitStream = 0x5b117;
}  // namespace

void write_features(const fs::path& path, const std::vector<FeatureItem>& items) {
  std::set<std::string> seen;
  Index width = -1;
  for (const auto& it : items) {
    if (!seen.insert(it.id).second) throw ContractError("write_features: duplicate id '" + it.id + "'");
    if (it.frames.cols() < 1) throw ContractError("write_features: item '" + it.id + "' has no frames");
    if (width >= 0 && it.frames.rows() != width) throw ContractError("write_features: mixed widths in one file");
    width = it.frames.rows();
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("MVFT", 4);
  io::put_u32(os, kFeatureFormatVersion);
  io::put_u32(os, static_cast<std::uint32_t>(items.size()));
  for (const auto& it : items) {
    io::put_u32(os, static_cast<std::uint32_t>(it.id.size()));
    io::put_bytes(os, it.id);
    io::put_u32(os, static_cast<std::uint32_t>(it.frames.cols()));
    io::put_u32(os, static_cast<std::uint32_t>(it.frames.rows()));
    // Column-major D x T is row-major T x D.
    io::put_f32_array(os, it.frames.data(), static_cast<std::size_t>(it.frames.size()));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<FeatureItem> read_features(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  io::Reader r(is);
  const std::string where = path.string();
  char magic[4];
  if (!r.read_raw(magic, 4) || std::string(magic, 4) != "MVFT") throw FormatError(where + ": bad magic, not a feature file");
  const std::uint32_t version = r.u32(where + " header");
  if (version != kFeatureFormatVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32(where + " header");
  std::vector<FeatureItem> items;
  items.reserve(count);
  std::set<std::string> seen;
  Index width = -1;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string ctx = where + " item " + std::to_string(i);
    FeatureItem it;
    const std::uint32_t id_len = r.u32(ctx);
    it.id = r.bytes(id_len, ctx);
    const std::uint32_t T = r.u32(ctx);
    const std::uint32_t D = r.u32(ctx);
    if (T < 1) throw FormatError(ctx + ": zero-length sequence");
    if (width >= 0 && static_cast<Index>(D) != width) throw FormatError(ctx + ": width differs from earlier items");
    width = D;
    it.frames.resize(D, T);
    r.f32_array(it.frames.data(), static_cast<std::size_t>(T) * D, ctx);
    if (!seen.insert(it.id).second) throw FormatError(ctx + ": duplicate id '" + it.id + "'");
    items.push_back(std::move(it));
  }
  return items;
}

EmbeddingTable load_embedding_table(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open embedding table " + path.string());
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<float> values;
    float v;
    while (ls >> v) values.push_back(v);
    if (table.dim == 0) table.dim = static_cast<Index>(values.size());
    if (static_cast<Index>(values.size()) != table.dim || table.dim == 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.dim) +
                        " values");
    }
    table.vectors[word] = Eigen::Map<Vector<float>>(values.data(), table.dim);
  }
  if (table.vectors.empty()) throw FormatError(path.string() + ": empty embedding table");
  return table;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream is(text);
  std::string raw;
  while (is >> raw) {
    std::string tok;
    for (unsigned char c : raw) {
      if (std::ispunct(c)) continue;
      tok.push_back(static_cast<char>(std::tolower(c)));
    }
    if (!tok.empty()) tokens.push_back(std::move(tok));
  }
  return tokens;
}

Matrix<float> featurize_sentence(const std::string& text, const EmbeddingTable& table) {
  if (table.vectors.empty()) throw ContractError("featurize_sentence: empty embedding table");
  const auto tokens = tokenize(text);
  Matrix<float> out = Matrix<float>::Zero(table.dim, static_cast<Index>(tokens.size()));
  bool any = false;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto it = table.vectors.find(tokens[t]);
    if (it != table.vectors.end()) {
      out.col(static_cast<Index>(t)) = it->second;
      any = true;
    }
  }
  if (!any) throw ContractError("featurize_sentence: no in-vocabulary tokens in \"" + text + "\"");
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: break;
  }
  return "-";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s.empty() || s == "-") return Split::none;
  throw FormatError("unknown split tag '" + s + "'");
}

std::optional<FeatureRef> parse_feature_ref(const std::string& s) {
  const auto hash = s.find(".mvft#");
  if (hash == std::string::npos) return std::nullopt;
  return FeatureRef{s.substr(0, hash + 5), s.substr(hash + 6)};
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 3 || fields.size() > 4) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 3 or 4 tab-separated fields");
    }
    ManifestRecord r{fields[0], fields[1], fields[2], fields.size() == 4 ? parse_split(fields[3]) : Split::none};
    if (!ids.insert(r.pair_id).second) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate pair id '" + r.pair_id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    os << r.pair_id << '\t' << r.video_ref << '\t' << r.sentence << '\t' << to_string(r.split) << '\n';
  }
}

std::vector<ManifestRecord> split_dataset(std::vector<ManifestRecord> records, std::uint64_t seed) {
  const std::size_t n = records.size();
  if (n < 10) throw ContractError("split_dataset: need at least 10 pairs, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, kSplitStream);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  for (std::size_t k = 0; k < n; ++k) {
    records[order[k]].split = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
  }
  return records;
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i].split == s) out.push_back(i);
  return out;
}

const PairData& Dataset::find(const std::string& pair_id) const {
  for (const auto& p : pairs)
    if (p.id == pair_id) return p;
  throw ContractError("unknown pair id '" + pair_id + "'");
}

Dataset load_dataset(const fs::path& manifest, const EmbeddingTable* table) {
  auto records = read_manifest(manifest);
  const auto unsplit = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.split == Split::none; });
  if (unsplit == static_cast<std::ptrdiff_t>(records.size())) {
    records = split_dataset(std::move(records), kDefaultSplitSeed);
  } else if (unsplit != 0) {
    throw FormatError(manifest.string() + ": some lines have a split and some do not");
  }
  const fs::path base = manifest.parent_path();
  std::map<std::string, std::map<std::string, Matrix<float>>> files;
  auto resolve = [&](const FeatureRef& ref) -> const Matrix<float>& {
    fs::path p = ref.path;
    if (p.is_relative()) p = base / p;
    const std::string key = p.string();
    auto it = files.find(key);
    if (it == files.end()) {
      if (!fs::exists(p)) throw std::runtime_error("missing feature file " + key);
      std::map<std::string, Matrix<float>> byid;
      for (auto& item : read_features(p)) byid.emplace(item.id, std::move(item.frames));
      it = files.emplace(key, std::move(byid)).first;
    }
    auto f = it->second.find(ref.id);
    if (f == it->second.end()) throw std::runtime_error("feature id '" + ref.id + "' not in " + key);
    return f->second;
  };

  Dataset ds;
  for (const auto& r : records) {
    PairData p;
    p.id = r.pair_id;
    p.split = r.split;
    const auto vref = parse_feature_ref(r.video_ref);
    if (!vref) throw FormatError("pair '" + r.pair_id + "': video reference must look like <file>.mvft#<id>");
    p.video_id = vref->id;
    p.video = resolve(*vref);
    if (const auto sref = parse_feature_ref(r.sentence)) {
      p.sentence = resolve(*sref);
    } else {
      if (table == nullptr) throw ContractError("pair '" + r.pair_id + "': text sentence needs an embedding table");
      p.sentence_text = r.sentence;
      p.sentence = featurize_sentence(r.sentence, *table);
    }
    if (ds.pairs.empty()) {
      ds.video_dim = p.video.rows();
      ds.sentence_dim = p.sentence.rows();
    } else if (p.video.rows() != ds.video_dim || p.sentence.rows() != ds.sentence_dim) {
      throw DimensionError("pair '" + r.pair_id + "': feature width differs from the rest of the manifest");
    }
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

}  // namespace mivise
