#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mivise/numerics/dense.hpp"

namespace mivise {

/// One feature sequence. `frames` is D x T: column t is the feature vector
/// of step t, which matches the row-major T x D float layout on disk.
struct FeatureItem {
  std::string id;
  Matrix<float> frames;
};

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// Binary layout: "MVFT", version u32, count u32, then per item
/// id_len u32, id bytes, T u32, D u32, T*D float32 (row-major T x D).
/// All integers and floats little-endian.
void write_features(const std::filesystem::path& path, const std::vector<FeatureItem>& items);
std::vector<FeatureItem> read_features(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sentences

struct EmbeddingTable {
  Index dim = 0;
  std::unordered_map<std::string, Vector<float>> vectors;
};

/// Whitespace-separated text, one "word v1 ... vD" line per entry (GloVe layout).
EmbeddingTable load_embedding_table(const std::filesystem::path& path);

/// Lowercase, split on whitespace, drop punctuation characters; tokens that
/// end up empty are skipped.
std::vector<std::string> tokenize(const std::string& text);

/// D x T word features; out-of-vocabulary tokens become zero columns.
Matrix<float> featurize_sentence(const std::string& text, const EmbeddingTable& table);

// ---------------------------------------------------------------------------
// Manifests

enum class Split { none, train, val, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// One video-sentence pair. `video_ref` is "<file.mvft>#<item id>";
/// `sentence` is either such a reference or raw text.
struct ManifestRecord {
  std::string pair_id;
  std::string video_ref;
  std::string sentence;
  Split split = Split::none;
};

struct FeatureRef {
  std::string path;
  std::string id;
};

/// Parses "<path>.mvft#<id>"; anything else is not a feature reference.
std::optional<FeatureRef> parse_feature_ref(const std::string& s);

/// Tab-separated: pair_id, video_ref, sentence, split.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

/// Seeded shuffle followed by contiguous 80/10/10 train/val/test tagging.
std::vector<ManifestRecord> split_dataset(std::vector<ManifestRecord> records, std::uint64_t seed);

/// A manifest with every reference resolved to features.
struct PairData {
  std::string id;
  std::string video_id;
  Matrix<float> video;     // D_v x T_v
  Matrix<float> sentence;  // D_s x T_s
  std::string sentence_text;
  Split split = Split::none;
};

struct Dataset {
  std::vector<PairData> pairs;
  Index video_dim = 0;
  Index sentence_dim = 0;

  std::vector<std::size_t> indices(Split s) const;
  const PairData& find(const std::string& pair_id) const;
};

inline constexpr std::uint64_t kDefaultSplitSeed = 1;

/// Relative feature paths resolve against the manifest's directory. Text
/// sentences need `table`. A manifest without any split column gets
/// split_dataset(records, kDefaultSplitSeed).
Dataset load_dataset(const std::filesystem::path& manifest, const EmbeddingTable* table = nullptr);

}  // namespace mivise
