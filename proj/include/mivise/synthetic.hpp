#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mivise/data.hpp"

namespace mivise {

/// Planted-concept corpus. Each modality owns `concepts` unit directions;
/// textual concept j is linked to visual concept pairing[j]. A pair shares
/// `shared` linked concepts, and each side adds `per_modality - shared`
/// concepts whose mates do not appear on the other side, so exactly `shared`
/// of the per_modality^2 segment pairs are related.
struct SyntheticSpec {
  std::size_t pairs = 2000;
  std::size_t concepts = 8;
  std::size_t per_modality = 3;
  std::size_t shared = 1;
  Index video_dim = 32;
  Index sentence_dim = 24;
  Index min_len = 6;
  Index max_len = 12;
  double noise = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Segment {
  std::size_t concept_id;
  Index start;
  Index length;
};

struct PlantedPair {
  std::string pair_id;
  std::vector<Segment> video_segments;
  std::vector<Segment> sentence_segments;
  std::vector<std::size_t> shared_concepts;  // textual ids
};

struct SyntheticCorpus {
  SyntheticSpec spec;
  Matrix<float> video_concepts;     // video_dim x C, unit columns
  Matrix<float> sentence_concepts;  // sentence_dim x C, unit columns
  std::vector<std::size_t> pairing; // textual concept -> visual concept
  std::vector<FeatureItem> videos;
  std::vector<FeatureItem> sentences;
  std::vector<ManifestRecord> manifest;  // split-tagged
  std::vector<PlantedPair> truth;
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// Writes videos.mvft, sentences.mvft, manifest.tsv and concepts.json into `dir`.
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

/// In-memory dataset equivalent to loading the written manifest.
Dataset to_dataset(const SyntheticCorpus& corpus);

}  // namespace mivise
