#pragma once

#include <vector>

#include "json.hpp"
#include "mivise/model.hpp"
#include "mivise/numerics/gradcheck.hpp"

namespace mivise {

/// A tiny full-objective problem for finite-difference checks: random
/// triplets through both encoders, attention penalties and dropout included.
struct ToyGradcheckSpec {
  Index triplets = 2;
  Index length = 3;
  Index video_dim = 3;
  Index sentence_dim = 2;
  Index d = 4;
  Index K = 2;
  double alpha = 0.1;
  double dropout = 0.2;
  double eps = 1e-6;
  double tolerance = 1e-4;
  std::uint64_t seed = 11;
  PoolingKind pooling = PoolingKind::attention;
};

struct ObjectiveGradReport {
  LossKind loss_kind;
  SimilarityKind similarity_kind;
  GradReport report;
};

/// Gradient check of the summed triplet objective for one loss/similarity pair.
GradReport gradcheck_objective(const ToyGradcheckSpec& spec, LossKind loss, SimilarityKind similarity);

/// Every loss kind crossed with every similarity kind.
std::vector<ObjectiveGradReport> gradcheck_all(const ToyGradcheckSpec& spec);

nlohmann::json to_json(const GradReport& r);

}  // namespace mivise
