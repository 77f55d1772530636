#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mivise/diagnostics.hpp"
#include "mivise/model.hpp"
#include "mivise/synthetic.hpp"

namespace mivise {

/// Flat dotted-key configuration shared by every subcommand. Values start
/// from built-in defaults, then a JSON file, then `key=value` overrides, each
/// layer replacing the previous one. Unknown keys and mistyped values are
/// rejected with the key named.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);

  void merge(const nlohmann::json& flat, const std::string& origin);
  void merge_file(const std::filesystem::path& path);

  /// "key=value"; the value is read as JSON when it parses, else as a string.
  void set(const std::string& assignment);
  void set(const std::string& key, const nlohmann::json& value);

  const nlohmann::json& get(const std::string& key) const;
  std::string str(const std::string& key) const { return get(key).get<std::string>(); }
  const nlohmann::json& values() const { return values_; }

  TrainConfig train_config() const;
  SyntheticSpec synthetic_spec() const;
  ToyGradcheckSpec gradcheck_spec() const;
  std::vector<std::uint64_t> seeds(const std::string& key) const;

  /// Writes resolved_config.json into `dir` and returns its path.
  std::filesystem::path write_resolved(const std::filesystem::path& dir) const;

 private:
  nlohmann::json values_;
};

}  // namespace mivise
