#pragma once

#include <map>
#include <optional>
#include <string>

#include "dataset.hpp"
#include "model.hpp"
#include "training.hpp"

namespace powerformer {

inline constexpr const char* kToolVersion = "0.1.0";

// Flat key-value configuration ("key = value" lines, '#' comments; later
// assignments override earlier ones).
struct ConfigMap {
  std::map<std::string, std::string> values;

  void set(const std::string& key, const std::string& value) {
    values[key] = value;
  }
  std::optional<std::string> get(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) return std::nullopt;
    return it->second;
  }
};

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::string& path);

// Every config key materialized: built-in defaults, then dataset-preset
// defaults, then the config file, then CLI overrides.
struct ResolvedConfig {
  std::string dataset;  // preset name, "synthetic" or "custom"
  std::string data_path;
  std::string synthetic_kind = "sines";
  std::size_t synthetic_length = 1600;
  int synthetic_channels = 3;
  std::uint64_t synthetic_seed = 7;

  ModelConfig model;
  TrainConfig train;
  ProtocolGrid eval_grid;
  int analysis_bins = 60;
  std::string run_dir = "runs";

  // Canonical key=value view of everything above; feeds manifests and the
  // config hash.
  std::map<std::string, std::string> canonical;
};

ResolvedConfig resolve_config(const ConfigMap& file, const ConfigMap& overrides);

// 16-hex FNV over the canonical view minus train.seed; a run directory is
// named <hash>_s<seed>.
std::string config_hash(const ResolvedConfig& cfg);
std::string run_dir_name(const ResolvedConfig& cfg);

RawDataset open_dataset(const ResolvedConfig& cfg);
SplitKind split_kind(const ResolvedConfig& cfg);

void write_manifest(const ResolvedConfig& cfg,
                    const std::map<std::string, std::string>& artifacts,
                    const std::string& path);

}  // namespace powerformer
