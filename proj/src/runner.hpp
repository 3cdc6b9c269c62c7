#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace powerformer {

struct TrainArtifacts {
  std::string run_dir;
  std::string checkpoint;
  std::string run_record;
  std::string manifest;
};

// Full training run: dataset resolution, training, artifact writes.
TrainArtifacts run_training(const ResolvedConfig& cfg,
                            const std::string& run_root);

// Aggregates run records found under run_root (one directory per run) into
// the protocol results CSV. Returns the list of missing grid entries.
std::vector<std::string> run_evaluate(const ResolvedConfig& cfg,
                                      const std::string& run_root,
                                      const std::string& out_csv);

// Distribution analysis of a checkpoint over the configured dataset's test
// split; writes histogram CSVs, SVGs, a mode report and a manifest.
void run_analyze(const ResolvedConfig& cfg, const std::string& checkpoint,
                 const std::string& out_dir);

}  // namespace powerformer
