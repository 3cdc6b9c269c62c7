#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"

namespace powerformer {

struct TrainConfig {
  int epochs = 100;
  int patience = 0;  // 0 = no early stopping
  double lr = 1e-4;
  int batch = 128;
  std::uint64_t seed = 2021;
  // Learnable-alpha schedule: its own learning rate with multiplicative
  // per-epoch decay, total drift clamped to |alpha - alpha0| <= drift cap
  // (default 0.5 * alpha0).
  double alpha_lr = 1e-2;
  double alpha_lr_decay = 0.9;
  std::optional<double> alpha_drift_cap;

  void validate() const;
};

inline constexpr double kAlphaFloor = 1e-3;

struct RunRecord {
  std::string dataset;
  std::string config_hash;
  std::uint64_t seed = 0;
  int t_seq = 0, t_pred = 0;
  std::string mask_label;
  int epochs_run = 0;
  std::int64_t steps = 0;  // optimizer steps taken
  int best_epoch = -1;
  std::vector<double> train_loss;  // per-epoch, instance-normalized scale
  std::vector<double> val_mse;     // per-epoch, benchmark scale
  double test_mse = 0.0, test_mae = 0.0;
  std::size_t parameter_count = 0;
  std::vector<double> alpha_trajectory;  // per-epoch, learnable masks only
  int alpha_floor_hits = 0;
  std::uint64_t best_digest = 0;  // parameter digest after best-val restore
  std::string checkpoint_path;
};

void save_run_record(const RunRecord& rec, const std::string& path);
RunRecord load_run_record(const std::string& path);

struct EvalResult {
  double mse = 0.0, mae = 0.0;
};

// Benchmark-scale metrics over every window of a split.
EvalResult evaluate_split(const PowerformerModel& model,
                          const StandardizedData& data, Split split);

// Mini-batch Adam over shuffled training windows with optional early
// stopping on validation MSE; the best-validation parameters are restored
// before the test evaluation. Throws DivergenceError when the loss stops
// being finite.
RunRecord train_model(PowerformerModel& model, const StandardizedData& data,
                      const TrainConfig& tcfg);

// Evaluation-protocol grid and the selection rules: one look-back per
// dataset (best mean MSE across horizons, masks chosen freely per horizon),
// then one mask per horizon at the chosen look-back (best MSE).
struct ProtocolGrid {
  std::vector<int> horizons{96, 192, 336, 720};
  std::vector<int> lookbacks{336, 512};
  std::vector<std::uint64_t> seeds{2021, 1776, 1953};
  std::vector<MaskSpec> masks;
};

struct CellStats {
  int t_seq = 0, t_pred = 0;
  std::string mask_label;
  int seed_count = 0;
  double mse_mean = 0.0, mse_std = 0.0;
  double mae_mean = 0.0, mae_std = 0.0;
};

struct ResultsTable {
  std::string dataset;
  std::vector<CellStats> cells;
  int chosen_lookback = 0;
  // horizon -> mask label selected at the chosen look-back
  std::vector<std::pair<int, std::string>> chosen_masks;
  std::vector<std::string> missing;  // grid entries without run records
};

ResultsTable aggregate_protocol(const std::string& dataset,
                                const std::vector<RunRecord>& records,
                                const ProtocolGrid& grid);

void write_results_csv(const ResultsTable& table, const std::string& path);

// Trains every grid cell on the given dataset and returns the run records.
std::vector<RunRecord> run_protocol_grid(const RawDataset& raw,
                                         SplitKind split_kind,
                                         const ModelConfig& base_model,
                                         const TrainConfig& base_train,
                                         const ProtocolGrid& grid);

}  // namespace powerformer
