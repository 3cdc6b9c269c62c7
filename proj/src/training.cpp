#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace powerformer {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  if (alpha_lr < 0.0) throw ConfigError("alpha learning rate must be >= 0");
  if (alpha_lr_decay <= 0.0 || alpha_lr_decay > 1.0) {
    throw ConfigError("alpha lr decay must lie in (0, 1]");
  }
  if (alpha_drift_cap && *alpha_drift_cap < 0.0) {
    throw ConfigError("alpha drift cap must be >= 0");
  }
}

void save_run_record(const RunRecord& rec, const std::string& path) {
  nlohmann::json j;
  j["dataset"] = rec.dataset;
  j["config_hash"] = rec.config_hash;
  j["seed"] = rec.seed;
  j["t_seq"] = rec.t_seq;
  j["t_pred"] = rec.t_pred;
  j["mask"] = rec.mask_label;
  j["epochs_run"] = rec.epochs_run;
  j["steps"] = rec.steps;
  j["best_epoch"] = rec.best_epoch;
  j["train_loss"] = rec.train_loss;
  j["val_mse"] = rec.val_mse;
  j["test_mse"] = rec.test_mse;
  j["test_mae"] = rec.test_mae;
  j["parameter_count"] = rec.parameter_count;
  j["alpha_trajectory"] = rec.alpha_trajectory;
  j["alpha_floor_hits"] = rec.alpha_floor_hits;
  j["best_digest"] = rec.best_digest;
  j["checkpoint"] = rec.checkpoint_path;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

RunRecord load_run_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open run record '" + path + "'");
  nlohmann::json j;
  in >> j;
  RunRecord rec;
  rec.dataset = j.at("dataset").get<std::string>();
  rec.config_hash = j.at("config_hash").get<std::string>();
  rec.seed = j.at("seed").get<std::uint64_t>();
  rec.t_seq = j.at("t_seq").get<int>();
  rec.t_pred = j.at("t_pred").get<int>();
  rec.mask_label = j.at("mask").get<std::string>();
  rec.epochs_run = j.at("epochs_run").get<int>();
  rec.steps = j.at("steps").get<std::int64_t>();
  rec.best_epoch = j.at("best_epoch").get<int>();
  rec.train_loss = j.at("train_loss").get<std::vector<double>>();
  rec.val_mse = j.at("val_mse").get<std::vector<double>>();
  rec.test_mse = j.at("test_mse").get<double>();
  rec.test_mae = j.at("test_mae").get<double>();
  rec.parameter_count = j.at("parameter_count").get<std::size_t>();
  rec.alpha_trajectory = j.at("alpha_trajectory").get<std::vector<double>>();
  rec.alpha_floor_hits = j.at("alpha_floor_hits").get<int>();
  rec.best_digest = j.at("best_digest").get<std::uint64_t>();
  rec.checkpoint_path = j.at("checkpoint").get<std::string>();
  return rec;
}

EvalResult evaluate_split(const PowerformerModel& model,
                          const StandardizedData& data, Split split) {
  const ModelConfig& cfg = model.config();
  const auto refs = windows_for_split(data, split, cfg.t_seq, cfg.t_pred);
  MetricsAccumulator acc;
  // Chunked so parameters are bound once per chunk, not once per window.
  constexpr std::size_t kChunk = 64;
  for (std::size_t base = 0; base < refs.size(); base += kChunk) {
    const std::size_t stop = std::min(base + kChunk, refs.size());
    Tape tape;
    tape.set_grad_enabled(false);
    const PowerformerModel::Bound bound = model.bind(tape, false);
    for (std::size_t r = base; r < stop; ++r) {
      const WindowRef& ref = refs[r];
      const std::vector<double> window = data.channel_slice(
          ref.channel, ref.start, static_cast<std::size_t>(cfg.t_seq));
      const std::vector<double> truth = data.channel_slice(
          ref.channel, ref.start + static_cast<std::size_t>(cfg.t_seq),
          static_cast<std::size_t>(cfg.t_pred));
      const NormStats stats = instance_stats(window);
      const std::vector<double> norm = instance_normalize(window, stats);
      const NodeId pred =
          model.predict_node(tape, bound, norm, false, nullptr, nullptr);
      const std::vector<double> series =
          denormalize(tape.value(pred).data, stats);
      acc.add(series, truth);
    }
  }
  EvalResult res;
  res.mse = acc.mse();
  res.mae = acc.mae();
  return res;
}

RunRecord train_model(PowerformerModel& model, const StandardizedData& data,
                      const TrainConfig& tcfg) {
  tcfg.validate();
  const ModelConfig& cfg = model.config();
  const auto train_refs =
      windows_for_split(data, Split::train, cfg.t_seq, cfg.t_pred);
  if (train_refs.empty()) {
    throw DataError("no training windows: split too short for t_seq=" +
                    std::to_string(cfg.t_seq) +
                    ", t_pred=" + std::to_string(cfg.t_pred));
  }
  for (const Split split : {Split::val, Split::test}) {
    if (windows_for_split(data, split, cfg.t_seq, cfg.t_pred).empty()) {
      throw DataError(std::string(split == Split::val ? "validation"
                                                      : "test") +
                      " split has no windows for t_seq=" +
                      std::to_string(cfg.t_seq) +
                      ", t_pred=" + std::to_string(cfg.t_pred));
    }
  }

  RunRecord rec;
  rec.seed = tcfg.seed;
  rec.t_seq = cfg.t_seq;
  rec.t_pred = cfg.t_pred;
  rec.mask_label = cfg.mask.label();
  rec.parameter_count = parameter_count(cfg);

  AdamState adam;
  AdamState alpha_adam;
  const double alpha0 = model.alpha();
  const double drift_cap =
      tcfg.alpha_drift_cap.value_or(0.5 * std::abs(alpha0));

  Rng dropout_rng(mix_seed(tcfg.seed, 0xd209ULL));

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values;
  double best_alpha = alpha0;
  int epochs_since_best = 0;

  std::vector<Tensor*> param_ptrs;
  std::vector<const Tensor*> grad_ptrs;
  for (Parameter& p : model.parameters()) {
    param_ptrs.push_back(&p.value);
    grad_ptrs.push_back(&p.grad);
  }

  std::vector<std::size_t> order(train_refs.size());
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    const std::size_t batch = static_cast<std::size_t>(tcfg.batch);
    for (std::size_t base = 0; base < order.size(); base += batch) {
      const std::size_t stop = std::min(base + batch, order.size());
      Tape tape;
      PowerformerModel::Bound bound = model.bind(tape, true);
      std::vector<NodeId> losses;
      losses.reserve(stop - base);
      for (std::size_t r = base; r < stop; ++r) {
        const WindowRef& ref = train_refs[order[r]];
        const std::vector<double> window = data.channel_slice(
            ref.channel, ref.start, static_cast<std::size_t>(cfg.t_seq));
        const std::vector<double> truth = data.channel_slice(
            ref.channel, ref.start + static_cast<std::size_t>(cfg.t_seq),
            static_cast<std::size_t>(cfg.t_pred));
        const NormStats stats = instance_stats(window);
        const std::vector<double> norm = instance_normalize(window, stats);
        const std::vector<double> norm_truth =
            instance_normalize(truth, stats);
        const NodeId pred =
            model.predict_node(tape, bound, norm, true, &dropout_rng, nullptr);
        losses.push_back(tape.mean_squared_error(
            pred,
            Tensor({1, static_cast<std::size_t>(cfg.t_pred)}, norm_truth)));
      }
      const NodeId loss = tape.scale(
          tape.add_scalars(losses), 1.0 / static_cast<double>(losses.size()));
      const double loss_value = tape.value(loss).data[0];
      if (!std::isfinite(loss_value)) {
        throw DivergenceError(
            "training loss diverged at epoch " + std::to_string(epoch) +
            ", step " + std::to_string(base / batch) +
            " (loss=" + std::to_string(loss_value) + ")");
      }
      epoch_loss += loss_value * static_cast<double>(losses.size());
      seen += losses.size();

      tape.backward(loss);
      model.collect_grads(tape, bound);
      adam_step(param_ptrs, grad_ptrs, adam, tcfg.lr);
      ++rec.steps;

      if (cfg.mask.learnable) {
        const double g = tape.grad(bound.alpha)[0];
        Tensor a = Tensor::scalar(model.alpha());
        Tensor ga = Tensor::scalar(g);
        Tensor* ap[] = {&a};
        const Tensor* gp[] = {&ga};
        const double lr_alpha =
            tcfg.alpha_lr *
            std::pow(tcfg.alpha_lr_decay, static_cast<double>(epoch));
        adam_step(ap, gp, alpha_adam, lr_alpha);
        double next = std::clamp(a.data[0], alpha0 - drift_cap,
                                 alpha0 + drift_cap);
        if (next <= 0.0) {
          next = kAlphaFloor;
          ++rec.alpha_floor_hits;
        }
        model.set_alpha(next);
      }
    }
    rec.train_loss.push_back(epoch_loss / static_cast<double>(seen));
    if (cfg.mask.learnable) rec.alpha_trajectory.push_back(model.alpha());

    const EvalResult val = evaluate_split(model, data, Split::val);
    rec.val_mse.push_back(val.mse);
    rec.epochs_run = epoch + 1;
    if (val.mse < best_val) {
      best_val = val.mse;
      rec.best_epoch = epoch;
      best_values.clear();
      for (const Parameter& p : model.parameters()) {
        best_values.push_back(p.value);
      }
      best_alpha = model.alpha();
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (tcfg.patience > 0 && epochs_since_best >= tcfg.patience) break;
    }
  }

  if (!best_values.empty()) {
    auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i].value = best_values[i];
    }
    model.set_alpha(best_alpha);
  }
  rec.best_digest = model.parameter_digest();

  const EvalResult test = evaluate_split(model, data, Split::test);
  rec.test_mse = test.mse;
  rec.test_mae = test.mae;
  return rec;
}

namespace {

struct CellKey {
  int t_seq, t_pred;
  std::string mask;
  bool operator<(const CellKey& o) const {
    return std::tie(t_seq, t_pred, mask) < std::tie(o.t_seq, o.t_pred, o.mask);
  }
};

}  // namespace

ResultsTable aggregate_protocol(const std::string& dataset,
                                const std::vector<RunRecord>& records,
                                const ProtocolGrid& grid) {
  ResultsTable table;
  table.dataset = dataset;

  std::map<CellKey, std::vector<const RunRecord*>> by_cell;
  for (const RunRecord& r : records) {
    by_cell[CellKey{r.t_seq, r.t_pred, r.mask_label}].push_back(&r);
  }

  for (int t_seq : grid.lookbacks) {
    for (int t_pred : grid.horizons) {
      for (const MaskSpec& mask : grid.masks) {
        const CellKey key{t_seq, t_pred, mask.label()};
        const auto it = by_cell.find(key);
        for (std::uint64_t seed : grid.seeds) {
          const bool have =
              it != by_cell.end() &&
              std::any_of(it->second.begin(), it->second.end(),
                          [seed](const RunRecord* r) { return r->seed == seed; });
          if (!have) {
            table.missing.push_back(
                "t_seq=" + std::to_string(t_seq) +
                " t_pred=" + std::to_string(t_pred) + " mask=" + key.mask +
                " seed=" + std::to_string(seed));
          }
        }
        if (it == by_cell.end()) continue;
        CellStats cell;
        cell.t_seq = t_seq;
        cell.t_pred = t_pred;
        cell.mask_label = key.mask;
        cell.seed_count = static_cast<int>(it->second.size());
        double mse_sum = 0.0, mae_sum = 0.0;
        for (const RunRecord* r : it->second) {
          mse_sum += r->test_mse;
          mae_sum += r->test_mae;
        }
        cell.mse_mean = mse_sum / cell.seed_count;
        cell.mae_mean = mae_sum / cell.seed_count;
        double mse_var = 0.0, mae_var = 0.0;
        for (const RunRecord* r : it->second) {
          mse_var += (r->test_mse - cell.mse_mean) * (r->test_mse - cell.mse_mean);
          mae_var += (r->test_mae - cell.mae_mean) * (r->test_mae - cell.mae_mean);
        }
        cell.mse_std = std::sqrt(mse_var / cell.seed_count);
        cell.mae_std = std::sqrt(mae_var / cell.seed_count);
        table.cells.push_back(std::move(cell));
      }
    }
  }

  // Look-back selection: best mean-over-horizons MSE with the mask free to
  // vary per horizon.
  double best_score = std::numeric_limits<double>::infinity();
  for (int t_seq : grid.lookbacks) {
    double score = 0.0;
    int horizons_with_data = 0;
    for (int t_pred : grid.horizons) {
      double best_mask = std::numeric_limits<double>::infinity();
      for (const CellStats& c : table.cells) {
        if (c.t_seq == t_seq && c.t_pred == t_pred) {
          best_mask = std::min(best_mask, c.mse_mean);
        }
      }
      if (std::isfinite(best_mask)) {
        score += best_mask;
        ++horizons_with_data;
      }
    }
    if (horizons_with_data == 0) continue;
    score /= horizons_with_data;
    if (score < best_score) {
      best_score = score;
      table.chosen_lookback = t_seq;
    }
  }

  // Per-horizon mask selection at the chosen look-back.
  for (int t_pred : grid.horizons) {
    double best_mse = std::numeric_limits<double>::infinity();
    std::string best_mask;
    for (const CellStats& c : table.cells) {
      if (c.t_seq == table.chosen_lookback && c.t_pred == t_pred &&
          c.mse_mean < best_mse) {
        best_mse = c.mse_mean;
        best_mask = c.mask_label;
      }
    }
    if (!best_mask.empty()) {
      table.chosen_masks.emplace_back(t_pred, best_mask);
    }
  }
  return table;
}

void write_results_csv(const ResultsTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "dataset,t_pred,t_seq,mask,mse_mean,mse_std,mae_mean,mae_std,"
         "seeds,selected\n";
  out.precision(12);
  for (const CellStats& c : table.cells) {
    bool selected = c.t_seq == table.chosen_lookback;
    if (selected) {
      selected = std::any_of(
          table.chosen_masks.begin(), table.chosen_masks.end(),
          [&c](const auto& pick) {
            return pick.first == c.t_pred && pick.second == c.mask_label;
          });
    }
    out << table.dataset << ',' << c.t_pred << ',' << c.t_seq << ','
        << c.mask_label << ',' << c.mse_mean << ',' << c.mse_std << ','
        << c.mae_mean << ',' << c.mae_std << ',' << c.seed_count << ','
        << (selected ? 1 : 0) << '\n';
  }
}

std::vector<RunRecord> run_protocol_grid(const RawDataset& raw,
                                         SplitKind split_kind,
                                         const ModelConfig& base_model,
                                         const TrainConfig& base_train,
                                         const ProtocolGrid& grid) {
  std::vector<RunRecord> records;
  for (int t_seq : grid.lookbacks) {
    const StandardizedData data =
        split_and_standardize(raw, make_split(split_kind, raw.rows));
    for (int t_pred : grid.horizons) {
      for (const MaskSpec& mask : grid.masks) {
        for (std::uint64_t seed : grid.seeds) {
          ModelConfig mcfg = base_model;
          mcfg.t_seq = t_seq;
          mcfg.t_pred = t_pred;
          mcfg.mask = mask;
          mcfg.seed = seed;
          TrainConfig tcfg = base_train;
          tcfg.seed = seed;
          PowerformerModel model = PowerformerModel::init(mcfg);
          RunRecord rec = train_model(model, data, tcfg);
          rec.dataset = raw.name;
          records.push_back(std::move(rec));
        }
      }
    }
  }
  return records;
}

}  // namespace powerformer
