#include "runner.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "analysis.hpp"
#include "attention.hpp"

namespace powerformer {

namespace fs = std::filesystem;

TrainArtifacts run_training(const ResolvedConfig& cfg,
                            const std::string& run_root) {
  const RawDataset raw = open_dataset(cfg);
  const StandardizedData data =
      split_and_standardize(raw, make_split(split_kind(cfg), raw.rows));

  PowerformerModel model = PowerformerModel::init(cfg.model);
  RunRecord rec = train_model(model, data, cfg.train);
  rec.dataset = cfg.dataset == "custom" ? raw.name : cfg.dataset;
  rec.config_hash = config_hash(cfg);

  TrainArtifacts art;
  art.run_dir = (fs::path(run_root) / run_dir_name(cfg)).string();
  fs::create_directories(art.run_dir);
  art.checkpoint = (fs::path(art.run_dir) / "checkpoint.pfckpt").string();
  art.run_record = (fs::path(art.run_dir) / "run_record.json").string();
  art.manifest = (fs::path(art.run_dir) / "manifest.json").string();

  save_checkpoint(art.checkpoint, model, rec.steps);
  rec.checkpoint_path = art.checkpoint;
  save_run_record(rec, art.run_record);
  write_manifest(cfg,
                 {{"checkpoint", art.checkpoint},
                  {"run_record", art.run_record}},
                 art.manifest);
  return art;
}

std::vector<std::string> run_evaluate(const ResolvedConfig& cfg,
                                      const std::string& run_root,
                                      const std::string& out_csv) {
  if (!fs::is_directory(run_root)) {
    throw DataError("run root '" + run_root + "' does not exist");
  }
  std::vector<RunRecord> records;
  std::vector<fs::path> record_paths;
  for (const auto& entry : fs::directory_iterator(run_root)) {
    if (!entry.is_directory()) continue;
    const fs::path rr = entry.path() / "run_record.json";
    if (fs::exists(rr)) record_paths.push_back(rr);
  }
  std::sort(record_paths.begin(), record_paths.end());
  const std::string dataset_name = cfg.dataset;
  for (const fs::path& p : record_paths) {
    RunRecord rec = load_run_record(p.string());
    if (rec.dataset == dataset_name) records.push_back(std::move(rec));
  }
  if (records.empty()) {
    throw DataError("no run records for dataset '" + dataset_name +
                    "' under '" + run_root + "'");
  }
  const ResultsTable table =
      aggregate_protocol(dataset_name, records, cfg.eval_grid);
  write_results_csv(table, out_csv);
  return table.missing;
}

void run_analyze(const ResolvedConfig& cfg, const std::string& checkpoint,
                 const std::string& out_dir) {
  if (!fs::exists(checkpoint)) {
    throw DataError("checkpoint '" + checkpoint + "' does not exist");
  }
  const PowerformerModel model = load_checkpoint(checkpoint);
  const RawDataset raw = open_dataset(cfg);
  const StandardizedData data =
      split_and_standardize(raw, make_split(split_kind(cfg), raw.rows));

  fs::create_directories(out_dir);
  const std::vector<Histogram> hists =
      collect_distributions(model, data, Split::test, cfg.analysis_bins);

  nlohmann::json manifest;
  manifest["tool"] = std::string("powerformer ") + kToolVersion;
  manifest["checkpoint"] = checkpoint;
  manifest["bins"] = cfg.analysis_bins;
  nlohmann::json hist_index = nlohmann::json::array();
  for (const Histogram& h : hists) {
    const std::string csv = (fs::path(out_dir) / (h.tag + ".csv")).string();
    const std::string svg = (fs::path(out_dir) / (h.tag + ".svg")).string();
    const bool log_x = h.tag.rfind("weights", 0) == 0;
    write_histogram_csv(h, csv);
    write_histogram_svg(h, svg, log_x);
    hist_index.push_back({{"tag", h.tag},
                          {"csv", csv},
                          {"svg", svg},
                          {"samples", h.total}});
  }
  manifest["histograms"] = std::move(hist_index);

  for (const Histogram& h : hists) {
    if (h.tag == "weights_post_mask") {
      const ModeReport report = bimodality_summary(h);
      manifest["mode_report"] = {{"modes", report.modes},
                                 {"mode_locations", report.mode_locations},
                                 {"valley_depth", report.valley_depth}};
    }
  }

  // flattened score/weight samples of the first test window
  const auto refs = windows_for_split(data, Split::test,
                                      model.config().t_seq,
                                      model.config().t_pred);
  if (!refs.empty()) {
    std::vector<AttentionTrace> traces;
    (void)model.forward({data.channel_slice(
                            refs.front().channel, refs.front().start,
                            static_cast<std::size_t>(model.config().t_seq))},
                        &traces);
    const std::string trace_csv = (fs::path(out_dir) / "traces.csv").string();
    write_trace_csv(traces, trace_csv);
    manifest["traces"] = trace_csv;
  }

  MaskSpec spec = model.config().mask;
  spec.alpha = model.alpha();
  manifest["mask_envelope_max_deviation"] = mask_envelope_check(
      spec, static_cast<std::size_t>(model.config().patch_count()));

  std::ofstream out(fs::path(out_dir) / "analysis.json");
  if (!out) throw DataError("cannot write analysis manifest");
  out << manifest.dump(2) << '\n';
}

}  // namespace powerformer
