#include "powerformer/powerformer.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <new>
#include <string>
#include <vector>

#include "config.hpp"
#include "masks.hpp"
#include "model.hpp"
#include "runner.hpp"

namespace {

thread_local std::string g_last_error;

using powerformer::ConfigError;
using powerformer::DataError;
using powerformer::DivergenceError;

pf_status to_status(const std::exception& e) {
  g_last_error = e.what();
  if (dynamic_cast<const ConfigError*>(&e)) return PF_ERR_CONFIG;
  if (dynamic_cast<const DataError*>(&e)) return PF_ERR_DATA;
  if (dynamic_cast<const DivergenceError*>(&e)) return PF_ERR_DIVERGENCE;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return PF_ERR_INVALID;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e) ||
      dynamic_cast<const std::ios_base::failure*>(&e)) {
    return PF_ERR_IO;
  }
  return PF_ERR_INTERNAL;
}

template <typename Fn>
pf_status guarded(Fn&& fn) {
  g_last_error.clear();  // a successful call may still leave a warning here
  try {
    fn();
    return PF_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  } catch (...) {
    g_last_error = "unknown error";
    return PF_ERR_INTERNAL;
  }
}

powerformer::MaskSpec make_mask_spec(const char* family, double alpha,
                                     std::int32_t order,
                                     double critical_time) {
  if (!family) throw std::invalid_argument("mask family is null");
  powerformer::MaskSpec spec;
  int short_order = 0;
  spec.family = powerformer::parse_mask_family(family, &short_order);
  spec.alpha = alpha;
  spec.order = short_order ? short_order : order;
  spec.critical_time = critical_time;
  spec.validate();
  return spec;
}

}  // namespace

struct pf_config {
  powerformer::ConfigMap map;
};

struct pf_dataset {
  powerformer::RawDataset data;
};

struct pf_model {
  powerformer::PowerformerModel model;
};

extern "C" {

const char* pf_version(void) { return powerformer::kToolVersion; }

const char* pf_last_error(void) { return g_last_error.c_str(); }

pf_config* pf_config_new(void) {
  return new (std::nothrow) pf_config{};
}

pf_config* pf_config_read(const char* path) {
  pf_config* cfg = nullptr;
  const pf_status st = guarded([&] {
    if (!path) throw std::invalid_argument("config path is null");
    cfg = new pf_config{powerformer::load_config_file(path)};
  });
  return st == PF_OK ? cfg : nullptr;
}

pf_status pf_config_set(pf_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    if (!cfg || !key || !value) {
      throw std::invalid_argument("pf_config_set: null argument");
    }
    cfg->map.set(key, value);
  });
}

pf_status pf_config_get(const pf_config* cfg, const char* key, char* buf,
                        size_t buf_len) {
  return guarded([&] {
    if (!cfg || !key || !buf) {
      throw std::invalid_argument("pf_config_get: null argument");
    }
    const auto v = cfg->map.get(key);
    if (!v) throw std::invalid_argument("config key '" + std::string(key) +
                                        "' is not set");
    if (v->size() + 1 > buf_len) {
      throw std::invalid_argument("pf_config_get: buffer too small");
    }
    std::memcpy(buf, v->c_str(), v->size() + 1);
  });
}

void pf_config_free(pf_config* cfg) { delete cfg; }

pf_dataset* pf_dataset_open(const pf_config* cfg) {
  pf_dataset* ds = nullptr;
  const pf_status st = guarded([&] {
    if (!cfg) throw std::invalid_argument("pf_dataset_open: null config");
    const powerformer::ResolvedConfig rc =
        powerformer::resolve_config(cfg->map, {});
    ds = new pf_dataset{powerformer::open_dataset(rc)};
  });
  return st == PF_OK ? ds : nullptr;
}

int64_t pf_dataset_rows(const pf_dataset* ds) {
  return ds ? static_cast<int64_t>(ds->data.rows) : -1;
}

int32_t pf_dataset_channels(const pf_dataset* ds) {
  return ds ? ds->data.channels : -1;
}

pf_status pf_dataset_autocorr_csv(const pf_dataset* ds, int64_t max_lag,
                                  const char* out_csv) {
  return guarded([&] {
    if (!ds || !out_csv) {
      throw std::invalid_argument("pf_dataset_autocorr_csv: null argument");
    }
    if (max_lag < 0) {
      throw std::invalid_argument("pf_dataset_autocorr_csv: negative lag");
    }
    powerformer::write_autocorrelation_csv(
        ds->data, static_cast<std::size_t>(max_lag), out_csv);
  });
}

void pf_dataset_free(pf_dataset* ds) { delete ds; }

pf_status pf_mask_render(const char* family, double alpha, int32_t order,
                         double critical_time, int64_t patches, double* out) {
  return guarded([&] {
    if (!out) throw std::invalid_argument("pf_mask_render: null output");
    if (patches < 1) {
      throw std::invalid_argument("pf_mask_render: patches must be >= 1");
    }
    const powerformer::MaskSpec spec =
        make_mask_spec(family, alpha, order, critical_time);
    const powerformer::ScoreMask mask = powerformer::composed_mask(
        spec, static_cast<std::size_t>(patches));
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
      const double v = mask.values.data[i];
      out[i] = powerformer::is_masked_score(v)
                   ? -std::numeric_limits<double>::infinity()
                   : v;
    }
  });
}

pf_status pf_mask_dump(const char* family, double alpha, int32_t order,
                       double critical_time, int64_t patches,
                       const char* out_csv, const char* profile_csv) {
  return guarded([&] {
    if (!out_csv) throw std::invalid_argument("pf_mask_dump: null path");
    if (patches < 1) {
      throw std::invalid_argument("pf_mask_dump: patches must be >= 1");
    }
    const powerformer::MaskSpec spec =
        make_mask_spec(family, alpha, order, critical_time);
    const powerformer::ScoreMask mask = powerformer::composed_mask(
        spec, static_cast<std::size_t>(patches));
    powerformer::write_mask_csv(mask, out_csv);
    if (profile_csv) {
      powerformer::write_mask_profile_csv(
          spec, static_cast<std::size_t>(patches), profile_csv);
    }
  });
}

pf_status pf_train(const pf_config* cfg, const char* run_root,
                   char* run_dir_out, size_t run_dir_cap) {
  return guarded([&] {
    if (!cfg || !run_root) {
      throw std::invalid_argument("pf_train: null argument");
    }
    const powerformer::ResolvedConfig rc =
        powerformer::resolve_config(cfg->map, {});
    const powerformer::TrainArtifacts art =
        powerformer::run_training(rc, run_root);
    if (run_dir_out && run_dir_cap > 0) {
      const std::size_t n = std::min(art.run_dir.size(), run_dir_cap - 1);
      std::memcpy(run_dir_out, art.run_dir.c_str(), n);
      run_dir_out[n] = '\0';
    }
  });
}

pf_status pf_evaluate(const pf_config* cfg, const char* run_root,
                      const char* out_csv) {
  return guarded([&] {
    if (!cfg || !run_root || !out_csv) {
      throw std::invalid_argument("pf_evaluate: null argument");
    }
    const powerformer::ResolvedConfig rc =
        powerformer::resolve_config(cfg->map, {});
    const std::vector<std::string> missing =
        powerformer::run_evaluate(rc, run_root, out_csv);
    if (!missing.empty()) {
      std::string msg = "missing runs:";
      for (const std::string& m : missing) msg += "\n  " + m;
      g_last_error = msg;  // warning; status stays PF_OK
    }
  });
}

pf_status pf_analyze(const pf_config* cfg, const char* checkpoint_path,
                     const char* out_dir) {
  return guarded([&] {
    if (!cfg || !checkpoint_path || !out_dir) {
      throw std::invalid_argument("pf_analyze: null argument");
    }
    const powerformer::ResolvedConfig rc =
        powerformer::resolve_config(cfg->map, {});
    powerformer::run_analyze(rc, checkpoint_path, out_dir);
  });
}

pf_model* pf_model_open(const char* checkpoint_path) {
  pf_model* m = nullptr;
  const pf_status st = guarded([&] {
    if (!checkpoint_path) {
      throw std::invalid_argument("pf_model_open: null path");
    }
    m = new pf_model{powerformer::load_checkpoint(checkpoint_path)};
  });
  return st == PF_OK ? m : nullptr;
}

int64_t pf_model_lookback(const pf_model* model) {
  return model ? model->model.config().t_seq : -1;
}

int64_t pf_model_horizon(const pf_model* model) {
  return model ? model->model.config().t_pred : -1;
}

pf_status pf_model_forecast(const pf_model* model, const double* history,
                            int32_t channels, int64_t t_seq, double* out,
                            int64_t t_pred) {
  return guarded([&] {
    if (!model || !history || !out) {
      throw std::invalid_argument("pf_model_forecast: null argument");
    }
    const powerformer::ModelConfig& cfg = model->model.config();
    if (channels < 1 || t_seq != cfg.t_seq || t_pred != cfg.t_pred) {
      throw std::invalid_argument(
          "pf_model_forecast: expected " + std::to_string(cfg.t_seq) +
          " history steps and " + std::to_string(cfg.t_pred) +
          " forecast steps");
    }
    std::vector<std::vector<double>> windows(channels);
    for (int32_t c = 0; c < channels; ++c) {
      windows[c].assign(history + c * t_seq, history + (c + 1) * t_seq);
    }
    const powerformer::Forecast fc = model->model.forward(windows);
    for (int32_t c = 0; c < channels; ++c) {
      std::memcpy(out + c * t_pred, fc.channels[c].data(),
                  static_cast<std::size_t>(t_pred) * sizeof(double));
    }
  });
}

void pf_model_free(pf_model* model) { delete model; }

}  // extern "C"
