// Command-line front end; links only the public C API.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "powerformer/powerformer.h"

namespace {

struct ConfigDeleter {
  void operator()(pf_config* c) const { pf_config_free(c); }
};
using ConfigPtr = std::unique_ptr<pf_config, ConfigDeleter>;

int exit_code_for(pf_status st) {
  switch (st) {
    case PF_OK: return 0;
    case PF_ERR_CONFIG: return 1;
    case PF_ERR_DATA: return 2;
    case PF_ERR_DIVERGENCE: return 3;
    default: return 1;
  }
}

int fail(pf_status st) {
  std::fprintf(stderr, "error: %s\n", pf_last_error());
  return exit_code_for(st);
}

// Common config handling: optional --config file plus repeated --set
// overrides and a few convenience flags. Flags win over the file.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string dataset, data_path, mask;
  std::string alpha, tc, seed, t_pred, t_seq, epochs;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    cmd->add_option("--set", sets, "override KEY=VALUE (repeatable)");
    cmd->add_option("--dataset", dataset, "dataset preset or 'synthetic'");
    cmd->add_option("--data", data_path, "dataset CSV path");
    cmd->add_option("--mask", mask, "mask family: none|pl|spl|bw1|bw2");
    cmd->add_option("--alpha", alpha, "power-law decay constant");
    cmd->add_option("--tc", tc, "Butterworth critical time");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--t-pred", t_pred, "prediction length");
    cmd->add_option("--t-seq", t_seq, "look-back length");
    cmd->add_option("--epochs", epochs, "training epochs");
  }

  // Builds the config; returns nullptr after printing an error.
  ConfigPtr build(pf_status* st_out) const {
    ConfigPtr cfg;
    if (!config_path.empty()) {
      cfg.reset(pf_config_read(config_path.c_str()));
      if (!cfg) {
        *st_out = PF_ERR_CONFIG;
        return nullptr;
      }
    } else {
      cfg.reset(pf_config_new());
    }
    auto set = [&](const char* key, const std::string& value) {
      if (value.empty()) return PF_OK;
      return pf_config_set(cfg.get(), key, value.c_str());
    };
    pf_status st = PF_OK;
    auto ok = [&](pf_status s) {
      if (s != PF_OK) st = s;
      return s == PF_OK;
    };
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "error: --set expects KEY=VALUE, got '%s'\n",
                     kv.c_str());
        *st_out = PF_ERR_CONFIG;
        return nullptr;
      }
      if (!ok(pf_config_set(cfg.get(), kv.substr(0, eq).c_str(),
                            kv.substr(eq + 1).c_str()))) {
        break;
      }
    }
    if (st == PF_OK) {
      ok(set("dataset", dataset)) && ok(set("data.path", data_path)) &&
          ok(set("model.mask", mask)) && ok(set("model.alpha", alpha)) &&
          ok(set("model.tc", tc)) && ok(set("train.seed", seed)) &&
          ok(set("model.t_pred", t_pred)) && ok(set("model.t_seq", t_seq)) &&
          ok(set("train.epochs", epochs));
    }
    if (st != PF_OK) {
      *st_out = st;
      return nullptr;
    }
    *st_out = PF_OK;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"powerformer: local-causal attention forecasting toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("powerformer ") + pf_version());

  // train
  auto* train = app.add_subcommand("train", "train one model per the config");
  ConfigArgs train_cfg;
  train_cfg.attach(train);
  std::string train_out = "runs";
  train->add_option("--out", train_out, "run-directory root");

  // evaluate
  auto* evaluate =
      app.add_subcommand("evaluate", "aggregate run records into the protocol CSV");
  ConfigArgs eval_cfg;
  eval_cfg.attach(evaluate);
  std::string eval_runs = "runs", eval_out = "results.csv";
  evaluate->add_option("--runs", eval_runs, "run-directory root");
  evaluate->add_option("--out", eval_out, "output CSV path");

  // analyze
  auto* analyze =
      app.add_subcommand("analyze", "attention distribution analysis of a checkpoint");
  ConfigArgs analyze_cfg;
  analyze_cfg.attach(analyze);
  std::string analyze_ckpt, analyze_out = "analysis";
  analyze->add_option("--checkpoint", analyze_ckpt, "checkpoint path")
      ->required();
  analyze->add_option("--out", analyze_out, "output directory");

  // autocorr
  auto* autocorr =
      app.add_subcommand("autocorr", "per-channel lag autocorrelation CSV");
  ConfigArgs autocorr_cfg;
  autocorr_cfg.attach(autocorr);
  long autocorr_lag = 256;
  std::string autocorr_out = "autocorr.csv";
  autocorr->add_option("--max-lag", autocorr_lag, "largest lag");
  autocorr->add_option("--out", autocorr_out, "output CSV path");

  // mask-dump
  auto* mask_dump =
      app.add_subcommand("mask-dump", "render a decay mask to CSV");
  std::string md_family = "none";
  double md_alpha = 1.0, md_tc = 10.0;
  int md_order = 1;
  long md_patches = 8;
  std::string md_out = "mask.csv", md_profile;
  mask_dump->add_option("--family", md_family, "none|pl|spl|bw1|bw2");
  mask_dump->add_option("--alpha", md_alpha, "power-law decay constant");
  mask_dump->add_option("--order", md_order, "Butterworth order (1|2)");
  mask_dump->add_option("--tc", md_tc, "Butterworth critical time");
  mask_dump->add_option("--patches", md_patches, "mask size P")->required();
  mask_dump->add_option("--out", md_out, "matrix CSV path");
  mask_dump->add_option("--profile", md_profile, "per-lag profile CSV path");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) {
    pf_status st = PF_OK;
    ConfigPtr cfg = train_cfg.build(&st);
    if (!cfg) return fail(st);
    char run_dir[4096] = {0};
    st = pf_train(cfg.get(), train_out.c_str(), run_dir, sizeof(run_dir));
    if (st != PF_OK) return fail(st);
    std::printf("run directory: %s\n", run_dir);
    return 0;
  }

  if (evaluate->parsed()) {
    pf_status st = PF_OK;
    ConfigPtr cfg = eval_cfg.build(&st);
    if (!cfg) return fail(st);
    st = pf_evaluate(cfg.get(), eval_runs.c_str(), eval_out.c_str());
    if (st != PF_OK) return fail(st);
    if (pf_last_error()[0] != '\0') {
      std::fprintf(stderr, "warning: %s\n", pf_last_error());
    }
    std::printf("results: %s\n", eval_out.c_str());
    return 0;
  }

  if (analyze->parsed()) {
    pf_status st = PF_OK;
    ConfigPtr cfg = analyze_cfg.build(&st);
    if (!cfg) return fail(st);
    st = pf_analyze(cfg.get(), analyze_ckpt.c_str(), analyze_out.c_str());
    if (st != PF_OK) return fail(st);
    std::printf("analysis: %s\n", analyze_out.c_str());
    return 0;
  }

  if (autocorr->parsed()) {
    pf_status st = PF_OK;
    ConfigPtr cfg = autocorr_cfg.build(&st);
    if (!cfg) return fail(st);
    pf_dataset* ds = pf_dataset_open(cfg.get());
    if (!ds) return fail(PF_ERR_DATA);
    std::printf("dataset: %lld rows, %d channels\n",
                static_cast<long long>(pf_dataset_rows(ds)),
                pf_dataset_channels(ds));
    st = pf_dataset_autocorr_csv(ds, autocorr_lag, autocorr_out.c_str());
    pf_dataset_free(ds);
    if (st != PF_OK) return fail(st);
    std::printf("autocorrelation: %s\n", autocorr_out.c_str());
    return 0;
  }

  if (mask_dump->parsed()) {
    const pf_status st = pf_mask_dump(
        md_family.c_str(), md_alpha, md_order, md_tc, md_patches,
        md_out.c_str(), md_profile.empty() ? nullptr : md_profile.c_str());
    if (st != PF_OK) return fail(st);
    std::printf("mask: %s\n", md_out.c_str());
    return 0;
  }

  return 1;
}
