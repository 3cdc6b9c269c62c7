#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace powerformer {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset",          "data.path",        "data.synthetic",
      "data.length",      "data.channels",    "data.seed",
      "model.t_seq",      "model.t_pred",     "model.patch_len",
      "model.patch_stride", "model.layers",   "model.embed",
      "model.heads",      "model.ff",         "model.dropout",
      "model.linear_dropout", "model.mask",   "model.alpha",
      "model.tc",         "model.order",      "model.learnable_alpha",
      "model.alpha_drift_cap", "model.banded_tau",
      "train.epochs",     "train.patience",   "train.lr",
      "train.batch",      "train.seed",       "train.alpha_lr",
      "train.alpha_lr_decay",
      "eval.horizons",    "eval.lookbacks",   "eval.seeds",
      "eval.masks",       "analysis.bins",    "run.dir",
  };
  return keys;
}

const std::set<std::string>& dataset_presets() {
  static const std::set<std::string> names = {
      "etth1", "etth2", "ettm1", "ettm2", "weather", "electricity", "traffic",
  };
  return names;
}

long to_long(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" +
                      value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + value +
                      "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + value +
                    "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : value) {
    if (ch == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  const std::string t = trim(cur);
  if (!t.empty()) out.push_back(t);
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Table-derived per-dataset defaults.
void apply_preset(const std::string& name, ConfigMap& base) {
  base.set("model.t_seq", "336");
  base.set("model.patch_len", "16");
  base.set("model.patch_stride", "8");
  base.set("model.layers", "3");
  base.set("train.epochs", "100");
  base.set("train.lr", "1e-4");
  if (name == "etth1" || name == "etth2") {
    base.set("model.embed", "16");
    base.set("model.heads", "4");
    base.set("model.ff", "128");
    base.set("model.dropout", "0.30");
    base.set("model.linear_dropout", "0.30");
    base.set("train.batch", "128");
    base.set("train.patience", "0");
  } else {
    base.set("model.embed", "128");
    base.set("model.heads", "16");
    base.set("model.ff", "256");
    base.set("model.dropout", "0.20");
    base.set("model.linear_dropout", "0.20");
    if (name == "electricity") {
      base.set("train.batch", "32");
      base.set("train.patience", "10");
    } else if (name == "traffic") {
      base.set("train.batch", "24");
      base.set("train.patience", "10");
    } else {
      base.set("train.batch", "128");
      base.set("train.patience", "20");
    }
  }
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    }
    cfg.set(key, value);
  }
  return cfg;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

ResolvedConfig resolve_config(const ConfigMap& file,
                              const ConfigMap& overrides) {
  for (const auto& [key, value] : file.values) {
    if (!known_keys().contains(key)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    (void)value;
  }
  for (const auto& [key, value] : overrides.values) {
    if (!known_keys().contains(key)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    (void)value;
  }

  // Layer the sources: preset defaults, then file, then overrides.
  const std::string dataset = [&] {
    if (auto v = overrides.get("dataset")) return *v;
    if (auto v = file.get("dataset")) return *v;
    return std::string("synthetic");
  }();

  ConfigMap merged;
  merged.set("dataset", dataset);
  if (dataset_presets().contains(dataset)) {
    apply_preset(dataset, merged);
  } else if (dataset != "synthetic" && dataset != "custom") {
    throw ConfigError(
        "key 'dataset': expected a preset name, 'synthetic' or 'custom', "
        "got '" +
        dataset + "'");
  }
  for (const auto& [key, value] : file.values) merged.set(key, value);
  for (const auto& [key, value] : overrides.values) merged.set(key, value);

  ResolvedConfig rc;
  rc.dataset = dataset;
  auto get = [&merged](const char* key) { return merged.get(key); };

  if (auto v = get("data.path")) rc.data_path = *v;
  if (auto v = get("data.synthetic")) rc.synthetic_kind = *v;
  if (auto v = get("data.length")) {
    rc.synthetic_length =
        static_cast<std::size_t>(to_long("data.length", *v));
  }
  if (auto v = get("data.channels")) {
    rc.synthetic_channels = static_cast<int>(to_long("data.channels", *v));
  }
  if (auto v = get("data.seed")) {
    rc.synthetic_seed = static_cast<std::uint64_t>(to_long("data.seed", *v));
  }

  ModelConfig& m = rc.model;
  if (auto v = get("model.t_seq")) m.t_seq = static_cast<int>(to_long("model.t_seq", *v));
  if (auto v = get("model.t_pred")) m.t_pred = static_cast<int>(to_long("model.t_pred", *v));
  if (auto v = get("model.patch_len")) m.patch_len = static_cast<int>(to_long("model.patch_len", *v));
  if (auto v = get("model.patch_stride")) m.patch_stride = static_cast<int>(to_long("model.patch_stride", *v));
  if (auto v = get("model.layers")) m.layers = static_cast<int>(to_long("model.layers", *v));
  if (auto v = get("model.embed")) m.embed = static_cast<int>(to_long("model.embed", *v));
  if (auto v = get("model.heads")) m.heads = static_cast<int>(to_long("model.heads", *v));
  if (auto v = get("model.ff")) m.ff = static_cast<int>(to_long("model.ff", *v));
  if (auto v = get("model.dropout")) m.dropout = to_double("model.dropout", *v);
  if (auto v = get("model.linear_dropout")) m.linear_dropout = to_double("model.linear_dropout", *v);
  if (auto v = get("model.mask")) {
    int order = 0;
    try {
      m.mask.family = parse_mask_family(*v, &order);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("key 'model.mask': " + std::string(e.what()));
    }
    if (order) m.mask.order = order;
  }
  if (auto v = get("model.alpha")) m.mask.alpha = to_double("model.alpha", *v);
  if (auto v = get("model.tc")) m.mask.critical_time = to_double("model.tc", *v);
  if (auto v = get("model.order")) m.mask.order = static_cast<int>(to_long("model.order", *v));
  if (auto v = get("model.learnable_alpha")) m.mask.learnable = to_bool("model.learnable_alpha", *v);
  if (auto v = get("model.banded_tau")) m.banded_tau = to_long("model.banded_tau", *v);

  TrainConfig& t = rc.train;
  if (auto v = get("train.epochs")) t.epochs = static_cast<int>(to_long("train.epochs", *v));
  if (auto v = get("train.patience")) t.patience = static_cast<int>(to_long("train.patience", *v));
  if (auto v = get("train.lr")) t.lr = to_double("train.lr", *v);
  if (auto v = get("train.batch")) t.batch = static_cast<int>(to_long("train.batch", *v));
  if (auto v = get("train.seed")) t.seed = static_cast<std::uint64_t>(to_long("train.seed", *v));
  if (auto v = get("train.alpha_lr")) t.alpha_lr = to_double("train.alpha_lr", *v);
  if (auto v = get("train.alpha_lr_decay")) t.alpha_lr_decay = to_double("train.alpha_lr_decay", *v);
  if (auto v = get("model.alpha_drift_cap")) {
    t.alpha_drift_cap = to_double("model.alpha_drift_cap", *v);
  }
  m.seed = t.seed;

  ProtocolGrid& g = rc.eval_grid;
  if (auto v = get("eval.horizons")) {
    g.horizons.clear();
    for (const std::string& s : split_list(*v)) {
      g.horizons.push_back(static_cast<int>(to_long("eval.horizons", s)));
    }
  }
  if (auto v = get("eval.lookbacks")) {
    g.lookbacks.clear();
    for (const std::string& s : split_list(*v)) {
      g.lookbacks.push_back(static_cast<int>(to_long("eval.lookbacks", s)));
    }
  }
  if (auto v = get("eval.seeds")) {
    g.seeds.clear();
    for (const std::string& s : split_list(*v)) {
      g.seeds.push_back(static_cast<std::uint64_t>(to_long("eval.seeds", s)));
    }
  }
  if (auto v = get("eval.masks")) {
    g.masks.clear();
    for (const std::string& s : split_list(*v)) {
      try {
        g.masks.push_back(MaskSpec::parse(s));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("key 'eval.masks': " + std::string(e.what()));
      }
    }
  } else {
    g.masks.push_back(MaskSpec{});  // family=none
  }

  if (auto v = get("analysis.bins")) {
    rc.analysis_bins = static_cast<int>(to_long("analysis.bins", *v));
    if (rc.analysis_bins < 1) {
      throw ConfigError("key 'analysis.bins': must be >= 1");
    }
  }
  if (auto v = get("run.dir")) rc.run_dir = *v;

  try {
    rc.model.validate();
    rc.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  // Canonical view with every key materialized.
  auto& c = rc.canonical;
  c["dataset"] = rc.dataset;
  c["data.path"] = rc.data_path;
  c["data.synthetic"] = rc.synthetic_kind;
  c["data.length"] = std::to_string(rc.synthetic_length);
  c["data.channels"] = std::to_string(rc.synthetic_channels);
  c["data.seed"] = std::to_string(rc.synthetic_seed);
  c["model.t_seq"] = std::to_string(m.t_seq);
  c["model.t_pred"] = std::to_string(m.t_pred);
  c["model.patch_len"] = std::to_string(m.patch_len);
  c["model.patch_stride"] = std::to_string(m.patch_stride);
  c["model.layers"] = std::to_string(m.layers);
  c["model.embed"] = std::to_string(m.embed);
  c["model.heads"] = std::to_string(m.heads);
  c["model.ff"] = std::to_string(m.ff);
  c["model.dropout"] = fmt_double(m.dropout);
  c["model.linear_dropout"] = fmt_double(m.linear_dropout);
  c["model.mask"] = mask_family_name(m.mask.family);
  c["model.alpha"] = fmt_double(m.mask.alpha);
  c["model.tc"] = fmt_double(m.mask.critical_time);
  c["model.order"] = std::to_string(m.mask.order);
  c["model.learnable_alpha"] = m.mask.learnable ? "true" : "false";
  c["model.alpha_drift_cap"] =
      t.alpha_drift_cap ? fmt_double(*t.alpha_drift_cap) : "";
  c["model.banded_tau"] = std::to_string(m.banded_tau);
  c["train.epochs"] = std::to_string(t.epochs);
  c["train.patience"] = std::to_string(t.patience);
  c["train.lr"] = fmt_double(t.lr);
  c["train.batch"] = std::to_string(t.batch);
  c["train.seed"] = std::to_string(t.seed);
  c["train.alpha_lr"] = fmt_double(t.alpha_lr);
  c["train.alpha_lr_decay"] = fmt_double(t.alpha_lr_decay);
  auto join = [](const auto& items, auto&& fmt) {
    std::string out;
    for (const auto& item : items) {
      if (!out.empty()) out += ',';
      out += fmt(item);
    }
    return out;
  };
  c["eval.horizons"] = join(g.horizons, [](int v) { return std::to_string(v); });
  c["eval.lookbacks"] = join(g.lookbacks, [](int v) { return std::to_string(v); });
  c["eval.seeds"] = join(g.seeds, [](std::uint64_t v) { return std::to_string(v); });
  c["eval.masks"] = join(g.masks, [](const MaskSpec& mspec) { return mspec.label(); });
  c["analysis.bins"] = std::to_string(rc.analysis_bins);
  c["run.dir"] = rc.run_dir;
  return rc;
}

std::string config_hash(const ResolvedConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [key, value] : cfg.canonical) {
    if (key == "train.seed") continue;
    h = fnv1a(key + "=" + value + "\n", h);
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

std::string run_dir_name(const ResolvedConfig& cfg) {
  return config_hash(cfg) + "_s" + std::to_string(cfg.train.seed);
}

RawDataset open_dataset(const ResolvedConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    RawDataset ds = synthetic_dataset(cfg.synthetic_kind, cfg.synthetic_length,
                                      cfg.synthetic_channels,
                                      cfg.synthetic_seed);
    return ds;
  }
  if (cfg.data_path.empty()) {
    throw DataError("dataset '" + cfg.dataset +
                    "' requires data.path to point at its CSV file");
  }
  RawDataset ds = load_csv(cfg.data_path);
  ds.name = cfg.dataset == "custom" ? cfg.data_path : cfg.dataset;
  return ds;
}

SplitKind split_kind(const ResolvedConfig& cfg) {
  if (cfg.dataset == "synthetic" || cfg.dataset == "custom") {
    return SplitKind::ratio;
  }
  return split_kind_for_dataset(cfg.dataset);
}

void write_manifest(const ResolvedConfig& cfg,
                    const std::map<std::string, std::string>& artifacts,
                    const std::string& path) {
  nlohmann::json j;
  j["tool"] = std::string("powerformer ") + kToolVersion;
  const auto now = std::chrono::system_clock::now();
  j["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(
                       now.time_since_epoch())
                       .count();
  j["config_hash"] = config_hash(cfg);
  j["config"] = cfg.canonical;
  j["artifacts"] = artifacts;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

}  // namespace powerformer
