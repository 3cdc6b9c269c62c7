#include "model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace powerformer {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr char kCheckpointMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

NodeId dropout(Tape& tape, NodeId x, double rate, bool training,
               Rng* dropout_rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) {
    throw std::invalid_argument("dropout rate must be < 1");
  }
  if (!dropout_rng) {
    throw std::invalid_argument("training forward requires a dropout rng");
  }
  const Tensor& tx = tape.value(x);
  Tensor mask(tx.shape);
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  for (double& v : mask.data) {
    v = dropout_rng->uniform() < keep ? inv_keep : 0.0;
  }
  return tape.mul(x, tape.constant(std::move(mask)));
}

}  // namespace

void ModelConfig::validate() const {
  patch_config().validate();
  if (t_pred < 1) throw ConfigError("t_pred must be >= 1");
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (embed < 1 || heads < 1 || ff < 1) {
    throw ConfigError("embed, heads and ff must be >= 1");
  }
  if (embed % heads != 0) {
    throw ConfigError("embed width " + std::to_string(embed) +
                      " must be divisible by the head count " +
                      std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0 || linear_dropout < 0.0 ||
      linear_dropout >= 1.0) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (banded_tau < 0) throw ConfigError("banded_tau must be >= 0");
  mask.validate();
}

PatchConfig ModelConfig::patch_config() const {
  PatchConfig p;
  p.patch_len = patch_len;
  p.stride = patch_stride;
  p.embed_width = embed;
  p.t_seq = t_seq;
  return p;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(cfg.embed);
  const std::size_t p = static_cast<std::size_t>(cfg.patch_len);
  const std::size_t patches = static_cast<std::size_t>(cfg.patch_count());
  const std::size_t dk = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t heads = static_cast<std::size_t>(cfg.heads);
  const std::size_t ff = static_cast<std::size_t>(cfg.ff);
  const std::size_t per_layer = heads * 3 * n * dk  // per-head Q/K/V
                                + heads * dk * n    // output projection
                                + 4 * n             // two layer norms
                                + n * ff + ff + ff * n + n;
  return p * n + patches * n +
         static_cast<std::size_t>(cfg.layers) * per_layer +
         patches * n * static_cast<std::size_t>(cfg.t_pred) +
         static_cast<std::size_t>(cfg.t_pred);
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("mse: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double mae(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("mae: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += std::abs(a[i] - b[i]);
  }
  return acc / static_cast<double>(a.size());
}

void MetricsAccumulator::add(std::span<const double> pred,
                             std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("metrics: length mismatch");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    sq_sum += d * d;
    abs_sum += std::abs(d);
  }
  count += pred.size();
}

PowerformerModel PowerformerModel::init(const ModelConfig& cfg) {
  cfg.validate();
  PowerformerModel m;
  m.cfg_ = cfg;
  m.alpha_ = cfg.mask.alpha;

  Rng rng(mix_seed(cfg.seed, 0x9f17ULL));
  auto uniform_tensor = [&rng](std::vector<std::size_t> shape, double bound) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
  };
  auto glorot = [&uniform_tensor](std::size_t fan_in, std::size_t fan_out) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_tensor({fan_in, fan_out}, bound);
  };
  auto push = [&m](std::string name, Tensor value) {
    Parameter p;
    p.name = std::move(name);
    p.grad = Tensor::zeros(value.shape);
    p.value = std::move(value);
    m.params_.push_back(std::move(p));
  };

  const std::size_t n = static_cast<std::size_t>(cfg.embed);
  const std::size_t p = static_cast<std::size_t>(cfg.patch_len);
  const std::size_t patches = static_cast<std::size_t>(cfg.patch_count());
  const std::size_t dk = static_cast<std::size_t>(cfg.head_dim());

  push("embed.w", glorot(p, n));
  push("embed.pos", uniform_tensor({patches, n}, 0.02));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (int h = 0; h < cfg.heads; ++h) {
      push(prefix + "attn.wq" + std::to_string(h), glorot(n, dk));
      push(prefix + "attn.wk" + std::to_string(h), glorot(n, dk));
      push(prefix + "attn.wv" + std::to_string(h), glorot(n, dk));
    }
    push(prefix + "attn.wa",
         glorot(static_cast<std::size_t>(cfg.heads) * dk, n));
    push(prefix + "ln1.gamma", Tensor::full({n}, 1.0));
    push(prefix + "ln1.beta", Tensor::zeros({n}));
    push(prefix + "ff.w1", glorot(n, static_cast<std::size_t>(cfg.ff)));
    push(prefix + "ff.b1", Tensor::zeros({static_cast<std::size_t>(cfg.ff)}));
    push(prefix + "ff.w2", glorot(static_cast<std::size_t>(cfg.ff), n));
    push(prefix + "ff.b2", Tensor::zeros({n}));
    push(prefix + "ln2.gamma", Tensor::full({n}, 1.0));
    push(prefix + "ln2.beta", Tensor::zeros({n}));
  }
  push("head.w", glorot(patches * n, static_cast<std::size_t>(cfg.t_pred)));
  push("head.b", Tensor::zeros({static_cast<std::size_t>(cfg.t_pred)}));
  return m;
}

PowerformerModel::Bound PowerformerModel::bind(Tape& tape,
                                               bool trainable) const {
  Bound b;
  b.nodes.reserve(params_.size());
  for (const Parameter& p : params_) {
    b.nodes.push_back(tape.leaf(p.value, trainable));
  }
  std::size_t idx = 0;
  auto next = [&] { return b.nodes[idx++]; };
  b.w_embed = next();
  b.pos = next();
  b.layers.resize(cfg_.layers);
  for (int l = 0; l < cfg_.layers; ++l) {
    Bound::Layer& layer = b.layers[l];
    layer.attn.heads = cfg_.heads;
    layer.attn.head_dim = cfg_.head_dim();
    for (int h = 0; h < cfg_.heads; ++h) {
      layer.attn.wq.push_back(next());
      layer.attn.wk.push_back(next());
      layer.attn.wv.push_back(next());
    }
    layer.attn.wa = next();
    layer.ln1_gamma = next();
    layer.ln1_beta = next();
    layer.ff_w1 = next();
    layer.ff_b1 = next();
    layer.ff_w2 = next();
    layer.ff_b2 = next();
    layer.ln2_gamma = next();
    layer.ln2_beta = next();
  }
  b.head_w = next();
  b.head_b = next();
  if (cfg_.mask.learnable) {
    b.alpha = tape.leaf(Tensor::scalar(alpha_), trainable);
  }
  return b;
}

NodeId PowerformerModel::predict_node(Tape& tape, const Bound& bound,
                                      std::span<const double> norm_window,
                                      bool training, Rng* dropout_rng,
                                      CaptureSink* capture) const {
  const PatchConfig pcfg = cfg_.patch_config();
  const std::size_t patches = static_cast<std::size_t>(pcfg.patch_count());
  const bool banded = cfg_.banded_tau > 0 && !training;

  NodeId x = patchify(tape, tape.constant(patch_matrix(norm_window, pcfg)),
                      bound.w_embed, bound.pos);
  for (int l = 0; l < cfg_.layers; ++l) {
    const Bound::Layer& layer = bound.layers[l];
    CaptureSink layer_sink;
    CaptureSink* sink = nullptr;
    if (capture && capture->out) {
      layer_sink.out = capture->out;
      layer_sink.layer = l;
      sink = &layer_sink;
    }

    NodeId attn;
    if (cfg_.mask.learnable) {
      attn = wcmha_forward_learnable(tape, x, layer.attn, bound.alpha,
                                     cfg_.mask.family, sink);
    } else {
      MaskSpec spec = cfg_.mask;
      spec.alpha = alpha_;
      const ScoreMask& mask = composed_mask_cached(spec, patches);
      if (banded) {
        AttentionWeights w;
        w.heads = cfg_.heads;
        w.head_dim = cfg_.head_dim();
        for (int h = 0; h < cfg_.heads; ++h) {
          w.wq.push_back(tape.value(layer.attn.wq[h]));
          w.wk.push_back(tape.value(layer.attn.wk[h]));
          w.wv.push_back(tape.value(layer.attn.wv[h]));
        }
        w.wa = tape.value(layer.attn.wa);
        attn = tape.constant(
            wcmha_banded(tape.value(x), w, mask, cfg_.banded_tau));
      } else {
        attn = wcmha_forward(tape, x, layer.attn, mask, sink);
      }
    }
    attn = dropout(tape, attn, cfg_.dropout, training, dropout_rng);
    x = tape.layer_norm(tape.add(x, attn), layer.ln1_gamma, layer.ln1_beta,
                        kLayerNormEps);

    NodeId ff = tape.add_rowvec(tape.matmul(x, layer.ff_w1), layer.ff_b1);
    ff = tape.gelu(ff);
    ff = dropout(tape, ff, cfg_.dropout, training, dropout_rng);
    ff = tape.add_rowvec(tape.matmul(ff, layer.ff_w2), layer.ff_b2);
    ff = dropout(tape, ff, cfg_.dropout, training, dropout_rng);
    x = tape.layer_norm(tape.add(x, ff), layer.ln2_gamma, layer.ln2_beta,
                        kLayerNormEps);
  }

  NodeId flat =
      tape.reshape(x, {1, patches * static_cast<std::size_t>(cfg_.embed)});
  flat = dropout(tape, flat, cfg_.linear_dropout, training, dropout_rng);
  return tape.add_rowvec(tape.matmul(flat, bound.head_w), bound.head_b);
}

Forecast PowerformerModel::forward(
    const std::vector<std::vector<double>>& windows,
    std::vector<AttentionTrace>* traces) const {
  Forecast fc;
  fc.channels.reserve(windows.size());
  for (const auto& window : windows) {
    if (window.size() != static_cast<std::size_t>(cfg_.t_seq)) {
      throw std::invalid_argument(
          "forward: window length " + std::to_string(window.size()) +
          " does not match t_seq " + std::to_string(cfg_.t_seq));
    }
    for (double v : window) {
      if (!std::isfinite(v)) {
        throw DataError("forward: non-finite value in input window");
      }
    }
    const NormStats stats = instance_stats(window);
    const std::vector<double> norm = instance_normalize(window, stats);

    Tape tape;
    tape.set_grad_enabled(false);
    const Bound bound = bind(tape, false);
    CaptureSink sink;
    sink.out = traces;
    const NodeId pred = predict_node(tape, bound, norm, false, nullptr,
                                     traces ? &sink : nullptr);
    const Tensor& out = tape.value(pred);
    std::vector<double> series = denormalize(out.data, stats);
    for (double v : series) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("forward: non-finite forecast value");
      }
    }
    fc.channels.push_back(std::move(series));
  }
  return fc;
}

void PowerformerModel::collect_grads(const Tape& tape, const Bound& bound) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto g = tape.grad(bound.nodes[i]);
    if (g.size() != params_[i].grad.size()) {
      throw std::invalid_argument("collect_grads: bound tape mismatch");
    }
    std::copy(g.begin(), g.end(), params_[i].grad.data.begin());
  }
}

std::uint64_t PowerformerModel::parameter_digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter& p : params_) {
    h = fnv1a(p.name, h);
    h = fnv1a(std::span<const unsigned char>(
                  reinterpret_cast<const unsigned char*>(p.value.data.data()),
                  p.value.data.size() * sizeof(double)),
              h);
  }
  h = fnv1a(std::span<const unsigned char>(
                reinterpret_cast<const unsigned char*>(&alpha_),
                sizeof(alpha_)),
            h);
  return h;
}

namespace {

nlohmann::json mask_to_json(const MaskSpec& m) {
  return {{"family", mask_family_name(m.family)},
          {"alpha", m.alpha},
          {"order", m.order},
          {"critical_time", m.critical_time},
          {"learnable", m.learnable}};
}

MaskSpec mask_from_json(const nlohmann::json& j) {
  MaskSpec m;
  m.family = parse_mask_family(j.at("family").get<std::string>());
  m.alpha = j.at("alpha").get<double>();
  m.order = j.at("order").get<int>();
  m.critical_time = j.at("critical_time").get<double>();
  m.learnable = j.at("learnable").get<bool>();
  return m;
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"t_seq", cfg.t_seq},
          {"t_pred", cfg.t_pred},
          {"patch_len", cfg.patch_len},
          {"patch_stride", cfg.patch_stride},
          {"layers", cfg.layers},
          {"embed", cfg.embed},
          {"heads", cfg.heads},
          {"ff", cfg.ff},
          {"dropout", cfg.dropout},
          {"linear_dropout", cfg.linear_dropout},
          {"mask", mask_to_json(cfg.mask)},
          {"banded_tau", cfg.banded_tau},
          {"seed", cfg.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.t_seq = j.at("t_seq").get<int>();
  cfg.t_pred = j.at("t_pred").get<int>();
  cfg.patch_len = j.at("patch_len").get<int>();
  cfg.patch_stride = j.at("patch_stride").get<int>();
  cfg.layers = j.at("layers").get<int>();
  cfg.embed = j.at("embed").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.ff = j.at("ff").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.linear_dropout = j.at("linear_dropout").get<double>();
  cfg.mask = mask_from_json(j.at("mask"));
  cfg.banded_tau = j.at("banded_tau").get<long>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const PowerformerModel& model,
                     std::int64_t step) {
  nlohmann::json header;
  header["format"] = 1;
  header["config"] = config_to_json(model.config());
  header["alpha"] = model.alpha();
  header["seed"] = model.config().seed;
  header["step"] = step;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Parameter& p : model.parameters()) {
    tensors.push_back({{"name", p.name},
                       {"shape", p.value.shape},
                       {"offset", offset},
                       {"count", p.value.size()}});
    offset += p.value.size();
  }
  header["tensors"] = std::move(tensors);
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const Parameter& p : model.parameters()) {
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

PowerformerModel load_checkpoint(const std::string& path,
                                 std::int64_t* step_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("'" + path + "' is not a checkpoint file");
  }
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_str(len, '\0');
  in.read(header_str.data(), len);
  if (!in) throw DataError("truncated checkpoint header in '" + path + "'");
  const nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.at("format").get<int>() != 1) {
    throw DataError("unsupported checkpoint format in '" + path + "'");
  }

  PowerformerModel model =
      PowerformerModel::init(config_from_json(header.at("config")));
  model.set_alpha(header.at("alpha").get<double>());
  const auto& tensors = header.at("tensors");
  if (tensors.size() != model.parameters().size()) {
    throw DataError("checkpoint tensor count mismatch in '" + path + "'");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Parameter& p = model.parameters()[i];
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != p.name ||
        t.at("count").get<std::uint64_t>() != p.value.size()) {
      throw DataError("checkpoint tensor '" +
                      t.at("name").get<std::string>() +
                      "' does not match the model layout");
    }
    in.read(reinterpret_cast<char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!in) throw DataError("truncated checkpoint payload in '" + path + "'");
  if (step_out) *step_out = header.at("step").get<std::int64_t>();
  return model;
}

}  // namespace powerformer
