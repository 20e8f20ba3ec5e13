#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/autodiff.hpp"
#include "ddm/bundle.hpp"
#include "ddm/diffusion.hpp"
#include "ddm/graph.hpp"
#include "ddm/params.hpp"
#include "ddm/rng.hpp"

namespace ddm {

struct DenoiserConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 64;
  std::size_t time_embed_dim = 16;
  std::size_t num_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double lr = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  NoiseMode mode = NoiseMode::Directional;
  std::uint64_t seed = 0;

  NoiseSchedule schedule() const { return build_linear_schedule(num_steps, beta_start, beta_end); }

  void validate() const {
    detail::require(input_dim >= 1, "DenoiserConfig: input_dim must be >= 1");
    detail::require(hidden_dim >= 1, "DenoiserConfig: hidden_dim must be >= 1");
    detail::require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "DenoiserConfig: time_embed_dim must be even");
    detail::require(num_steps >= 1, "DenoiserConfig: num_steps must be >= 1");
    detail::require(batch_size >= 1, "DenoiserConfig: batch_size must be >= 1");
    detail::require(lr >= 0.0 && std::isfinite(lr), "DenoiserConfig: lr must be finite and >= 0");
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

inline nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"input_dim", c.input_dim},   {"hidden_dim", c.hidden_dim}, {"time_embed_dim", c.time_embed_dim},
          {"num_steps", c.num_steps},   {"beta_start", c.beta_start}, {"beta_end", c.beta_end},
          {"lr", c.lr},                 {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"noise_mode", std::string(to_string(c.mode))},             {"seed", c.seed}};
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
  c.num_steps = j.at("num_steps").get<std::size_t>();
  c.beta_start = j.at("beta_start").get<double>();
  c.beta_end = j.at("beta_end").get<double>();
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.mode = parse_noise_mode(j.at("noise_mode").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

/// Weights of the GNN-UNet denoiser: four graph-convolution layers, time
/// projections on the two encoder inputs, and a one-hidden-layer MLP head.
struct DenoiserParams {
  ParamStore store;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t time_embed_dim = 0;
};

/// Expected (name, rows, cols) of every slot for the given dimensions.
inline std::vector<std::tuple<std::string, std::size_t, std::size_t>> denoiser_slot_shapes(std::size_t d, std::size_t h,
                                                                                           std::size_t e) {
  return {{"enc1.weight", d, h},        {"enc1.time.weight", e, d}, {"enc1.time.bias", 1, d},
          {"enc2.weight", h, h},        {"enc2.time.weight", e, h}, {"enc2.time.bias", 1, h},
          {"dec1.weight", h, h},        {"dec2.weight", h, h},      {"head.hidden.weight", h, h},
          {"head.hidden.bias", 1, h},   {"head.out.weight", h, d},  {"head.out.bias", 1, d}};
}

/// Glorot-uniform weights, zero biases.
inline DenoiserParams init_denoiser(const DenoiserConfig& cfg, RngStream& rng) {
  cfg.validate();
  DenoiserParams p{ParamStore{}, cfg.input_dim, cfg.hidden_dim, cfg.time_embed_dim};
  for (const auto& [name, rows, cols] : denoiser_slot_shapes(cfg.input_dim, cfg.hidden_dim, cfg.time_embed_dim)) {
    DenseMatrix m(rows, cols);
    if (rows > 1 || name.find("bias") == std::string::npos) {
      const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (double& v : m.values()) v = rng.uniform(-s, s);
    }
    p.store.add(name, std::move(m));
  }
  return p;
}

/// Sinusoidal embedding laid out as (sin ω₀t, cos ω₀t, sin ω₁t, cos ω₁t, …),
/// ω_k = 10000^{−2k/dim}.
inline DenseMatrix time_embed(std::size_t t, std::size_t dim) {
  detail::require(dim >= 2 && dim % 2 == 0, "time_embed: dim must be even, got " + std::to_string(dim));
  DenseMatrix e(1, dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double omega = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
    const double arg = static_cast<double>(t) * omega;
    e(0, 2 * k) = std::sin(arg);
    e(0, 2 * k + 1) = std::cos(arg);
  }
  return e;
}

struct ActivationTrace {
  DenseMatrix enc1, enc2, dec1, dec2;
  DenseMatrix prediction;

  /// Decoder activations side by side: the node representation.
  DenseMatrix representation() const { return concat_cols(dec1, dec2); }
};

struct TracedActivations {
  ad::Var enc1, enc2, dec1, dec2, prediction;
};

/// Forward pass recorded on `tape`. `adj_hat` must outlive the tape.
inline TracedActivations denoiser_forward_traced(ad::Tape& tape, const DenoiserParams& params, const DenseMatrix& x_t,
                                                 const SparseAdjacency& adj_hat, std::size_t t) {
  if (x_t.cols() != params.input_dim)
    throw DimensionError("denoiser_forward: features have " + std::to_string(x_t.cols()) + " columns, model expects " +
                         std::to_string(params.input_dim));
  if (adj_hat.node_count() != x_t.rows())
    throw DimensionError("denoiser_forward: adjacency over " + std::to_string(adj_hat.node_count()) +
                         " nodes, features have " + std::to_string(x_t.rows()) + " rows");
  const ParamStore& s = params.store;
  auto P = [&](const char* name) { return tape.param(s, name); };
  using namespace ad;

  Var x = tape.constant(x_t);
  Var emb = tape.constant(time_embed(t, params.time_embed_dim));
  auto conditioned = [&](Var h, const char* w, const char* b) { return add_row(h, add_row(ad::matmul(emb, P(w)), P(b))); };
  auto gcn = [&](Var h, const char* w) { return relu(ad::matmul(ad::spmm(adj_hat, h), P(w))); };

  TracedActivations a;
  a.enc1 = gcn(conditioned(x, "enc1.time.weight", "enc1.time.bias"), "enc1.weight");
  a.enc2 = gcn(conditioned(a.enc1, "enc2.time.weight", "enc2.time.bias"), "enc2.weight");
  a.dec1 = gcn(add(a.enc2, a.enc1), "dec1.weight");
  a.dec2 = gcn(add(a.dec1, a.enc1), "dec2.weight");
  Var hidden = relu(add_row(ad::matmul(a.dec2, P("head.hidden.weight")), P("head.hidden.bias")));
  a.prediction = add_row(ad::matmul(hidden, P("head.out.weight")), P("head.out.bias"));
  return a;
}

inline ActivationTrace denoiser_forward(const DenoiserParams& params, const DenseMatrix& x_t,
                                        const SparseAdjacency& adj_hat, std::size_t t) {
  ad::Tape tape;
  auto a = denoiser_forward_traced(tape, params, x_t, adj_hat, t);
  return {a.enc1.value(), a.enc2.value(), a.dec1.value(), a.dec2.value(), a.prediction.value()};
}

/// ‖f_θ(X_t, A, t) − X₀‖² averaged over all N×d entries, X_t drawn under `mode`.
inline ad::Var training_loss(ad::Tape& tape, const DenoiserParams& params, const DenseMatrix& x0,
                             const SparseAdjacency& adj_hat, std::size_t t, const NoiseSchedule& sched, NoiseMode mode,
                             const BatchStats& stats, RngStream& rng) {
  detail::require(t >= 1 && t <= sched.steps(), "training_loss: step " + std::to_string(t) + " outside [1, " +
                                                    std::to_string(sched.steps()) + "]");
  const DenseMatrix xt = diffuse_to_step(x0, t, sched, mode, stats, rng);
  auto a = denoiser_forward_traced(tape, params, xt, adj_hat, t);
  return ad::mse(a.prediction, x0);
}

struct TrainResult {
  DenoiserParams params;
  std::vector<double> epoch_loss;
};

/// Mini-batch Adam on the X₀-prediction loss. Graph datasets are reshuffled
/// every epoch; node datasets train full-batch.
inline TrainResult train(const Dataset& ds, DenoiserConfig cfg,
                         const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (cfg.input_dim == 0) cfg.input_dim = ds.feature_dim();
  cfg.validate();
  if (cfg.input_dim != ds.feature_dim())
    throw DimensionError("train: config input_dim " + std::to_string(cfg.input_dim) + " but dataset has " +
                         std::to_string(ds.feature_dim()) + " features");
  const NoiseSchedule sched = cfg.schedule();
  const RngStream root(cfg.seed);
  RngStream init_rng = root.split(0);
  const RngStream train_rng = root.split(1);

  TrainResult result{init_denoiser(cfg, init_rng), {}};
  AdamState adam(AdamOptions{cfg.lr, 0.9, 0.999, 1e-8});

  std::vector<BatchedGraph> fixed;
  std::vector<SparseAdjacency> fixed_hat;
  if (ds.task == Task::Node) {
    fixed = make_ordered_batches(ds, 1);
    fixed_hat.push_back(normalize_adjacency(fixed.front().adjacency));
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream epoch_rng = train_rng.split(epoch);
    RngStream shuffle_rng = epoch_rng.split(0);
    std::vector<BatchedGraph> batches;
    std::vector<SparseAdjacency> hats;
    if (ds.task == Task::Graph) {
      batches = make_batches(ds, cfg.batch_size, shuffle_rng);
      for (const auto& b : batches) hats.push_back(normalize_adjacency(b.adjacency));
    }
    const auto& use_batches = ds.task == Task::Graph ? batches : fixed;
    const auto& use_hats = ds.task == Task::Graph ? hats : fixed_hat;

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < use_batches.size(); ++bi) {
      RngStream batch_rng = epoch_rng.split(bi + 1);
      const DenseMatrix& x0 = use_batches[bi].features;
      const BatchStats stats = compute_batch_stats(x0);
      const std::size_t t = 1 + batch_rng.uniform_index(sched.steps());
      ad::Tape tape;
      ad::Var loss;
      try {
        loss = training_loss(tape, result.params, x0, use_hats[bi], t, sched, cfg.mode, stats, batch_rng);
      } catch (const NumericError& e) {
        throw NumericError("train: non-finite values at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi) + ": " + e.what());
      }
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
      ad::backward(loss, result.params.store);
      adam_step(result.params.store, adam);
      loss_sum += lv;
    }
    const double mean = loss_sum / static_cast<double>(use_batches.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

constexpr std::array<char, 4> kCheckpointMagic{'D', 'D', 'M', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const DenoiserParams& params, const DenoiserConfig& cfg, const std::filesystem::path& path) {
  Bundle b;
  b.version = kCheckpointVersion;
  b.meta = to_json(cfg);
  for (const auto& [name, slot] : params.store) b.entries.emplace_back(name, slot.value);
  write_bundle(path, kCheckpointMagic, b);
}

struct Checkpoint {
  DenoiserParams params;
  DenoiserConfig config;
};

/// Loads and validates a checkpoint. When `expected_input_dim` is given the
/// stored model must match it.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::size_t> expected_input_dim = {}) {
  Bundle b = read_bundle(path, kCheckpointMagic, kCheckpointVersion);
  Checkpoint ck;
  try {
    ck.config = denoiser_config_from_json(b.meta);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": invalid config: " + e.what());
  }
  const auto& c = ck.config;
  if (expected_input_dim && *expected_input_dim != c.input_dim)
    throw CheckpointError(path.string() + ": shape mismatch: expected input_dim " + std::to_string(*expected_input_dim) +
                          ", checkpoint has " + std::to_string(c.input_dim));
  ck.params = DenoiserParams{ParamStore{}, c.input_dim, c.hidden_dim, c.time_embed_dim};
  const auto shapes = denoiser_slot_shapes(c.input_dim, c.hidden_dim, c.time_embed_dim);
  if (b.entries.size() != shapes.size())
    throw CheckpointError(path.string() + ": expected " + std::to_string(shapes.size()) + " slots, found " +
                          std::to_string(b.entries.size()));
  for (auto& [name, m] : b.entries) {
    auto it = std::find_if(shapes.begin(), shapes.end(), [&](const auto& s) { return std::get<0>(s) == name; });
    if (it == shapes.end()) throw CheckpointError(path.string() + ": unexpected slot '" + name + "'");
    const auto [_, rows, cols] = *it;
    if (m.rows() != rows || m.cols() != cols)
      throw CheckpointError(path.string() + ": shape mismatch for " + name + ": expected " + std::to_string(rows) +
                            "x" + std::to_string(cols) + ", actual " + m.shape_string());
    if (ck.params.store.contains(name)) throw CheckpointError(path.string() + ": duplicate slot '" + name + "'");
    ck.params.store.add(name, std::move(m));
  }
  return ck;
}

}  // namespace ddm
