#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/config.hpp"
#include "ddm/denoiser.hpp"
#include "ddm/eval.hpp"
#include "ddm/graph.hpp"
#include "ddm/probes.hpp"

namespace ddm {

struct CommandOutcome {
  int exit_code = 0;
  std::vector<std::filesystem::path> artifacts;
  double seconds = 0.0;
};

namespace exit_code {
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;
}  // namespace exit_code

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train", "extract", "eval", "snr", "svdviz", "ellipse"};
  return names;
}

namespace detail {

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::filesystem::path resolve_out_dir(const RunConfig& cfg, const std::string& command) {
  namespace fs = std::filesystem;
  fs::path dir;
  if (!cfg.out_dir.empty()) {
    dir = cfg.out_dir;
  } else if (!cfg.tag.empty()) {
    dir = fs::path("out") / command / cfg.tag;
  } else {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&now));
    dir = fs::path("out") / command / buf;
    for (int i = 1; fs::exists(dir); ++i) dir = fs::path("out") / command / (std::string(buf) + "-" + std::to_string(i));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, CommandOutcome& out) : dir_(std::move(dir)), out_(out) {}

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  void text(const std::string& name, const std::string& body) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw IoError("cannot write " + path(name).string());
    f << body;
    if (!f) throw IoError("write failed for " + path(name).string());
    record(name);
  }

  void record(const std::string& name) { out_.artifacts.push_back(path(name)); }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  CommandOutcome& out_;
};

inline Dataset load_run_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw UsageError("missing required key 'dataset'");
  Dataset ds = load_dataset(cfg.dataset, LoadOptions{cfg.degree_cap});
  if (!cfg.task.empty()) {
    const std::string actual = ds.task == Task::Node ? "node" : "graph";
    if (actual != cfg.task)
      throw UsageError("config task '" + cfg.task + "' does not match dataset task '" + actual + "'");
  }
  return ds;
}

inline void validate_steps(const RunConfig& cfg, bool allow_zero) {
  for (auto k : cfg.steps)
    if ((k == 0 && !allow_zero) || k > cfg.denoiser.num_steps)
      throw UsageError("step " + std::to_string(k) + " outside [" + (allow_zero ? "0" : "1") + ", " +
                       std::to_string(cfg.denoiser.num_steps) + "]");
}

inline void validate_denoiser(RunConfig& cfg) {
  DenoiserConfig probe = cfg.denoiser;
  if (probe.input_dim == 0) probe.input_dim = 1;
  try {
    probe.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
}

inline std::string loss_log_csv(const std::vector<double>& losses) {
  std::string s = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) s += std::to_string(e) + "," + fmt_real(losses[e]) + "\n";
  return s;
}

inline EvalReport evaluate_any(const Dataset& ds, const RepresentationSet& reps, const RunConfig& cfg) {
  if (ds.task == Task::Graph) return evaluate_graph_task(ds, reps, cfg.repetitions, GraphEvalOptions{cfg.eval_reg, cfg.seed});
  return evaluate_node_task(ds, reps, NodeEvalOptions{cfg.repetitions, cfg.seed});
}

/// Stream used for representation noise; independent of the training streams.
inline RngStream extract_stream(const RunConfig& cfg) { return RngStream(cfg.seed).split(2); }

inline RepresentationSet extract_with(const DenoiserParams& params, const DenoiserConfig& dc, const Dataset& ds,
                                      const RunConfig& cfg) {
  return extract_node_representations(params, ds, cfg.steps, dc.schedule(), dc.mode, extract_stream(cfg),
                                      dc.batch_size);
}

/// Trains under `mode` and evaluates. With `retrain`, every repetition gets
/// its own denoiser seeded seed + r and a single classifier pass.
inline EvalReport train_and_evaluate(const Dataset& ds, const RunConfig& cfg, NoiseMode mode) {
  DenoiserConfig dc = cfg.denoiser;
  dc.input_dim = ds.feature_dim();
  dc.mode = mode;
  if (!cfg.retrain) {
    dc.seed = cfg.seed;
    return evaluate_any(ds, extract_with(train(ds, dc).params, dc, ds, cfg), cfg);
  }
  EvalReport all;
  all.steps = cfg.steps;
  std::sort(all.steps.begin(), all.steps.end());
  all.steps.erase(std::unique(all.steps.begin(), all.steps.end()), all.steps.end());
  for (std::size_t r = 0; r < cfg.repetitions; ++r) {
    RunConfig one = cfg;
    one.seed = cfg.seed + r;
    one.repetitions = 1;
    dc.seed = one.seed;
    EvalReport rep = evaluate_any(ds, extract_with(train(ds, dc).params, dc, ds, one), one);
    for (auto rec : rep.records) {
      rec.repetition = static_cast<int>(r);
      all.records.push_back(rec);
    }
    all.runtime_seconds += rep.runtime_seconds;
  }
  summarize(all);
  return all;
}

inline std::vector<int> point_labels(const Dataset& ds) {
  std::vector<int> y;
  if (ds.task == Task::Node) {
    const auto& g = ds.graphs.front();
    return g.node_labels ? *g.node_labels : std::vector<int>(g.node_count, -1);
  }
  for (const auto& g : ds.graphs) y.insert(y.end(), g.node_count, g.graph_label.value_or(-1));
  return y;
}

}  // namespace detail

inline CommandOutcome cmd_train(RunConfig cfg) {
  CommandOutcome out;
  detail::validate_denoiser(cfg);
  const Dataset ds = detail::load_run_dataset(cfg);
  detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "train"), out);
  DenoiserConfig dc = cfg.denoiser;
  dc.input_dim = ds.feature_dim();
  dc.seed = cfg.seed;
  const TrainResult tr = train(ds, dc);
  save_checkpoint(tr.params, dc, w.path("model.ddm"));
  w.record("model.ddm");
  w.text("loss_log.csv", detail::loss_log_csv(tr.epoch_loss));
  w.text("config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

inline CommandOutcome cmd_extract(RunConfig cfg) {
  CommandOutcome out;
  if (cfg.checkpoint.empty()) throw UsageError("extract requires 'checkpoint' (path to a model.ddm from train)");
  if (!std::filesystem::exists(cfg.checkpoint)) throw UsageError("checkpoint not found: " + cfg.checkpoint);
  const Dataset ds = detail::load_run_dataset(cfg);
  const Checkpoint ck = load_checkpoint(cfg.checkpoint, ds.feature_dim());
  cfg.denoiser.num_steps = ck.config.num_steps;
  detail::validate_steps(cfg, false);
  detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "extract"), out);
  const RepresentationSet reps = detail::extract_with(ck.params, ck.config, ds, cfg);
  save_representations(reps, w.path("representations.ddmr"));
  w.record("representations.ddmr");
  if (cfg.csv) {
    write_representations_csv(reps, w.path("representations.csv"));
    w.record("representations.csv");
  }
  w.text("config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

inline CommandOutcome cmd_eval(RunConfig cfg) {
  CommandOutcome out;
  if (cfg.repetitions < 1) throw UsageError("repetitions must be >= 1");
  const Dataset ds = detail::load_run_dataset(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  if (cfg.ablate) {
    detail::validate_denoiser(cfg);
    detail::validate_steps(cfg, false);
    detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "eval"), out);
    std::string table = "noise_mode,voted_mean,voted_std\n";
    nlohmann::json timing;
    for (const NoiseMode mode : kAllNoiseModes) {
      const EvalReport rep = detail::train_and_evaluate(ds, cfg, mode);
      const std::string tag(to_string(mode));
      w.text("report_" + tag + ".csv", report_csv(rep));
      table += tag + "," + detail::fmt_acc(rep.voted_mean) + "," + detail::fmt_acc(rep.voted_std) + "\n";
      timing[tag] = rep.runtime_seconds;
    }
    w.text("ablation.csv", table);
    w.text("timing.json", timing.dump(2) + "\n");
    w.text("config.json", to_json(cfg).dump(2) + "\n");
    return out;
  }

  if (cfg.retrain) {
    if (!cfg.representations.empty() || !cfg.checkpoint.empty())
      throw UsageError("'retrain' trains its own denoisers; drop 'representations' and 'checkpoint'");
    detail::validate_denoiser(cfg);
    detail::validate_steps(cfg, false);
    detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "eval"), out);
    const EvalReport rep = detail::train_and_evaluate(ds, cfg, cfg.denoiser.mode);
    w.text("report.csv", report_csv(rep));
    w.text("report.json", report_json(rep).dump(2) + "\n");
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    w.text("timing.json", nlohmann::json{{"evaluation_seconds", rep.runtime_seconds}, {"total_seconds", total}}.dump(2) + "\n");
    w.text("config.json", to_json(cfg).dump(2) + "\n");
    return out;
  }

  RepresentationSet reps;
  if (!cfg.representations.empty()) {
    if (!std::filesystem::exists(cfg.representations))
      throw UsageError("representations file not found: " + cfg.representations);
    reps = load_representations(cfg.representations);
    if (reps.graph_count != ds.graphs.size() || reps.node_to_graph.size() != ds.total_nodes())
      throw CheckpointError(cfg.representations + ": representations do not match dataset " + cfg.dataset);
  } else if (!cfg.checkpoint.empty()) {
    if (!std::filesystem::exists(cfg.checkpoint)) throw UsageError("checkpoint not found: " + cfg.checkpoint);
    const Checkpoint ck = load_checkpoint(cfg.checkpoint, ds.feature_dim());
    cfg.denoiser.num_steps = ck.config.num_steps;
    detail::validate_steps(cfg, false);
    reps = detail::extract_with(ck.params, ck.config, ds, cfg);
  } else {
    throw UsageError("eval requires 'representations' or 'checkpoint' (or --retrain, --ablate)");
  }
  detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "eval"), out);
  const EvalReport rep = detail::evaluate_any(ds, reps, cfg);
  w.text("report.csv", report_csv(rep));
  w.text("report.json", report_json(rep).dump(2) + "\n");
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  w.text("timing.json", nlohmann::json{{"evaluation_seconds", rep.runtime_seconds}, {"total_seconds", total}}.dump(2) + "\n");
  w.text("config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

/// Step grid for SNR curves: the configured steps when they include 0,
/// otherwise 0..T in strides of T/40.
inline std::vector<std::size_t> snr_steps(const RunConfig& cfg) {
  if (std::find(cfg.steps.begin(), cfg.steps.end(), 0) != cfg.steps.end()) return cfg.steps;
  const std::size_t T = cfg.denoiser.num_steps;
  const std::size_t stride = std::max<std::size_t>(1, T / 40);
  std::vector<std::size_t> s;
  for (std::size_t t = 0; t <= T; t += stride) s.push_back(t);
  if (s.back() != T) s.push_back(T);
  return s;
}

inline CommandOutcome cmd_snr(RunConfig cfg) {
  CommandOutcome out;
  detail::validate_denoiser(cfg);
  Dataset ds;
  if (cfg.dataset == "synthetic") {
    AnisotropicGraphConfig ac;
    ac.seed = cfg.seed;
    ds = make_anisotropic_node_dataset(ac);
  } else {
    ds = detail::load_run_dataset(cfg);
  }
  detail::validate_steps(cfg, true);
  detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "snr"), out);
  const ProbeExtractor ex = train_probe_extractor(ds, ProbeConfig{cfg.probe_hidden, cfg.probe_epochs, cfg.probe_lr, cfg.seed});
  const NoiseSchedule sched = cfg.denoiser.schedule();
  const auto steps = snr_steps(cfg);
  std::string csv = "mode,step,snr\n";
  const RngStream rng = RngStream(cfg.seed).split(3);
  SnrOptions so;
  so.refit = cfg.refit;
  so.batch_size = cfg.denoiser.batch_size;
  for (const NoiseMode mode : kAllNoiseModes) {
    const SnrCurve c = snr_curve(ex, ds, sched, mode, steps, rng, so);
    for (std::size_t i = 0; i < c.steps.size(); ++i)
      csv += std::string(to_string(mode)) + "," + std::to_string(c.steps[i]) + "," + detail::fmt_real(c.snr[i]) + "\n";
  }
  w.text("snr_curve.csv", csv);
  w.text("config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

inline CommandOutcome cmd_svdviz(RunConfig cfg) {
  CommandOutcome out;
  const Dataset ds = detail::load_run_dataset(cfg);
  DenseMatrix x;
  if (!cfg.representations.empty()) {
    if (!std::filesystem::exists(cfg.representations))
      throw UsageError("representations file not found: " + cfg.representations);
    const RepresentationSet reps = load_representations(cfg.representations);
    if (reps.node_to_graph.size() != ds.total_nodes())
      throw CheckpointError(cfg.representations + ": representations do not match dataset " + cfg.dataset);
    x = reps.per_step.front();
  } else {
    std::vector<DenseMatrix> parts;
    for (const auto& g : ds.graphs) parts.push_back(g.features);
    x = vstack(parts);
  }
  detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "svdviz"), out);
  const ProjectionResult pr = svd_project_2d(x);
  const std::vector<int> y = detail::point_labels(ds);
  std::string csv = "point_id,x,y,label\n";
  for (std::size_t i = 0; i < pr.coords.rows(); ++i)
    csv += std::to_string(i) + "," + detail::fmt_real(pr.coords(i, 0)) + "," + detail::fmt_real(pr.coords(i, 1)) + "," +
           std::to_string(y[i]) + "\n";
  w.text("svd_projection.csv", csv);
  std::string sv = "index,singular_value\n";
  for (std::size_t i = 0; i < pr.singular_values.size(); ++i)
    sv += std::to_string(i) + "," + detail::fmt_real(pr.singular_values[i]) + "\n";
  w.text("singular_values.csv", sv);
  w.text("config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

inline CommandOutcome cmd_ellipse(RunConfig cfg) {
  CommandOutcome out;
  if (cfg.ellipse_samples < 2) throw UsageError("ellipse_samples must be >= 2");
  detail::validate_denoiser(cfg);
  EllipseSimConfig ec;
  ec.samples_per_class = cfg.ellipse_samples;
  ec.boundary_noise = cfg.ellipse_noise;
  ec.num_steps = cfg.denoiser.num_steps;
  ec.beta_start = cfg.denoiser.beta_start;
  ec.beta_end = cfg.denoiser.beta_end;
  ec.seed = cfg.seed;
  ec.checkpoints.clear();
  for (std::size_t t : {0ul, 100ul, 500ul, 800ul, 1000ul})
    if (t <= ec.num_steps) ec.checkpoints.push_back(t);
  if (ec.checkpoints.back() != ec.num_steps) ec.checkpoints.push_back(ec.num_steps);
  detail::ArtifactWriter w(detail::resolve_out_dir(cfg, "ellipse"), out);
  const EllipseSimResult res = simulate_two_ellipses(ec, kAllNoiseModes);
  std::string sim = "mode,step,point_id,x,y,label\n", scores = "mode,step,separability\n";
  for (const auto& s : res.snapshots) {
    const std::string m(to_string(s.mode));
    for (std::size_t i = 0; i < s.points.rows(); ++i)
      sim += m + "," + std::to_string(s.step) + "," + std::to_string(i) + "," + detail::fmt_real(s.points(i, 0)) + "," +
             detail::fmt_real(s.points(i, 1)) + "," + std::to_string(res.labels[i]) + "\n";
    scores += m + "," + std::to_string(s.step) + "," + detail::fmt_acc(s.separability) + "\n";
  }
  w.text("ellipse_sim.csv", sim);
  w.text("ellipse_scores.csv", scores);
  w.text("config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

inline std::string usage_text() {
  std::string s = "usage: ddm <train|extract|eval|snr|svdviz|ellipse> [--config <path>] [--key value ...]\n"
                  "config keys:";
  for (const auto& k : valid_config_keys()) s += " " + k;
  s += "\nDDM_SEED overrides seed. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.\n";
  return s;
}

/// Parses argv, dispatches and maps failures onto exit codes.
inline CommandOutcome run_cli(const std::vector<std::string>& args, std::ostream& err = std::cerr,
                              const char* env_seed = std::getenv("DDM_SEED")) {
  const auto t0 = std::chrono::steady_clock::now();
  CommandOutcome out;
  try {
    if (args.empty() || args[0] == "-h" || args[0] == "--help") {
      err << usage_text();
      out.exit_code = args.empty() ? exit_code::kUsage : exit_code::kOk;
      return out;
    }
    const std::string& cmd = args[0];
    std::optional<std::filesystem::path> file;
    std::vector<std::string> rest;
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (args[i] == "--config") {
        if (i + 1 == args.size()) throw UsageError("missing value for --config");
        file = args[++i];
      } else if (args[i].rfind("--config=", 0) == 0) {
        file = args[i].substr(9);
      } else {
        rest.push_back(args[i]);
      }
    }
    const RunConfig cfg = parse_config(file, rest, env_seed);
    if (cmd == "train") out = cmd_train(cfg);
    else if (cmd == "extract") out = cmd_extract(cfg);
    else if (cmd == "eval") out = cmd_eval(cfg);
    else if (cmd == "snr") out = cmd_snr(cfg);
    else if (cmd == "svdviz") out = cmd_svdviz(cfg);
    else if (cmd == "ellipse") out = cmd_ellipse(cfg);
    else throw UsageError("unknown command '" + cmd + "'\n" + usage_text());
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    out.exit_code = exit_code::kUsage;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    out.exit_code = exit_code::kData;
  } catch (const SchemaError& e) {
    err << "data error: " << e.what() << "\n";
    out.exit_code = exit_code::kData;
  } catch (const CheckpointError& e) {
    err << "data error: " << e.what() << "\n";
    out.exit_code = exit_code::kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    out.exit_code = exit_code::kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    out.exit_code = exit_code::kUsage;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace ddm
