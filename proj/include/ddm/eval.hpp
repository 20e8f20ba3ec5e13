#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/bundle.hpp"
#include "ddm/classifier.hpp"
#include "ddm/denoiser.hpp"
#include "ddm/diffusion.hpp"
#include "ddm/graph.hpp"

namespace ddm {

/// Node embeddings H_k = [dec1 | dec2] for each requested diffusion step.
/// Rows follow dataset order: graph 0's nodes, then graph 1's, ...
struct RepresentationSet {
  std::vector<std::size_t> steps;
  std::vector<DenseMatrix> per_step;
  /// Dataset graph index owning each row.
  std::vector<std::size_t> node_to_graph;
  std::size_t graph_count = 0;

  std::size_t dim() const { return per_step.empty() ? 0 : per_step.front().cols(); }
};

inline RepresentationSet extract_node_representations(const DenoiserParams& params, const Dataset& ds,
                                                      std::vector<std::size_t> steps, const NoiseSchedule& sched,
                                                      NoiseMode mode, const RngStream& rng,
                                                      std::size_t batch_size = 32) {
  detail::require(!steps.empty(), "extract_node_representations: no steps requested");
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  for (auto k : steps)
    detail::require(k >= 1 && k <= sched.steps(), "extract_node_representations: step " + std::to_string(k) +
                                                      " outside [1, " + std::to_string(sched.steps()) + "]");
  RepresentationSet reps;
  reps.steps = steps;
  reps.graph_count = ds.graphs.size();
  const auto batches = make_ordered_batches(ds, batch_size);
  std::vector<std::vector<DenseMatrix>> parts(steps.size());
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const BatchedGraph& b = batches[bi];
    const SparseAdjacency adj_hat = normalize_adjacency(b.adjacency);
    const BatchStats stats = compute_batch_stats(b.features);
    for (std::size_t si = 0; si < steps.size(); ++si) {
      RngStream r = rng.split(steps[si]).split(bi);
      const DenseMatrix xk = diffuse_to_step(b.features, steps[si], sched, mode, stats, r);
      parts[si].push_back(denoiser_forward(params, xk, adj_hat, steps[si]).representation());
    }
    for (auto pos : b.node_to_graph) reps.node_to_graph.push_back(b.graph_ids[pos]);
  }
  for (auto& p : parts) reps.per_step.push_back(vstack(p));
  return reps;
}

/// Row-mean of node embeddings per graph.
inline DenseMatrix pool_graph(const DenseMatrix& h, std::span<const std::size_t> node_to_graph, std::size_t graph_count) {
  if (node_to_graph.size() != h.rows())
    throw DimensionError("pool_graph: map covers " + std::to_string(node_to_graph.size()) + " rows, embeddings have " +
                         std::to_string(h.rows()));
  DenseMatrix out(graph_count, h.cols());
  std::vector<std::size_t> count(graph_count, 0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    const std::size_t g = node_to_graph[i];
    detail::require(g < graph_count, "pool_graph: graph index out of range");
    ++count[g];
    for (std::size_t j = 0; j < h.cols(); ++j) out(g, j) += h(i, j);
  }
  for (std::size_t g = 0; g < graph_count; ++g) {
    detail::require(count[g] > 0, "pool_graph: graph " + std::to_string(g) + " has no nodes");
    for (std::size_t j = 0; j < h.cols(); ++j) out(g, j) /= static_cast<double>(count[g]);
  }
  return out;
}

/// Per-sample modal label; ties go to the tied label predicted by the
/// earliest predictor (lowest step).
inline std::vector<int> majority_vote(const std::vector<std::vector<int>>& per_step) {
  detail::require(!per_step.empty(), "majority_vote: no predictors");
  const std::size_t n = per_step.front().size();
  for (const auto& p : per_step)
    if (p.size() != n) throw DimensionError("majority_vote: predictors disagree on sample count");
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::size_t> votes;
    std::size_t best = 0;
    for (const auto& p : per_step) best = std::max(best, ++votes[p[i]]);
    for (const auto& p : per_step)
      if (votes[p[i]] == best) {
        out[i] = p[i];
        break;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

constexpr int kVoteStep = -1;

struct EvalRecord {
  int step;  // kVoteStep for the voted prediction
  int fold;
  int repetition;
  double accuracy;
};

struct EvalReport {
  std::vector<std::size_t> steps;
  std::vector<EvalRecord> records;
  std::vector<double> per_step_mean;
  double voted_mean = 0.0;
  double voted_std = 0.0;
  double runtime_seconds = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

inline void summarize(EvalReport& r) {
  std::vector<double> voted;
  std::vector<std::vector<double>> by_step(r.steps.size());
  for (const auto& rec : r.records) {
    if (rec.step == kVoteStep) {
      voted.push_back(rec.accuracy);
      continue;
    }
    auto it = std::find(r.steps.begin(), r.steps.end(), static_cast<std::size_t>(rec.step));
    by_step[static_cast<std::size_t>(it - r.steps.begin())].push_back(rec.accuracy);
  }
  std::tie(r.voted_mean, r.voted_std) = mean_std(voted);
  r.per_step_mean.clear();
  for (const auto& v : by_step) r.per_step_mean.push_back(mean_std(v).first);
}

inline std::string fmt_acc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

struct GraphEvalOptions {
  double reg = 1e-3;
  std::uint64_t seed = 0;
};

/// k-fold evaluation over the dataset's fold assignments: one classifier per
/// step on pooled training-fold embeddings, majority vote on the test fold.
inline EvalReport evaluate_graph_task(const Dataset& ds, const RepresentationSet& reps, std::size_t repetitions,
                                      const GraphEvalOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::require(ds.task == Task::Graph, "evaluate_graph_task: graph-level dataset required");
  detail::require(ds.folds.size() == ds.graphs.size(), "evaluate_graph_task: missing fold assignments");
  detail::require(repetitions >= 1, "evaluate_graph_task: repetitions must be >= 1");
  const std::set<int> folds(ds.folds.begin(), ds.folds.end());
  detail::require(folds.size() >= 2, "evaluate_graph_task: at least two folds required");
  const std::vector<int> y = task_labels(ds);

  std::vector<DenseMatrix> pooled;
  for (const auto& h : reps.per_step) pooled.push_back(pool_graph(h, reps.node_to_graph, reps.graph_count));

  EvalReport report;
  report.steps = reps.steps;
  LogRegOptions lr;
  lr.reg = opts.reg;
  lr.num_classes = static_cast<std::size_t>(ds.num_classes);
  const RngStream root(opts.seed);
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (int f : folds) {
      std::vector<std::size_t> train_idx, test_idx;
      for (std::size_t g = 0; g < ds.graphs.size(); ++g) (ds.folds[g] == f ? test_idx : train_idx).push_back(g);
      std::vector<int> y_train, y_test;
      for (auto g : train_idx) y_train.push_back(y[g]);
      for (auto g : test_idx) y_test.push_back(y[g]);
      std::vector<std::vector<int>> preds;
      for (std::size_t si = 0; si < pooled.size(); ++si) {
        RngStream init = root.split(rep).split(static_cast<std::uint64_t>(f)).split(si);
        const auto fit = fit_logistic_regression(select_rows(pooled[si], train_idx), y_train, lr, &init);
        preds.push_back(fit.model.predict(select_rows(pooled[si], test_idx)));
        report.records.push_back(
            {static_cast<int>(reps.steps[si]), f, static_cast<int>(rep), accuracy(preds.back(), y_test)});
      }
      report.records.push_back({kVoteStep, f, static_cast<int>(rep), accuracy(majority_vote(preds), y_test)});
    }
  }
  detail::summarize(report);
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

constexpr double kNodeRegGrid[] = {1e-4, 1e-3, 1e-2, 1e-1};

struct NodeEvalOptions {
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
};

/// Train/val/test evaluation: per step, the regularization with the best
/// validation accuracy is kept; test predictions are voted across steps.
inline EvalReport evaluate_node_task(const Dataset& ds, const RepresentationSet& reps, const NodeEvalOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::require(ds.task == Task::Node, "evaluate_node_task: node-level dataset required");
  const std::size_t n = ds.graphs.front().node_count;
  detail::require(ds.node_split.size() == n, "evaluate_node_task: missing train/val/test masks");
  std::vector<std::size_t> tr, va, te;
  for (std::size_t v = 0; v < n; ++v) {
    switch (ds.node_split[v]) {
      case SplitRole::Train: tr.push_back(v); break;
      case SplitRole::Val: va.push_back(v); break;
      case SplitRole::Test: te.push_back(v); break;
    }
  }
  detail::require(!tr.empty() && !te.empty(), "evaluate_node_task: empty train or test mask");
  const std::vector<int> y = task_labels(ds);
  auto labels_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    for (auto v : idx) out.push_back(y[v]);
    return out;
  };
  const auto y_tr = labels_of(tr), y_va = labels_of(va), y_te = labels_of(te);
  const bool single_class = std::set<int>(y_tr.begin(), y_tr.end()).size() < 2;

  EvalReport report;
  report.steps = reps.steps;
  const RngStream root(opts.seed);
  for (std::size_t rep = 0; rep < opts.repetitions; ++rep) {
    std::vector<std::vector<int>> preds;
    for (std::size_t si = 0; si < reps.per_step.size(); ++si) {
      const DenseMatrix& h = reps.per_step[si];
      if (single_class) {
        preds.emplace_back(te.size(), y_tr.front());
      } else {
        const DenseMatrix x_tr = select_rows(h, tr), x_va = select_rows(h, va), x_te = select_rows(h, te);
        double best_acc = -1.0;
        LinearModel best;
        for (std::size_t gi = 0; gi < std::size(kNodeRegGrid); ++gi) {
          LogRegOptions lr;
          lr.reg = kNodeRegGrid[gi];
          lr.num_classes = static_cast<std::size_t>(ds.num_classes);
          RngStream init = root.split(rep).split(si).split(gi);
          auto fit = fit_logistic_regression(x_tr, y_tr, lr, &init);
          const double acc = va.empty() ? 0.0 : accuracy(fit.model.predict(x_va), y_va);
          if (acc > best_acc) {
            best_acc = acc;
            best = std::move(fit.model);
          }
        }
        preds.push_back(best.predict(x_te));
      }
      report.records.push_back({static_cast<int>(reps.steps[si]), 0, static_cast<int>(rep), accuracy(preds.back(), y_te)});
    }
    report.records.push_back({kVoteStep, 0, static_cast<int>(rep), accuracy(majority_vote(preds), y_te)});
  }
  detail::summarize(report);
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// `step,fold,repetition,accuracy`; voted rows use step "vote"; two summary
/// rows `mean,-,-,x` and `std,-,-,x` describe the voted accuracy.
inline std::string report_csv(const EvalReport& r) {
  std::string out = "step,fold,repetition,accuracy\n";
  for (const auto& rec : r.records) {
    out += (rec.step == kVoteStep ? std::string("vote") : std::to_string(rec.step)) + "," + std::to_string(rec.fold) +
           "," + std::to_string(rec.repetition) + "," + detail::fmt_acc(rec.accuracy) + "\n";
  }
  out += "mean,-,-," + detail::fmt_acc(r.voted_mean) + "\n";
  out += "std,-,-," + detail::fmt_acc(r.voted_std) + "\n";
  return out;
}

/// Same content as report_csv; runtime is deliberately excluded so reports
/// are reproducible byte for byte.
inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["steps"] = r.steps;
  j["records"] = nlohmann::json::array();
  for (const auto& rec : r.records)
    j["records"].push_back({{"step", rec.step == kVoteStep ? nlohmann::json("vote") : nlohmann::json(rec.step)},
                            {"fold", rec.fold},
                            {"repetition", rec.repetition},
                            {"accuracy", rec.accuracy}});
  j["per_step_mean"] = r.per_step_mean;
  j["voted_mean"] = r.voted_mean;
  j["voted_std"] = r.voted_std;
  return j;
}

/// Clean input features as a single pseudo-step 0, for raw-feature baselines.
inline RepresentationSet raw_feature_representations(const Dataset& ds) {
  RepresentationSet reps;
  reps.steps = {0};
  reps.graph_count = ds.graphs.size();
  std::vector<DenseMatrix> parts;
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
    parts.push_back(ds.graphs[g].features);
    reps.node_to_graph.insert(reps.node_to_graph.end(), ds.graphs[g].node_count, g);
  }
  reps.per_step.push_back(vstack(parts));
  return reps;
}

// ---------------------------------------------------------------------------
// Representation files

constexpr std::array<char, 4> kRepresentationMagic{'D', 'D', 'M', 'R'};
constexpr std::uint32_t kRepresentationVersion = 1;

inline void save_representations(const RepresentationSet& reps, const std::filesystem::path& path) {
  Bundle b;
  b.version = kRepresentationVersion;
  b.meta = {{"steps", reps.steps}, {"graph_count", reps.graph_count}, {"node_to_graph", reps.node_to_graph}};
  for (std::size_t i = 0; i < reps.steps.size(); ++i) b.entries.emplace_back("step." + std::to_string(reps.steps[i]), reps.per_step[i]);
  write_bundle(path, kRepresentationMagic, b);
}

inline RepresentationSet load_representations(const std::filesystem::path& path) {
  Bundle b = read_bundle(path, kRepresentationMagic, kRepresentationVersion);
  RepresentationSet reps;
  try {
    reps.steps = b.meta.at("steps").get<std::vector<std::size_t>>();
    reps.graph_count = b.meta.at("graph_count").get<std::size_t>();
    reps.node_to_graph = b.meta.at("node_to_graph").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": invalid representation metadata: " + e.what());
  }
  if (b.entries.size() != reps.steps.size())
    throw CheckpointError(path.string() + ": expected " + std::to_string(reps.steps.size()) + " matrices, found " +
                          std::to_string(b.entries.size()));
  for (std::size_t i = 0; i < b.entries.size(); ++i) {
    auto& [name, m] = b.entries[i];
    if (name != "step." + std::to_string(reps.steps[i]))
      throw CheckpointError(path.string() + ": unexpected entry '" + name + "'");
    if (m.rows() != reps.node_to_graph.size() || (i > 0 && m.cols() != reps.per_step.front().cols()))
      throw CheckpointError(path.string() + ": shape mismatch for " + name + ": actual " + m.shape_string());
    reps.per_step.push_back(std::move(m));
  }
  return reps;
}

/// Lossy text dump: `step,node,graph,v1,...`.
inline void write_representations_csv(const RepresentationSet& reps, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(8);
  out << "step,node,graph";
  for (std::size_t j = 0; j < reps.dim(); ++j) out << ",h" << j;
  out << "\n";
  for (std::size_t si = 0; si < reps.steps.size(); ++si)
    for (std::size_t i = 0; i < reps.per_step[si].rows(); ++i) {
      out << reps.steps[si] << "," << i << "," << reps.node_to_graph[i];
      for (double v : reps.per_step[si].row(i)) out << "," << v;
      out << "\n";
    }
}

}  // namespace ddm
