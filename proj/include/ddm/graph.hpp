#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/matrix.hpp"
#include "ddm/rng.hpp"

namespace ddm {

struct Graph {
  std::size_t node_count = 0;
  SparseAdjacency adjacency;
  DenseMatrix features;
  std::optional<std::vector<int>> node_labels;
  std::optional<int> graph_label;

  friend bool operator==(const Graph&, const Graph&) = default;
};

enum class Task { Node, Graph };

/// Where a dataset's node features come from.
enum class FeatureSource { Explicit, Degree, NodeLabel };

enum class SplitRole { Train, Val, Test };

struct Dataset {
  std::vector<Graph> graphs;
  Task task = Task::Graph;
  int num_classes = 0;
  FeatureSource feature_source = FeatureSource::Explicit;
  std::size_t degree_cap = 128;
  /// Graph task: fold index per graph.
  std::vector<int> folds;
  /// Node task: role per node of the single graph.
  std::vector<SplitRole> node_split;

  std::size_t feature_dim() const { return graphs.empty() ? 0 : graphs.front().features.cols(); }
  std::size_t total_nodes() const {
    std::size_t n = 0;
    for (const auto& g : graphs) n += g.node_count;
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Several graphs stacked into one disconnected graph.
struct BatchedGraph {
  SparseAdjacency adjacency;
  DenseMatrix features;
  /// Position (within `graph_ids`) of the graph owning each stacked node.
  std::vector<std::size_t> node_to_graph;
  /// Dataset index of each graph in the batch.
  std::vector<std::size_t> graph_ids;
};

struct LoadOptions {
  std::size_t degree_cap = 128;
};

// ---------------------------------------------------------------------------
// Feature synthesis and normalization

/// Row i is one-hot at min(degree(i), cap); width cap+1.
inline DenseMatrix degree_onehot_features(const Graph& g, std::size_t cap) {
  detail::require(cap >= 1, "degree_onehot_features: cap must be >= 1");
  const auto deg = g.adjacency.degrees();
  DenseMatrix x(g.node_count, cap + 1);
  for (std::size_t i = 0; i < g.node_count; ++i) {
    const auto d = static_cast<std::size_t>(std::llround(deg[i]));
    x(i, std::min(d, cap)) = 1.0;
  }
  return x;
}

inline DenseMatrix label_onehot_features(const Graph& g, std::size_t num_node_labels) {
  detail::require(g.node_labels.has_value(), "label_onehot_features: graph has no node labels");
  const auto& labels = *g.node_labels;
  DenseMatrix x(g.node_count, num_node_labels);
  for (std::size_t i = 0; i < g.node_count; ++i) {
    const int l = labels[i];
    detail::require(l >= 0 && static_cast<std::size_t>(l) < num_node_labels,
                    "label_onehot_features: node " + std::to_string(i) + " has label " + std::to_string(l) +
                        " outside [0, " + std::to_string(num_node_labels) + ")");
    x(i, static_cast<std::size_t>(l)) = 1.0;
  }
  return x;
}

/// Copy of `ds` whose features are replaced by one-hot degrees.
inline Dataset with_degree_features(Dataset ds, std::size_t cap) {
  for (auto& g : ds.graphs) g.features = degree_onehot_features(g, cap);
  ds.feature_source = FeatureSource::Degree;
  ds.degree_cap = cap;
  return ds;
}

/// D^{-1/2}(A + I)D^{-1/2}, D the degree matrix of A + I.
inline SparseAdjacency normalize_adjacency(const SparseAdjacency& a) {
  const std::size_t n = a.node_count();
  std::vector<AdjEntry> entries(a.entries().begin(), a.entries().end());
  for (std::size_t i = 0; i < n; ++i) entries.push_back({i, i, 1.0});
  SparseAdjacency with_loops(n, std::move(entries));
  const auto deg = with_loops.degrees();
  std::vector<AdjEntry> out;
  out.reserve(with_loops.nnz());
  for (const auto& e : with_loops.entries())
    out.push_back({e.row, e.col, e.weight / std::sqrt(deg[e.row] * deg[e.col])});
  return SparseAdjacency(n, std::move(out));
}

// ---------------------------------------------------------------------------
// Batching

/// Stacks the listed graphs block-diagonally (raw adjacency).
inline BatchedGraph stack_graphs(const Dataset& ds, std::span<const std::size_t> ids) {
  BatchedGraph b;
  std::vector<AdjEntry> entries;
  std::vector<DenseMatrix> feats;
  std::size_t offset = 0;
  for (std::size_t pos = 0; pos < ids.size(); ++pos) {
    const Graph& g = ds.graphs.at(ids[pos]);
    for (const auto& e : g.adjacency.entries()) entries.push_back({e.row + offset, e.col + offset, e.weight});
    feats.push_back(g.features);
    b.node_to_graph.insert(b.node_to_graph.end(), g.node_count, pos);
    b.graph_ids.push_back(ids[pos]);
    offset += g.node_count;
  }
  b.adjacency = SparseAdjacency(offset, std::move(entries));
  b.features = vstack(feats);
  return b;
}

/// Shuffled block-diagonal mini-batches covering every graph once.
inline std::vector<BatchedGraph> make_batches(const Dataset& ds, std::size_t batch_size, RngStream& rng) {
  detail::require(batch_size >= 1, "make_batches: batch_size must be >= 1");
  detail::require(ds.task == Task::Graph, "make_batches: graph-level dataset required");
  std::vector<std::size_t> order(ds.graphs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<BatchedGraph> out;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    const std::size_t e = std::min(order.size(), s + batch_size);
    out.push_back(stack_graphs(ds, std::span<const std::size_t>(order).subspan(s, e - s)));
  }
  return out;
}

/// Batches in dataset order; node-level datasets yield one full-graph batch.
inline std::vector<BatchedGraph> make_ordered_batches(const Dataset& ds, std::size_t batch_size) {
  detail::require(batch_size >= 1, "make_ordered_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(ds.graphs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (ds.task == Task::Node) batch_size = std::max<std::size_t>(order.size(), 1);
  std::vector<BatchedGraph> out;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    const std::size_t e = std::min(order.size(), s + batch_size);
    out.push_back(stack_graphs(ds, std::span<const std::size_t>(order).subspan(s, e - s)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Directory format

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

struct TsvLine {
  std::size_t number;
  std::vector<std::string> fields;
};

inline std::vector<TsvLine> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TsvLine> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.push_back({n, split_tabs(line)});
  }
  return out;
}

[[noreturn]] inline void schema_fail(const std::filesystem::path& file, std::size_t line, const std::string& what) {
  throw SchemaError(file.filename().string() + ":" + std::to_string(line) + ": " + what);
}

inline long long parse_int(const std::string& s, const std::filesystem::path& file, std::size_t line) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    schema_fail(file, line, "expected an integer, got '" + s + "'");
  }
}

inline double parse_real(const std::string& s, const std::filesystem::path& file, std::size_t line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    schema_fail(file, line, "expected a finite real, got '" + s + "'");
  }
}

inline void expect_fields(const TsvLine& l, std::size_t n, const std::filesystem::path& file) {
  if (l.fields.size() != n)
    schema_fail(file, l.number, "expected " + std::to_string(n) + " tab-separated fields, got " +
                                    std::to_string(l.fields.size()));
}

inline std::size_t graph_index(const std::map<long long, std::size_t>& ids, long long id,
                               const std::filesystem::path& file, std::size_t line) {
  auto it = ids.find(id);
  if (it == ids.end()) schema_fail(file, line, "unknown graph_id " + std::to_string(id));
  return it->second;
}

inline std::size_t node_index(long long v, const Graph& g, long long gid, const std::filesystem::path& file,
                              std::size_t line) {
  if (v < 0 || static_cast<std::size_t>(v) >= g.node_count)
    schema_fail(file, line, "node " + std::to_string(v) + " out of range for graph " + std::to_string(gid) +
                                " with " + std::to_string(g.node_count) + " nodes");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Parses a dataset directory (meta.json, graphs.tsv, edges.tsv, optional
/// features.tsv / labels.tsv, splits.tsv) and synthesizes features when
/// meta.json asks for "degree" or "node_label".
inline Dataset load_dataset(const std::filesystem::path& dir, const LoadOptions& opts = {}) {
  namespace fs = std::filesystem;
  using detail::parse_int;
  using detail::schema_fail;
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());

  Dataset ds;
  ds.degree_cap = opts.degree_cap;

  const fs::path meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw IoError("cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("meta.json: " + std::string(e.what()));
  }
  std::optional<std::size_t> explicit_dim;
  try {
    const std::string task = meta.at("task").get<std::string>();
    if (task == "node")
      ds.task = Task::Node;
    else if (task == "graph")
      ds.task = Task::Graph;
    else
      throw SchemaError("meta.json: task must be \"node\" or \"graph\", got \"" + task + "\"");
    ds.num_classes = meta.at("num_classes").get<int>();
    const auto& fd = meta.at("feature_dim");
    if (fd.is_number_integer()) {
      ds.feature_source = FeatureSource::Explicit;
      explicit_dim = fd.get<std::size_t>();
    } else if (fd == "degree") {
      ds.feature_source = FeatureSource::Degree;
    } else if (fd == "node_label") {
      ds.feature_source = FeatureSource::NodeLabel;
    } else {
      throw SchemaError("meta.json: feature_dim must be an integer, \"degree\" or \"node_label\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("meta.json: " + std::string(e.what()));
  }
  if (ds.num_classes < 1) throw SchemaError("meta.json: num_classes must be >= 1");
  if (ds.task == Task::Node && ds.feature_source == FeatureSource::NodeLabel)
    throw SchemaError("meta.json: node_label features would expose the node-task targets");

  // graphs.tsv
  const fs::path graphs_path = dir / "graphs.tsv";
  std::map<long long, std::size_t> ids;
  for (const auto& l : detail::read_tsv(graphs_path)) {
    detail::expect_fields(l, 3, graphs_path);
    const long long gid = parse_int(l.fields[0], graphs_path, l.number);
    if (ids.contains(gid)) schema_fail(graphs_path, l.number, "duplicate graph_id " + std::to_string(gid));
    const long long n = parse_int(l.fields[1], graphs_path, l.number);
    if (n < 1) schema_fail(graphs_path, l.number, "num_nodes must be >= 1");
    Graph g;
    g.node_count = static_cast<std::size_t>(n);
    if (l.fields[2] != "-") {
      const long long y = parse_int(l.fields[2], graphs_path, l.number);
      if (y < 0 || y >= ds.num_classes)
        schema_fail(graphs_path, l.number, "graph label " + std::to_string(y) + " outside [0, " +
                                               std::to_string(ds.num_classes) + ")");
      g.graph_label = static_cast<int>(y);
    } else if (ds.task == Task::Graph) {
      schema_fail(graphs_path, l.number, "graph task requires a graph label");
    }
    ids.emplace(gid, ds.graphs.size());
    ds.graphs.push_back(std::move(g));
  }
  if (ds.graphs.empty()) throw SchemaError("graphs.tsv: no graphs");
  if (ds.task == Task::Node && ds.graphs.size() != 1)
    throw SchemaError("graphs.tsv: node task expects exactly one graph");

  // edges.tsv
  const fs::path edges_path = dir / "edges.tsv";
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> edges(ds.graphs.size());
  for (const auto& l : detail::read_tsv(edges_path)) {
    detail::expect_fields(l, 3, edges_path);
    const long long gid = parse_int(l.fields[0], edges_path, l.number);
    const std::size_t gi = detail::graph_index(ids, gid, edges_path, l.number);
    const Graph& g = ds.graphs[gi];
    const auto a = detail::node_index(parse_int(l.fields[1], edges_path, l.number), g, gid, edges_path, l.number);
    const auto b = detail::node_index(parse_int(l.fields[2], edges_path, l.number), g, gid, edges_path, l.number);
    edges[gi].emplace_back(a, b);
  }
  for (std::size_t i = 0; i < ds.graphs.size(); ++i)
    ds.graphs[i].adjacency = SparseAdjacency::from_undirected_edges(ds.graphs[i].node_count, edges[i]);

  // labels.tsv
  const fs::path labels_path = dir / "labels.tsv";
  if (fs::exists(labels_path)) {
    for (auto& g : ds.graphs) g.node_labels = std::vector<int>(g.node_count, -1);
    for (const auto& l : detail::read_tsv(labels_path)) {
      detail::expect_fields(l, 3, labels_path);
      const long long gid = parse_int(l.fields[0], labels_path, l.number);
      Graph& g = ds.graphs[detail::graph_index(ids, gid, labels_path, l.number)];
      const auto v = detail::node_index(parse_int(l.fields[1], labels_path, l.number), g, gid, labels_path, l.number);
      const long long y = parse_int(l.fields[2], labels_path, l.number);
      if (y < 0) schema_fail(labels_path, l.number, "negative label");
      if (ds.task == Task::Node && y >= ds.num_classes)
        schema_fail(labels_path, l.number, "label " + std::to_string(y) + " outside [0, " +
                                               std::to_string(ds.num_classes) + ")");
      (*g.node_labels)[v] = static_cast<int>(y);
    }
    for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi)
      for (std::size_t v = 0; v < ds.graphs[gi].node_count; ++v)
        if ((*ds.graphs[gi].node_labels)[v] < 0)
          throw SchemaError("labels.tsv: node " + std::to_string(v) + " of graph index " + std::to_string(gi) +
                            " has no label");
  } else if (ds.task == Task::Node) {
    throw IoError("node task requires " + labels_path.string());
  }

  // features
  const fs::path features_path = dir / "features.tsv";
  switch (ds.feature_source) {
    case FeatureSource::Explicit: {
      const std::size_t d = *explicit_dim;
      if (d < 1) throw SchemaError("meta.json: feature_dim must be >= 1");
      std::vector<std::vector<bool>> seen(ds.graphs.size());
      for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
        ds.graphs[i].features = DenseMatrix(ds.graphs[i].node_count, d);
        seen[i].assign(ds.graphs[i].node_count, false);
      }
      for (const auto& l : detail::read_tsv(features_path)) {
        detail::expect_fields(l, 3, features_path);
        const long long gid = parse_int(l.fields[0], features_path, l.number);
        const std::size_t gi = detail::graph_index(ids, gid, features_path, l.number);
        Graph& g = ds.graphs[gi];
        const auto v =
            detail::node_index(parse_int(l.fields[1], features_path, l.number), g, gid, features_path, l.number);
        std::vector<double> vals;
        std::istringstream ss(l.fields[2]);
        std::string tok;
        while (std::getline(ss, tok, ',')) vals.push_back(detail::parse_real(tok, features_path, l.number));
        if (vals.size() != d)
          schema_fail(features_path, l.number, "expected " + std::to_string(d) + " feature values, got " +
                                                   std::to_string(vals.size()));
        std::copy(vals.begin(), vals.end(), g.features.row(v).begin());
        seen[gi][v] = true;
      }
      for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi)
        for (std::size_t v = 0; v < ds.graphs[gi].node_count; ++v)
          if (!seen[gi][v])
            throw SchemaError("features.tsv: node " + std::to_string(v) + " of graph index " + std::to_string(gi) +
                              " has no features");
      break;
    }
    case FeatureSource::Degree:
      for (auto& g : ds.graphs) g.features = degree_onehot_features(g, ds.degree_cap);
      break;
    case FeatureSource::NodeLabel: {
      int max_label = -1;
      for (const auto& g : ds.graphs) {
        if (!g.node_labels) throw SchemaError("node_label features require labels.tsv");
        for (int l : *g.node_labels) max_label = std::max(max_label, l);
      }
      for (auto& g : ds.graphs) g.features = label_onehot_features(g, static_cast<std::size_t>(max_label + 1));
      break;
    }
  }

  // splits.tsv
  const fs::path splits_path = dir / "splits.tsv";
  const auto split_lines = detail::read_tsv(splits_path);
  if (ds.task == Task::Graph) {
    ds.folds.assign(ds.graphs.size(), -1);
    for (const auto& l : split_lines) {
      detail::expect_fields(l, 2, splits_path);
      const std::size_t gi = detail::graph_index(ids, parse_int(l.fields[0], splits_path, l.number), splits_path, l.number);
      const long long f = parse_int(l.fields[1], splits_path, l.number);
      if (f < 0 || f > 9) schema_fail(splits_path, l.number, "fold index must be in 0..9");
      ds.folds[gi] = static_cast<int>(f);
    }
    for (std::size_t gi = 0; gi < ds.folds.size(); ++gi)
      if (ds.folds[gi] < 0) throw SchemaError("splits.tsv: graph index " + std::to_string(gi) + " has no fold");
  } else {
    const Graph& g = ds.graphs.front();
    std::vector<bool> seen(g.node_count, false);
    ds.node_split.assign(g.node_count, SplitRole::Train);
    for (const auto& l : split_lines) {
      detail::expect_fields(l, 2, splits_path);
      const auto v = detail::node_index(parse_int(l.fields[0], splits_path, l.number), g, 0, splits_path, l.number);
      if (seen[v]) schema_fail(splits_path, l.number, "node " + std::to_string(v) + " assigned twice");
      const std::string& role = l.fields[1];
      if (role == "train")
        ds.node_split[v] = SplitRole::Train;
      else if (role == "val")
        ds.node_split[v] = SplitRole::Val;
      else if (role == "test")
        ds.node_split[v] = SplitRole::Test;
      else
        schema_fail(splits_path, l.number, "role must be train, val or test, got '" + role + "'");
      seen[v] = true;
    }
    for (std::size_t v = 0; v < seen.size(); ++v)
      if (!seen[v]) throw SchemaError("splits.tsv: node " + std::to_string(v) + " has no split role");
  }
  return ds;
}

/// Writes `ds` in the directory format; load_dataset(dir) reproduces it.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    return out;
  };
  nlohmann::json meta;
  meta["task"] = ds.task == Task::Node ? "node" : "graph";
  meta["num_classes"] = ds.num_classes;
  switch (ds.feature_source) {
    case FeatureSource::Explicit: meta["feature_dim"] = ds.feature_dim(); break;
    case FeatureSource::Degree: meta["feature_dim"] = "degree"; break;
    case FeatureSource::NodeLabel: meta["feature_dim"] = "node_label"; break;
  }
  open("meta.json") << meta.dump() << "\n";

  auto graphs = open("graphs.tsv");
  auto edges = open("edges.tsv");
  bool any_labels = false;
  for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
    const Graph& g = ds.graphs[gi];
    graphs << gi << '\t' << g.node_count << '\t';
    if (g.graph_label)
      graphs << *g.graph_label;
    else
      graphs << '-';
    graphs << '\n';
    for (const auto& e : g.adjacency.entries())
      if (e.row <= e.col) edges << gi << '\t' << e.row << '\t' << e.col << '\n';
    any_labels = any_labels || g.node_labels.has_value();
  }
  if (ds.feature_source == FeatureSource::Explicit) {
    auto feats = open("features.tsv");
    feats.precision(17);
    for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
      const Graph& g = ds.graphs[gi];
      for (std::size_t v = 0; v < g.node_count; ++v) {
        feats << gi << '\t' << v << '\t';
        for (std::size_t j = 0; j < g.features.cols(); ++j) feats << (j ? "," : "") << g.features(v, j);
        feats << '\n';
      }
    }
  }
  if (any_labels) {
    auto labels = open("labels.tsv");
    for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi)
      if (ds.graphs[gi].node_labels)
        for (std::size_t v = 0; v < ds.graphs[gi].node_count; ++v)
          labels << gi << '\t' << v << '\t' << (*ds.graphs[gi].node_labels)[v] << '\n';
  }
  auto splits = open("splits.tsv");
  if (ds.task == Task::Graph) {
    for (std::size_t gi = 0; gi < ds.folds.size(); ++gi) splits << gi << '\t' << ds.folds[gi] << '\n';
  } else {
    for (std::size_t v = 0; v < ds.node_split.size(); ++v) {
      const char* role = ds.node_split[v] == SplitRole::Train ? "train" : ds.node_split[v] == SplitRole::Val ? "val" : "test";
      splits << v << '\t' << role << '\n';
    }
  }
}

/// Integer targets of the classification task: graph labels or node labels.
inline std::vector<int> task_labels(const Dataset& ds) {
  std::vector<int> y;
  if (ds.task == Task::Graph) {
    for (const auto& g : ds.graphs) {
      detail::require(g.graph_label.has_value(), "task_labels: unlabeled graph");
      y.push_back(*g.graph_label);
    }
  } else {
    const Graph& g = ds.graphs.front();
    detail::require(g.node_labels.has_value(), "task_labels: unlabeled nodes");
    y = *g.node_labels;
  }
  return y;
}

}  // namespace ddm
