#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "ddm/eval.hpp"
#include "test_util.hpp"

using namespace ddm;

namespace {

/// Graph dataset of single-edge or path graphs with labels alternating 0/1.
Dataset labelled_graphs(RngStream& rng, std::size_t count, std::size_t d) {
  Dataset ds;
  ds.task = Task::Graph;
  ds.num_classes = 2;
  for (std::size_t k = 0; k < count; ++k) {
    Graph g;
    g.node_count = 1 + rng.uniform_index(4);
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i + 1 < g.node_count; ++i) e.emplace_back(i, i + 1);
    g.adjacency = SparseAdjacency::from_undirected_edges(g.node_count, e);
    g.features = ddm::testing::random_matrix(rng, g.node_count, d);
    g.graph_label = static_cast<int>(k % 2);
    ds.graphs.push_back(std::move(g));
    // Consecutive pairs share a fold so every fold is class balanced.
    ds.folds.push_back(static_cast<int>((k / 2) % 10));
  }
  return ds;
}

RepresentationSet node_major(const Dataset& ds, std::vector<std::size_t> steps,
                             const std::function<double(std::size_t g, std::size_t node, std::size_t j)>& value,
                             std::size_t dim) {
  RepresentationSet r;
  r.steps = std::move(steps);
  r.graph_count = ds.graphs.size();
  DenseMatrix h(ds.total_nodes(), dim);
  std::size_t row = 0;
  for (std::size_t g = 0; g < ds.graphs.size(); ++g)
    for (std::size_t v = 0; v < ds.graphs[g].node_count; ++v, ++row) {
      r.node_to_graph.push_back(g);
      for (std::size_t j = 0; j < dim; ++j) h(row, j) = value(g, row, j);
    }
  for (std::size_t s = 0; s < r.steps.size(); ++s) r.per_step.push_back(h);
  return r;
}

Dataset node_dataset(std::size_t n, int classes) {
  Dataset ds;
  ds.task = Task::Node;
  ds.num_classes = classes;
  Graph g;
  g.node_count = n;
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  g.adjacency = SparseAdjacency::from_undirected_edges(n, e);
  g.features = DenseMatrix(n, 2, 1.0);
  std::vector<int> y(n);
  // Class 0 holds half the nodes, the rest are spread over the others.
  for (std::size_t i = 0; i < n; ++i) y[i] = i % 2 == 0 ? 0 : 1 + static_cast<int>((i / 2) % (classes - 1));
  g.node_labels = y;
  ds.graphs.push_back(std::move(g));
  for (std::size_t i = 0; i < n; ++i)
    ds.node_split.push_back(i % 10 < 6 ? SplitRole::Train : i % 10 < 8 ? SplitRole::Val : SplitRole::Test);
  return ds;
}

}  // namespace

TEST(Extract, WidthIsTwiceHidden) {
  RngStream rng(1);
  Dataset ds = labelled_graphs(rng, 12, 3);
  DenoiserConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dim = 64;
  auto p = init_denoiser(cfg, rng);
  auto reps = extract_node_representations(p, ds, {50, 100, 200}, cfg.schedule(), cfg.mode, RngStream(5), 5);
  ASSERT_EQ(reps.per_step.size(), 3u);
  EXPECT_EQ(reps.steps, (std::vector<std::size_t>{50, 100, 200}));
  for (const auto& h : reps.per_step) {
    EXPECT_EQ(h.cols(), 128u);
    EXPECT_EQ(h.rows(), ds.total_nodes());
  }
  EXPECT_EQ(reps.node_to_graph.size(), ds.total_nodes());
  EXPECT_EQ(reps.node_to_graph.front(), 0u);
  EXPECT_EQ(reps.node_to_graph.back(), 11u);
}

TEST(Extract, SortedAndDeterministic) {
  RngStream rng(2);
  Dataset ds = labelled_graphs(rng, 7, 2);
  DenoiserConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dim = 4;
  auto p = init_denoiser(cfg, rng);
  auto a = extract_node_representations(p, ds, {200, 50, 100, 50}, cfg.schedule(), cfg.mode, RngStream(9));
  auto b = extract_node_representations(p, ds, {50, 100, 200}, cfg.schedule(), cfg.mode, RngStream(9));
  EXPECT_EQ(a.steps, (std::vector<std::size_t>{50, 100, 200}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.per_step[i], b.per_step[i]);
  EXPECT_NE(a.per_step[0], a.per_step[2]);
  auto c = extract_node_representations(p, ds, {50}, cfg.schedule(), cfg.mode, RngStream(10));
  EXPECT_NE(c.per_step[0], a.per_step[0]);
}

TEST(Extract, StepOutOfRange) {
  RngStream rng(3);
  Dataset ds = labelled_graphs(rng, 3, 2);
  DenoiserConfig cfg;
  cfg.input_dim = 2;
  auto p = init_denoiser(cfg, rng);
  EXPECT_THROW(extract_node_representations(p, ds, {0}, cfg.schedule(), cfg.mode, RngStream(1)), ContractError);
  EXPECT_THROW(extract_node_representations(p, ds, {1001}, cfg.schedule(), cfg.mode, RngStream(1)), ContractError);
  EXPECT_THROW(extract_node_representations(p, ds, {}, cfg.schedule(), cfg.mode, RngStream(1)), ContractError);
}

TEST(Pool, MeanOfRows) {
  std::vector<std::size_t> map{0, 0};
  EXPECT_EQ(pool_graph(DenseMatrix{{1, 3}, {3, 5}}, map, 1), (DenseMatrix{{2, 4}}));
  std::vector<std::size_t> single{0, 1, 1};
  EXPECT_EQ(pool_graph(DenseMatrix{{7, -1}, {0, 0}, {2, 2}}, single, 2), (DenseMatrix{{7, -1}, {1, 1}}));
}

TEST(Pool, InvariantToNodeOrder) {
  RngStream rng(4);
  DenseMatrix h = ddm::testing::random_matrix(rng, 6, 3);
  std::vector<std::size_t> map{0, 0, 0, 1, 1, 1};
  std::vector<std::size_t> perm{2, 0, 1, 5, 3, 4};
  EXPECT_LE(max_abs_diff(pool_graph(h, map, 2), pool_graph(select_rows(h, perm), map, 2)), 1e-15);
}

TEST(Pool, Errors) {
  std::vector<std::size_t> map{0, 2};
  EXPECT_THROW(pool_graph(DenseMatrix(2, 1), map, 3), ContractError);
  EXPECT_THROW(pool_graph(DenseMatrix(3, 1), map, 3), DimensionError);
}

TEST(Classifier, SeparableBlobs) {
  RngStream rng(5);
  DenseMatrix x(100, 2);
  std::vector<int> y(100);
  for (std::size_t i = 0; i < 100; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(i, 0) = (y[i] ? 5.0 : -5.0) + rng.normal();
    x(i, 1) = rng.normal();
  }
  auto m = train_linear_classifier(x, y, 1e-3);
  EXPECT_EQ(accuracy(m.predict(x), y), 1.0);
}

TEST(Classifier, ShuffledLabelsAreChance) {
  RngStream rng(6);
  auto draw = [&](std::size_t n) {
    std::pair<DenseMatrix, std::vector<int>> out{gaussian(rng, n, 5), std::vector<int>(n)};
    for (auto& v : out.second) v = static_cast<int>(rng.uniform_index(10));
    return out;
  };
  auto [xtr, ytr] = draw(500);
  auto [xte, yte] = draw(500);
  auto m = train_linear_classifier(xtr, ytr, 1e-3);
  EXPECT_NEAR(accuracy(m.predict(xte), yte), 0.10, 0.05);
}

TEST(Classifier, LossDecreasesMonotonically) {
  RngStream rng(7);
  DenseMatrix x = gaussian(rng, 200, 4);
  std::vector<int> y(200);
  for (std::size_t i = 0; i < 200; ++i) y[i] = x(i, 0) + 0.5 * rng.normal() > 0 ? 1 : (x(i, 1) > 0.5 ? 2 : 0);
  auto fit = fit_logistic_regression(x, y, LogRegOptions{});
  ASSERT_GT(fit.loss_history.size(), 2u);
  // Zero weights and zero bias: cross-entropy is log C.
  EXPECT_NEAR(fit.loss_history.front(), std::log(3.0), 1e-12);
  EXPECT_LE(fit.loss_history.back(), fit.loss_history.front());
  for (std::size_t i = 1; i < fit.loss_history.size(); ++i) EXPECT_LE(fit.loss_history[i], fit.loss_history[i - 1]);
}

TEST(Classifier, ConvergesToStationaryPoint) {
  // At the optimum the gradient of the regularized objective vanishes.
  RngStream rng(8);
  DenseMatrix x = gaussian(rng, 80, 3);
  std::vector<int> y(80);
  for (std::size_t i = 0; i < 80; ++i) y[i] = x(i, 0) - x(i, 2) + rng.normal() > 0;
  auto fit = fit_logistic_regression(x, y, LogRegOptions{0.1, 5000, 1e-8, 0});
  const DenseMatrix z = fit.model.standardize(x);
  detail::LogRegObjective f{z, y, 0.1};
  DenseMatrix gw, gb;
  f(fit.model.weights, fit.model.bias, &gw, &gb);
  EXPECT_LE(frobenius_norm(gw), 1e-7);
  EXPECT_LE(frobenius_norm(gb), 1e-7);
}

TEST(Classifier, Errors) {
  std::vector<int> one{1, 1, 1};
  EXPECT_THROW(train_linear_classifier(DenseMatrix(3, 2), one, 1e-3), ContractError);
  std::vector<int> two{0, 1};
  EXPECT_THROW(train_linear_classifier(DenseMatrix(3, 2), two, 1e-3), DimensionError);
}

TEST(Vote, Examples) {
  EXPECT_EQ(majority_vote({{0}, {0}, {1}}), (std::vector<int>{0}));
  EXPECT_EQ(majority_vote({{3, 1, 4}}), (std::vector<int>{3, 1, 4}));
  EXPECT_EQ(majority_vote({{0, 1}, {1, 0}}), (std::vector<int>{0, 1}));
  EXPECT_EQ(majority_vote({{2}, {1}, {1}, {2}, {0}}), (std::vector<int>{2}));
  EXPECT_THROW(majority_vote({{0, 1}, {1}}), DimensionError);
}

TEST(Vote, AgreesWithCountingOracle) {
  RngStream rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<int>> p(1 + rng.uniform_index(6), std::vector<int>(4));
    for (auto& v : p)
      for (int& x : v) x = static_cast<int>(rng.uniform_index(3));
    auto out = majority_vote(p);
    for (std::size_t i = 0; i < 4; ++i) {
      std::array<int, 3> count{};
      for (const auto& v : p) ++count[static_cast<std::size_t>(v[i])];
      const int best = *std::max_element(count.begin(), count.end());
      ASSERT_EQ(count[static_cast<std::size_t>(out[i])], best);
      // The winner is the first tied label in step order.
      for (const auto& v : p)
        if (count[static_cast<std::size_t>(v[i])] == best) {
          ASSERT_EQ(out[i], v[i]);
          break;
        }
    }
  }
}

TEST(GraphEval, OracleEmbeddingsArePerfect) {
  RngStream rng(10);
  Dataset ds = labelled_graphs(rng, 60, 2);
  auto reps = node_major(
      ds, {50, 100}, [&](std::size_t g, std::size_t, std::size_t j) { return *ds.graphs[g].graph_label == int(j) ? 1.0 : 0.0; },
      2);
  auto r = evaluate_graph_task(ds, reps, 2);
  EXPECT_EQ(r.voted_mean, 1.0);
  EXPECT_EQ(r.voted_std, 0.0);
  EXPECT_EQ(r.per_step_mean, (std::vector<double>{1.0, 1.0}));
  // 2 repetitions × 10 folds × (2 steps + vote).
  EXPECT_EQ(r.records.size(), 60u);
}

TEST(GraphEval, NoiseEmbeddingsAreChance) {
  RngStream rng(11);
  Dataset ds = labelled_graphs(rng, 1000, 1);
  RngStream noise(12);
  auto reps = node_major(ds, {1, 2, 3}, [&](std::size_t, std::size_t, std::size_t) { return noise.normal(); }, 8);
  for (auto& h : reps.per_step) h = gaussian(noise, h.rows(), h.cols());
  auto r = evaluate_graph_task(ds, reps, 1);
  EXPECT_NEAR(r.voted_mean, 0.5, 0.05);
}

TEST(GraphEval, SingleStepVoteEqualsStep) {
  RngStream rng(13);
  Dataset ds = labelled_graphs(rng, 80, 1);
  RngStream noise(14);
  auto reps = node_major(ds, {7}, [&](std::size_t g, std::size_t, std::size_t) {
    return noise.normal() + (*ds.graphs[g].graph_label ? 0.7 : 0.0);
  }, 3);
  auto r = evaluate_graph_task(ds, reps, 1);
  for (std::size_t i = 0; i < r.records.size(); i += 2) {
    ASSERT_EQ(r.records[i + 1].step, kVoteStep);
    EXPECT_EQ(r.records[i].accuracy, r.records[i + 1].accuracy);
  }
}

TEST(GraphEval, MissingFolds) {
  RngStream rng(15);
  Dataset ds = labelled_graphs(rng, 10, 1);
  auto reps = raw_feature_representations(ds);
  ds.folds.pop_back();
  EXPECT_THROW(evaluate_graph_task(ds, reps, 1), ContractError);
  ds.folds.assign(10, 0);
  EXPECT_THROW(evaluate_graph_task(ds, reps, 1), ContractError);
}

TEST(GraphEval, RepetitionsDifferOnlyInClassifierSeed) {
  RngStream rng(16);
  Dataset ds = labelled_graphs(rng, 50, 2);
  auto reps = raw_feature_representations(ds);
  auto a = evaluate_graph_task(ds, reps, 3, GraphEvalOptions{1e-3, 4});
  auto b = evaluate_graph_task(ds, reps, 3, GraphEvalOptions{1e-3, 4});
  EXPECT_EQ(report_csv(a), report_csv(b));
  EXPECT_EQ(a.records.size(), 3u * 10u * 2u);
}

TEST(NodeEval, OracleEmbeddings) {
  Dataset ds = node_dataset(200, 3);
  const auto& y = *ds.graphs[0].node_labels;
  auto reps = node_major(ds, {10, 20}, [&](std::size_t, std::size_t v, std::size_t j) { return y[v] == int(j) ? 1.0 : 0.0; }, 3);
  auto r = evaluate_node_task(ds, reps);
  EXPECT_EQ(r.voted_mean, 1.0);
  EXPECT_EQ(r.records.size(), 3u);
}

TEST(NodeEval, ConstantEmbeddingsGiveMajorityShare) {
  Dataset ds = node_dataset(200, 3);
  auto reps = node_major(ds, {10}, [](std::size_t, std::size_t, std::size_t) { return 1.0; }, 4);
  auto r = evaluate_node_task(ds, reps);
  const auto& y = *ds.graphs[0].node_labels;
  std::array<int, 3> count{};
  std::size_t test = 0;
  for (std::size_t v = 0; v < 200; ++v)
    if (ds.node_split[v] == SplitRole::Test) ++count[static_cast<std::size_t>(y[v])], ++test;
  EXPECT_DOUBLE_EQ(r.voted_mean, static_cast<double>(count[0]) / static_cast<double>(test));
}

TEST(NodeEval, MissingMasks) {
  Dataset ds = node_dataset(20, 2);
  auto reps = raw_feature_representations(ds);
  ds.node_split.clear();
  EXPECT_THROW(evaluate_node_task(ds, reps), ContractError);
}

TEST(Report, CsvAndJsonAgree) {
  EvalReport r;
  r.steps = {50, 100};
  r.records = {{50, 0, 0, 0.5}, {100, 0, 0, 0.75}, {kVoteStep, 0, 0, 0.75},
               {50, 1, 0, 1.0}, {100, 1, 0, 0.25}, {kVoteStep, 1, 0, 0.25}};
  detail::summarize(r);
  EXPECT_DOUBLE_EQ(r.voted_mean, 0.5);
  EXPECT_DOUBLE_EQ(r.voted_std, 0.25);
  EXPECT_EQ(r.per_step_mean, (std::vector<double>{0.75, 0.5}));
  const std::string csv = report_csv(r);
  EXPECT_EQ(csv,
            "step,fold,repetition,accuracy\n"
            "50,0,0,0.500000\n100,0,0,0.750000\nvote,0,0,0.750000\n"
            "50,1,0,1.000000\n100,1,0,0.250000\nvote,1,0,0.250000\n"
            "mean,-,-,0.500000\nstd,-,-,0.250000\n");
  auto j = report_json(r);
  EXPECT_EQ(j["records"].size(), 6u);
  EXPECT_EQ(j["records"][2]["step"], "vote");
  EXPECT_EQ(j["voted_mean"].get<double>(), 0.5);
  EXPECT_FALSE(j.contains("runtime_seconds"));
}

TEST(Representations, BinaryRoundTrip) {
  auto dir = ddm::testing::fresh_dir("reps_roundtrip");
  RngStream rng(17);
  Dataset ds = labelled_graphs(rng, 5, 3);
  auto reps = node_major(ds, {3, 9}, [&](std::size_t, std::size_t, std::size_t) { return rng.normal(); }, 4);
  reps.per_step[1] = gaussian(rng, reps.per_step[1].rows(), 4);
  save_representations(reps, dir / "r.ddmr");
  auto back = load_representations(dir / "r.ddmr");
  EXPECT_EQ(back.steps, reps.steps);
  EXPECT_EQ(back.node_to_graph, reps.node_to_graph);
  EXPECT_EQ(back.graph_count, 5u);
  EXPECT_EQ(back.per_step, reps.per_step);

  write_representations_csv(reps, dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,node,graph,h0,h1,h2,h3");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2 * ds.total_nodes());
}

TEST(Representations, CorruptFile) {
  auto dir = ddm::testing::fresh_dir("reps_corrupt");
  std::ofstream(dir / "bad.ddmr") << "DDMRgarbage";
  EXPECT_THROW(load_representations(dir / "bad.ddmr"), CheckpointError);
}

TEST(Representations, RawFeaturesBaseline) {
  RngStream rng(18);
  Dataset ds = labelled_graphs(rng, 4, 2);
  auto reps = raw_feature_representations(ds);
  EXPECT_EQ(reps.steps, (std::vector<std::size_t>{0}));
  EXPECT_EQ(reps.per_step[0].rows(), ds.total_nodes());
  EXPECT_EQ(reps.per_step[0].row(0)[1], ds.graphs[0].features(0, 1));
}
