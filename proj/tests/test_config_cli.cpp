#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "ddm/commands.hpp"
#include "test_util.hpp"

using namespace ddm;
namespace fs = std::filesystem;

namespace {

const std::string kToy = std::string(DDM_DATA_DIR) + "/toy";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

CommandOutcome cli(std::vector<std::string> args, std::string* err_text = nullptr, const char* seed = nullptr) {
  std::ostringstream err;
  auto out = run_cli(args, err, seed);
  if (err_text) *err_text = err.str();
  return out;
}

std::string dir_snapshot(const fs::path& dir) {
  std::string s;
  for (const auto& e : fs::directory_iterator(dir)) s += e.path().filename().string() + ":" + slurp(e.path()) + "\n";
  return s;
}

}  // namespace

TEST(Config, DefaultsFromEmptyFile) {
  auto dir = ddm::testing::fresh_dir("cfg_defaults");
  std::ofstream(dir / "empty.cfg") << "";
  RunConfig c = parse_config(dir / "empty.cfg", {}, nullptr);
  EXPECT_EQ(c.denoiser.hidden_dim, 64u);
  EXPECT_EQ(c.denoiser.time_embed_dim, 16u);
  EXPECT_EQ(c.denoiser.epochs, 200u);
  EXPECT_EQ(c.denoiser.lr, 1e-3);
  EXPECT_EQ(c.denoiser.num_steps, 1000u);
  EXPECT_EQ(c.denoiser.mode, NoiseMode::Directional);
  EXPECT_EQ(c.steps, (std::vector<std::size_t>{50, 100, 200}));
  EXPECT_EQ(c.repetitions, 1u);
  EXPECT_EQ(c.seed, 0u);
  EXPECT_FALSE(c.ablate);
}

TEST(Config, OverrideBeatsFile) {
  auto dir = ddm::testing::fresh_dir("cfg_precedence");
  std::ofstream(dir / "a.cfg") << "# comment\nepochs = 50\nhidden_dim=8  # trailing\n";
  EXPECT_EQ(parse_config(dir / "a.cfg", {}, nullptr).denoiser.epochs, 50u);
  RunConfig c = parse_config(dir / "a.cfg", {"--epochs", "10"}, nullptr);
  EXPECT_EQ(c.denoiser.epochs, 10u);
  EXPECT_EQ(c.denoiser.hidden_dim, 8u);
}

TEST(Config, JsonFile) {
  auto dir = ddm::testing::fresh_dir("cfg_json");
  std::ofstream(dir / "a.json") << R"({"epochs": 7, "steps": [5, 10], "noise_mode": "white", "lr": 0.5, "csv": true})";
  RunConfig c = parse_config(dir / "a.json", {}, nullptr);
  EXPECT_EQ(c.denoiser.epochs, 7u);
  EXPECT_EQ(c.steps, (std::vector<std::size_t>{5, 10}));
  EXPECT_EQ(c.denoiser.mode, NoiseMode::White);
  EXPECT_EQ(c.denoiser.lr, 0.5);
  EXPECT_TRUE(c.csv);
}

TEST(Config, OverrideForms) {
  RunConfig c = parse_config({}, {"--steps=1,2,3", "--ablate", "--seed", "9", "--refit", "false"}, nullptr);
  EXPECT_EQ(c.steps, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_TRUE(c.ablate);
  EXPECT_FALSE(c.refit);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.denoiser.seed, 9u);
}

TEST(Config, BadNoiseModeListsChoices) {
  try {
    parse_config({}, {"--noise_mode", "purple"}, nullptr);
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("{directional, aniso_only, white}"), std::string::npos) << e.what();
  }
}

TEST(Config, UnknownKeyListsValidKeys) {
  try {
    parse_config({}, {"--epoch", "3"}, nullptr);
    FAIL();
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'epoch'"), std::string::npos);
    for (const auto& k : valid_config_keys()) EXPECT_NE(msg.find(k), std::string::npos) << k;
  }
}

TEST(Config, TypeMismatch) {
  EXPECT_THROW(parse_config({}, {"--epochs", "ten"}, nullptr), UsageError);
  EXPECT_THROW(parse_config({}, {"--lr", "0.1x"}, nullptr), UsageError);
  EXPECT_THROW(parse_config({}, {"--task", "edge"}, nullptr), UsageError);
  EXPECT_THROW(parse_config({}, {"--epochs"}, nullptr), UsageError);
  EXPECT_THROW(parse_config({}, {"epochs", "3"}, nullptr), UsageError);
  EXPECT_THROW(parse_config(fs::path("/nonexistent/x.cfg"), {}, nullptr), UsageError);
}

TEST(Config, SeedEnvironmentIsFinal) {
  RunConfig c = parse_config({}, {"--seed", "4"}, "123");
  EXPECT_EQ(c.seed, 123u);
  EXPECT_EQ(c.denoiser.seed, 123u);
  EXPECT_THROW(parse_config({}, {}, "abc"), UsageError);
}

TEST(Cli, TrainWritesCheckpointAndLossLog) {
  auto out = ddm::testing::fresh_dir("cli_train");
  auto r = cli({"train", "--dataset", kToy, "--epochs", "5", "--hidden_dim", "8", "--out_dir", out.string()});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_TRUE(fs::exists(out / "model.ddm"));
  EXPECT_EQ(line_count(out / "loss_log.csv"), 6u);
  EXPECT_TRUE(slurp(out / "loss_log.csv").starts_with("epoch,loss\n"));
  auto ck = load_checkpoint(out / "model.ddm");
  EXPECT_EQ(ck.config.epochs, 5u);
  EXPECT_EQ(ck.config.hidden_dim, 8u);
}

TEST(Cli, OracleRepresentationsScorePerfectly) {
  auto dir = ddm::testing::fresh_dir("cli_oracle");
  Dataset ds = load_dataset(kToy);
  RepresentationSet reps;
  reps.steps = {50, 100};
  reps.graph_count = ds.graphs.size();
  DenseMatrix h(ds.total_nodes(), 2);
  std::size_t row = 0;
  for (std::size_t g = 0; g < ds.graphs.size(); ++g)
    for (std::size_t v = 0; v < ds.graphs[g].node_count; ++v, ++row) {
      h(row, static_cast<std::size_t>(*ds.graphs[g].graph_label)) = 1.0;
      reps.node_to_graph.push_back(g);
    }
  reps.per_step = {h, h};
  save_representations(reps, dir / "oracle.ddmr");
  auto r = cli({"eval", "--dataset", kToy, "--representations", (dir / "oracle.ddmr").string(), "--out_dir",
                (dir / "eval").string()});
  ASSERT_EQ(r.exit_code, 0);
  auto j = nlohmann::json::parse(slurp(dir / "eval" / "report.json"));
  EXPECT_EQ(j["voted_mean"].get<double>(), 1.0);
  const std::string csv = slurp(dir / "eval" / "report.csv");
  EXPECT_NE(csv.find("mean,-,-,1.000000"), std::string::npos);
}

TEST(Cli, ToyPipelineIsByteIdentical) {
  auto base = ddm::testing::fresh_dir("cli_determinism");
  const std::string before = dir_snapshot(kToy);
  std::string reports[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path d = base / std::to_string(run);
    ASSERT_EQ(cli({"train", "--dataset", kToy, "--epochs", "3", "--hidden_dim", "8", "--out_dir", (d / "t").string()},
                  nullptr, "5")
                  .exit_code,
              0);
    ASSERT_EQ(cli({"extract", "--dataset", kToy, "--checkpoint", (d / "t" / "model.ddm").string(), "--out_dir",
                   (d / "x").string()},
                  nullptr, "5")
                  .exit_code,
              0);
    ASSERT_EQ(cli({"eval", "--dataset", kToy, "--representations", (d / "x" / "representations.ddmr").string(),
                   "--repetitions", "2", "--out_dir", (d / "e").string()},
                  nullptr, "5")
                  .exit_code,
              0);
    reports[run] = slurp(d / "e" / "report.csv") + slurp(d / "e" / "report.json");
    EXPECT_EQ(slurp(d / "t" / "model.ddm"), slurp(base / "0" / "t" / "model.ddm"));
  }
  EXPECT_EQ(reports[0], reports[1]);
  EXPECT_EQ(dir_snapshot(kToy), before);
}

TEST(Cli, ExtractWritesCsv) {
  auto base = ddm::testing::fresh_dir("cli_extract");
  ASSERT_EQ(cli({"train", "--dataset", kToy, "--epochs", "1", "--hidden_dim", "4", "--out_dir", (base / "t").string()})
                .exit_code,
            0);
  auto r = cli({"extract", "--dataset", kToy, "--checkpoint", (base / "t" / "model.ddm").string(), "--csv", "--steps",
                "7", "--out_dir", (base / "x").string()});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(line_count(base / "x" / "representations.csv"), 1 + load_dataset(kToy).total_nodes());
  auto reps = load_representations(base / "x" / "representations.ddmr");
  EXPECT_EQ(reps.steps, (std::vector<std::size_t>{7}));
  EXPECT_EQ(reps.dim(), 8u);
}

TEST(Cli, EvalRetrainAndAblate) {
  auto base = ddm::testing::fresh_dir("cli_retrain");
  auto r = cli({"eval", "--dataset", kToy, "--retrain", "--repetitions", "2", "--epochs", "2", "--hidden_dim", "4",
                "--out_dir", (base / "r").string()});
  ASSERT_EQ(r.exit_code, 0);
  auto j = nlohmann::json::parse(slurp(base / "r" / "report.json"));
  EXPECT_EQ(j["records"].back()["repetition"], 1);
  r = cli({"eval", "--dataset", kToy, "--ablate", "--epochs", "2", "--hidden_dim", "4", "--out_dir",
           (base / "a").string()});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(line_count(base / "a" / "ablation.csv"), 4u);
  EXPECT_TRUE(slurp(base / "a" / "ablation.csv").starts_with("noise_mode,voted_mean,voted_std"));
  for (auto m : {"directional", "aniso_only", "white"}) EXPECT_TRUE(fs::exists(base / "a" / ("report_" + std::string(m) + ".csv")));
}

TEST(Cli, AnalysisCommands) {
  auto base = ddm::testing::fresh_dir("cli_analysis");
  ASSERT_EQ(cli({"snr", "--dataset", "synthetic", "--probe_epochs", "50", "--out_dir", (base / "s").string()}).exit_code, 0);
  const std::string snr = slurp(base / "s" / "snr_curve.csv");
  EXPECT_TRUE(snr.starts_with("mode,step,snr\n"));
  for (auto m : {"directional,", "aniso_only,", "white,"}) EXPECT_NE(snr.find(m), std::string::npos);

  ASSERT_EQ(cli({"svdviz", "--dataset", kToy, "--out_dir", (base / "v").string()}).exit_code, 0);
  EXPECT_EQ(line_count(base / "v" / "svd_projection.csv"), 1 + load_dataset(kToy).total_nodes());
  EXPECT_TRUE(slurp(base / "v" / "svd_projection.csv").starts_with("point_id,x,y,label\n"));

  ASSERT_EQ(cli({"ellipse", "--ellipse_samples", "50", "--out_dir", (base / "e").string()}).exit_code, 0);
  EXPECT_TRUE(slurp(base / "e" / "ellipse_scores.csv").starts_with("mode,step,separability\n"));
  EXPECT_EQ(line_count(base / "e" / "ellipse_sim.csv"), 1 + 3 * 5 * 100u);
}

TEST(Cli, ExitCodes) {
  auto base = ddm::testing::fresh_dir("cli_exit");
  std::string err;
  EXPECT_EQ(cli({}, &err).exit_code, 1);
  EXPECT_NE(err.find("usage: ddm"), std::string::npos);
  EXPECT_EQ(cli({"--help"}).exit_code, 0);
  EXPECT_EQ(cli({"fly"}).exit_code, 1);
  EXPECT_EQ(cli({"train", "--noise_mode", "purple", "--dataset", kToy}).exit_code, 1);
  EXPECT_EQ(cli({"extract", "--dataset", kToy, "--out_dir", base.string()}, &err).exit_code, 1);
  EXPECT_NE(err.find("checkpoint"), std::string::npos);
  EXPECT_EQ(cli({"extract", "--dataset", kToy, "--checkpoint", (base / "none.ddm").string()}).exit_code, 1);
  EXPECT_EQ(cli({"train", "--dataset", (base / "missing").string()}).exit_code, 2);

  // Schema errors surface verbatim with exit code 2.
  fs::create_directories(base / "broken");
  for (const auto& f : fs::directory_iterator(kToy)) fs::copy_file(f.path(), base / "broken" / f.path().filename());
  std::ofstream(base / "broken" / "edges.tsv", std::ios::app) << "0\t1\t99\n";
  EXPECT_EQ(cli({"train", "--dataset", (base / "broken").string(), "--out_dir", (base / "b").string()}, &err).exit_code, 2);
  EXPECT_NE(err.find("edges.tsv"), std::string::npos) << err;

  // Truncated checkpoint is a data error.
  std::ofstream(base / "bad.ddm") << "DDM1";
  EXPECT_EQ(cli({"extract", "--dataset", kToy, "--checkpoint", (base / "bad.ddm").string(), "--out_dir",
                 (base / "x").string()})
                .exit_code,
            2);

  // Diverging training is a numeric failure.
  EXPECT_EQ(cli({"train", "--dataset", kToy, "--lr", "1e300", "--epochs", "20", "--out_dir", (base / "n").string()}, &err)
                .exit_code,
            3)
      << err;
}

TEST(Cli, TaskMismatchIsUsageError) {
  EXPECT_EQ(cli({"train", "--dataset", kToy, "--task", "node"}).exit_code, 1);
}
