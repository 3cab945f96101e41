#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "deepist/io.hpp"

namespace deepist {
namespace {

const std::string kCli = DEEPIST_CLI_PATH;

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  std::array<char, 512> buf;
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Small synthetic setup shared by the pipeline tests.
class CliPipeline : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new std::string(::testing::TempDir() + "cli_pipeline");
    std::filesystem::create_directories(*dir_);
    config_ = new std::string(*dir_ + "/pipeline.conf");
    std::ofstream conf(*config_);
    conf << "raster_k = 16\n"
            "window_w_km = 0.15\n"
            "window_s_km = 0.12\n"
            "raster_r_lng = 0.003\n"
            "raster_r_lat = 0.00225\n"
            "pathcnn_layers = 2\n"
            "pathcnn_filters = 4,6\n"
            "lambda = 16\n"
            "dropout_rate = 0\n"
            "temporal_filters = 8,8\n"
            "s_max = 6\n"
            "head_dims = 12,1\n"
            "learning_rate = 0.001\n"
            "batch_size = 4\n"
            "max_iterations = 8\n"
            "eval_every = 4\n"
            "threads = 1\n"
            "synth_grid = 6\n"
            "synth_paths = 12\n"
            "synth_min_edges = 8\n"
            "synth_max_edges = 14\n"
            "synth_speed_other_mps = 6\n"
            "synth_speed_highway_mps = 10\n";
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete config_;
  }
  static std::string* dir_;
  static std::string* config_;
};

std::string* CliPipeline::dir_ = nullptr;
std::string* CliPipeline::config_ = nullptr;

TEST(CliHelpTest, EverySubcommandHelpExitsZero) {
  EXPECT_EQ(run("--help").exit_code, 0);
  for (const char* sub :
       {"synth", "prepare", "traffic", "train", "eval", "predict",
        "inspect"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.exit_code, 0) << sub << ": " << r.output;
  }
}

TEST(CliErrorTest, ExitCodes) {
  // Unknown subcommand / missing required options -> 1.
  EXPECT_EQ(run("frobnicate").exit_code, 1);
  EXPECT_EQ(run("synth").exit_code, 1);
  // Unknown config key -> 1.
  EXPECT_EQ(run("synth --out /tmp --set no_such_key=1").exit_code, 1);
  // Missing input file -> 2.
  EXPECT_EQ(run("prepare --nodes /nope/n.csv --edges /nope/e.csv "
                "--paths /nope/p.jsonl --out /tmp/out.jsonl")
                .exit_code,
            2);
}

TEST_F(CliPipeline, A_SynthWritesDataset) {
  const auto r =
      run("synth --config " + *config_ + " --out " + *dir_);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("paths: 12"), std::string::npos) << r.output;
  RoadNetwork net =
      load_network(*dir_ + "/nodes.csv", *dir_ + "/edges.csv");
  EXPECT_EQ(net.nodes.size(), 36u);
  auto records = load_paths(*dir_ + "/paths.jsonl");
  EXPECT_EQ(records.size(), 12u);
}

TEST_F(CliPipeline, B_PrepareFiltersAndPrintsStats) {
  const auto r = run("prepare --nodes " + *dir_ + "/nodes.csv --edges " +
                     *dir_ + "/edges.csv --paths " + *dir_ +
                     "/paths.jsonl --out " + *dir_ + "/filtered.jsonl");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("# of paths:"), std::string::npos);
  EXPECT_NE(r.output.find("moving distance mean:"), std::string::npos);
  EXPECT_NE(r.output.find("travel time mean:"), std::string::npos);
}

TEST_F(CliPipeline, C_TrafficTable) {
  const auto r = run("traffic --nodes " + *dir_ + "/nodes.csv --edges " +
                     *dir_ + "/edges.csv --paths " + *dir_ +
                     "/filtered.jsonl --out " + *dir_ + "/traffic.csv");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  std::ifstream in(*dir_ + "/traffic.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# global_max_speed=", 0), 0u) << line;
}

TEST_F(CliPipeline, D_TrainWritesCheckpointAndHistory) {
  const auto r = run("train --config " + *config_ + " --nodes " + *dir_ +
                     "/nodes.csv --edges " + *dir_ + "/edges.csv --paths " +
                     *dir_ + "/filtered.jsonl --traffic " + *dir_ +
                     "/traffic.csv --checkpoint " + *dir_ +
                     "/model.ckpt --history " + *dir_ + "/history.csv");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("best validation MAE"), std::string::npos);
  std::ifstream hist(*dir_ + "/history.csv");
  std::string line;
  std::getline(hist, line);
  EXPECT_EQ(line, "iteration,train_loss,val_mae,val_mape,val_rmse");
}

TEST_F(CliPipeline, E_PredictAndEval) {
  const auto pr = run("predict --config " + *config_ + " --nodes " + *dir_ +
                      "/nodes.csv --edges " + *dir_ + "/edges.csv --paths " +
                      *dir_ + "/filtered.jsonl --traffic " + *dir_ +
                      "/traffic.csv --checkpoint " + *dir_ +
                      "/model.ckpt --out " + *dir_ + "/preds.csv");
  ASSERT_EQ(pr.exit_code, 0) << pr.output;

  const auto ev = run("eval --config " + *config_ + " --nodes " + *dir_ +
                      "/nodes.csv --edges " + *dir_ + "/edges.csv --paths " +
                      *dir_ + "/filtered.jsonl --traffic " + *dir_ +
                      "/traffic.csv --checkpoint " + *dir_ +
                      "/model.ckpt --out " + *dir_ + "/metrics.csv");
  ASSERT_EQ(ev.exit_code, 0) << ev.output;
  EXPECT_NE(ev.output.find("MAE:"), std::string::npos);
  std::ifstream metrics(*dir_ + "/metrics.csv");
  std::string line;
  std::getline(metrics, line);
  EXPECT_EQ(line, "n,mae_s,rmse_s,mape_pct");
}

TEST_F(CliPipeline, F_EvalOnPerfectPredictionsPrintsZeroMae) {
  // An oracle predictions file: the ground truth itself.
  auto records = load_paths(*dir_ + "/filtered.jsonl");
  ASSERT_FALSE(records.empty());
  const std::string preds = *dir_ + "/oracle.csv";
  {
    std::ofstream out(preds);
    out << "id,prediction_s\n";
    out.precision(17);
    for (const auto& r : records)
      out << r.id << ',' << r.total_time_s << '\n';
  }
  const auto r = run("eval --nodes " + *dir_ + "/nodes.csv --edges " + *dir_ +
                     "/edges.csv --paths " + *dir_ +
                     "/filtered.jsonl --predictions " + preds);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("MAE: 0.00 sec"), std::string::npos) << r.output;
}

TEST_F(CliPipeline, G_InspectWritesFeatureMapsAndTensors) {
  const std::string out = *dir_ + "/maps";
  std::filesystem::create_directories(out);
  const auto r = run("inspect --config " + *config_ + " --nodes " + *dir_ +
                     "/nodes.csv --edges " + *dir_ + "/edges.csv --paths " +
                     *dir_ + "/filtered.jsonl --traffic " + *dir_ +
                     "/traffic.csv --checkpoint " + *dir_ +
                     "/model.ckpt --record-index 0 --window-index 0 "
                     "--layer 1 --channels --tensors " +
                     *dir_ + "/windows.bin --out " + out);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("wrote 8 feature maps"), std::string::npos)
      << r.output;
  EXPECT_TRUE(std::filesystem::exists(*dir_ + "/windows.bin"));
  // 8 feature maps (2 branches x 4 filters) plus 4 channel dumps.
  int ppms = 0;
  for (const auto& entry : std::filesystem::directory_iterator(out))
    ppms += entry.path().extension() == ".ppm" ? 1 : 0;
  EXPECT_EQ(ppms, 12);
}

TEST_F(CliPipeline, H_ValidationErrorsExitThree) {
  const auto r = run("inspect --config " + *config_ + " --nodes " + *dir_ +
                     "/nodes.csv --edges " + *dir_ + "/edges.csv --paths " +
                     *dir_ + "/filtered.jsonl --traffic " + *dir_ +
                     "/traffic.csv --checkpoint " + *dir_ +
                     "/model.ckpt --record-index 9999 --out " + *dir_);
  EXPECT_EQ(r.exit_code, 3) << r.output;
}

}  // namespace
}  // namespace deepist
