// Command-line pipeline: synthetic data generation, dataset preparation,
// traffic tables, training, evaluation, prediction and inspection.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepist/checkpoint.hpp"
#include "deepist/config.hpp"
#include "deepist/io.hpp"
#include "deepist/model.hpp"
#include "deepist/raster.hpp"
#include "deepist/synth.hpp"
#include "deepist/traffic.hpp"
#include "deepist/train.hpp"

namespace {

using namespace deepist;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = -1;
};

Options resolve_options(const CommonArgs& args) {
  Options opts;
  if (!args.config_path.empty()) load_config_file(opts, args.config_path);
  apply_overrides(opts, args.overrides);
  if (args.threads >= 0)
    opts.train.threads = static_cast<unsigned>(args.threads);
  return opts;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--set", args.overrides,
                  "config override key=value (repeatable)");
  cmd->add_option("--threads", args.threads,
                  "worker threads (default: available cores)");
}

std::vector<PathRecord> load_valid_paths(const std::string& path,
                                         const RoadNetwork& net) {
  auto records = load_paths(path);
  for (const auto& r : records) validate_record(r, net);
  return records;
}

ModelState load_model(const Options& opts, const std::string& ckpt) {
  ModelState model = make_model(opts.raster.k, opts.raster.d, opts.spatial,
                                opts.temporal, opts.train.seed);
  auto params = model.parameters();
  model.adam_t = load_checkpoint(ckpt, params);
  return model;
}

std::vector<PathRecord> select_split(std::vector<PathRecord> records,
                                     const std::string& split,
                                     const TrainConfig& cfg) {
  if (split == "all") return records;
  auto [train_set, val_set, test_set] =
      split_dataset(records, cfg.split_train, cfg.split_val, cfg.split_test,
                    cfg.seed);
  if (split == "train") return train_set;
  if (split == "val") return val_set;
  if (split == "test") return test_set;
  throw ConfigError("unknown split: " + split);
}

int cmd_synth(const CommonArgs& common, const std::string& out_dir) {
  const Options opts = resolve_options(common);
  RoadNetwork net = generate_network(opts.synth);
  auto records = generate_paths(net, opts.synth);
  save_network(net, out_dir + "/nodes.csv", out_dir + "/edges.csv");
  save_paths(records, out_dir + "/paths.jsonl");
  std::printf("network: %zu nodes, %zu edges\n", net.nodes.size(),
              net.edges.size());
  std::printf("paths: %zu -> %s/paths.jsonl\n", records.size(),
              out_dir.c_str());
  return 0;
}

int cmd_prepare(const CommonArgs& common, const std::string& nodes,
                const std::string& edges, const std::string& paths_in,
                const std::string& paths_out) {
  const Options opts = resolve_options(common);
  (void)opts;
  RoadNetwork net = load_network(nodes, edges);
  auto records = load_valid_paths(paths_in, net);
  auto kept = filter_dataset(records, net);
  if (kept.empty())
    std::fprintf(stderr, "warning: no records survived filtering\n");
  save_paths(kept, paths_out);
  double dist_sum = 0.0, time_sum = 0.0;
  for (const auto& r : kept) {
    dist_sum += path_length(r, net);
    time_sum += r.total_time_s;
  }
  const double n = kept.empty() ? 1.0 : static_cast<double>(kept.size());
  std::printf("# of paths: %zu\n", kept.size());
  std::printf("moving distance mean: %.3f km\n", dist_sum / n / 1000.0);
  std::printf("travel time mean: %.3f sec\n", time_sum / n);
  return 0;
}

int cmd_traffic(const CommonArgs& common, const std::string& nodes,
                const std::string& edges, const std::string& paths,
                const std::string& out) {
  const Options opts = resolve_options(common);
  RoadNetwork net = load_network(nodes, edges);
  auto records = load_valid_paths(paths, net);
  auto table = build_traffic_table(records, net, opts.train.tz_offset_s);
  save_traffic_table(table, out);
  std::printf("traffic table: %zu (edge,hour) cells, max speed %.3f m/s\n",
              table.hourly_mean.size(), table.global_max_speed);
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& nodes,
              const std::string& edges, const std::string& paths,
              const std::string& traffic_csv, const std::string& ckpt_out,
              const std::string& history_out) {
  const Options opts = resolve_options(common);
  RoadNetwork net = load_network(nodes, edges);
  auto records = load_valid_paths(paths, net);
  auto table = load_traffic_table(traffic_csv, net);
  auto [train_set, val_set, test_set] =
      split_dataset(records, opts.train.split_train, opts.train.split_val,
                    opts.train.split_test, opts.train.seed);
  std::printf("split: %zu train / %zu val / %zu test\n", train_set.size(),
              val_set.size(), test_set.size());
  TrainResult result =
      train(train_set, val_set, net, table, opts.windowing, opts.raster,
            opts.spatial, opts.temporal, opts.train);
  auto params = result.model.parameters();
  save_checkpoint(ckpt_out, params, result.model.adam_t);
  if (!history_out.empty()) save_history_csv(result.history, history_out);
  std::printf("best validation MAE %.3f s at iteration %d\n",
              result.best_val_mae, result.best_iteration);
  std::printf("checkpoint: %s\n", ckpt_out.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& nodes,
             const std::string& edges, const std::string& paths,
             const std::string& traffic_csv, const std::string& ckpt,
             const std::string& predictions_csv, const std::string& split,
             const std::string& metrics_out) {
  const Options opts = resolve_options(common);
  RoadNetwork net = load_network(nodes, edges);
  auto records =
      select_split(load_valid_paths(paths, net), split, opts.train);
  MetricsReport report;
  if (!predictions_csv.empty()) {
    std::ifstream in(predictions_csv);
    if (!in) throw IoError("cannot open " + predictions_csv);
    std::string line;
    std::getline(in, line);  // header
    std::map<std::int64_t, double> by_id;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      long long id;
      double pred;
      if (std::sscanf(line.c_str(), "%lld,%lf", &id, &pred) != 2)
        throw IoError(predictions_csv + ": bad row: " + line);
      by_id[id] = pred;
    }
    std::vector<double> preds, truths;
    for (const auto& r : records) {
      auto it = by_id.find(r.id);
      if (it == by_id.end())
        throw ValidationError("no prediction for record " +
                              std::to_string(r.id));
      preds.push_back(it->second);
      truths.push_back(r.total_time_s);
    }
    report = evaluate_predictions(preds, truths);
  } else {
    auto table = load_traffic_table(traffic_csv, net);
    ModelState model = load_model(opts, ckpt);
    const unsigned threads =
        opts.train.threads == 0
            ? std::max(1u, std::thread::hardware_concurrency())
            : opts.train.threads;
    report = evaluate(model, records, net, table, opts.windowing, opts.raster,
                      opts.train.tz_offset_s, threads);
  }
  std::printf("n: %zu\n", report.n_examples);
  std::printf("MAE: %.2f sec\n", report.mae_s);
  std::printf("RMSE: %.2f sec\n", report.rmse_s);
  std::printf("MAPE: %.2f %%\n", report.mape_pct);
  if (!metrics_out.empty()) {
    std::ofstream out(metrics_out);
    if (!out) throw IoError("cannot write " + metrics_out);
    out << "n,mae_s,rmse_s,mape_pct\n"
        << report.n_examples << ',' << report.mae_s << ',' << report.rmse_s
        << ',' << report.mape_pct << '\n';
  }
  return 0;
}

int cmd_predict(const CommonArgs& common, const std::string& nodes,
                const std::string& edges, const std::string& paths,
                const std::string& traffic_csv, const std::string& ckpt,
                const std::string& out) {
  const Options opts = resolve_options(common);
  RoadNetwork net = load_network(nodes, edges);
  auto records = load_valid_paths(paths, net);
  auto table = load_traffic_table(traffic_csv, net);
  ModelState model = load_model(opts, ckpt);
  const unsigned threads =
      opts.train.threads == 0
          ? std::max(1u, std::thread::hardware_concurrency())
          : opts.train.threads;
  auto preds = predict(model, records, net, table, opts.windowing,
                       opts.raster, opts.train.tz_offset_s, threads);
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out);
  f << "id,prediction_s\n";
  f.precision(17);
  for (std::size_t i = 0; i < records.size(); ++i)
    f << records[i].id << ',' << preds[i] << '\n';
  std::printf("%zu predictions -> %s\n", preds.size(), out.c_str());
  return 0;
}

int cmd_inspect(const CommonArgs& common, const std::string& nodes,
                const std::string& edges, const std::string& paths,
                const std::string& traffic_csv, const std::string& ckpt,
                std::size_t record_index, std::size_t window_index, int layer,
                const std::string& out_dir, const std::string& tensors_out,
                bool dump_channels) {
  const Options opts = resolve_options(common);
  RoadNetwork net = load_network(nodes, edges);
  auto records = load_valid_paths(paths, net);
  if (record_index >= records.size())
    throw ValidationError("record index out of range");
  auto table = load_traffic_table(traffic_csv, net);
  const PathRecord& record = records[record_index];
  const int hour = hour_of_day(record.departure_time_s,
                               opts.train.tz_offset_s);
  auto windows = slide_windows(record, net, opts.windowing);
  if (window_index >= windows.size())
    throw ValidationError("window index out of range");
  std::vector<GeneralizedImage> images;
  for (const auto& win : windows)
    images.push_back(rasterize(win, record, net, table, opts.raster, hour));
  if (!tensors_out.empty()) save_tensor_batch(images, tensors_out);
  if (dump_channels)
    dump_window_ppms(images[window_index], record.id,
                     static_cast<int>(window_index), out_dir);
  ModelState model = load_model(opts, ckpt);
  auto files = export_feature_maps(
      model, images[window_index].data, layer, out_dir,
      "record" + std::to_string(record.id) + "_w" +
          std::to_string(window_index));
  std::printf("wrote %zu feature maps to %s\n", files.size(),
              out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepIST travel time estimation pipeline"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string out_dir = ".";
  std::string nodes, edges, paths, traffic_csv, paths_out, ckpt, history;
  std::string predictions_csv, split = "all", metrics_out, tensors_out;
  std::size_t record_index = 0, window_index = 0;
  int layer = 1;
  bool dump_channels = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic city");
  add_common(synth, common);
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* prepare =
      app.add_subcommand("prepare", "filter a dataset and print stats");
  add_common(prepare, common);
  prepare->add_option("--nodes", nodes)->required();
  prepare->add_option("--edges", edges)->required();
  prepare->add_option("--paths", paths)->required();
  prepare->add_option("--out", paths_out)->required();

  auto* traffic =
      app.add_subcommand("traffic", "build the hourly speed table");
  add_common(traffic, common);
  traffic->add_option("--nodes", nodes)->required();
  traffic->add_option("--edges", edges)->required();
  traffic->add_option("--paths", paths)->required();
  traffic->add_option("--out", paths_out)->required();

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, common);
  train_cmd->add_option("--nodes", nodes)->required();
  train_cmd->add_option("--edges", edges)->required();
  train_cmd->add_option("--paths", paths)->required();
  train_cmd->add_option("--traffic", traffic_csv)->required();
  train_cmd->add_option("--checkpoint", ckpt)->required();
  train_cmd->add_option("--history", history, "training history CSV");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model or a "
                                              "predictions file");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--nodes", nodes)->required();
  eval_cmd->add_option("--edges", edges)->required();
  eval_cmd->add_option("--paths", paths)->required();
  eval_cmd->add_option("--traffic", traffic_csv);
  eval_cmd->add_option("--checkpoint", ckpt);
  eval_cmd->add_option("--predictions", predictions_csv,
                       "score an id,prediction_s CSV instead of a model");
  eval_cmd->add_option("--split", split, "all|train|val|test");
  eval_cmd->add_option("--out", metrics_out, "metrics CSV");

  auto* predict_cmd = app.add_subcommand("predict", "write per-record "
                                                    "estimates");
  add_common(predict_cmd, common);
  predict_cmd->add_option("--nodes", nodes)->required();
  predict_cmd->add_option("--edges", edges)->required();
  predict_cmd->add_option("--paths", paths)->required();
  predict_cmd->add_option("--traffic", traffic_csv)->required();
  predict_cmd->add_option("--checkpoint", ckpt)->required();
  predict_cmd->add_option("--out", paths_out)->required();

  auto* inspect =
      app.add_subcommand("inspect", "export feature maps and channel dumps");
  add_common(inspect, common);
  inspect->add_option("--nodes", nodes)->required();
  inspect->add_option("--edges", edges)->required();
  inspect->add_option("--paths", paths)->required();
  inspect->add_option("--traffic", traffic_csv)->required();
  inspect->add_option("--checkpoint", ckpt)->required();
  inspect->add_option("--record-index", record_index);
  inspect->add_option("--window-index", window_index);
  inspect->add_option("--layer", layer, "max+avg layer index (1-based)");
  inspect->add_option("--out", out_dir)->required();
  inspect->add_option("--tensors", tensors_out,
                      "also dump the window tensor batch file");
  inspect->add_flag("--channels", dump_channels,
                    "also dump per-channel pixmaps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(common, out_dir);
    if (prepare->parsed())
      return cmd_prepare(common, nodes, edges, paths, paths_out);
    if (traffic->parsed())
      return cmd_traffic(common, nodes, edges, paths, paths_out);
    if (train_cmd->parsed())
      return cmd_train(common, nodes, edges, paths, traffic_csv, ckpt,
                       history);
    if (eval_cmd->parsed()) {
      if (predictions_csv.empty() && (traffic_csv.empty() || ckpt.empty()))
        throw ConfigError(
            "eval needs either --predictions or --traffic and --checkpoint");
      return cmd_eval(common, nodes, edges, paths, traffic_csv, ckpt,
                      predictions_csv, split, metrics_out);
    }
    if (predict_cmd->parsed())
      return cmd_predict(common, nodes, edges, paths, traffic_csv, ckpt,
                         paths_out);
    if (inspect->parsed())
      return cmd_inspect(common, nodes, edges, paths, traffic_csv, ckpt,
                         record_index, window_index, layer, out_dir,
                         tensors_out, dump_channels);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 1;
}
