#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <list>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "deepist/checkpoint.hpp"
#include "deepist/common.hpp"
#include "deepist/config.hpp"
#include "deepist/geo.hpp"
#include "deepist/model.hpp"
#include "deepist/raster.hpp"
#include "deepist/traffic.hpp"

namespace deepist {

/// Seed-deterministic disjoint exhaustive split.
inline std::tuple<std::vector<PathRecord>, std::vector<PathRecord>,
                  std::vector<PathRecord>>
split_dataset(const std::vector<PathRecord>& records, double f_train,
              double f_val, double f_test, std::uint64_t seed) {
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x73706c6974ULL));
  rng.shuffle(order);
  const std::size_t n = records.size();
  const std::size_t n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * f_train));
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * f_val));
  std::vector<PathRecord> train, val, test;
  for (std::size_t i = 0; i < n; ++i) {
    const PathRecord& r = records[order[i]];
    if (i < n_train)
      train.push_back(r);
    else if (i < n_train + n_val)
      val.push_back(r);
    else
      test.push_back(r);
  }
  return {std::move(train), std::move(val), std::move(test)};
}

/// Thread-safe LRU cache of rendered window images keyed by
/// (record id, window index).
class RasterCache {
public:
  explicit RasterCache(std::size_t capacity) : capacity_(capacity) {}

  template <typename RenderFn>
  GeneralizedImage get_or_render(std::int64_t record_id, std::size_t window,
                                 RenderFn&& render) {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(record_id) << 20) ^
        static_cast<std::uint64_t>(window);
    if (capacity_ == 0) return render();
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = index_.find(key);
      if (it != index_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        ++hits_;
        return it->second->second;
      }
    }
    GeneralizedImage img = render();
    std::lock_guard<std::mutex> lock(mutex_);
    if (index_.find(key) == index_.end()) {
      lru_.emplace_front(key, img);
      index_[key] = lru_.begin();
      while (lru_.size() > capacity_) {
        index_.erase(lru_.back().first);
        lru_.pop_back();
      }
    }
    ++misses_;
    return img;
  }

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

private:
  std::size_t capacity_;
  std::list<std::pair<std::uint64_t, GeneralizedImage>> lru_;
  std::unordered_map<std::uint64_t,
                     decltype(lru_)::iterator>
      index_;
  std::mutex mutex_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct MetricsReport {
  double rmse_s = 0.0;
  double mae_s = 0.0;
  double mape_pct = 0.0;
  std::size_t n_examples = 0;
};

namespace detail {

/// Sorted-term accumulation makes the reduction independent of input order.
inline double sorted_mean(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double v : terms) sum += v;
  return terms.empty() ? 0.0 : sum / static_cast<double>(terms.size());
}

}  // namespace detail

/// RMSE / MAE / MAPE between predictions and ground-truth seconds.
inline MetricsReport evaluate_predictions(const std::vector<double>& preds,
                                          const std::vector<double>& truths) {
  if (preds.size() != truths.size() || preds.empty())
    throw ValidationError("evaluate: size mismatch or empty input");
  std::vector<double> abs_err(preds.size()), sq_err(preds.size()),
      rel_err(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double err = preds[i] - truths[i];
    abs_err[i] = std::abs(err);
    sq_err[i] = err * err;
    if (!(truths[i] > 0.0))
      throw ValidationError("evaluate: non-positive ground truth");
    rel_err[i] = std::abs(err) / truths[i];
  }
  MetricsReport report;
  report.n_examples = preds.size();
  report.mae_s = detail::sorted_mean(std::move(abs_err));
  report.rmse_s = std::sqrt(detail::sorted_mean(std::move(sq_err)));
  report.mape_pct = 100.0 * detail::sorted_mean(std::move(rel_err));
  return report;
}

/// Inference predictions for a set of records, chunk-parallel.
inline std::vector<double> predict(
    const ModelState& model, const std::vector<PathRecord>& records,
    const RoadNetwork& net, const TrafficTable& traffic,
    const WindowingConfig& windowing, const RasterConfig& raster,
    int tz_offset_s, unsigned threads = 1, RasterCache* cache = nullptr) {
  std::vector<double> preds(records.size());
  parallel_chunks(records.size(), threads == 0 ? 1 : threads,
                  [&](std::size_t, std::size_t begin, std::size_t end) {
                    for (std::size_t i = begin; i < end; ++i) {
                      const PathRecord& r = records[i];
                      const int hour =
                          hour_of_day(r.departure_time_s, tz_offset_s);
                      WindowImageFn image_fn =
                          [&](const SubPathWindow& win, std::size_t wi) {
                            if (!cache)
                              return rasterize(win, r, net, traffic, raster,
                                               hour);
                            return cache->get_or_render(r.id, wi, [&] {
                              return rasterize(win, r, net, traffic, raster,
                                               hour);
                            });
                          };
                      preds[i] = full_forward(r, net, traffic, windowing,
                                              raster, model, false, 0,
                                              tz_offset_s, nullptr, &image_fn)
                                     .path_estimate;
                    }
                  });
  return preds;
}

inline MetricsReport evaluate(const ModelState& model,
                              const std::vector<PathRecord>& records,
                              const RoadNetwork& net,
                              const TrafficTable& traffic,
                              const WindowingConfig& windowing,
                              const RasterConfig& raster, int tz_offset_s,
                              unsigned threads = 1,
                              RasterCache* cache = nullptr) {
  const std::vector<double> preds = predict(model, records, net, traffic,
                                            windowing, raster, tz_offset_s,
                                            threads, cache);
  std::vector<double> truths(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    truths[i] = records[i].total_time_s;
  return evaluate_predictions(preds, truths);
}

struct TrainHistoryRow {
  int iteration = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_mape = 0.0;
  double val_rmse = 0.0;
};

struct TrainResult {
  ModelState model;
  std::vector<TrainHistoryRow> history;
  double best_val_mae = 0.0;
  int best_iteration = 0;
};

inline void save_history_csv(const std::vector<TrainHistoryRow>& rows,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iteration,train_loss,val_mae,val_mape,val_rmse\n";
  for (const auto& r : rows)
    out << r.iteration << ',' << r.train_loss << ',' << r.val_mae << ','
        << r.val_mape << ',' << r.val_rmse << '\n';
}

/// Minibatch Adam on the multi-task loss. Retains the parameters with the
/// best validation MAE. Aborts with DivergenceError when the loss stops
/// being finite.
inline TrainResult train(const std::vector<PathRecord>& train_set,
                         const std::vector<PathRecord>& val_set,
                         const RoadNetwork& net, const TrafficTable& traffic,
                         const WindowingConfig& windowing,
                         const RasterConfig& raster,
                         const PathCNNConfig& spatial,
                         const TemporalConfig& temporal,
                         const TrainConfig& cfg) {
  if (train_set.empty() || val_set.empty())
    throw ValidationError("train: empty train or validation set");
  TrainResult result;
  result.model =
      make_model(raster.k, raster.d, spatial, temporal, cfg.seed);
  ModelState& model = result.model;
  auto params = model.parameters();

  unsigned threads = cfg.threads;
  if (threads == 0)
    threads = std::max(1u, std::thread::hardware_concurrency());

  // Window spans and per-window ground truths are geometry only; fix them
  // up front. Sub-path estimates train only on windows surviving S_max
  // truncation with at least 1 s of ground truth.
  struct Sample {
    const PathRecord* record = nullptr;
    std::vector<double> truths;   // per non-padding window
    std::vector<bool> counted;
  };
  std::vector<Sample> samples(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    Sample& s = samples[i];
    s.record = &train_set[i];
    const auto windows = slide_windows(*s.record, net, windowing);
    const std::size_t n_rows = std::min<std::size_t>(
        windows.size(), static_cast<std::size_t>(temporal.s_max));
    s.truths.resize(n_rows);
    s.counted.resize(n_rows);
    for (std::size_t w = 0; w < n_rows; ++w) {
      s.truths[w] = subpath_ground_truth(*s.record, windows[w].start_m,
                                         windows[w].end_m);
      s.counted[w] = s.truths[w] >= 1.0;
    }
  }

  RasterCache cache(cfg.cache_capacity);
  AdamConfig adam;
  adam.lr = cfg.learning_rate;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger shuffle on first batch
  std::uint64_t epoch = 0;

  const auto run_validation = [&](int iteration, double loss_value) {
    const MetricsReport m =
        evaluate(model, val_set, net, traffic, windowing, raster,
                 cfg.tz_offset_s, threads, &cache);
    result.history.push_back(
        {iteration, loss_value, m.mae_s, m.mape_pct, m.rmse_s});
    return m.mae_s;
  };

  std::vector<Tensor> best_values;
  double best_mae = std::numeric_limits<double>::infinity();
  int best_iteration = 0;
  const auto snapshot_if_better = [&](double mae, int iteration) {
    if (mae < best_mae) {
      best_mae = mae;
      best_iteration = iteration;
      best_values.clear();
      for (const Parameter* p : params) best_values.push_back(p->value);
    }
  };

  for (int iteration = 1; iteration <= cfg.max_iterations; ++iteration) {
    // Assemble the batch from the epoch permutation.
    std::vector<std::size_t> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        Rng rng(mix_seed(cfg.seed, 0x65706f6368ULL, epoch++));
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    std::size_t n_sub = 0;
    for (std::size_t idx : batch) {
      const Sample& s = samples[idx];
      for (bool c : s.counted) n_sub += c ? 1 : 0;
    }

    for (Parameter* p : params) p->zero_grad();
    std::vector<GradSink> sinks;
    const unsigned n_chunks =
        static_cast<unsigned>(std::min<std::size_t>(threads, batch.size()));
    sinks.reserve(n_chunks);
    for (unsigned t = 0; t < n_chunks; ++t) sinks.emplace_back(params);
    std::vector<double> path_terms(batch.size());
    std::vector<double> sub_terms(batch.size(), 0.0);

    parallel_chunks(
        batch.size(), n_chunks,
        [&](std::size_t chunk, std::size_t begin, std::size_t end) {
          for (std::size_t bi = begin; bi < end; ++bi) {
            const Sample& s = samples[batch[bi]];
            const PathRecord& r = *s.record;
            const int hour = hour_of_day(r.departure_time_s, cfg.tz_offset_s);
            WindowImageFn image_fn = [&](const SubPathWindow& win,
                                         std::size_t wi) {
              return cache.get_or_render(r.id, wi, [&] {
                return rasterize(win, r, net, traffic, raster, hour);
              });
            };
            FullCache fc;
            const auto out = full_forward(
                r, net, traffic, windowing, raster, model, true,
                mix_seed(cfg.seed, 0x64726f70ULL,
                         static_cast<std::uint64_t>(iteration),
                         static_cast<std::uint64_t>(r.id)),
                cfg.tz_offset_s, &fc, &image_fn);
            const double truth = r.total_time_s;
            path_terms[bi] = std::abs(out.path_estimate - truth) / truth;
            const double g_path =
                cfg.loss.beta * (out.path_estimate > truth ? 1.0 : -1.0) /
                truth / static_cast<double>(batch.size());
            std::vector<double> g_windows(out.window_estimates.size(), 0.0);
            for (std::size_t w = 0; w < g_windows.size(); ++w) {
              if (!s.counted[w]) continue;
              sub_terms[bi] +=
                  std::abs(out.window_estimates[w] - s.truths[w]) /
                  s.truths[w];
              if (n_sub > 0)
                g_windows[w] =
                    (1.0 - cfg.loss.beta) *
                    (out.window_estimates[w] > s.truths[w] ? 1.0 : -1.0) /
                    s.truths[w] / static_cast<double>(n_sub);
            }
            full_backward(model, fc, g_path, g_windows, sinks[chunk]);
          }
        });
    for (auto& sink : sinks) sink.reduce_into(params);

    GradSink direct;
    line_penalties_backward(model, cfg.loss.gamma1, cfg.loss.gamma2,
                            cfg.loss.gamma3, direct);
    const Penalties pen = line_penalties(model);
    double path_sum = 0.0, sub_sum = 0.0;
    for (double v : path_terms) path_sum += v;
    for (double v : sub_terms) sub_sum += v;
    const double loss_value =
        cfg.loss.beta * path_sum / static_cast<double>(batch.size()) +
        (1.0 - cfg.loss.beta) *
            (n_sub > 0 ? sub_sum / static_cast<double>(n_sub) : 0.0) +
        cfg.loss.gamma1 * pen.center + cfg.loss.gamma2 * pen.diversity +
        cfg.loss.gamma3 * pen.l2;
    if (!std::isfinite(loss_value))
      throw DivergenceError("training loss is not finite at iteration " +
                            std::to_string(iteration));

    adam_step(params, adam, ++model.adam_t);

    if (iteration % cfg.eval_every == 0 ||
        iteration == cfg.max_iterations) {
      const double mae = run_validation(iteration, loss_value);
      snapshot_if_better(mae, iteration);
    }
  }

  if (!best_values.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value = best_values[i];
  }
  result.best_val_mae = best_mae;
  result.best_iteration = best_iteration;
  return result;
}

/// Post-ReLU pre-pool activation grids of one max+avg layer's two branches,
/// written as pixmaps normalized per map to [0, 255]. Returns the file
/// names written.
inline std::vector<std::string> export_feature_maps(
    const ModelState& model, const Tensor& image, int layer_index,
    const std::string& dir, const std::string& prefix) {
  if (layer_index < 1 ||
      layer_index > static_cast<int>(model.spatial_layers.size()))
    throw ValidationError("export_feature_maps: bad layer index");
  Tensor x = image;
  for (int l = 0; l + 1 < layer_index; ++l)
    x = maxavg_forward(x, model.spatial_layers[static_cast<std::size_t>(l)]);
  const MaxAvgParams& lp =
      model.spatial_layers[static_cast<std::size_t>(layer_index - 1)];
  std::vector<std::string> files;
  const char* branch_names[2] = {"max", "avg"};
  const ConvParams* branches[2] = {&lp.max_branch, &lp.avg_branch};
  for (int b = 0; b < 2; ++b) {
    Tensor act = conv2d_same(x, branches[b]->w.value, branches[b]->b.value);
    relu_inplace(act);
    const std::size_t h = act.dim(0), w = act.dim(1), c = act.dim(2);
    for (std::size_t fi = 0; fi < c; ++fi) {
      double lo = act.at3(0, 0, fi), hi = lo;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          lo = std::min(lo, act.at3(i, j, fi));
          hi = std::max(hi, act.at3(i, j, fi));
        }
      }
      const double range = hi > lo ? hi - lo : 1.0;
      const std::string name = dir + "/" + prefix + "_l" +
                               std::to_string(layer_index) + "_" +
                               branch_names[b] + "_f" + std::to_string(fi) +
                               ".ppm";
      std::ofstream out(name, std::ios::binary);
      if (!out) throw IoError("cannot write " + name);
      out << "P6\n" << w << ' ' << h << "\n255\n";
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double v = (act.at3(i, j, fi) - lo) / range;
          const unsigned char g =
              static_cast<unsigned char>(v * 255.0 + 0.5);
          const unsigned char px[3] = {g, g, g};
          out.write(reinterpret_cast<const char*>(px), 3);
        }
      }
      files.push_back(name);
    }
  }
  return files;
}

}  // namespace deepist
