#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deepist/common.hpp"
#include "deepist/model.hpp"
#include "deepist/raster.hpp"

namespace deepist {

/// Training-loop settings; architecture and loss settings live in the
/// dedicated config structs.
struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int max_iterations = 20000;
  std::uint64_t seed = 42;
  double split_train = 0.8;
  double split_val = 0.1;
  double split_test = 0.1;
  LossConfig loss;
  int eval_every = 200;
  unsigned threads = 0;  // 0 = hardware concurrency
  std::size_t cache_capacity = 4096;
  int tz_offset_s = 0;
};

struct SynthConfig {
  int grid = 20;
  double spacing_m = 100.0;
  int highway_every = 5;  // every Nth row/col is a highway; 0 disables
  double signal_fraction = 0.3;
  double signal_delay_s = 5.0;
  double speed_highway_mps = 16.0;
  double speed_other_mps = 8.0;
  std::array<double, 24> multipliers{};  // hourly speed multipliers
  std::uint64_t seed = 1;
  int n_paths = 5000;
  int min_edges = 12;
  int max_edges = 40;
  double origin_lng = -8.61;
  double origin_lat = 41.15;

  SynthConfig() { multipliers.fill(1.0); }
};

/// Every tunable of the pipeline as a flat key-value namespace, readable
/// from a `key = value` config file with CLI overrides on top.
struct Options {
  WindowingConfig windowing;
  RasterConfig raster;
  PathCNNConfig spatial;
  TemporalConfig temporal;
  TrainConfig train;
  SynthConfig synth;

  void set(const std::string& key, const std::string& value);
  std::string dump() const;
};

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  if (out.empty()) throw ConfigError("empty list value");
  return out;
}

inline std::array<double, 24> parse_hourly(const std::string& s) {
  std::array<double, 24> out{};
  std::stringstream ss(s);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 24) throw ConfigError("expected 24 hourly values");
    out[i++] = std::stod(item);
  }
  if (i != 24) throw ConfigError("expected 24 hourly values, got " +
                                 std::to_string(i));
  return out;
}

template <typename T>
std::string join_list(const T& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    std::ostringstream ss;
    ss << values[i];
    out += ss.str();
  }
  return out;
}

}  // namespace detail

inline void Options::set(const std::string& key, const std::string& value) {
  try {
    if (key == "window_w_km") windowing.w_km = std::stod(value);
    else if (key == "window_s_km") windowing.s_km = std::stod(value);
    else if (key == "raster_k") raster.k = std::stoi(value);
    else if (key == "raster_d") raster.d = std::stoi(value);
    else if (key == "raster_r_lng") raster.r_lng = std::stod(value);
    else if (key == "raster_r_lat") raster.r_lat = std::stod(value);
    else if (key == "highway_width_px") raster.highway_width_px = std::stoi(value);
    else if (key == "other_width_px") raster.other_width_px = std::stoi(value);
    else if (key == "pathcnn_layers") spatial.layers = std::stoi(value);
    else if (key == "pathcnn_filters") spatial.filters = detail::parse_int_list(value);
    else if (key == "pathcnn_kernel") spatial.kernel = std::stoi(value);
    else if (key == "lambda") spatial.lambda = std::stoi(value);
    else if (key == "dropout_rate") spatial.dropout_rate = std::stod(value);
    else if (key == "temporal_layers") temporal.layers = std::stoi(value);
    else if (key == "temporal_filters") temporal.filters = detail::parse_int_list(value);
    else if (key == "temporal_kernel") temporal.kernel = std::stoi(value);
    else if (key == "s_max") temporal.s_max = std::stoi(value);
    else if (key == "head_dims") temporal.head_dims = detail::parse_int_list(value);
    else if (key == "beta") train.loss.beta = std::stod(value);
    else if (key == "gamma1") train.loss.gamma1 = std::stod(value);
    else if (key == "gamma2") train.loss.gamma2 = std::stod(value);
    else if (key == "gamma3") train.loss.gamma3 = std::stod(value);
    else if (key == "learning_rate") train.learning_rate = std::stod(value);
    else if (key == "batch_size") train.batch_size = std::stoi(value);
    else if (key == "max_iterations") train.max_iterations = std::stoi(value);
    else if (key == "eval_every") train.eval_every = std::stoi(value);
    else if (key == "seed") train.seed = std::stoull(value);
    else if (key == "split_train") train.split_train = std::stod(value);
    else if (key == "split_val") train.split_val = std::stod(value);
    else if (key == "split_test") train.split_test = std::stod(value);
    else if (key == "threads") train.threads = static_cast<unsigned>(std::stoul(value));
    else if (key == "cache_capacity") train.cache_capacity = std::stoull(value);
    else if (key == "tz_offset_s") train.tz_offset_s = std::stoi(value);
    else if (key == "synth_grid") synth.grid = std::stoi(value);
    else if (key == "synth_spacing_m") synth.spacing_m = std::stod(value);
    else if (key == "synth_highway_every") synth.highway_every = std::stoi(value);
    else if (key == "synth_signal_fraction") synth.signal_fraction = std::stod(value);
    else if (key == "synth_signal_delay_s") synth.signal_delay_s = std::stod(value);
    else if (key == "synth_speed_highway_mps") synth.speed_highway_mps = std::stod(value);
    else if (key == "synth_speed_other_mps") synth.speed_other_mps = std::stod(value);
    else if (key == "synth_multipliers") synth.multipliers = detail::parse_hourly(value);
    else if (key == "synth_seed") synth.seed = std::stoull(value);
    else if (key == "synth_paths") synth.n_paths = std::stoi(value);
    else if (key == "synth_min_edges") synth.min_edges = std::stoi(value);
    else if (key == "synth_max_edges") synth.max_edges = std::stoi(value);
    else if (key == "synth_origin_lng") synth.origin_lng = std::stod(value);
    else if (key == "synth_origin_lat") synth.origin_lat = std::stod(value);
    else throw ConfigError("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value for " + key + ": " + value);
  } catch (const std::out_of_range&) {
    throw ConfigError("bad value for " + key + ": " + value);
  }
}

inline std::string Options::dump() const {
  std::ostringstream out;
  out.precision(17);
  out << "window_w_km = " << windowing.w_km << '\n'
      << "window_s_km = " << windowing.s_km << '\n'
      << "raster_k = " << raster.k << '\n'
      << "raster_d = " << raster.d << '\n'
      << "raster_r_lng = " << raster.r_lng << '\n'
      << "raster_r_lat = " << raster.r_lat << '\n'
      << "highway_width_px = " << raster.highway_width_px << '\n'
      << "other_width_px = " << raster.other_width_px << '\n'
      << "pathcnn_layers = " << spatial.layers << '\n'
      << "pathcnn_filters = " << detail::join_list(spatial.filters) << '\n'
      << "pathcnn_kernel = " << spatial.kernel << '\n'
      << "lambda = " << spatial.lambda << '\n'
      << "dropout_rate = " << spatial.dropout_rate << '\n'
      << "temporal_layers = " << temporal.layers << '\n'
      << "temporal_filters = " << detail::join_list(temporal.filters) << '\n'
      << "temporal_kernel = " << temporal.kernel << '\n'
      << "s_max = " << temporal.s_max << '\n'
      << "head_dims = " << detail::join_list(temporal.head_dims) << '\n'
      << "beta = " << train.loss.beta << '\n'
      << "gamma1 = " << train.loss.gamma1 << '\n'
      << "gamma2 = " << train.loss.gamma2 << '\n'
      << "gamma3 = " << train.loss.gamma3 << '\n'
      << "learning_rate = " << train.learning_rate << '\n'
      << "batch_size = " << train.batch_size << '\n'
      << "max_iterations = " << train.max_iterations << '\n'
      << "eval_every = " << train.eval_every << '\n'
      << "seed = " << train.seed << '\n'
      << "split_train = " << train.split_train << '\n'
      << "split_val = " << train.split_val << '\n'
      << "split_test = " << train.split_test << '\n'
      << "threads = " << train.threads << '\n'
      << "cache_capacity = " << train.cache_capacity << '\n'
      << "tz_offset_s = " << train.tz_offset_s << '\n'
      << "synth_grid = " << synth.grid << '\n'
      << "synth_spacing_m = " << synth.spacing_m << '\n'
      << "synth_highway_every = " << synth.highway_every << '\n'
      << "synth_signal_fraction = " << synth.signal_fraction << '\n'
      << "synth_signal_delay_s = " << synth.signal_delay_s << '\n'
      << "synth_speed_highway_mps = " << synth.speed_highway_mps << '\n'
      << "synth_speed_other_mps = " << synth.speed_other_mps << '\n'
      << "synth_multipliers = " << detail::join_list(synth.multipliers) << '\n'
      << "synth_seed = " << synth.seed << '\n'
      << "synth_paths = " << synth.n_paths << '\n'
      << "synth_min_edges = " << synth.min_edges << '\n'
      << "synth_max_edges = " << synth.max_edges << '\n'
      << "synth_origin_lng = " << synth.origin_lng << '\n'
      << "synth_origin_lat = " << synth.origin_lat << '\n';
  return out.str();
}

/// Parses a `key = value` file; '#' starts a comment. Unknown keys are
/// rejected.
inline void load_config_file(Options& opts, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (strip(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key = value");
    opts.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
}

/// Applies `key=value` override strings (CLI precedence over file).
inline void apply_overrides(Options& opts,
                            const std::vector<std::string>& overrides) {
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value: " + kv);
    opts.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

inline void save_config_file(const Options& opts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path);
  out << opts.dump();
}

}  // namespace deepist
