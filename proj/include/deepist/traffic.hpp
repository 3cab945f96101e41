#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepist/common.hpp"
#include "deepist/geo.hpp"

namespace deepist {

/// Hourly per-edge mean speeds with a fallback chain for unseen keys:
/// (edge, hour) -> edge all-hours mean -> road-type mean -> dataset mean.
/// Fallback levels are derived from the hourly cells, so a table rebuilt
/// from its CSV serialization behaves identically.
struct TrafficTable {
  std::unordered_map<std::int64_t, double> hourly_mean;  // key edge*24+hour
  std::unordered_map<std::int64_t, double> edge_mean;
  double type_mean[2] = {0.0, 0.0};  // indexed by RoadType
  double dataset_mean = 0.0;
  double global_max_speed = 0.0;

  static std::int64_t key(std::int64_t edge_id, int hour) {
    return edge_id * 24 + hour;
  }

  /// Speed in m/s for (edge, hour), following the fallback chain.
  double speed(const RoadNetwork& net, std::int64_t edge_id, int hour) const {
    auto it = hourly_mean.find(key(edge_id, hour));
    if (it != hourly_mean.end()) return it->second;
    auto eit = edge_mean.find(edge_id);
    if (eit != edge_mean.end()) return eit->second;
    const double tm =
        type_mean[static_cast<int>(net.edge(edge_id).road_type)];
    if (tm > 0.0) return tm;
    return dataset_mean;
  }

  /// speed / global_max_speed, in (0, 1].
  double normalized_speed(const RoadNetwork& net, std::int64_t edge_id,
                          int hour) const {
    return speed(net, edge_id, hour) / global_max_speed;
  }

  /// Recomputes the fallback levels and the dataset maximum from the
  /// hourly cells.
  void finalize(const RoadNetwork& net) {
    edge_mean.clear();
    std::unordered_map<std::int64_t, int> edge_count;
    global_max_speed = 0.0;
    for (const auto& [k, v] : hourly_mean) {
      const std::int64_t eid = k >= 0 ? k / 24 : (k - 23) / 24;
      edge_mean[eid] += v;
      edge_count[eid] += 1;
      global_max_speed = std::max(global_max_speed, v);
    }
    double type_sum[2] = {0.0, 0.0};
    int type_count[2] = {0, 0};
    double all_sum = 0.0;
    int all_count = 0;
    for (auto& [eid, sum] : edge_mean) {
      sum /= edge_count[eid];
      const int t = static_cast<int>(net.edge(eid).road_type);
      type_sum[t] += sum;
      type_count[t] += 1;
      all_sum += sum;
      all_count += 1;
    }
    for (int t = 0; t < 2; ++t)
      type_mean[t] = type_count[t] > 0 ? type_sum[t] / type_count[t] : 0.0;
    dataset_mean = all_count > 0 ? all_sum / all_count : 0.0;
  }
};

/// Hour of day in the dataset's local timezone.
inline int hour_of_day(double epoch_s, int tz_offset_s) {
  double local = epoch_s + tz_offset_s;
  double day = std::fmod(local, 86400.0);
  if (day < 0.0) day += 86400.0;
  return static_cast<int>(day / 3600.0) % 24;
}

/// Per-(edge, hour) mean of edge traversal speeds derived from anchor
/// interpolation. Hours key by edge-entry local time.
inline TrafficTable build_traffic_table(const std::vector<PathRecord>& records,
                                        const RoadNetwork& net,
                                        int tz_offset_s = 0) {
  if (records.empty())
    throw ValidationError("cannot build a traffic table from no records");
  std::unordered_map<std::int64_t, double> sum;
  std::unordered_map<std::int64_t, int> count;
  for (const PathRecord& r : records) {
    double walked = 0.0;
    for (const CoveredEdge& ce : r.path) {
      const Edge& e = net.edge(ce.edge_id);
      const double covered = e.length_m * (ce.f1 - ce.f0);
      const double t0 = time_at_distance(r, walked);
      const double t1 = time_at_distance(r, walked + covered);
      if (t1 > t0 && covered > 0.0) {
        const int hour = hour_of_day(r.departure_time_s + t0, tz_offset_s);
        const std::int64_t k = TrafficTable::key(ce.edge_id, hour);
        sum[k] += covered / (t1 - t0);
        count[k] += 1;
      }
      walked += covered;
    }
  }
  TrafficTable table;
  for (const auto& [k, s] : sum) table.hourly_mean[k] = s / count[k];
  if (table.hourly_mean.empty())
    throw ValidationError("no usable traversals in the input records");
  table.finalize(net);
  return table;
}

/// CSV serialization: a metadata line carrying the dataset maximum, a header
/// row, then edge_id,hour,mean_speed_mps rows.
inline void save_traffic_table(const TrafficTable& table,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "# global_max_speed=%.17g\n",
                table.global_max_speed);
  out << buf;
  out << "edge_id,hour,mean_speed_mps\n";
  std::map<std::int64_t, double> sorted(table.hourly_mean.begin(),
                                        table.hourly_mean.end());
  for (const auto& [k, v] : sorted) {
    const std::int64_t eid = k >= 0 ? k / 24 : (k - 23) / 24;
    const int hour = static_cast<int>(k - eid * 24);
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g\n",
                  static_cast<long long>(eid), hour, v);
    out << buf;
  }
}

inline TrafficTable load_traffic_table(const std::string& path,
                                       const RoadNetwork& net) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# global_max_speed=", 0) != 0)
    throw IoError(path + ": missing metadata line");
  const double stored_max = std::stod(line.substr(19));
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  TrafficTable table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    long long eid;
    int hour;
    double v;
    if (std::sscanf(line.c_str(), "%lld,%d,%lf", &eid, &hour, &v) != 3)
      throw IoError(path + ": bad row: " + line);
    table.hourly_mean[TrafficTable::key(eid, hour)] = v;
  }
  table.finalize(net);
  table.global_max_speed = stored_max;
  return table;
}

}  // namespace deepist
