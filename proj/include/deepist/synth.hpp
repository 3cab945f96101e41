#pragma once

#include <algorithm>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "deepist/common.hpp"
#include "deepist/config.hpp"
#include "deepist/geo.hpp"
#include "deepist/traffic.hpp"

namespace deepist {

/// g x g lattice with `spacing_m` node spacing. Every Nth row/column is a
/// highway; a seeded fraction of nodes carries a signal type. Node ids are
/// row * g + col; edges come in both directions.
inline RoadNetwork generate_network(const SynthConfig& cfg) {
  if (cfg.grid < 2) throw ValidationError("synth grid must be >= 2");
  RoadNetwork net;
  Rng rng(mix_seed(cfg.seed, 0x6e6574ULL));
  const double dlat = cfg.spacing_m / (kEarthRadiusM * kDegToRad);
  const double dlng =
      cfg.spacing_m /
      (kEarthRadiusM * kDegToRad * std::cos(cfg.origin_lat * kDegToRad));
  const NodeType signal_types[3] = {NodeType::traffic_light,
                                    NodeType::stop_sign, NodeType::crossing};
  for (int r = 0; r < cfg.grid; ++r) {
    for (int c = 0; c < cfg.grid; ++c) {
      Node n;
      n.id = static_cast<std::int64_t>(r) * cfg.grid + c;
      n.lng = cfg.origin_lng + c * dlng;
      n.lat = cfg.origin_lat + r * dlat;
      n.node_type = rng.next_double() < cfg.signal_fraction
                        ? signal_types[rng.next_below(3)]
                        : NodeType::plain;
      net.add_node(n);
    }
  }
  std::int64_t eid = 0;
  const auto add_both = [&](std::int64_t a, std::int64_t b, RoadType t) {
    net.add_edge({eid++, a, b, t, 0.0});
    net.add_edge({eid++, b, a, t, 0.0});
  };
  const auto is_highway = [&](int line) {
    return cfg.highway_every > 0 && line % cfg.highway_every == 0;
  };
  for (int r = 0; r < cfg.grid; ++r)
    for (int c = 0; c + 1 < cfg.grid; ++c)
      add_both(static_cast<std::int64_t>(r) * cfg.grid + c,
               static_cast<std::int64_t>(r) * cfg.grid + c + 1,
               is_highway(r) ? RoadType::highway : RoadType::other);
  for (int c = 0; c < cfg.grid; ++c)
    for (int r = 0; r + 1 < cfg.grid; ++r)
      add_both(static_cast<std::int64_t>(r) * cfg.grid + c,
               static_cast<std::int64_t>(r + 1) * cfg.grid + c,
               is_highway(c) ? RoadType::highway : RoadType::other);
  return net;
}

inline double synth_base_speed(const SynthConfig& cfg, RoadType t) {
  return t == RoadType::highway ? cfg.speed_highway_mps : cfg.speed_other_mps;
}

/// Travel-time law applied to a concrete edge route: each edge takes
/// length / (base_speed(type) * multiplier(entry hour)); entering a
/// non-plain interior node adds the signal delay. Anchors are emitted at
/// every node crossing; a node's delay is folded into the following
/// anchor gap, keeping anchors strictly increasing.
inline PathRecord synth_route_record(const RoadNetwork& net,
                                     const SynthConfig& cfg,
                                     const std::vector<std::int64_t>& edge_ids,
                                     double departure_epoch_s,
                                     std::int64_t record_id) {
  if (edge_ids.empty()) throw ValidationError("empty synthetic route");
  PathRecord rec;
  rec.id = record_id;
  rec.departure_time_s = departure_epoch_s;
  double t = departure_epoch_s;
  double dist = 0.0;
  rec.anchors.push_back({0.0, t});
  for (std::size_t i = 0; i < edge_ids.size(); ++i) {
    const Edge& e = net.edge(edge_ids[i]);
    rec.path.push_back({e.id, 0.0, 1.0});
    const int hour = hour_of_day(t, 0);
    const double speed =
        synth_base_speed(cfg, e.road_type) * cfg.multipliers[hour];
    t += e.length_m / speed;
    dist += e.length_m;
    rec.anchors.push_back({dist, t});
    const bool interior = i + 1 < edge_ids.size();
    if (interior && net.node(e.end_node).node_type != NodeType::plain)
      t += cfg.signal_delay_s;
  }
  rec.total_time_s = rec.anchors.back().t_s - rec.anchors.front().t_s;
  rec.raw_distance_m = dist;
  return rec;
}

/// Random simple routes (no node revisited) with per-path derived seeds.
inline std::vector<PathRecord> generate_paths(const RoadNetwork& net,
                                              const SynthConfig& cfg) {
  std::unordered_map<std::int64_t, std::vector<const Edge*>> outgoing;
  for (const auto& [eid, e] : net.edges)
    outgoing[e.start_node].push_back(&e);
  for (auto& [nid, edges] : outgoing)
    std::sort(edges.begin(), edges.end(),
              [](const Edge* a, const Edge* b) { return a->id < b->id; });

  std::vector<std::int64_t> node_ids;
  for (const auto& [nid, n] : net.nodes) node_ids.push_back(nid);
  std::sort(node_ids.begin(), node_ids.end());

  std::vector<PathRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.n_paths));
  for (int i = 0; i < cfg.n_paths; ++i) {
    Rng rng(mix_seed(cfg.seed, 0x706174687321ULL,
                     static_cast<std::uint64_t>(i)));
    std::vector<std::int64_t> route;
    for (int attempt = 0; attempt < 64 && route.empty(); ++attempt) {
      const int target =
          cfg.min_edges +
          static_cast<int>(rng.next_below(
              static_cast<std::uint64_t>(cfg.max_edges - cfg.min_edges + 1)));
      std::int64_t at = node_ids[rng.next_below(node_ids.size())];
      std::unordered_set<std::int64_t> visited = {at};
      std::vector<std::int64_t> walk;
      while (static_cast<int>(walk.size()) < target) {
        std::vector<const Edge*> options;
        for (const Edge* e : outgoing[at])
          if (!visited.count(e->end_node)) options.push_back(e);
        if (options.empty()) break;
        const Edge* next = options[rng.next_below(options.size())];
        walk.push_back(next->id);
        at = next->end_node;
        visited.insert(at);
      }
      if (static_cast<int>(walk.size()) >= cfg.min_edges) route = walk;
    }
    if (route.empty())
      throw ValidationError("could not generate a route; grid too small?");
    const double departure = std::floor(rng.uniform(0.0, 86400.0));
    records.push_back(
        synth_route_record(net, cfg, route, departure, i));
  }
  return records;
}

/// The traffic table the generator law implies: speed(edge, hour) =
/// base_speed(type) * multiplier(hour). The road-based baseline's input
/// when evaluating against a known city.
inline TrafficTable true_traffic_table(const SynthConfig& cfg,
                                       const RoadNetwork& net) {
  TrafficTable table;
  for (const auto& [eid, e] : net.edges) {
    const double base = synth_base_speed(cfg, e.road_type);
    for (int h = 0; h < 24; ++h)
      table.hourly_mean[TrafficTable::key(eid, h)] =
          base * cfg.multipliers[h];
  }
  table.finalize(net);
  return table;
}

/// Road-based estimate: the sum of per-edge travel times at the departure
/// hour. Knows nothing about signal delays.
inline double segment_sum_baseline(const TrafficTable& traffic,
                                   const PathRecord& record,
                                   const RoadNetwork& net,
                                   int tz_offset_s = 0) {
  if (record.path.empty())
    throw ValidationError("segment_sum_baseline: empty path");
  const int hour = hour_of_day(record.departure_time_s, tz_offset_s);
  double total = 0.0;
  for (const CoveredEdge& ce : record.path) {
    const Edge& e = net.edge(ce.edge_id);
    total += e.length_m * (ce.f1 - ce.f0) / traffic.speed(net, e.id, hour);
  }
  return total;
}

}  // namespace deepist
