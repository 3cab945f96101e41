#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepist/common.hpp"

namespace deepist {

enum class NodeType { plain, traffic_light, stop_sign, crossing };
enum class RoadType { highway, other };

inline const char* to_string(NodeType t) {
  switch (t) {
    case NodeType::traffic_light: return "traffic_light";
    case NodeType::stop_sign: return "stop_sign";
    case NodeType::crossing: return "crossing";
    default: return "plain";
  }
}

/// Unknown type names collapse to plain.
inline NodeType node_type_from_string(const std::string& s) {
  if (s == "traffic_light") return NodeType::traffic_light;
  if (s == "stop_sign") return NodeType::stop_sign;
  if (s == "crossing") return NodeType::crossing;
  return NodeType::plain;
}

inline const char* to_string(RoadType t) {
  return t == RoadType::highway ? "highway" : "other";
}

inline RoadType road_type_from_string(const std::string& s) {
  return s == "highway" ? RoadType::highway : RoadType::other;
}

struct Node {
  std::int64_t id = 0;
  double lng = 0.0;
  double lat = 0.0;
  NodeType node_type = NodeType::plain;
};

struct Edge {
  std::int64_t id = 0;
  std::int64_t start_node = 0;
  std::int64_t end_node = 0;
  RoadType road_type = RoadType::other;
  double length_m = 0.0;  // precomputed geodesic
};

constexpr double kEarthRadiusM = 6371000.0;
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

/// Equirectangular approximation: d = R * sqrt(dphi^2 + (cos(phi_m)*dlmb)^2)
/// with angles in radians and phi_m the mean latitude. Within a few
/// centimeters per kilometer at city scale.
inline double geodesic_m(double lng1, double lat1, double lng2, double lat2) {
  const double dphi = (lat2 - lat1) * kDegToRad;
  const double dlmb = (lng2 - lng1) * kDegToRad;
  const double phim = 0.5 * (lat1 + lat2) * kDegToRad;
  const double x = std::cos(phim) * dlmb;
  return kEarthRadiusM * std::sqrt(dphi * dphi + x * x);
}

struct RoadNetwork {
  std::unordered_map<std::int64_t, Node> nodes;
  std::unordered_map<std::int64_t, Edge> edges;

  const Node& node(std::int64_t id) const {
    auto it = nodes.find(id);
    if (it == nodes.end())
      throw ValidationError("unknown node id " + std::to_string(id));
    return it->second;
  }

  const Edge& edge(std::int64_t id) const {
    auto it = edges.find(id);
    if (it == edges.end())
      throw ValidationError("unknown edge id " + std::to_string(id));
    return it->second;
  }

  void add_node(Node n) { nodes[n.id] = n; }

  /// Adds the edge and fills in its geodesic length from the endpoints.
  void add_edge(Edge e) {
    if (e.start_node == e.end_node)
      throw ValidationError("edge " + std::to_string(e.id) +
                            " is a self loop");
    const Node& a = node(e.start_node);
    const Node& b = node(e.end_node);
    e.length_m = geodesic_m(a.lng, a.lat, b.lng, b.lat);
    if (!(e.length_m > 0.0))
      throw ValidationError("edge " + std::to_string(e.id) +
                            " has zero length");
    edges[e.id] = e;
  }
};

/// One traversed (possibly partial) road segment: fractions along the edge
/// direction, 0 <= f0 < f1 <= 1.
struct CoveredEdge {
  std::int64_t edge_id = 0;
  double f0 = 0.0;
  double f1 = 1.0;
};

/// Timing anchor: distance along the matched path and absolute timestamp.
struct Anchor {
  double dist_m = 0.0;
  double t_s = 0.0;  // epoch seconds
};

struct PathRecord {
  std::int64_t id = 0;
  std::vector<CoveredEdge> path;
  double departure_time_s = 0.0;  // epoch seconds
  double total_time_s = 0.0;
  double raw_distance_m = 0.0;  // raw-trajectory moving distance; 0 = unknown
  std::vector<Anchor> anchors;
};

inline double path_length(const PathRecord& record, const RoadNetwork& net) {
  if (record.path.empty())
    throw ValidationError("record " + std::to_string(record.id) +
                          " has an empty edge sequence");
  double total = 0.0;
  for (const CoveredEdge& ce : record.path) {
    const Edge& e = net.edge(ce.edge_id);
    total += e.length_m * (ce.f1 - ce.f0);
  }
  return total;
}

/// Full structural check used at load time. Operations assume records have
/// passed it.
inline void validate_record(const PathRecord& record, const RoadNetwork& net) {
  if (record.path.empty())
    throw ValidationError("record " + std::to_string(record.id) +
                          " has an empty edge sequence");
  const std::int64_t rid = record.id;
  for (std::size_t i = 0; i < record.path.size(); ++i) {
    const CoveredEdge& ce = record.path[i];
    const Edge& e = net.edge(ce.edge_id);
    if (!(ce.f0 >= 0.0 && ce.f0 < ce.f1 && ce.f1 <= 1.0))
      throw ValidationError("record " + std::to_string(rid) +
                            ": bad fractions on edge " +
                            std::to_string(ce.edge_id));
    // Only the first/last edge may be partial.
    if (i > 0 && ce.f0 != 0.0)
      throw ValidationError("record " + std::to_string(rid) +
                            ": interior edge starts mid-segment");
    if (i + 1 < record.path.size() && ce.f1 != 1.0)
      throw ValidationError("record " + std::to_string(rid) +
                            ": interior edge ends mid-segment");
    if (i > 0) {
      const Edge& prev = net.edge(record.path[i - 1].edge_id);
      if (prev.end_node != e.start_node)
        throw ValidationError("record " + std::to_string(rid) +
                              ": disconnected at edge " +
                              std::to_string(ce.edge_id));
    }
  }
  if (record.anchors.size() < 2)
    throw ValidationError("record " + std::to_string(rid) +
                          " needs at least two anchors");
  for (std::size_t i = 1; i < record.anchors.size(); ++i) {
    if (!(record.anchors[i].dist_m > record.anchors[i - 1].dist_m) ||
        !(record.anchors[i].t_s > record.anchors[i - 1].t_s))
      throw ValidationError("record " + std::to_string(rid) +
                            ": anchors not strictly increasing");
  }
  const double span =
      record.anchors.back().t_s - record.anchors.front().t_s;
  if (std::abs(span - record.total_time_s) > 1e-6)
    throw ValidationError("record " + std::to_string(rid) +
                          ": total_time_s does not match anchor span");
}

/// Keeps records with 60 s <= total <= 3600 s whose matched length is within
/// +-10% (inclusive) of the raw-trajectory distance. Records without a raw
/// distance skip the +-10% check.
inline std::vector<PathRecord> filter_dataset(
    const std::vector<PathRecord>& records, const RoadNetwork& net) {
  std::vector<PathRecord> kept;
  kept.reserve(records.size());
  for (const PathRecord& r : records) {
    if (r.total_time_s < 60.0 || r.total_time_s > 3600.0) continue;
    if (r.raw_distance_m > 0.0) {
      const double matched = path_length(r, net);
      // Inclusive boundary; the slack keeps exact +-10% cases inside in
      // the presence of rounding.
      if (std::abs(matched - r.raw_distance_m) / r.raw_distance_m >
          0.10 + 1e-12)
        continue;
    }
    kept.push_back(r);
  }
  return kept;
}

/// Timestamp (relative to the first anchor) at a distance along the path,
/// by linear interpolation of the anchor polyline. Distances outside the
/// anchored span clamp to it.
inline double time_at_distance(const PathRecord& record, double dist_m) {
  const auto& a = record.anchors;
  if (a.size() < 2)
    throw ValidationError("record " + std::to_string(record.id) +
                          " needs at least two anchors");
  if (dist_m <= a.front().dist_m) return 0.0;
  if (dist_m >= a.back().dist_m) return a.back().t_s - a.front().t_s;
  auto it = std::upper_bound(
      a.begin(), a.end(), dist_m,
      [](double d, const Anchor& an) { return d < an.dist_m; });
  const Anchor& hi = *it;
  const Anchor& lo = *(it - 1);
  const double f = (dist_m - lo.dist_m) / (hi.dist_m - lo.dist_m);
  return lo.t_s + f * (hi.t_s - lo.t_s) - a.front().t_s;
}

/// Constant-speed-between-anchors travel time over [start_m, end_m].
inline double subpath_ground_truth(const PathRecord& record, double start_m,
                                   double end_m) {
  if (!(start_m >= 0.0 && start_m < end_m))
    throw ValidationError("bad sub-path span");
  return time_at_distance(record, end_m) - time_at_distance(record, start_m);
}

struct LngLat {
  double lng = 0.0;
  double lat = 0.0;
};

// Exact at t = 0 and t = 1, and exact along axis-aligned edges, so interior
// points of an edge stroke never drift off the node coordinate line.
inline LngLat lerp(const Node& a, const Node& b, double t) {
  return {a.lng == b.lng ? a.lng : (1.0 - t) * a.lng + t * b.lng,
          a.lat == b.lat ? a.lat : (1.0 - t) * a.lat + t * b.lat};
}

/// Geographic point at an arc length along the covered path geometry.
/// Edges are straight node-to-node lines.
inline LngLat locate(const PathRecord& record, const RoadNetwork& net,
                     double distance_m) {
  if (distance_m < 0.0)
    throw ValidationError("locate: negative distance");
  double walked = 0.0;
  for (const CoveredEdge& ce : record.path) {
    const Edge& e = net.edge(ce.edge_id);
    const double covered = e.length_m * (ce.f1 - ce.f0);
    if (distance_m <= walked + covered || &ce == &record.path.back()) {
      if (distance_m > walked + covered + 1e-6)
        throw ValidationError("locate: distance beyond path length");
      const double local = std::min(distance_m - walked, covered);
      const double frac = ce.f0 + (covered > 0.0 ? local / e.length_m : 0.0);
      return lerp(net.node(e.start_node), net.node(e.end_node),
                  std::min(frac, ce.f1));
    }
    walked += covered;
  }
  throw ValidationError("locate: empty path");
}

/// Breakpoints of the sub-path over [start_m, end_m]: the entry point, every
/// node crossing strictly inside the span, and the exit point. A zero-length
/// span yields a single point.
inline std::vector<LngLat> subpath_breakpoints(const PathRecord& record,
                                               const RoadNetwork& net,
                                               double start_m, double end_m) {
  std::vector<LngLat> pts;
  pts.push_back(locate(record, net, start_m));
  if (end_m <= start_m) return pts;
  double walked = 0.0;
  for (std::size_t i = 0; i + 1 < record.path.size(); ++i) {
    const CoveredEdge& ce = record.path[i];
    const Edge& e = net.edge(ce.edge_id);
    walked += e.length_m * (ce.f1 - ce.f0);
    if (walked > start_m && walked < end_m) {
      const Node& n = net.node(e.end_node);
      pts.push_back({n.lng, n.lat});
    }
  }
  pts.push_back(locate(record, net, end_m));
  return pts;
}

}  // namespace deepist
