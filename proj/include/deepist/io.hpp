#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepist/common.hpp"
#include "deepist/geo.hpp"

namespace deepist {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

/// nodes.csv: id,lng,lat,node_type (header row, decimal degrees).
/// edges.csv: id,start_node,end_node,road_type. Edge lengths are computed
/// from node coordinates on load.
inline RoadNetwork load_network(const std::string& nodes_csv,
                                const std::string& edges_csv) {
  RoadNetwork net;
  std::ifstream nf(nodes_csv);
  if (!nf) throw IoError("cannot open " + nodes_csv);
  std::string line;
  if (!std::getline(nf, line)) throw IoError(nodes_csv + " is empty");
  while (std::getline(nf, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 4) throw IoError(nodes_csv + ": bad row: " + line);
    Node n;
    n.id = std::stoll(f[0]);
    n.lng = std::stod(f[1]);
    n.lat = std::stod(f[2]);
    n.node_type = node_type_from_string(f[3]);
    if (n.lng < -180.0 || n.lng > 180.0 || n.lat < -90.0 || n.lat > 90.0)
      throw ValidationError("node " + f[0] + " has out-of-range coordinates");
    net.add_node(n);
  }
  std::ifstream ef(edges_csv);
  if (!ef) throw IoError("cannot open " + edges_csv);
  if (!std::getline(ef, line)) throw IoError(edges_csv + " is empty");
  while (std::getline(ef, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 4) throw IoError(edges_csv + ": bad row: " + line);
    Edge e;
    e.id = std::stoll(f[0]);
    e.start_node = std::stoll(f[1]);
    e.end_node = std::stoll(f[2]);
    e.road_type = road_type_from_string(f[3]);
    net.add_edge(e);
  }
  return net;
}

inline void save_network(const RoadNetwork& net, const std::string& nodes_csv,
                         const std::string& edges_csv) {
  std::ofstream nf(nodes_csv);
  if (!nf) throw IoError("cannot write " + nodes_csv);
  nf << "id,lng,lat,node_type\n";
  std::vector<std::int64_t> node_ids;
  node_ids.reserve(net.nodes.size());
  for (const auto& [id, n] : net.nodes) node_ids.push_back(id);
  std::sort(node_ids.begin(), node_ids.end());
  char buf[128];
  for (std::int64_t id : node_ids) {
    const Node& n = net.nodes.at(id);
    std::snprintf(buf, sizeof(buf), "%lld,%.9f,%.9f,%s\n",
                  static_cast<long long>(n.id), n.lng, n.lat,
                  to_string(n.node_type));
    nf << buf;
  }
  std::ofstream ef(edges_csv);
  if (!ef) throw IoError("cannot write " + edges_csv);
  ef << "id,start_node,end_node,road_type\n";
  std::vector<std::int64_t> edge_ids;
  edge_ids.reserve(net.edges.size());
  for (const auto& [id, e] : net.edges) edge_ids.push_back(id);
  std::sort(edge_ids.begin(), edge_ids.end());
  for (std::int64_t id : edge_ids) {
    const Edge& e = net.edges.at(id);
    ef << e.id << ',' << e.start_node << ',' << e.end_node << ','
       << to_string(e.road_type) << '\n';
  }
}

/// One JSON object per line:
///   {"path": [[edge_id, f0, f1], ...], "departure_time": s,
///    "anchors": [[dist_m, t], ...], "id": n?, "raw_distance_m": m?}
/// id defaults to the 0-based line index; raw_distance_m is optional.
inline std::vector<PathRecord> load_paths(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw IoError("cannot open " + jsonl_path);
  std::vector<PathRecord> records;
  std::string line;
  std::int64_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(jsonl_path + " line " + std::to_string(index + 1) + ": " +
                    e.what());
    }
    PathRecord r;
    r.id = j.value("id", index);
    r.departure_time_s = j.at("departure_time").get<double>();
    for (const auto& pe : j.at("path")) {
      CoveredEdge ce;
      ce.edge_id = pe.at(0).get<std::int64_t>();
      ce.f0 = pe.at(1).get<double>();
      ce.f1 = pe.at(2).get<double>();
      r.path.push_back(ce);
    }
    for (const auto& an : j.at("anchors"))
      r.anchors.push_back({an.at(0).get<double>(), an.at(1).get<double>()});
    if (r.anchors.size() >= 2)
      r.total_time_s = r.anchors.back().t_s - r.anchors.front().t_s;
    r.raw_distance_m = j.value("raw_distance_m", 0.0);
    records.push_back(std::move(r));
    ++index;
  }
  return records;
}

inline void save_paths(const std::vector<PathRecord>& records,
                       const std::string& jsonl_path) {
  std::ofstream out(jsonl_path);
  if (!out) throw IoError("cannot write " + jsonl_path);
  for (const PathRecord& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["departure_time"] = r.departure_time_s;
    auto& path = j["path"] = nlohmann::json::array();
    for (const CoveredEdge& ce : r.path)
      path.push_back({ce.edge_id, ce.f0, ce.f1});
    auto& anchors = j["anchors"] = nlohmann::json::array();
    for (const Anchor& a : r.anchors) anchors.push_back({a.dist_m, a.t_s});
    if (r.raw_distance_m > 0.0) j["raw_distance_m"] = r.raw_distance_m;
    out << j.dump() << '\n';
  }
}

}  // namespace deepist
