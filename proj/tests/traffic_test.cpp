#include "deepist/traffic.hpp"

#include <gtest/gtest.h>

#include "deepist/geo.hpp"

namespace deepist {
namespace {

constexpr double kDegPer100m = 100.0 / (kEarthRadiusM * kDegToRad);

RoadNetwork two_edge_network() {
  RoadNetwork net;
  for (int i = 0; i <= 2; ++i)
    net.add_node({i, i * kDegPer100m, 0.0, NodeType::plain});
  net.add_edge({10, 0, 1, RoadType::other, 0.0});
  net.add_edge({11, 1, 2, RoadType::highway, 0.0});
  return net;
}

// One record covering both edges: edge 10 at `v0` m/s, edge 11 at `v1` m/s,
// departing at `hour` o'clock UTC.
PathRecord record_at(const RoadNetwork& net, double v0, double v1, int hour) {
  PathRecord r;
  r.path = {{10, 0.0, 1.0}, {11, 0.0, 1.0}};
  const double l0 = net.edge(10).length_m;
  const double l1 = net.edge(11).length_m;
  r.departure_time_s = hour * 3600.0;
  r.anchors = {{0.0, r.departure_time_s},
               {l0, r.departure_time_s + l0 / v0},
               {l0 + l1, r.departure_time_s + l0 / v0 + l1 / v1}};
  r.total_time_s = r.anchors.back().t_s - r.anchors.front().t_s;
  return r;
}

TEST(TrafficTest, SingleTraversalMean) {
  RoadNetwork net = two_edge_network();
  auto table = build_traffic_table({record_at(net, 10.0, 20.0, 8)}, net);
  EXPECT_NEAR(table.speed(net, 10, 8), 10.0, 1e-9);
  EXPECT_NEAR(table.speed(net, 11, 8), 20.0, 1e-9);
  EXPECT_NEAR(table.global_max_speed, 20.0, 1e-9);
}

TEST(TrafficTest, MeanOfTwoTraversals) {
  RoadNetwork net = two_edge_network();
  auto table = build_traffic_table(
      {record_at(net, 10.0, 20.0, 8), record_at(net, 20.0, 20.0, 8)}, net);
  EXPECT_NEAR(table.speed(net, 10, 8), 15.0, 1e-9);
}

TEST(TrafficTest, OrderIndependentBuild) {
  RoadNetwork net = two_edge_network();
  auto a = record_at(net, 10.0, 18.0, 8);
  auto b = record_at(net, 14.0, 22.0, 8);
  auto c = record_at(net, 12.0, 20.0, 9);
  auto t1 = build_traffic_table({a, b, c}, net);
  auto t2 = build_traffic_table({c, a, b}, net);
  for (const auto& [k, v] : t1.hourly_mean)
    EXPECT_DOUBLE_EQ(v, t2.hourly_mean.at(k));
  EXPECT_DOUBLE_EQ(t1.global_max_speed, t2.global_max_speed);
}

TEST(TrafficTest, FallbackChain) {
  RoadNetwork net = two_edge_network();
  // Third edge that is never traversed.
  net.add_node({3, 3 * kDegPer100m, 0.0, NodeType::plain});
  net.add_edge({12, 2, 3, RoadType::other, 0.0});

  auto table = build_traffic_table(
      {record_at(net, 10.0, 20.0, 8), record_at(net, 14.0, 20.0, 9)}, net);

  // Seen edge, unseen hour: edge all-hours mean.
  EXPECT_NEAR(table.speed(net, 10, 3), 12.0, 1e-9);
  // Unseen other-type edge: road-type mean (edge 10 is the only other).
  EXPECT_NEAR(table.speed(net, 12, 3), 12.0, 1e-9);
}

TEST(TrafficTest, NormalizedSpeedRangeAndValues) {
  RoadNetwork net = two_edge_network();
  auto table = build_traffic_table({record_at(net, 15.0, 30.0, 8)}, net);
  EXPECT_NEAR(table.normalized_speed(net, 10, 8), 0.5, 1e-9);
  EXPECT_NEAR(table.normalized_speed(net, 11, 8), 1.0, 1e-9);
  for (int h = 0; h < 24; ++h) {
    for (std::int64_t e : {10, 11}) {
      const double v = table.normalized_speed(net, e, h);
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(TrafficTest, ConstructedFallbackNormalization) {
  RoadNetwork net = two_edge_network();
  TrafficTable table;
  table.hourly_mean[TrafficTable::key(10, 8)] = 16.0;
  table.finalize(net);
  // Absent key with fallback 8 against max 16 -> 0.5.
  table.edge_mean[11] = 8.0;
  EXPECT_NEAR(table.normalized_speed(net, 11, 3), 0.5, 1e-12);
}

TEST(TrafficTest, EmptyInputIsAnError) {
  RoadNetwork net = two_edge_network();
  EXPECT_THROW(build_traffic_table({}, net), ValidationError);
}

TEST(TrafficTest, HourKeysByEntryTime) {
  RoadNetwork net = two_edge_network();
  // Departs 30 s before 09:00; the first edge takes ~50 s, so the second
  // edge is entered after 09:00.
  PathRecord r = record_at(net, 2.0, 20.0, 8);
  const double shift = 9 * 3600.0 - 30.0 - r.departure_time_s;
  r.departure_time_s += shift;
  for (auto& a : r.anchors) a.t_s += shift;
  auto table = build_traffic_table({r}, net);
  EXPECT_TRUE(table.hourly_mean.count(TrafficTable::key(10, 8)));
  EXPECT_TRUE(table.hourly_mean.count(TrafficTable::key(11, 9)));
}

TEST(TrafficTest, CsvRoundTripIsExact) {
  RoadNetwork net = two_edge_network();
  auto table = build_traffic_table(
      {record_at(net, 10.123456789, 19.87654321, 8),
       record_at(net, 13.5, 21.25, 17)},
      net);
  const std::string path = ::testing::TempDir() + "/traffic.csv";
  save_traffic_table(table, path);
  auto loaded = load_traffic_table(path, net);
  ASSERT_EQ(loaded.hourly_mean.size(), table.hourly_mean.size());
  for (const auto& [k, v] : table.hourly_mean)
    EXPECT_DOUBLE_EQ(v, loaded.hourly_mean.at(k));
  EXPECT_DOUBLE_EQ(loaded.global_max_speed, table.global_max_speed);
  EXPECT_DOUBLE_EQ(loaded.dataset_mean, table.dataset_mean);
}

}  // namespace
}  // namespace deepist
