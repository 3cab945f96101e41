#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "deepist/common.hpp"
#include "deepist/geo.hpp"
#include "deepist/tensor.hpp"
#include "deepist/traffic.hpp"

namespace deepist {

struct WindowingConfig {
  double w_km = 0.5;
  double s_km = 0.4;
};

struct RasterConfig {
  int k = 100;
  int d = 4;
  double r_lng = 0.0058699;
  double r_lat = 0.0044966;
  int highway_width_px = 2;
  int other_width_px = 1;
};

// Channel order of a GeneralizedImage.
constexpr int kChannelPath = 0;
constexpr int kChannelTraffic = 1;
constexpr int kChannelNetwork = 2;
constexpr int kChannelSignals = 3;

/// k x k x d raster for one sub-path window, row-major (row, col, channel).
/// Row 0 is the northern edge.
struct GeneralizedImage {
  Tensor data;

  GeneralizedImage() = default;
  GeneralizedImage(int k, int d)
      : data({static_cast<std::size_t>(k), static_cast<std::size_t>(k),
              static_cast<std::size_t>(d)}) {}

  int k() const { return static_cast<int>(data.shape[0]); }
  int d() const { return static_cast<int>(data.shape[2]); }
  double& at(int row, int col, int ch) { return data.at3(row, col, ch); }
  double at(int row, int col, int ch) const { return data.at3(row, col, ch); }
};

struct SubPathWindow {
  double start_m = 0.0;
  double end_m = 0.0;
  LngLat center;
};

/// Arithmetic mean of the sub-path's breakpoint coordinates.
inline LngLat window_center(const std::vector<LngLat>& breakpoints) {
  double lng = 0.0, lat = 0.0;
  for (const LngLat& p : breakpoints) {
    lng += p.lng;
    lat += p.lat;
  }
  const double n = static_cast<double>(breakpoints.size());
  return {lng / n, lat / n};
}

/// Window i spans [i*s, i*s + w] km clipped to the path length; windows are
/// emitted until one reaches the end of the path.
inline std::vector<SubPathWindow> slide_windows(const PathRecord& record,
                                                const RoadNetwork& net,
                                                const WindowingConfig& cfg) {
  const double length = path_length(record, net);
  const double w = cfg.w_km * 1000.0;
  const double s = cfg.s_km * 1000.0;
  std::vector<SubPathWindow> windows;
  for (std::size_t i = 0;; ++i) {
    const double start = static_cast<double>(i) * s;
    const double end = std::min(start + w, length);
    SubPathWindow win;
    win.start_m = start;
    win.end_m = end;
    win.center =
        window_center(subpath_breakpoints(record, net, start, end));
    windows.push_back(win);
    if (start + w >= length) break;
  }
  return windows;
}

/// Linear map of an r_lng x r_lat area onto [0, k) per axis, latitude
/// inverted so north is up. The window center lands on the CENTER of pixel
/// (k/2, k/2) (continuous coordinate k/2 + 0.5): pixel centers sit at
/// half-integers, so geometry through the window center never lies on a
/// cell boundary.
struct GeoProjection {
  double origin_lng = 0.0;  // west edge
  double origin_lat = 0.0;  // north edge
  double r_lng = 1.0;
  double r_lat = 1.0;
  int k = 2;

  GeoProjection() = default;
  GeoProjection(const LngLat& center, const RasterConfig& cfg)
      : origin_lng(center.lng - cfg.r_lng / 2.0 - cfg.r_lng / (2.0 * cfg.k)),
        origin_lat(center.lat + cfg.r_lat / 2.0 + cfg.r_lat / (2.0 * cfg.k)),
        r_lng(cfg.r_lng),
        r_lat(cfg.r_lat),
        k(cfg.k) {}

  double col(double lng) const {
    return (lng - origin_lng) / r_lng * static_cast<double>(k);
  }
  double row(double lat) const {
    return (origin_lat - lat) / r_lat * static_cast<double>(k);
  }
};

/// Visits every grid cell the continuous segment (c0,r0)-(c1,r1) passes
/// through, in traversal order, coordinates in pixel units. Enumerating
/// crossed cells (rather than a thinned Bresenham line) keeps rasters of a
/// sub-segment a subset of the full segment's raster.
template <typename Fn>
inline void traverse_cells(double c0, double r0, double c1, double r1,
                           Fn&& visit) {
  int col = static_cast<int>(std::floor(c0));
  int row = static_cast<int>(std::floor(r0));
  const int col_end = static_cast<int>(std::floor(c1));
  const int row_end = static_cast<int>(std::floor(r1));
  const double dc = c1 - c0;
  const double dr = r1 - r0;
  const int step_c = dc > 0.0 ? 1 : -1;
  const int step_r = dr > 0.0 ? 1 : -1;
  // Parametric distance to the next column/row boundary.
  double t_max_c = std::numeric_limits<double>::infinity();
  double t_delta_c = std::numeric_limits<double>::infinity();
  if (dc != 0.0) {
    const double boundary = dc > 0.0 ? std::floor(c0) + 1.0 : std::floor(c0);
    t_max_c = (boundary - c0) / dc;
    t_delta_c = 1.0 / std::abs(dc);
  }
  double t_max_r = std::numeric_limits<double>::infinity();
  double t_delta_r = std::numeric_limits<double>::infinity();
  if (dr != 0.0) {
    const double boundary = dr > 0.0 ? std::floor(r0) + 1.0 : std::floor(r0);
    t_max_r = (boundary - r0) / dr;
    t_delta_r = 1.0 / std::abs(dr);
  }
  visit(col, row);
  int guard = 4 * (std::abs(col_end - col) + std::abs(row_end - row)) + 8;
  while ((col != col_end || row != row_end) && guard-- > 0) {
    if (t_max_c < t_max_r) {
      t_max_c += t_delta_c;
      col += step_c;
    } else {
      t_max_r += t_delta_r;
      row += step_r;
    }
    visit(col, row);
  }
}

namespace detail {

/// Stamps value at (col,row) widened to `width` pixels perpendicular to the
/// segment's dominant axis. Out-of-image pixels are clipped; existing pixels
/// are overwritten.
inline void stamp(GeneralizedImage& img, int ch, int col, int row, int width,
                  bool widen_horizontally, double value) {
  const int k = img.k();
  for (int t = 0; t < width; ++t) {
    const int off = t - width / 2;
    const int c = widen_horizontally ? col + off : col;
    const int r = widen_horizontally ? row : row + off;
    if (c >= 0 && c < k && r >= 0 && r < k) img.at(r, c, ch) = value;
  }
}

inline void draw_segment(GeneralizedImage& img, const GeoProjection& proj,
                         const LngLat& a, const LngLat& b, int ch, int width,
                         double value) {
  const double c0 = proj.col(a.lng), r0 = proj.row(a.lat);
  const double c1 = proj.col(b.lng), r1 = proj.row(b.lat);
  const double k = static_cast<double>(proj.k);
  // Reject segments whose bounding box misses the image entirely.
  const double pad = static_cast<double>(width);
  if (std::max(c0, c1) < -pad || std::min(c0, c1) > k + pad ||
      std::max(r0, r1) < -pad || std::min(r0, r1) > k + pad)
    return;
  const bool widen_horizontally = std::abs(r1 - r0) >= std::abs(c1 - c0);
  traverse_cells(c0, r0, c1, r1, [&](int col, int row) {
    stamp(img, ch, col, row, width, widen_horizontally, value);
  });
}

}  // namespace detail

/// Renders one window into a k x k x d image:
///   channel 0: the sub-path polyline, width 1, value 1;
///   channel 1: the same strokes valued by the covered edge's normalized
///              speed (the edge nearest the window entry wins overlaps);
///   channel 2: every network edge crossing the area, width by road type;
///   channel 3: non-plain nodes inside the area as single pixels.
inline GeneralizedImage rasterize(const SubPathWindow& window,
                                  const PathRecord& record,
                                  const RoadNetwork& net,
                                  const TrafficTable& traffic,
                                  const RasterConfig& cfg, int hour) {
  GeneralizedImage img(cfg.k, cfg.d);
  const GeoProjection proj(window.center, cfg);

  // Channel 2: the underlying road network.
  for (const auto& [eid, e] : net.edges) {
    const Node& a = net.node(e.start_node);
    const Node& b = net.node(e.end_node);
    const int width = e.road_type == RoadType::highway ? cfg.highway_width_px
                                                       : cfg.other_width_px;
    detail::draw_segment(img, proj, {a.lng, a.lat}, {b.lng, b.lat},
                         kChannelNetwork, width, 1.0);
  }

  // Channel 3: traffic signals (any non-plain node).
  for (const auto& [nid, n] : net.nodes) {
    if (n.node_type == NodeType::plain) continue;
    const int col = static_cast<int>(std::floor(proj.col(n.lng)));
    const int row = static_cast<int>(std::floor(proj.row(n.lat)));
    if (col >= 0 && col < cfg.k && row >= 0 && row < cfg.k)
      img.at(row, col, kChannelSignals) = 1.0;
  }

  // Channels 0 and 1: the sub-path with per-edge traffic values. Pieces are
  // drawn from the far end back to the window entry so that on overlap the
  // edge nearest the entry wins.
  struct Piece {
    LngLat a, b;
    double speed;
  };
  std::vector<Piece> pieces;
  double walked = 0.0;
  for (const CoveredEdge& ce : record.path) {
    const Edge& e = net.edge(ce.edge_id);
    const double covered = e.length_m * (ce.f1 - ce.f0);
    const double lo = std::max(walked, window.start_m);
    const double hi = std::min(walked + covered, window.end_m);
    if (hi > lo || (hi == lo && window.start_m == window.end_m)) {
      const Node& s = net.node(e.start_node);
      const Node& t = net.node(e.end_node);
      const double fa = ce.f0 + (lo - walked) / e.length_m;
      const double fb = ce.f0 + (hi - walked) / e.length_m;
      pieces.push_back({lerp(s, t, fa), lerp(s, t, fb),
                        traffic.normalized_speed(net, ce.edge_id, hour)});
    }
    walked += covered;
  }
  for (auto it = pieces.rbegin(); it != pieces.rend(); ++it) {
    detail::draw_segment(img, proj, it->a, it->b, kChannelPath, 1, 1.0);
    detail::draw_segment(img, proj, it->a, it->b, kChannelTraffic, 1,
                         it->speed);
  }
  return img;
}

/// Writes one channel as a binary P6 pixmap, gray levels scaled from [0,1].
inline void write_channel_ppm(const GeneralizedImage& img, int ch,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const int k = img.k();
  out << "P6\n" << k << ' ' << k << "\n255\n";
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) {
      const double v = std::clamp(img.at(r, c, ch), 0.0, 1.0);
      const unsigned char g = static_cast<unsigned char>(v * 255.0 + 0.5);
      const unsigned char px[3] = {g, g, g};
      out.write(reinterpret_cast<const char*>(px), 3);
    }
  }
}

/// Debug dump of every channel: {record_id}_{window_index}_{channel}.ppm.
inline void dump_window_ppms(const GeneralizedImage& img,
                             std::int64_t record_id, int window_index,
                             const std::string& dir) {
  for (int ch = 0; ch < img.d(); ++ch) {
    write_channel_ppm(img, ch,
                      dir + "/" + std::to_string(record_id) + "_" +
                          std::to_string(window_index) + "_" +
                          std::to_string(ch) + ".ppm");
  }
}

/// Tensor batch file: ASCII header line "k,d,n", then n window tensors as
/// row-major little-endian 32-bit floats.
inline void save_tensor_batch(const std::vector<GeneralizedImage>& images,
                              const std::string& path) {
  if (images.empty()) throw ValidationError("no window tensors to save");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const int k = images.front().k();
  const int d = images.front().d();
  out << k << ',' << d << ',' << images.size() << '\n';
  std::vector<float> buf;
  for (const GeneralizedImage& img : images) {
    buf.assign(img.data.data.begin(), img.data.data.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

inline std::vector<GeneralizedImage> load_tensor_batch(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw IoError(path + ": missing header");
  int k = 0, d = 0;
  long long n = 0;
  if (std::sscanf(header.c_str(), "%d,%d,%lld", &k, &d, &n) != 3 || k < 2 ||
      d < 1 || n < 1)
    throw IoError(path + ": bad header: " + header);
  std::vector<GeneralizedImage> images;
  std::vector<float> buf(static_cast<std::size_t>(k) * k * d);
  for (long long i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError(path + ": truncated tensor data");
    GeneralizedImage img(k, d);
    std::copy(buf.begin(), buf.end(), img.data.data.begin());
    images.push_back(std::move(img));
  }
  return images;
}

}  // namespace deepist
