#pragma once

#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <vector>

#include "srirgen/room/geometry.hpp"

namespace srirgen::room {

struct ImageSource {
  Vec3 position = Vec3::Zero();
  int order = 0;
  std::vector<int> walls;  // in the order the sound meets them, source first
  BandValues band_gains;   // prod over walls of sqrt(1 - alpha)
  // Lattice images of a box: mirrors across perpendicular walls commute, so the
  // stored sequence is one representative and visibility is traced geometrically.
  bool order_free = false;
};

enum class ImageMethod {
  kAuto,        // lattice for boxes, beam-pruned otherwise
  kLattice,     // closed-form mirror lattice; box rooms only
  kBeam,        // recursive mirroring, dropping images whose beam misses every wall
  kExhaustive,  // every sequence without consecutive repeats (testing)
};

namespace detail {

inline BandValues gains_for(const RoomSpec& room, const std::vector<int>& walls) {
  BandValues g;
  g.fill(1.0);
  for (int w : walls) {
    for (std::size_t b = 0; b < kBandCount; ++b) g[b] *= std::sqrt(1.0 - room.absorption[w][b]);
  }
  return g;
}

// Sutherland-Hodgman clip keeping n.(x - a) >= 0.
inline std::vector<Vec3> clip_polygon(const std::vector<Vec3>& poly, const Vec3& n, const Vec3& a) {
  std::vector<Vec3> out;
  const std::size_t m = poly.size();
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3& p = poly[i];
    const Vec3& q = poly[(i + 1) % m];
    const double dp = n.dot(p - a), dq = n.dot(q - a);
    if (dp >= 0) out.push_back(p);
    if ((dp >= 0) != (dq >= 0)) out.push_back(p + (dp / (dp - dq)) * (q - p));
  }
  return out;
}

struct BeamNode {
  Vec3 position;
  int last_wall = -1;
  std::vector<int> walls;
  std::vector<Vec3> aperture;  // convex polygon on the last wall
};

inline void beam_recurse(const RoomSpec& room, const BeamNode& node, int max_order,
                         double max_distance, std::vector<ImageSource>& out) {
  if (static_cast<int>(node.walls.size()) >= max_order) return;
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : node.aperture) centroid += v;
  centroid /= static_cast<double>(node.aperture.size());
  for (int w = 0; w < 6; ++w) {
    if (w == node.last_wall) continue;
    std::vector<Vec3> poly = face_polygon(room, w);
    for (std::size_t i = 0; i < node.aperture.size() && !poly.empty(); ++i) {
      const Vec3& p = node.aperture[i];
      const Vec3& q = node.aperture[(i + 1) % node.aperture.size()];
      Vec3 n = (p - node.position).cross(q - node.position);
      if (n.dot(centroid - node.position) < 0) n = -n;
      if (n.norm() < 1e-15) continue;
      poly = clip_polygon(poly, n.normalized(), node.position);
    }
    if (poly.size() < 3 || polygon_area(poly) < 1e-10) continue;
    const Plane& plane = room.walls[w];
    if (plane.signed_distance(node.position) <= 0) continue;
    BeamNode child;
    child.position = plane.mirror(node.position);
    if (std::abs(plane.signed_distance(child.position)) > max_distance) continue;
    child.last_wall = w;
    child.walls = node.walls;
    child.walls.push_back(w);
    child.aperture = std::move(poly);
    out.push_back({child.position, static_cast<int>(child.walls.size()), child.walls,
                   gains_for(room, child.walls), false});
    beam_recurse(room, child, max_order, max_distance, out);
  }
}

inline void exhaustive_recurse(const RoomSpec& room, const Vec3& pos, std::vector<int>& walls,
                               int max_order, std::vector<ImageSource>& out) {
  if (static_cast<int>(walls.size()) >= max_order) return;
  for (int w = 0; w < 6; ++w) {
    if (!walls.empty() && walls.back() == w) continue;
    const Vec3 img = room.walls[w].mirror(pos);
    walls.push_back(w);
    out.push_back({img, static_cast<int>(walls.size()), walls, gains_for(room, walls), false});
    exhaustive_recurse(room, img, walls, max_order, out);
    walls.pop_back();
  }
}

// Closed-form box images: per axis, coordinate (1 - 2p) s + 2 u L with
// |u - p| + |u| reflections.
inline void lattice_images(const RoomSpec& room, const Vec3& source, int max_order,
                           double max_distance, std::vector<ImageSource>& out) {
  const Vec3 low(room.walls[0].offset, room.walls[2].offset, room.walls[4].offset);
  const Vec3 dims = Vec3(-room.walls[1].offset, -room.walls[3].offset, -room.walls[5].offset) - low;
  const Vec3 s = source - low;
  struct AxisImage {
    double coord;
    std::vector<int> walls;
  };
  std::array<std::vector<AxisImage>, 3> axes;
  for (int a = 0; a < 3; ++a) {
    for (int u = -max_order; u <= max_order; ++u) {
      for (int p = 0; p <= 1; ++p) {
        const int count = std::abs(u - p) + std::abs(u);
        if (count > max_order) continue;
        const double coord = (1 - 2 * p) * s[a] + 2.0 * u * dims[a];
        std::vector<int> walls(count);
        int wall = coord > dims[a] ? 2 * a + 1 : 2 * a;
        for (int k = count - 1; k >= 0; --k) {
          walls[k] = wall;
          wall ^= 1;
        }
        axes[a].push_back({coord, std::move(walls)});
      }
    }
  }
  for (const auto& ix : axes[0]) {
    for (const auto& iy : axes[1]) {
      if (ix.walls.size() + iy.walls.size() > static_cast<std::size_t>(max_order)) continue;
      for (const auto& iz : axes[2]) {
        const std::size_t order = ix.walls.size() + iy.walls.size() + iz.walls.size();
        if (order > static_cast<std::size_t>(max_order)) continue;
        ImageSource img;
        img.position = low + Vec3(ix.coord, iy.coord, iz.coord);
        if (order > 0 && room.clearance(img.position) < -max_distance) continue;
        img.walls = ix.walls;
        img.walls.insert(img.walls.end(), iy.walls.begin(), iy.walls.end());
        img.walls.insert(img.walls.end(), iz.walls.begin(), iz.walls.end());
        img.order = static_cast<int>(order);
        img.band_gains = gains_for(room, img.walls);
        img.order_free = true;
        out.push_back(std::move(img));
      }
    }
  }
}

}  // namespace detail

// Image sources up to `max_order` reflections. `max_distance` (m) drops images
// that cannot reach any point of the room within that path length.
inline std::vector<ImageSource> image_sources(const RoomSpec& room, const Vec3& source, int max_order,
                                              ImageMethod method = ImageMethod::kAuto,
                                              double max_distance = std::numeric_limits<double>::infinity()) {
  if (max_order < 0) throw std::invalid_argument("image_sources: max_order must be >= 0");
  if (!room.contains(source, 1e-9)) throw GeometryError("image_sources: source outside room");
  if (method == ImageMethod::kAuto) method = is_shoebox(room) ? ImageMethod::kLattice : ImageMethod::kBeam;
  if (method == ImageMethod::kLattice && !is_shoebox(room)) {
    throw GeometryError("image_sources: lattice method requires an axis-aligned box");
  }
  std::vector<ImageSource> out;
  if (method == ImageMethod::kLattice) {
    detail::lattice_images(room, source, max_order, max_distance, out);
    return out;
  }
  ImageSource direct;
  direct.position = source;
  direct.band_gains.fill(1.0);
  out.push_back(direct);
  if (method == ImageMethod::kExhaustive) {
    std::vector<int> walls;
    detail::exhaustive_recurse(room, source, walls, max_order, out);
    return out;
  }
  // The order-0 beam covers every direction, so each wall is a full aperture.
  for (int w = 0; w < 6 && max_order > 0; ++w) {
    detail::BeamNode node;
    const Plane& plane = room.walls[w];
    node.position = plane.mirror(source);
    if (std::abs(plane.signed_distance(node.position)) > max_distance) continue;
    node.last_wall = w;
    node.walls = {w};
    node.aperture = face_polygon(room, w);
    out.push_back({node.position, 1, node.walls, detail::gains_for(room, node.walls), false});
    detail::beam_recurse(room, node, max_order, max_distance, out);
  }
  return out;
}

namespace detail {

inline bool trace_ordered(const ImageSource& image, const Vec3& receiver, const RoomSpec& room,
                          double tol) {
  Vec3 point = receiver;
  Vec3 target = image.position;
  for (int k = image.order - 1; k >= 0; --k) {
    const int w = image.walls[k];
    const Plane& plane = room.walls[w];
    const double d0 = plane.signed_distance(point);
    const double d1 = plane.signed_distance(target);
    if (!(d1 < 0) || d0 < -tol) return false;
    const double t = d0 / (d0 - d1);
    const Vec3 hit = point + t * (target - point);
    for (int j = 0; j < 6; ++j) {
      if (j != w && room.walls[j].signed_distance(hit) < -tol) return false;
    }
    point = hit;
    target = plane.mirror(target);
  }
  return true;
}

inline bool trace_geometric(const ImageSource& image, const Vec3& receiver, const RoomSpec& room,
                            const Vec3& source, double tol) {
  Vec3 point = receiver;
  Vec3 target = image.position;
  for (int hits = 0;; ++hits) {
    int exit_wall = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 6; ++j) {
      const double d1 = room.walls[j].signed_distance(target);
      if (!(d1 < -tol)) continue;
      const double d0 = std::max(0.0, room.walls[j].signed_distance(point));
      const double t = d0 / (d0 - d1);
      if (t < best) {
        best = t;
        exit_wall = j;
      }
    }
    if (exit_wall < 0) return hits == image.order && (target - source).norm() < 1e-6;
    if (hits == image.order) return false;
    point = point + best * (target - point);
    target = room.walls[exit_wall].mirror(target);
  }
}

}  // namespace detail

// Backward trace from the receiver to the image: every reflection point must lie
// on its wall polygon and no segment may leave the room. The source is recovered
// by mirroring the image back along the path.
inline bool visibility_test(const ImageSource& image, const Vec3& receiver, const RoomSpec& room) {
  if (image.order == 0) return true;
  const double tol = 1e-9 * std::max(1.0, room.nominal_dims.maxCoeff());
  if (!image.order_free) return detail::trace_ordered(image, receiver, room, tol);
  Vec3 source = image.position;
  for (auto it = image.walls.rbegin(); it != image.walls.rend(); ++it) {
    source = room.walls[*it].mirror(source);
  }
  return detail::trace_geometric(image, receiver, room, source, tol);
}

}  // namespace srirgen::room
