#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "srirgen/core/rng.hpp"

namespace srirgen::room {

using Vec3 = Eigen::Vector3d;

inline constexpr double kSpeedOfSound = 343.0;
inline constexpr std::size_t kBandCount = 6;
inline constexpr std::array<double, kBandCount> kOctaveCenters = {125, 250, 500, 1000, 2000, 4000};
inline constexpr const char* kRoomGeneratorVersion = "hexroom-1";

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Wall plane {x : normal.x = offset} with the normal pointing into the room.
struct Plane {
  Vec3 normal = Vec3::UnitX();
  double offset = 0;

  double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
  Vec3 mirror(const Vec3& p) const { return p - 2.0 * signed_distance(p) * normal; }
};

using BandValues = std::array<double, kBandCount>;

// Walls are ordered x=0, x=Lx, y=0, y=Ly, z=0, z=Lz (nominal positions).
// Vertex i sits on walls (i&1), 2+((i>>1)&1), 4+((i>>2)&1).
struct RoomSpec {
  std::array<Plane, 6> walls;
  std::array<Vec3, 8> vertices;
  std::array<BandValues, 6> absorption;  // [wall][band]
  Vec3 nominal_dims = Vec3::Zero();
  double perturbation = 0;
  std::uint64_t seed = 0;
  double volume = 0;
  double surface_area = 0;

  RoomSpec() {
    for (auto& w : absorption) w.fill(1.0);
  }

  bool contains(const Vec3& p, double margin = 0.0) const {
    for (const auto& w : walls) {
      if (w.signed_distance(p) < margin) return false;
    }
    return true;
  }

  // Distance from p to the nearest wall plane (negative when outside).
  double clearance(const Vec3& p) const {
    double d = walls[0].signed_distance(p);
    for (const auto& w : walls) d = std::min(d, w.signed_distance(p));
    return d;
  }
};

// Cyclic vertex indices of wall w's quadrilateral.
inline std::array<int, 4> face_vertices(int wall) {
  const int axis = wall / 2, side = wall % 2;
  const int b = (axis + 1) % 3, c = (axis + 2) % 3;
  const int corners[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  std::array<int, 4> out{};
  for (int k = 0; k < 4; ++k) {
    out[k] = (side << axis) | (corners[k][0] << b) | (corners[k][1] << c);
  }
  return out;
}

inline std::vector<Vec3> face_polygon(const RoomSpec& room, int wall) {
  std::vector<Vec3> poly;
  for (int v : face_vertices(wall)) poly.push_back(room.vertices[v]);
  return poly;
}

inline double polygon_area(const std::vector<Vec3>& poly) {
  Vec3 acc = Vec3::Zero();
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
    acc += (poly[i] - poly[0]).cross(poly[i + 1] - poly[0]);
  }
  return 0.5 * acc.norm();
}

inline double face_area(const RoomSpec& room, int wall) {
  return polygon_area(face_polygon(room, wall));
}

namespace detail {

inline Vec3 intersect3(const Plane& a, const Plane& b, const Plane& c) {
  Eigen::Matrix3d m;
  m.row(0) = a.normal.transpose();
  m.row(1) = b.normal.transpose();
  m.row(2) = c.normal.transpose();
  const double det = m.determinant();
  if (std::abs(det) < 1e-9) throw GeometryError("room: wall planes nearly parallel");
  return m.partialPivLu().solve(Vec3(a.offset, b.offset, c.offset));
}

inline void derive_solid(RoomSpec& room) {
  for (int i = 0; i < 8; ++i) {
    room.vertices[i] = intersect3(room.walls[i & 1], room.walls[2 + ((i >> 1) & 1)],
                                  room.walls[4 + ((i >> 2) & 1)]);
  }
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : room.vertices) centroid += v / 8.0;
  room.volume = 0;
  room.surface_area = 0;
  for (int w = 0; w < 6; ++w) {
    const auto poly = face_polygon(room, w);
    room.surface_area += polygon_area(poly);
    for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
      room.volume += std::abs((poly[0] - centroid).dot((poly[i] - centroid).cross(poly[i + 1] - centroid))) / 6.0;
    }
  }
}

// Every vertex must satisfy all six half-spaces, otherwise the triple
// intersections do not describe the actual solid.
inline bool consistent(const RoomSpec& room) {
  for (const auto& v : room.vertices) {
    for (const auto& w : room.walls) {
      if (w.signed_distance(v) < -1e-9) return false;
    }
  }
  return true;
}

}  // namespace detail

inline RoomSpec shoebox(const Vec3& dims) {
  if ((dims.array() <= 0).any()) throw GeometryError("room: dimensions must be positive");
  RoomSpec room;
  room.nominal_dims = dims;
  for (int a = 0; a < 3; ++a) {
    room.walls[2 * a] = {Vec3::Unit(a), 0.0};
    room.walls[2 * a + 1] = {-Vec3::Unit(a), -dims[a]};
  }
  detail::derive_solid(room);
  return room;
}

inline bool is_shoebox(const RoomSpec& room, double tol = 1e-12) {
  for (int w = 0; w < 6; ++w) {
    const Vec3 expect = (w % 2 == 0 ? 1.0 : -1.0) * Vec3::Unit(w / 2);
    if ((room.walls[w].normal - expect).norm() > tol) return false;
  }
  return true;
}

// Starts from the axis-aligned box and tilts each wall plane about its face
// center by two angles in [-p, p] rad, then shifts it by up to p * extent.
// Draws are repeated until the solid is consistent and its volume is within
// 20% of the box.
inline RoomSpec make_room(const Vec3& dims, double perturbation, std::uint64_t seed) {
  if (!(perturbation >= 0.0 && perturbation <= 0.05)) {
    throw GeometryError("room: perturbation " + std::to_string(perturbation) +
                        " outside [0, 0.05]");
  }
  RoomSpec base = shoebox(dims);
  base.seed = seed;
  base.perturbation = perturbation;
  if (perturbation == 0.0) return base;
  Rng rng = Rng::derive(seed, "room-perturbation");
  const double box_volume = dims.prod();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    RoomSpec room = base;
    for (int w = 0; w < 6; ++w) {
      const int a = w / 2, b = (a + 1) % 3, c = (a + 2) % 3;
      Vec3 center = 0.5 * dims;
      center[a] = (w % 2 == 0) ? 0.0 : dims[a];
      const Vec3 n0 = base.walls[w].normal;
      const double t1 = rng.uniform(-perturbation, perturbation);
      const double t2 = rng.uniform(-perturbation, perturbation);
      const Vec3 n = (n0 + std::tan(t1) * Vec3::Unit(b) + std::tan(t2) * Vec3::Unit(c)).normalized();
      const double shift = rng.uniform(-perturbation, perturbation) * dims[a];
      room.walls[w] = {n, n.dot(center) + shift};
    }
    try {
      detail::derive_solid(room);
    } catch (const GeometryError&) {
      continue;
    }
    if (!detail::consistent(room)) continue;
    if (std::abs(room.volume - box_volume) > 0.2 * box_volume) continue;
    return room;
  }
  throw GeometryError("room: could not draw a valid perturbed hexahedron");
}

inline void set_uniform_absorption(RoomSpec& room, const BandValues& alpha) {
  for (double a : alpha) {
    if (!(a > 0.0 && a <= 1.0)) throw GeometryError("room: absorption must lie in (0, 1]");
  }
  for (auto& w : room.absorption) w = alpha;
}

inline nlohmann::json to_json(const RoomSpec& room) {
  nlohmann::json walls = nlohmann::json::array();
  for (int w = 0; w < 6; ++w) {
    const auto& p = room.walls[w];
    walls.push_back({{"normal", {p.normal.x(), p.normal.y(), p.normal.z()}},
                     {"offset", p.offset},
                     {"absorption", room.absorption[w]}});
  }
  return {{"generator", kRoomGeneratorVersion},
          {"band_centers_hz", kOctaveCenters},
          {"nominal_dims", {room.nominal_dims.x(), room.nominal_dims.y(), room.nominal_dims.z()}},
          {"perturbation", room.perturbation},
          {"seed", room.seed},
          {"volume", room.volume},
          {"surface_area", room.surface_area},
          {"walls", walls}};
}

inline Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw GeometryError("room json: expected 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline RoomSpec room_from_json(const nlohmann::json& j) {
  RoomSpec room;
  const auto& walls = j.at("walls");
  if (!walls.is_array() || walls.size() != 6) throw GeometryError("room json: need 6 walls");
  for (int w = 0; w < 6; ++w) {
    Vec3 n = vec3_from_json(walls[w].at("normal"));
    if (std::abs(n.norm() - 1.0) > 1e-12) n.normalize();
    room.walls[w].normal = n;
    room.walls[w].offset = walls[w].at("offset").get<double>();
    const auto alpha = walls[w].at("absorption").get<std::vector<double>>();
    if (alpha.size() != kBandCount) throw GeometryError("room json: need 6 absorption bands");
    for (std::size_t b = 0; b < kBandCount; ++b) {
      if (!(alpha[b] > 0.0 && alpha[b] <= 1.0)) {
        throw GeometryError("room json: absorption outside (0, 1] on wall " + std::to_string(w));
      }
      room.absorption[w][b] = alpha[b];
    }
  }
  room.nominal_dims = vec3_from_json(j.at("nominal_dims"));
  room.perturbation = j.value("perturbation", 0.0);
  room.seed = j.value("seed", std::uint64_t{0});
  detail::derive_solid(room);
  if (!detail::consistent(room)) throw GeometryError("room json: walls do not form a closed hexahedron");
  return room;
}

}  // namespace srirgen::room
