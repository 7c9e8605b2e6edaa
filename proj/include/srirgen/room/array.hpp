#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

#include "srirgen/room/geometry.hpp"

namespace srirgen::room {

// Tetrahedral array of 4 cardioid capsules. Canonical orientation: capsule 0
// looks toward +z; capsules 1..3 sit at elevation asin(-1/3) with azimuths
// 0, 120 and 240 degrees.
struct MicArray {
  Vec3 center = Vec3::Zero();
  std::array<Vec3, 4> offsets;
  std::array<Vec3, 4> looks;

  Vec3 capsule(std::size_t i) const { return center + offsets.at(i); }
};

inline MicArray array_geometry(const Vec3& center, double radius = 0.02) {
  if (!(radius > 0)) throw std::invalid_argument("array: radius must be positive");
  MicArray arr;
  arr.center = center;
  const double horiz = std::sqrt(8.0 / 9.0);
  arr.looks[0] = Vec3(0, 0, 1);
  for (int k = 0; k < 3; ++k) {
    const double az = 2.0 * std::numbers::pi * k / 3.0;
    arr.looks[k + 1] = Vec3(horiz * std::cos(az), horiz * std::sin(az), -1.0 / 3.0);
  }
  for (int k = 0; k < 4; ++k) {
    arr.looks[k].normalize();
    arr.offsets[k] = radius * arr.looks[k];
  }
  return arr;
}

// 0.5 * (1 + look . incident); `incident` points from the capsule toward the source.
inline double cardioid_gain(const Vec3& look, const Vec3& incident) {
  if (std::abs(look.norm() - 1.0) > 1e-6 || std::abs(incident.norm() - 1.0) > 1e-6) {
    throw std::invalid_argument("cardioid_gain: look and incident must be unit vectors");
  }
  return std::clamp(0.5 * (1.0 + look.dot(incident)), 0.0, 1.0);
}

// Uniform-per-wall absorption reaching the target reverberation times by
// Sabine's equation; std::nullopt when any band needs alpha outside (0, 1].
inline std::optional<BandValues> sabine_absorption(const BandValues& rt, double volume,
                                                   double surface) {
  BandValues alpha{};
  for (std::size_t b = 0; b < kBandCount; ++b) {
    if (!(rt[b] > 0)) throw std::invalid_argument("sabine: reverberation times must be positive");
    alpha[b] = 0.161 * volume / (surface * rt[b]);
    if (!(alpha[b] > 0.0 && alpha[b] <= 1.0)) return std::nullopt;
  }
  return alpha;
}

inline std::optional<BandValues> sabine_absorption(const BandValues& rt, const RoomSpec& room) {
  return sabine_absorption(rt, room.volume, room.surface_area);
}

// Sabine reverberation time per band from the room's area-weighted absorption.
inline BandValues sabine_rt(const RoomSpec& room) {
  BandValues rt{};
  std::array<double, 6> area{};
  for (int w = 0; w < 6; ++w) area[w] = face_area(room, w);
  for (std::size_t b = 0; b < kBandCount; ++b) {
    double absorbing = 0;
    for (int w = 0; w < 6; ++w) absorbing += area[w] * room.absorption[w][b];
    rt[b] = 0.161 * room.volume / absorbing;
  }
  return rt;
}

}  // namespace srirgen::room
