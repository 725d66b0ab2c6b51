#pragma once

#include <array>
#include <cmath>

#include "spikedrive/common.hpp"

namespace spikedrive {

struct Vec2 {
  double x = 0, y = 0;
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

// Planar pose: x forward, y left, heading counter-clockwise from +x.
struct Pose2 {
  double x = 0, y = 0, heading = 0;

  Vec2 to_world(const Vec2& local) const {
    const double c = std::cos(heading), s = std::sin(heading);
    return {x + c * local.x - s * local.y, y + s * local.x + c * local.y};
  }
  Vec2 to_local(const Vec2& world) const {
    const double c = std::cos(heading), s = std::sin(heading);
    const double dx = world.x - x, dy = world.y - y;
    return {c * dx + s * dy, -s * dx + c * dy};
  }
};

// Pinhole intrinsics (pixels). Invertible iff both focal lengths are nonzero.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;

  void validate() const {
    contract(std::abs(fx) > 1e-12 && std::abs(fy) > 1e-12,
             "degenerate camera intrinsics");
  }
  std::array<std::array<double, 3>, 3> matrix() const {
    return {{{fx, 0, cx}, {0, fy, cy}, {0, 0, 1}}};
  }
  static Intrinsics from_matrix(const std::array<std::array<double, 3>, 3>& m) {
    return {m[0][0], m[1][1], m[0][2], m[1][2]};
  }
};

// Camera mounted on the ego body. Camera axes: +Z forward, +X right, +Y down;
// ego axes: +x forward, +y left, +z up. `yaw` rotates the optical axis about
// ego z (0 = facing forward).
struct CameraRig {
  int cam_id = 0;
  Intrinsics intrinsics;
  Vec3 position;  // meters in the ego frame
  double yaw = 0;

  // camera -> ego rotation columns (images of the camera basis vectors)
  std::array<Vec3, 3> rotation() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    // base: cam z -> ego x, cam x -> ego -y, cam y -> ego -z, then yaw about z
    const Vec3 cam_x{s, -c, 0};   // Rz(yaw) * (0,-1,0)
    const Vec3 cam_y{0, 0, -1};
    const Vec3 cam_z{c, s, 0};    // Rz(yaw) * (1,0,0)
    return {cam_x, cam_y, cam_z};
  }

  Vec3 cam_to_ego(const Vec3& p) const {
    const auto r = rotation();
    return {r[0].x * p.x + r[1].x * p.y + r[2].x * p.z + position.x,
            r[0].y * p.x + r[1].y * p.y + r[2].y * p.z + position.y,
            r[0].z * p.x + r[1].z * p.y + r[2].z * p.z + position.z};
  }

  Vec3 ego_to_cam(const Vec3& p) const {
    const auto r = rotation();  // orthonormal: inverse = transpose
    const Vec3 d{p.x - position.x, p.y - position.y, p.z - position.z};
    return {r[0].x * d.x + r[0].y * d.y + r[0].z * d.z,
            r[1].x * d.x + r[1].y * d.y + r[1].z * d.z,
            r[2].x * d.x + r[2].y * d.y + r[2].z * d.z};
  }

  // Project an ego-frame point. Returns false when behind the camera.
  bool project(const Vec3& p_ego, double& u, double& v, double& depth) const {
    const Vec3 pc = ego_to_cam(p_ego);
    depth = pc.z;
    if (pc.z <= 1e-9) return false;
    u = intrinsics.fx * pc.x / pc.z + intrinsics.cx;
    v = intrinsics.fy * pc.y / pc.z + intrinsics.cy;
    return true;
  }

  // Pixel (u, v) at the given depth back to the ego frame.
  Vec3 unproject(double u, double v, double depth) const {
    intrinsics.validate();
    const Vec3 pc{(u - intrinsics.cx) / intrinsics.fx * depth,
                  (v - intrinsics.cy) / intrinsics.fy * depth, depth};
    return cam_to_ego(pc);
  }

  // Unit ray through pixel (u, v) in the ego frame (origin at the camera).
  Vec3 pixel_ray(double u, double v) const {
    intrinsics.validate();
    const Vec3 pc{(u - intrinsics.cx) / intrinsics.fx,
                  (v - intrinsics.cy) / intrinsics.fy, 1.0};
    const auto r = rotation();
    Vec3 d{r[0].x * pc.x + r[1].x * pc.y + r[2].x * pc.z,
           r[0].y * pc.x + r[1].y * pc.y + r[2].y * pc.z,
           r[0].z * pc.x + r[1].z * pc.y + r[2].z * pc.z};
    const double n = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
    return {d.x / n, d.y / n, d.z / n};
  }
};

// Ego-centric metric raster spec. Cell (i, j): i indexes forward (+x), j
// indexes left (+y); the ego sits at the grid center.
struct BevSpec {
  int64_t cells = 48;
  double resolution = 0.5;  // meters per cell

  double extent() const { return cells * resolution; }
  bool cell_of(double x, double y, int64_t& i, int64_t& j) const {
    const double half = extent() / 2.0;
    i = static_cast<int64_t>(std::floor((x + half) / resolution));
    j = static_cast<int64_t>(std::floor((y + half) / resolution));
    return i >= 0 && i < cells && j >= 0 && j < cells;
  }
  Vec2 center_of(int64_t i, int64_t j) const {
    const double half = extent() / 2.0;
    return {(i + 0.5) * resolution - half, (j + 0.5) * resolution - half};
  }

  // Nearest-neighbor map re-sampling a grid from `from` ego pose into `to`
  // ego pose: out[cell] = in[map[cell]] (-1 where the source falls outside).
  std::vector<int64_t> warp_map(const Pose2& from, const Pose2& to) const {
    std::vector<int64_t> map(static_cast<size_t>(cells * cells), -1);
    for (int64_t i = 0; i < cells; ++i)
      for (int64_t j = 0; j < cells; ++j) {
        const Vec2 local = center_of(i, j);
        const Vec2 world = to.to_world(local);
        const Vec2 src = from.to_local(world);
        int64_t si, sj;
        if (cell_of(src.x, src.y, si, sj)) map[i * cells + j] = si * cells + sj;
      }
    return map;
  }
};

// 2-d oriented rectangle (vehicle footprints, ego body).
struct OrientedBox {
  Pose2 pose;     // center + heading
  double length;  // along heading
  double width;

  bool contains(const Vec2& p) const {
    const Vec2 l = pose.to_local(p);
    return std::abs(l.x) <= length / 2.0 && std::abs(l.y) <= width / 2.0;
  }
  std::array<Vec2, 4> corners() const {
    const double hl = length / 2.0, hw = width / 2.0;
    return {pose.to_world({hl, hw}), pose.to_world({hl, -hw}),
            pose.to_world({-hl, -hw}), pose.to_world({-hl, hw})};
  }
};

}  // namespace spikedrive
