#pragma once

#include <cmath>

namespace glasspipe {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0.0 ? *this / n : Vec3{};
  }
};

// Row-major 3x3 matrix.
struct Mat3 {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[3 * i + k] * o.m[3 * k + j];
        r.m[3 * i + j] = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[3 * i + j] = m[3 * j + i];
    return r;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

// Rotation about an arbitrary unit axis (Rodrigues form).
inline Mat3 rotation_about(const Vec3& axis, double angle_rad) {
  const Vec3 u = axis.normalized();
  const double c = std::cos(angle_rad), s = std::sin(angle_rad), t = 1.0 - c;
  Mat3 r;
  r.m[0] = c + u.x * u.x * t;
  r.m[1] = u.x * u.y * t - u.z * s;
  r.m[2] = u.x * u.z * t + u.y * s;
  r.m[3] = u.y * u.x * t + u.z * s;
  r.m[4] = c + u.y * u.y * t;
  r.m[5] = u.y * u.z * t - u.x * s;
  r.m[6] = u.z * u.x * t - u.y * s;
  r.m[7] = u.z * u.y * t + u.x * s;
  r.m[8] = c + u.z * u.z * t;
  return r;
}

}  // namespace glasspipe
