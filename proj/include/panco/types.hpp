#pragma once

#include <Eigen/Dense>

namespace panco {

// 3-component real vector: polarisations (dimensionless), fields (tesla),
// rotation rates (rad/s), depending on context.
using Vec3 = Eigen::Vector3d;

inline Vec3 rotated_z(const Vec3& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z()};
}

}  // namespace panco
