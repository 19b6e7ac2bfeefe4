#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>

namespace etann {

/// Symmetric second-order tensor in reduced 6-component storage,
/// ordered (11, 22, 33, 12, 13, 23). Shear entries are stored as tensor
/// components, not engineering doubles; engineering shear gamma = 2*eps12
/// appears only in loading-path descriptions.
struct SymTensor6 {
  std::array<double, 6> c{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

  static constexpr std::size_t size() { return 6; }

  double& operator[](std::size_t i) { return c[i]; }
  double operator[](std::size_t i) const { return c[i]; }

  static SymTensor6 zero() { return SymTensor6{}; }

  static SymTensor6 identity() { return SymTensor6{{1.0, 1.0, 1.0, 0.0, 0.0, 0.0}}; }

  static SymTensor6 diagonal(double a, double b, double d) {
    return SymTensor6{{a, b, d, 0.0, 0.0, 0.0}};
  }

  /// Full 3x3 matrix, row-major.
  std::array<std::array<double, 3>, 3> to_matrix() const {
    return {{{c[0], c[3], c[4]}, {c[3], c[1], c[5]}, {c[4], c[5], c[2]}}};
  }

  static SymTensor6 from_matrix(const std::array<std::array<double, 3>, 3>& m) {
    return SymTensor6{{m[0][0], m[1][1], m[2][2], m[0][1], m[0][2], m[1][2]}};
  }

  SymTensor6& operator+=(const SymTensor6& o) {
    for (std::size_t i = 0; i < 6; ++i) c[i] += o.c[i];
    return *this;
  }
  SymTensor6& operator-=(const SymTensor6& o) {
    for (std::size_t i = 0; i < 6; ++i) c[i] -= o.c[i];
    return *this;
  }
  SymTensor6& operator*=(double s) {
    for (std::size_t i = 0; i < 6; ++i) c[i] *= s;
    return *this;
  }

  friend SymTensor6 operator+(SymTensor6 a, const SymTensor6& b) { return a += b; }
  friend SymTensor6 operator-(SymTensor6 a, const SymTensor6& b) { return a -= b; }
  friend SymTensor6 operator*(SymTensor6 a, double s) { return a *= s; }
  friend SymTensor6 operator*(double s, SymTensor6 a) { return a *= s; }
  friend SymTensor6 operator-(const SymTensor6& a) {
    return SymTensor6{{-a.c[0], -a.c[1], -a.c[2], -a.c[3], -a.c[4], -a.c[5]}};
  }

  friend std::ostream& operator<<(std::ostream& os, const SymTensor6& t) {
    os << "[" << t.c[0] << ", " << t.c[1] << ", " << t.c[2] << ", " << t.c[3] << ", " << t.c[4]
       << ", " << t.c[5] << "]";
    return os;
  }
};

/// Sum of the three normal components.
inline double trace(const SymTensor6& t) { return t.c[0] + t.c[1] + t.c[2]; }

/// t minus its hydrostatic part; trace(deviator(t)) vanishes to round-off.
inline SymTensor6 deviator(const SymTensor6& t) {
  const double p = trace(t) / 3.0;
  SymTensor6 d = t;
  d.c[0] -= p;
  d.c[1] -= p;
  d.c[2] -= p;
  return d;
}

/// Full contraction a_ij b_ij over the 3x3 expansion; off-diagonal
/// entries count twice.
inline double double_contract(const SymTensor6& a, const SymTensor6& b) {
  return a.c[0] * b.c[0] + a.c[1] * b.c[1] + a.c[2] * b.c[2] +
         2.0 * (a.c[3] * b.c[3] + a.c[4] * b.c[4] + a.c[5] * b.c[5]);
}

inline double norm(const SymTensor6& t) { return std::sqrt(double_contract(t, t)); }

/// Second deviatoric invariant J2 = 1/2 dev(s):dev(s).
inline double j2_invariant(const SymTensor6& s) {
  const SymTensor6 d = deviator(s);
  return 0.5 * double_contract(d, d);
}

/// Shear-form equivalent stress sqrt(J2): equals |sigma12| in simple shear
/// and |sigma11|/sqrt(3) in uniaxial tension. The yield criteria in
/// materials.hpp are written against this measure, so a strength c means
/// yielding at sigma12 = c in simple shear. Multiply by sqrt(3) for the
/// textbook tension-equivalent form.
inline double vm_equivalent(const SymTensor6& s) { return std::sqrt(j2_invariant(s)); }

}  // namespace etann
