#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace biharm {

inline constexpr int kMaxDim = 6;

/// Area of the unit sphere S^k in R^{k+1}: 2 pi^{(k+1)/2} / Gamma((k+1)/2).
inline double sphere_area(int k) {
  const double m = 0.5 * (k + 1);
  return 2.0 * std::pow(std::numbers::pi, m) / std::tgamma(m);
}

/// Volume of the unit ball in R^n.
inline double ball_volume(int n) { return sphere_area(n - 1) / n; }

struct SphereConstants {
  int k;
  double sigma;

  static SphereConstants of(int k) { return {k, sphere_area(k)}; }
};

// Neumaier compensated sum, accumulated in call order.
class Accumulator {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Determinant of an n x n matrix stored column-major (col j at a[j*n .. j*n+n)).
/// Gaussian elimination with partial pivoting on a local copy; n <= kMaxDim + 1.
double determinant(std::span<const double> a, int n);

/// (p_1 ^ ... ^ p_{n-1})_i = det(e_i, p_1, ..., p_{n-1}).
/// `vectors` holds n-1 vectors of length n back to back.
std::vector<double> wedge(std::span<const double> vectors, int n);
void wedge_into(std::span<const double> vectors, int n, std::span<double> out);

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace biharm
