#include "biharm/numeric.hpp"

#include <algorithm>

#include "biharm/errors.hpp"

namespace biharm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInterior: return "EmptyInterior";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::StencilOutOfDomain: return "StencilOutOfDomain";
    case ErrorCode::RegionEscapesDomain: return "RegionEscapesDomain";
    case ErrorCode::Disconnected: return "Disconnected";
    case ErrorCode::NearZeroVector: return "NearZeroVector";
    case ErrorCode::CenterOnNode: return "CenterOnNode";
    case ErrorCode::InvalidCenter: return "InvalidCenter";
    case ErrorCode::AllCentersDegenerate: return "AllCentersDegenerate";
    case ErrorCode::AmbiguousDegree: return "AmbiguousDegree";
    case ErrorCode::UnbalancedDegrees: return "UnbalancedDegrees";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

double determinant(std::span<const double> a, int n) {
  constexpr int kCap = kMaxDim + 1;
  std::array<double, kCap * kCap> m{};
  std::copy(a.begin(), a.begin() + n * n, m.begin());
  // column-major: m[col * n + row]
  double det = 1.0;
  for (int c = 0; c < n; ++c) {
    int piv = c;
    double best = std::abs(m[c * n + c]);
    for (int r = c + 1; r < n; ++r) {
      const double v = std::abs(m[c * n + r]);
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best == 0.0) return 0.0;
    if (piv != c) {
      for (int j = 0; j < n; ++j) std::swap(m[j * n + c], m[j * n + piv]);
      det = -det;
    }
    const double d = m[c * n + c];
    det *= d;
    for (int r = c + 1; r < n; ++r) {
      const double f = m[c * n + r] / d;
      if (f == 0.0) continue;
      for (int j = c + 1; j < n; ++j) m[j * n + r] -= f * m[j * n + c];
    }
  }
  return det;
}

void wedge_into(std::span<const double> vectors, int n, std::span<double> out) {
  if (static_cast<int>(vectors.size()) != (n - 1) * n || static_cast<int>(out.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "wedge needs n-1 vectors of dimension n");
  }
  // det(e_i, p_1..p_{n-1}) = (-1)^i * minor with row i deleted (0-based i).
  constexpr int kCap = kMaxDim;
  std::array<double, kCap * kCap> minor{};
  const int m = n - 1;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < m; ++c) {
      int rr = 0;
      for (int r = 0; r < n; ++r) {
        if (r == i) continue;
        minor[c * m + rr] = vectors[c * n + r];
        ++rr;
      }
    }
    const double d = determinant(std::span<const double>(minor.data(), m * m), m);
    out[i] = (i % 2 == 0) ? d : -d;
  }
}

std::vector<double> wedge(std::span<const double> vectors, int n) {
  std::vector<double> out(n);
  wedge_into(vectors, n, out);
  return out;
}

}  // namespace biharm
