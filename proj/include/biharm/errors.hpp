#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biharm {

enum class ErrorCode {
  EmptyInterior,
  DimensionMismatch,
  StencilOutOfDomain,
  RegionEscapesDomain,
  Disconnected,
  NearZeroVector,
  CenterOnNode,
  InvalidCenter,
  AllCentersDegenerate,
  AmbiguousDegree,
  UnbalancedDegrees,
  InvalidArgument,
  SchemaError,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace biharm
