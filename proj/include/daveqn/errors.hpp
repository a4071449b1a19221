#pragma once

#include <stdexcept>
#include <string>

namespace daveqn {

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Curvature pair rejected (alpha below the safeguard or beta <= 0);
// callers skip the rank-two update instead of forcing it.
struct CurvatureReject : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DenominatorDegenerate : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  int line;
  ParseError(int line_, const std::string& what_)
      : std::runtime_error("line " + std::to_string(line_) + ": " + what_), line(line_) {}
};

struct LabelError : std::runtime_error {
  int line;
  LabelError(int line_, const std::string& what_)
      : std::runtime_error("line " + std::to_string(line_) + ": " + what_), line(line_) {}
};

struct MalformedFrame : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteIterate : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw DimensionMismatch(what);
}

}  // namespace daveqn
