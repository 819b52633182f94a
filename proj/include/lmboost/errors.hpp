#pragma once

#include <stdexcept>
#include <string>

namespace lmboost {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file; message carries the file/line locus.
struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// A record references an id that does not exist in the map.
struct DanglingReferenceError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Minimal pose sample is geometrically unusable (e.g. collinear points).
struct DegenerateSampleError : Error {
  using Error::Error;
};

struct TooFewCorrespondencesError : Error {
  using Error::Error;
};

/// Metric requested on an empty record set.
struct MetricError : Error {
  using Error::Error;
};

/// Experiment stage failure; carries the stage name.
struct StageError : Error {
  StageError(const std::string& stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_name(stage) {}
  std::string stage_name;
};

}  // namespace lmboost
