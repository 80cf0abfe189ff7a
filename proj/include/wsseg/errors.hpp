#pragma once

#include <stdexcept>
#include <string>

namespace wsseg {

// Base for all pipeline errors. Subtypes map 1:1 onto the error names used
// throughout the module contracts so tests can catch the exact failure class.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : Error { using Error::Error; };
struct BoundsError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct LossError : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };
struct DependencyError : Error { using Error::Error; };
struct StaleArtifactError : Error { using Error::Error; };
struct UndefinedMetricError : Error { using Error::Error; };

}  // namespace wsseg
