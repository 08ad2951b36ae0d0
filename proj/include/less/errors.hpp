#pragma once

#include <stdexcept>
#include <string>

namespace less {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kMissingArtifact = 3,
  kDivergence = 4,
};

/// Invalid configuration value or unknown key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An upstream pipeline artifact is absent. `producer` names the command
/// that creates it.
class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(const std::string& what, std::string producer)
      : std::runtime_error(what + " (run `less " + producer + "` first)"),
        producer_(std::move(producer)) {}
  const std::string& producer() const noexcept { return producer_; }

 private:
  std::string producer_;
};

/// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not match what an operation expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A slide could not be read or yielded no usable patches.
class IngestionError : public std::runtime_error {
 public:
  IngestionError(std::string slide_id, const std::string& what)
      : std::runtime_error("slide '" + slide_id + "': " + what),
        slide_id_(std::move(slide_id)) {}
  const std::string& slide_id() const noexcept { return slide_id_; }

 private:
  std::string slide_id_;
};

}  // namespace less
