#pragma once

#include <stdexcept>
#include <string>

namespace fss {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset problems: missing files, malformed annotations, unreadable images.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A referenced file is missing or unreadable. Carries the offending pair id.
class LoadError : public DataError {
 public:
  LoadError(std::string pair_id, const std::string& what)
      : DataError(what), pair_id_(std::move(pair_id)) {}
  const std::string& pair_id() const noexcept { return pair_id_; }

 private:
  std::string pair_id_;
};

/// An annotation record violates the schema. Carries a JSON-pointer-like field path.
class SchemaError : public DataError {
 public:
  SchemaError(std::string field_path, const std::string& what)
      : DataError(field_path + ": " + what), field_path_(std::move(field_path)) {}
  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

/// Invalid rectangles, boxes outside the image, mismatched part sizes.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that a network or loss cannot accept.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (style in S2I, bad flag combination, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The landmark detector found no face.
class DetectionError : public Error {
 public:
  using Error::Error;
};

/// Training hit a non-finite loss.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace fss
