#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hrapr {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidQuaternion : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// Zero-norm embedding used where a direction is required.
class DegenerateEmbedding : public Error {
 public:
  using Error::Error;
};

class BuildError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated container file. offset() is the byte position in
// the offending file where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::uint64_t offset, const std::string& what)
      : Error(path + " @" + std::to_string(offset) + ": " + what), path_(path), offset_(offset) {}

  const std::string& path() const noexcept { return path_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string path_;
  std::uint64_t offset_;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// A failure tied to one query of a batch.
class QueryError : public Error {
 public:
  QueryError(std::string id, const std::string& what)
      : Error("query '" + id + "': " + what), id_(std::move(id)) {}

  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

}  // namespace hrapr
