#pragma once

#include <stdexcept>
#include <string>

namespace einv {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes (validation 2, stage failure 3, corruption 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input or a violated precondition, detected before any work is done.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A persisted artifact does not match the hash recorded for it.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& path, const std::string& expected, const std::string& actual)
      : Error("artifact corrupted: " + path + " (expected sha256 " + expected + ", actual " + actual + ")"),
        path_(path),
        expected_(expected),
        actual_(actual) {}
  explicit CorruptionError(const std::string& what) : Error(what) {}

  const std::string& path() const noexcept { return path_; }
  const std::string& expected() const noexcept { return expected_; }
  const std::string& actual() const noexcept { return actual_; }

 private:
  std::string path_;
  std::string expected_;
  std::string actual_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace einv
