// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace siit {

// Root of every error thrown by the library. `code()` is a short machine-
// parseable tag the CLI prints ahead of the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

class AutogradError : public Error {
 public:
  explicit AutogradError(const std::string& what) : Error("autograd", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class NodeError : public Error {
 public:
  explicit NodeError(const std::string& what) : Error("node", what) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error("integrity", what) {}
};

class MigrationError : public Error {
 public:
  explicit MigrationError(const std::string& what) : Error("migration", what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error("divergence", what) {}
};

}  // namespace siit
