// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace fedhl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RankError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// The SVD iteration did not converge within its sweep budget.
class ConvergenceError : public Error {
 public:
  ConvergenceError(std::string what, std::size_t sweeps)
      : Error(std::move(what)), sweeps_(sweeps) {}
  std::size_t sweeps() const noexcept { return sweeps_; }

 private:
  std::size_t sweeps_;
};

/// Local training produced a non-finite iterate.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t round, std::size_t client, std::size_t step)
      : Error("divergence at round " + std::to_string(round) + ", client " +
              std::to_string(client) + ", local step " + std::to_string(step)),
        round_(round),
        client_(client),
        step_(step) {}

  std::size_t round() const noexcept { return round_; }
  std::size_t client() const noexcept { return client_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t round_;
  std::size_t client_;
  std::size_t step_;
};

/// Configuration parse or validation failure. `field` names the offending key
/// (dotted path); `line` is set for syntax errors.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message,
              std::optional<std::size_t> line = std::nullopt)
      : Error(format(field, message, line)), field_(std::move(field)), line_(line) {}

  const std::string& field() const noexcept { return field_; }
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& field, const std::string& message,
                            std::optional<std::size_t> line) {
    std::string out = "config";
    if (line) out += " line " + std::to_string(*line);
    if (!field.empty()) out += " field '" + field + "'";
    return out + ": " + message;
  }

  std::string field_;
  std::optional<std::size_t> line_;
};

}  // namespace fedhl
