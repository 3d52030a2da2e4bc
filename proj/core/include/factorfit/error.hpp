#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace factorfit {

/// Base for every error raised by the library. `kind()` is a stable,
/// machine-readable tag that the CLI writes into its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidInputError : public Error {
 public:
  explicit InvalidInputError(const std::string& m) : Error("invalid_input", m) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& m) : Error("domain", m) {}
};

class RankError : public Error {
 public:
  explicit RankError(const std::string& m) : Error("rank", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

/// Cholesky breakdown; `pivot()` is the zero-based index of the first
/// non-positive pivot.
class DefinitenessError : public Error {
 public:
  DefinitenessError(const std::string& m, std::int64_t pivot)
      : Error("definiteness", m + " (failing pivot " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}

  std::int64_t pivot() const noexcept { return pivot_; }

 private:
  std::int64_t pivot_;
};

class CollectiveContractError : public Error {
 public:
  explicit CollectiveContractError(const std::string& m) : Error("collective_contract", m) {}
};

/// Communication failure. `peer()` is the rank that was lost, or -1 when
/// the failure is not attributable to one peer (e.g. a timeout at a barrier).
class TransportError : public Error {
 public:
  TransportError(const std::string& m, int peer = -1)
      : Error("transport", m), peer_(peer) {}

  int peer() const noexcept { return peer_; }

 private:
  int peer_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::uint64_t offset, const std::string& field,
              const std::string& detail)
      : Error("format", path + ": bad " + field + " at offset " + std::to_string(offset) +
                            ": " + detail),
        offset_(offset),
        field_(field) {}

  std::uint64_t offset() const noexcept { return offset_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::uint64_t offset_;
  std::string field_;
};

class DatasetConsistencyError : public Error {
 public:
  DatasetConsistencyError(const std::string& m, std::vector<std::string> offenders = {})
      : Error("dataset_consistency", m), offenders_(std::move(offenders)) {}

  const std::vector<std::string>& offenders() const noexcept { return offenders_; }

 private:
  std::vector<std::string> offenders_;
};

/// A residual or Jacobian callback produced non-finite values at `x`.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& m, std::vector<double> x)
      : Error("evaluation", m), x_(std::move(x)) {}

  const std::vector<double>& x() const noexcept { return x_; }

 private:
  std::vector<double> x_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace factorfit
