#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace richiv {

enum class ErrorCode {
  // data model
  NonBinaryColumn,
  NonFinite,
  EmptyData,
  RaggedColumns,
  MissingColumn,
  ParseError,
  RankDeficient,
  LengthMismatch,
  // kernels
  OddOrder,
  OrderOutOfRange,
  DegenerateColumn,
  DimensionMismatch,
  DegenerateDenominator,
  AllDenominatorsDegenerate,
  // first step
  Separation,
  NotConverged,
  PredictUnseenCell,
  NonFiniteLoss,
  // estimators
  SingularMoment,
  CollinearControlFunction,
  Overidentified,
  FoldTooSmall,
  // inference
  SingularG,
  SingleCluster,
  // simulation / cli
  InvalidConfig,
  AllFailed,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

// Every failure in the library is raised as richiv::Error. `rows` carries the
// 0-based observation indices involved, when there are any.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string context = {},
        std::vector<std::size_t> rows = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }
  const std::vector<std::size_t>& rows() const noexcept { return rows_; }

 private:
  ErrorCode code_;
  std::string context_;
  std::vector<std::size_t> rows_;
};

}  // namespace richiv
