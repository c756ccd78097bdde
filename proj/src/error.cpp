#include "richiv/error.hpp"

#include <utility>

namespace richiv {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonBinaryColumn: return "NonBinaryColumn";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::RaggedColumns: return "RaggedColumns";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::OddOrder: return "OddOrder";
    case ErrorCode::OrderOutOfRange: return "OrderOutOfRange";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::AllDenominatorsDegenerate: return "AllDenominatorsDegenerate";
    case ErrorCode::Separation: return "Separation";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::PredictUnseenCell: return "PredictUnseenCell";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::SingularMoment: return "SingularMoment";
    case ErrorCode::CollinearControlFunction: return "CollinearControlFunction";
    case ErrorCode::Overidentified: return "Overidentified";
    case ErrorCode::FoldTooSmall: return "FoldTooSmall";
    case ErrorCode::SingularG: return "SingularG";
    case ErrorCode::SingleCluster: return "SingleCluster";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::AllFailed: return "AllFailed";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::string context,
             std::vector<std::size_t> rows)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code),
      context_(std::move(context)),
      rows_(std::move(rows)) {}

}  // namespace richiv
