#include "ikno/error.hpp"

namespace ikno {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::NonSymmetric: return "NonSymmetric";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::Singular: return "Singular";
    case Errc::IllConditioned: return "IllConditioned";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::BadRange: return "BadRange";
    case Errc::SingularDiagonal: return "SingularDiagonal";
    case Errc::SingularAxis: return "SingularAxis";
    case Errc::CapExceeded: return "CapExceeded";
    case Errc::UnsupportedLevels: return "UnsupportedLevels";
    case Errc::ChannelMismatch: return "ChannelMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::ZeroTarget: return "ZeroTarget";
    case Errc::NonpositiveTau: return "NonpositiveTau";
    case Errc::NonMonotoneTimes: return "NonMonotoneTimes";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::TooManyRequested: return "TooManyRequested";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace ikno
