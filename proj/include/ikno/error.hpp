#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ikno {

enum class Errc {
  InvalidArgument,
  ShapeMismatch,
  DimMismatch,
  NonSymmetric,
  NoConvergence,
  Singular,
  IllConditioned,
  EmptyInput,
  BadRange,
  SingularDiagonal,
  SingularAxis,
  CapExceeded,
  UnsupportedLevels,
  ChannelMismatch,
  EmptyDataset,
  ZeroTarget,
  NonpositiveTau,
  NonMonotoneTimes,
  NonFiniteLoss,
  NonFiniteGradient,
  TooManyRequested,
  Io,
};

std::string_view to_string(Errc code);

/// Library-wide exception. Every failure path named in the operation
/// contracts throws this with the matching code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace ikno
