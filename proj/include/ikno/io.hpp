#pragma once

// On-disk format: a directory holding manifest.json plus one .f64le blob per
// named array (raw little-endian doubles, row-major, no header). Shapes and
// FNV-1a 64 checksums live in the manifest. Nothing time-dependent is
// written, so regenerating the same content gives identical bytes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ikno/dataset.hpp"
#include "ikno/model.hpp"
#include "ikno/resolvent.hpp"
#include "ikno/training.hpp"

namespace ikno {

inline constexpr int kFormatVersion = 1;

std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
/// Checksum of the little-endian byte image of `values`.
std::uint64_t checksum_f64(std::span<const double> values);
std::string hex64(std::uint64_t v);

void write_f64le(const std::filesystem::path& file, std::span<const double> values);
std::vector<double> read_f64le(const std::filesystem::path& file);

class BundleWriter {
 public:
  BundleWriter(std::filesystem::path dir, std::string kind);

  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const double> values);
  nlohmann::json& meta() { return meta_; }
  /// Writes manifest.json; returns the bundle checksum (over array checksums
  /// in insertion order).
  std::uint64_t finish();

 private:
  std::filesystem::path dir_;
  nlohmann::json meta_;
  nlohmann::json arrays_ = nlohmann::json::array();
  std::vector<std::uint64_t> sums_;
};

class BundleReader {
 public:
  /// Throws Io when the manifest is missing or `kind` does not match.
  BundleReader(std::filesystem::path dir, const std::string& expected_kind);

  const nlohmann::json& meta() const { return meta_; }
  bool has(const std::string& name) const;
  std::vector<std::size_t> shape(const std::string& name) const;
  /// Reads and verifies size and checksum.
  std::vector<double> read(const std::string& name) const;
  DenseMatrix read_matrix(const std::string& name) const;

 private:
  const nlohmann::json& entry(const std::string& name) const;

  std::filesystem::path dir_;
  nlohmann::json meta_;
};

/// Returns the dataset checksum recorded in the manifest.
std::uint64_t save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void save_params(const ParamVector& params, const std::filesystem::path& dir,
                 const nlohmann::json& extra = nlohmann::json::object());
ParamVector load_params(const std::filesystem::path& dir);

struct Checkpoint {
  ParamVector params;
  OptimizerState state;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void save_operator(const ResolventVanilla& op, const std::filesystem::path& dir);
void save_operator(const ResolventTP& op, const std::filesystem::path& dir);
ResolventVanilla load_vanilla_operator(const std::filesystem::path& dir);
ResolventTP load_tp_operator(const std::filesystem::path& dir);

}  // namespace ikno
