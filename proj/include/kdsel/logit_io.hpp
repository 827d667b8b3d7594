// SPDX-License-Identifier: Apache-2.0
//
// LGTS container: a fixed little-endian binary layout for logit matrices
// plus a sibling JSON manifest. See docs/formats.md for the byte layout.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdsel/numerics.hpp"

namespace kdsel::io {

inline constexpr char kLgtsMagic[4] = {'L', 'G', 'T', 'S'};
inline constexpr std::uint32_t kLgtsVersion = 1;
inline constexpr std::size_t kLgtsHeaderBytes = 4 + 4 + 8 + 4 + 1;

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

constexpr std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

struct Manifest {
  std::string teacher_id;
  std::string dataset_id;
  std::string split;  // "train" | "test"
  std::optional<std::uint64_t> epoch;
  std::string labels_path;  // relative to the manifest's directory unless absolute
  std::uint64_t checksum{0};

  bool operator==(const Manifest&) const = default;
};

/// 64-bit FNV-1a over raw bytes; the payload checksum.
std::uint64_t fnv1a64(std::span<const std::byte> bytes);

std::string checksum_hex(std::uint64_t checksum);
std::uint64_t checksum_from_hex(const std::string& text);

/// `<logits path>.json`
std::filesystem::path manifest_path_for(const std::filesystem::path& logits_path);

/// Serialized LGTS bytes (header + payload) for a matrix.
std::vector<std::byte> encode_lgts(const LogitMatrix& logits, Dtype dtype);

struct DecodedLgts {
  LogitMatrix logits;
  Dtype dtype{Dtype::F64};
  std::uint64_t checksum{0};
};

/// Parses and validates LGTS bytes. Throws BadMagic, UnsupportedVersion,
/// UnsupportedDtype, ShapeMismatch or NonFiniteValue.
DecodedLgts decode_lgts(std::span<const std::byte> bytes);

/// Writes the LGTS file and its manifest; the manifest checksum is filled in
/// from the payload. Returns the manifest as written.
Manifest write_logits(const std::filesystem::path& path, const LogitMatrix& logits, Manifest manifest,
                      Dtype dtype = Dtype::F64);

struct LoadedLogits {
  LogitMatrix logits;
  Manifest manifest;
  Dtype dtype{Dtype::F64};
};

/// Reads the file pair, widening to double. Throws ChecksumMismatch when
/// the payload does not match the manifest.
LoadedLogits read_logits(const std::filesystem::path& path);

/// Raw LGTS file without a manifest.
DecodedLgts read_lgts_file(const std::filesystem::path& path);

Manifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const std::filesystem::path& manifest_path, const Manifest& manifest);

/// Labels: flat little-endian u32, no header.
void write_labels(const std::filesystem::path& path, std::span<const Label> labels);
std::vector<Label> read_labels(const std::filesystem::path& path);

/// Resolves manifest.labels_path against the logits file location.
std::filesystem::path labels_path_for(const std::filesystem::path& logits_path, const Manifest& manifest);

struct ValidationFinding {
  std::string check;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationFinding> findings;
  bool ok() const { return findings.empty(); }
};

/// Structural checks of a logit file against its manifest and labels.
/// Failures are collected as findings; nothing is thrown.
ValidationReport validate(const Manifest& manifest, const std::filesystem::path& logits_path,
                          std::span<const Label> labels);

/// Loads manifest and labels next to `logits_path`, then validates.
ValidationReport validate(const std::filesystem::path& logits_path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace kdsel::io
