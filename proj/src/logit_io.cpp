// SPDX-License-Identifier: Apache-2.0
#include "kdsel/logit_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace kdsel::io {
namespace {

using nlohmann::json;

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::span<const std::byte> in, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(std::to_integer<std::uint8_t>(in[offset + i])) << (8 * i);
  return value;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= std::to_integer<std::uint8_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string checksum_hex(std::uint64_t checksum) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(checksum));
  return buf;
}

std::uint64_t checksum_from_hex(const std::string& text) {
  if (text.size() != 16 || text.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
    throw FormatError("checksum must be 16 hex digits, got '" + text + "'");
  return std::stoull(text, nullptr, 16);
}

std::filesystem::path manifest_path_for(const std::filesystem::path& logits_path) {
  auto p = logits_path;
  p += ".json";
  return p;
}

std::vector<std::byte> encode_lgts(const LogitMatrix& logits, Dtype dtype) {
  if (!logits.allFinite()) throw InvalidInput("refusing to write non-finite logits");
  if (logits.cols() < 2 || logits.cols() > std::numeric_limits<std::uint32_t>::max())
    throw InvalidInput("logit matrix needs a class count in [2, 2^32)");
  std::vector<std::byte> out;
  out.reserve(kLgtsHeaderBytes + static_cast<std::size_t>(logits.size()) * dtype_size(dtype));
  for (char c : kLgtsMagic) out.push_back(static_cast<std::byte>(c));
  put_le<std::uint32_t>(out, kLgtsVersion);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(logits.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(logits.cols()));
  out.push_back(static_cast<std::byte>(dtype));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (dtype == Dtype::F64) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(logits(r, c)));
      } else {
        const auto narrowed = static_cast<float>(logits(r, c));
        if (!std::isfinite(narrowed)) throw InvalidInput("logit overflows f32");
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(narrowed));
      }
    }
  }
  return out;
}

DecodedLgts decode_lgts(std::span<const std::byte> bytes) {
  if (bytes.size() < kLgtsHeaderBytes) throw ShapeMismatch("LGTS: file shorter than header");
  if (std::memcmp(bytes.data(), kLgtsMagic, 4) != 0) throw BadMagic("LGTS: bad magic");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kLgtsVersion) throw UnsupportedVersion("LGTS: unsupported version " + std::to_string(version));
  const auto n_samples = get_le<std::uint64_t>(bytes, 8);
  const auto n_classes = get_le<std::uint32_t>(bytes, 16);
  const auto dtype_code = std::to_integer<std::uint8_t>(bytes[20]);
  if (dtype_code > 1) throw UnsupportedDtype("LGTS: unknown dtype code " + std::to_string(dtype_code));
  const auto dtype = static_cast<Dtype>(dtype_code);
  if (n_samples == 0 || n_classes < 2) throw ShapeMismatch("LGTS: need >= 1 sample and >= 2 classes");

  const std::uint64_t payload = bytes.size() - kLgtsHeaderBytes;
  const std::uint64_t width = dtype_size(dtype);
  // n_samples * n_classes * width == payload, without overflowing
  if (payload % width != 0 || (payload / width) % n_classes != 0 || (payload / width) / n_classes != n_samples)
    throw ShapeMismatch("LGTS: payload length does not match header shape");

  DecodedLgts out;
  out.dtype = dtype;
  out.logits.resize(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(n_classes));
  std::size_t offset = kLgtsHeaderBytes;
  for (Eigen::Index r = 0; r < out.logits.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.logits.cols(); ++c) {
      double v;
      if (dtype == Dtype::F64) {
        v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
      } else {
        v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset)));
      }
      if (!std::isfinite(v))
        throw NonFiniteValue("LGTS: non-finite value at row " + std::to_string(r) + ", column " + std::to_string(c));
      out.logits(r, c) = v;
      offset += width;
    }
  }
  out.checksum = fnv1a64(bytes.subspan(kLgtsHeaderBytes));
  return out;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("short read on " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed on " + path.string());
}

void write_manifest(const std::filesystem::path& manifest_path, const Manifest& m) {
  json j;
  j["teacher_id"] = m.teacher_id;
  j["dataset_id"] = m.dataset_id;
  j["split"] = m.split;
  j["epoch"] = m.epoch ? json(*m.epoch) : json(nullptr);
  j["labels_path"] = m.labels_path;
  j["checksum"] = checksum_hex(m.checksum);
  const auto text = j.dump(2) + "\n";
  write_file_bytes(manifest_path, std::as_bytes(std::span(text.data(), text.size())));
}

Manifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  json j;
  try {
    in >> j;
    Manifest m;
    m.teacher_id = j.at("teacher_id").get<std::string>();
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.split = j.at("split").get<std::string>();
    if (j.contains("epoch") && !j["epoch"].is_null()) m.epoch = j["epoch"].get<std::uint64_t>();
    m.labels_path = j.at("labels_path").get<std::string>();
    m.checksum = checksum_from_hex(j.at("checksum").get<std::string>());
    return m;
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
}

Manifest write_logits(const std::filesystem::path& path, const LogitMatrix& logits, Manifest manifest, Dtype dtype) {
  const auto bytes = encode_lgts(logits, dtype);
  manifest.checksum = fnv1a64(std::span(bytes).subspan(kLgtsHeaderBytes));
  write_file_bytes(path, bytes);
  write_manifest(manifest_path_for(path), manifest);
  return manifest;
}

DecodedLgts read_lgts_file(const std::filesystem::path& path) { return decode_lgts(read_file_bytes(path)); }

LoadedLogits read_logits(const std::filesystem::path& path) {
  auto decoded = read_lgts_file(path);
  auto manifest = read_manifest(manifest_path_for(path));
  if (decoded.checksum != manifest.checksum)
    throw ChecksumMismatch("LGTS: payload checksum " + checksum_hex(decoded.checksum) + " != manifest " +
                           checksum_hex(manifest.checksum) + " for " + path.string());
  return {std::move(decoded.logits), std::move(manifest), decoded.dtype};
}

void write_labels(const std::filesystem::path& path, std::span<const Label> labels) {
  std::vector<std::byte> bytes;
  bytes.reserve(labels.size() * 4);
  for (auto l : labels) put_le<std::uint32_t>(bytes, l);
  write_file_bytes(path, bytes);
}

std::vector<Label> read_labels(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0) throw ShapeMismatch("labels file length is not a multiple of 4: " + path.string());
  std::vector<Label> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = get_le<std::uint32_t>(bytes, 4 * i);
  return labels;
}

std::filesystem::path labels_path_for(const std::filesystem::path& logits_path, const Manifest& manifest) {
  std::filesystem::path p(manifest.labels_path);
  if (p.is_absolute()) return p;
  return logits_path.parent_path() / p;
}

ValidationReport validate(const Manifest& manifest, const std::filesystem::path& logits_path,
                          std::span<const Label> labels) {
  ValidationReport report;
  auto add = [&](std::string check, std::string message) { report.findings.push_back({std::move(check), std::move(message)}); };

  if (manifest.split != "train" && manifest.split != "test") add("split", "split must be 'train' or 'test', got '" + manifest.split + "'");

  DecodedLgts decoded;
  try {
    decoded = read_lgts_file(logits_path);
  } catch (const Error& e) {
    add("container", e.what());
    return report;
  }
  if (decoded.checksum != manifest.checksum)
    add("checksum", "payload " + checksum_hex(decoded.checksum) + " != manifest " + checksum_hex(manifest.checksum));
  if (labels.size() != static_cast<std::size_t>(decoded.logits.rows()))
    add("length", std::to_string(labels.size()) + " labels for " + std::to_string(decoded.logits.rows()) + " logit rows");
  std::size_t out_of_range = 0;
  for (auto l : labels)
    if (l >= static_cast<Label>(decoded.logits.cols())) ++out_of_range;
  if (out_of_range > 0)
    add("label_range", std::to_string(out_of_range) + " labels >= n_classes (" + std::to_string(decoded.logits.cols()) + ")");
  return report;
}

ValidationReport validate(const std::filesystem::path& logits_path) {
  Manifest manifest;
  try {
    manifest = read_manifest(manifest_path_for(logits_path));
  } catch (const Error& e) {
    return {{{"manifest", e.what()}}};
  }
  std::vector<Label> labels;
  try {
    labels = read_labels(labels_path_for(logits_path, manifest));
  } catch (const Error& e) {
    auto report = validate(manifest, logits_path, {});
    std::erase_if(report.findings, [](const auto& f) { return f.check == "length"; });
    report.findings.insert(report.findings.begin(), {"labels", e.what()});
    return report;
  }
  return validate(manifest, logits_path, labels);
}

}  // namespace kdsel::io
