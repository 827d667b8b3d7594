// SPDX-License-Identifier: Apache-2.0
#include "kdsel/checkpoint.hpp"

#include <bit>
#include <cmath>

#include "kdsel/logit_io.hpp"

namespace kdsel {

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "kdsel-mlp";
  header["version"] = 1;
  header["layer_sizes"] = ckpt.model.sizes();
  header["activation"] = std::string(to_string(ckpt.model.activation()));
  header["margin"] = ckpt.margin;
  header["n_parameters"] = ckpt.model.parameter_count();
  header["lineage"] = ckpt.lineage.is_null() ? nlohmann::json::object() : ckpt.lineage;
  const std::string text = header.dump();

  std::vector<std::byte> bytes;
  auto put_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  };
  put_u64(text.size());
  for (char c : text) bytes.push_back(static_cast<std::byte>(c));
  const Vector flat = ckpt.model.flat_parameters();
  for (Eigen::Index i = 0; i < flat.size(); ++i) put_u64(std::bit_cast<std::uint64_t>(flat(i)));
  io::write_file_bytes(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file_bytes(path);
  auto get_u64 = [&](std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(bytes[off + i])) << (8 * i);
    return v;
  };
  if (bytes.size() < 8) throw FormatError("checkpoint too short: " + path.string());
  const auto header_len = get_u64(0);
  if (header_len > bytes.size() - 8) throw FormatError("checkpoint header length exceeds file: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data()) + 8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header is not JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != "kdsel-mlp") throw BadMagic("not a kdsel checkpoint: " + path.string());
  if (header.value("version", 0) != 1) throw UnsupportedVersion("unsupported checkpoint version");

  Checkpoint ckpt;
  ckpt.model = Mlp::zeros(header.at("layer_sizes").get<std::vector<int>>(),
                          activation_from_string(header.at("activation").get<std::string>()));
  ckpt.margin = header.value("margin", 0.0);
  ckpt.lineage = header.value("lineage", nlohmann::json::object());
  const auto n = static_cast<std::size_t>(ckpt.model.parameter_count());
  if (bytes.size() - 8 - header_len != 8 * n) throw ShapeMismatch("checkpoint blob size does not match layer sizes");
  Vector flat(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    flat(static_cast<Eigen::Index>(i)) = std::bit_cast<double>(get_u64(8 + header_len + 8 * i));
    if (!std::isfinite(flat(static_cast<Eigen::Index>(i)))) throw NonFiniteValue("non-finite checkpoint parameter");
  }
  ckpt.model.set_flat_parameters(flat);
  return ckpt;
}

}  // namespace kdsel
