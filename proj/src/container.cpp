// Copyright 2026 The StyleSeg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "styleseg/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "styleseg/errors.hpp"

namespace styleseg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "styleseg-params";
constexpr int kVersion = 1;

[[maybe_unused]] std::uint64_t byteswap(std::uint64_t v) { return __builtin_bswap64(v); }
[[maybe_unused]] std::uint32_t byteswap(std::uint32_t v) { return __builtin_bswap32(v); }

template <typename T, typename U>
void write_le(std::ostream& os, std::span<const T> values) {
  static_assert(sizeof(T) == sizeof(U));
  std::vector<char> buf(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    U bits = std::bit_cast<U>(values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
    std::memcpy(buf.data() + i * sizeof(T), &bits, sizeof(T));
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename T, typename U>
void read_le(std::istream& is, std::span<T> values) {
  std::vector<char> buf(values.size() * sizeof(T));
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size()))
    throw FormatError("blob truncated: expected " + std::to_string(buf.size()) + " bytes");
  for (std::size_t i = 0; i < values.size(); ++i) {
    U bits;
    std::memcpy(&bits, buf.data() + i * sizeof(T), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
    values[i] = std::bit_cast<T>(bits);
  }
}

}  // namespace

void write_f64_le(std::ostream& os, std::span<const double> values) {
  write_le<double, std::uint64_t>(os, values);
}
void read_f64_le(std::istream& is, std::span<double> values) {
  read_le<double, std::uint64_t>(is, values);
}
void write_f32_le(std::ostream& os, std::span<const float> values) {
  write_le<float, std::uint32_t>(os, values);
}
void read_f32_le(std::istream& is, std::span<float> values) {
  read_le<float, std::uint32_t>(is, values);
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
    os << content;
    if (!os) throw FormatError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_param_container(const fs::path& dir, const std::string& kind,
                           const nlohmann::ordered_json& header,
                           const std::vector<NamedTensor>& params) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["kind"] = kind;
  manifest["header"] = header;
  auto& list = manifest["params"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  {
    const fs::path blob = dir / "params.f64.tmp";
    std::ofstream os(blob, std::ios::binary);
    if (!os) throw FormatError("cannot open " + blob.string() + " for writing");
    for (const auto& [name, t] : params) {
      list.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"offset", offset},
                      {"count", t.size()}});
      write_f64_le(os, t.span());
      offset += static_cast<std::uint64_t>(t.size()) * sizeof(double);
    }
    if (!os) throw FormatError("write failed: " + blob.string());
  }
  fs::rename(dir / "params.f64.tmp", dir / "params.f64");
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ParamContainer read_param_container(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError("missing " + manifest_path.string());
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat)
    throw FormatError(manifest_path.string() + ": not a styleseg parameter container");
  if (manifest.value("version", -1) != kVersion)
    throw FormatError(manifest_path.string() + ": unsupported container version " +
                      manifest.value("version", nlohmann::ordered_json()).dump());
  ParamContainer out;
  out.kind = manifest.at("kind").get<std::string>();
  out.header = manifest.at("header");
  std::ifstream is(dir / "params.f64", std::ios::binary);
  if (!is) throw FormatError("missing " + (dir / "params.f64").string());
  for (const auto& entry : manifest.at("params")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    if (entry.at("count").get<Index>() != t.size())
      throw FormatError("param " + entry.at("name").get<std::string>() + ": count/shape mismatch");
    is.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    read_f64_le(is, t.span());
    out.params.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

}  // namespace styleseg
