#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "raincast/tensor.hpp"

namespace raincast::io {

// Container for named tensors: a JSON manifest (format version, free-form
// metadata, tensor names/shapes/byte offsets) followed by one flat
// little-endian float64 blob, row-major per tensor.
//
//   bytes 0-7   magic "RCTNSR1\n"
//   bytes 8-15  header length (uint64, little-endian)
//   header      JSON, UTF-8
//   blob        float64 data
//
// Doubles are written via their IEEE-754 bit patterns, so save/load
// round-trips are exact.

constexpr char kMagic[8] = {'R', 'C', 'T', 'N', 'S', 'R', '1', '\n'};

struct NamedTensors {
  nlohmann::json meta;  // free-form; callers own the schema
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::runtime_error("tensor file: no tensor named '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }
};

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}
inline std::uint64_t get_u64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}
inline void put_f64(std::ostream& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    put_u64(out, bits);
  }
}
inline void get_f64(std::istream& in, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = get_u64(in);
    std::memcpy(&data[i], &bits, 8);
  }
}
}  // namespace detail

inline void save_tensors(const NamedTensors& nt, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["meta"] = nt.meta;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : nt.tensors) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape;
    entry["offset"] = offset;
    list.push_back(entry);
    offset += static_cast<std::uint64_t>(t.size()) * 8;
  }
  header["tensors"] = list;
  const std::string header_s = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(kMagic, 8);
  detail::put_u64(out, header_s.size());
  out.write(header_s.data(), static_cast<std::streamsize>(header_s.size()));
  for (const auto& [name, t] : nt.tensors) detail::put_f64(out, t.data.data(), t.data.size());
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline NamedTensors load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a raincast tensor file");
  const std::uint64_t header_len = detail::get_u64(in);
  std::string header_s(header_len, '\0');
  in.read(header_s.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated header in '" + path + "'");
  nlohmann::json header = nlohmann::json::parse(header_s);
  if (header.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported format version in '" + path + "'");

  NamedTensors nt;
  nt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    detail::get_f64(in, t.data.data(), t.data.size());
    if (!in) throw std::runtime_error("truncated blob in '" + path + "'");
    nt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return nt;
}

}  // namespace raincast::io
