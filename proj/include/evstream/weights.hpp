#pragma once

// "CETW" weight container: little-endian, versioned, named float32 tensors.
// Layout: magic "CETW", u16 version, u32 entry count; per entry: u16 name
// length, UTF-8 name, u8 dtype (0 = float32), u8 ndims, u32 dims...,
// payload. Entries are written in model registry order; the loader accepts
// any order but requires exactly the registry's names and shapes.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/event_io.hpp"
#include "evstream/model.hpp"

namespace evs {

inline constexpr char kWeightsMagic[4] = {'C', 'E', 'T', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

inline void save_weights(const ModelParams& m, const std::string& path) {
  std::string buf;
  buf.append(kWeightsMagic, 4);
  detail::put_le<std::uint16_t>(buf, kWeightsVersion);
  std::uint32_t count = 0;
  for_each_tensor(m, [&](const std::string&, const std::vector<std::uint32_t>&,
                         const float*, std::size_t) { ++count; });
  detail::put_le<std::uint32_t>(buf, count);
  for_each_tensor(m, [&](const std::string& name, const std::vector<std::uint32_t>& dims,
                         const float* data, std::size_t n) {
    detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
    buf.append(name);
    buf.push_back(static_cast<char>(0));  // dtype float32
    buf.push_back(static_cast<char>(dims.size()));
    for (const std::uint32_t d : dims) detail::put_le<std::uint32_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(data), n * sizeof(float));
  });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open weights file for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ParseError("failed writing weights file: " + path);
}

namespace detail {

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

inline std::map<std::string, RawTensor> read_weight_entries(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open weights file: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::uint64_t pos = 0;
  auto need = [&](std::uint64_t n, const char* what) {
    if (pos + n > data.size())
      throw ParseError(std::string("truncated weights file reading ") + what, pos);
  };
  need(4, "magic");
  if (std::memcmp(data.data(), kWeightsMagic, 4) != 0)
    throw ParseError("bad weights magic", 0);
  pos = 4;
  need(2, "version");
  const auto version = get_le<std::uint16_t>(data.data() + pos);
  if (version != kWeightsVersion)
    throw ParseError("unsupported weights version " + std::to_string(version), pos);
  pos += 2;
  need(4, "entry count");
  const auto count = get_le<std::uint32_t>(data.data() + pos);
  pos += 4;

  std::map<std::string, RawTensor> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    need(2, "name length");
    const auto name_len = get_le<std::uint16_t>(data.data() + pos);
    pos += 2;
    need(name_len, "entry name");
    std::string name(data.data() + pos, name_len);
    pos += name_len;
    need(2, ("header of entry " + name).c_str());
    const auto dtype = static_cast<std::uint8_t>(data[pos]);
    const auto ndims = static_cast<std::uint8_t>(data[pos + 1]);
    pos += 2;
    if (dtype != 0) throw ParseError("unsupported dtype in entry " + name, pos - 2);
    RawTensor t;
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < ndims; ++d) {
      need(4, ("dims of entry " + name).c_str());
      const auto dim = get_le<std::uint32_t>(data.data() + pos);
      pos += 4;
      t.dims.push_back(dim);
      n *= dim;
    }
    need(n * sizeof(float), ("payload of entry " + name).c_str());
    t.data.resize(n);
    std::memcpy(t.data.data(), data.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
    if (!entries.emplace(name, std::move(t)).second)
      throw ParseError("duplicate entry " + name, pos);
  }
  return entries;
}

}  // namespace detail

// Overwrites the values of an already-shaped model. Missing, extra, or
// shape-mismatched entries raise errors naming the offending entry.
inline void load_weights(ModelParams& m, const std::string& path) {
  auto entries = detail::read_weight_entries(path);
  for_each_tensor(m, [&](const std::string& name, const std::vector<std::uint32_t>& dims,
                         float* data, std::size_t n) {
    const auto it = entries.find(name);
    if (it == entries.end())
      throw ValidationError("weights file is missing entry " + name);
    if (it->second.dims != dims)
      throw ValidationError("shape mismatch in entry " + name);
    std::copy(it->second.data.begin(), it->second.data.end(), data);
    entries.erase(it);
    (void)n;
  });
  if (!entries.empty())
    throw ValidationError("weights file has unexpected entry " + entries.begin()->first);
}

}  // namespace evs
