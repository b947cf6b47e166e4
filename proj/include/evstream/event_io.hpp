#pragma once

// Event file I/O. Two formats, selected by extension:
//   .csv  — text, comment line "# width=W height=H", header "t_us,x,y,p,label"
//   .evs  — binary "EVS1": u16 width, u16 height, u64 count (little endian),
//           then 16-byte records u64 t_us, u16 x, u16 y, i8 p, u8 label,
//           2 zero pad bytes.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evstream/errors.hpp"
#include "evstream/events.hpp"

namespace evs {

static_assert(std::endian::native == std::endian::little,
              "event and weight containers assume a little-endian host");

inline constexpr char kCsvHeader[] = "t_us,x,y,p,label";
inline constexpr char kEventMagic[4] = {'E', 'V', 'S', '1'};
inline constexpr std::size_t kEventRecordSize = 16;

namespace detail {

inline bool has_suffix(std::string_view s, std::string_view suf) {
  return s.size() >= suf.size() && s.substr(s.size() - suf.size()) == suf;
}

template <typename T>
inline void put_le(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
inline T get_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline void check_stream_valid(const SensorGeometry& geom,
                               std::span<const LabeledEvent> stream) {
  geom.validate();
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto& e = stream[i].event;
    if (i > 0 && e.t_us < prev)
      throw ValidationError("stream is not time-sorted at event " + std::to_string(i));
    if (e.x >= geom.width || e.y >= geom.height)
      throw ValidationError("event " + std::to_string(i) + " outside sensor bounds");
    prev = e.t_us;
  }
}

template <typename T>
inline T parse_int_field(std::string_view field, const char* what, std::uint64_t line) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && field.front() == '+') ++first;  // allow "+1" polarity
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw ParseError(std::string("bad ") + what + " field '" + std::string(field) + "'", line);
  return value;
}

}  // namespace detail

inline void write_events_csv(const std::string& path, const SensorGeometry& geom,
                             std::span<const LabeledEvent> stream) {
  detail::check_stream_valid(geom, stream);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ParseError("cannot open '" + path + "' for writing", 0);
  f << "# width=" << geom.width << " height=" << geom.height << "\n";
  f << kCsvHeader << "\n";
  for (const auto& le : stream) {
    f << le.event.t_us << ',' << le.event.x << ',' << le.event.y << ','
      << static_cast<int>(le.event.p) << ',' << static_cast<int>(le.label) << "\n";
  }
  if (!f) throw ParseError("write failure on '" + path + "'", 0);
}

inline void write_events_binary(const std::string& path, const SensorGeometry& geom,
                                std::span<const LabeledEvent> stream) {
  detail::check_stream_valid(geom, stream);
  std::string buf;
  buf.reserve(16 + stream.size() * kEventRecordSize);
  buf.append(kEventMagic, 4);
  detail::put_le<std::uint16_t>(buf, geom.width);
  detail::put_le<std::uint16_t>(buf, geom.height);
  detail::put_le<std::uint64_t>(buf, stream.size());
  for (const auto& le : stream) {
    detail::put_le<std::uint64_t>(buf, le.event.t_us);
    detail::put_le<std::uint16_t>(buf, le.event.x);
    detail::put_le<std::uint16_t>(buf, le.event.y);
    buf.push_back(static_cast<char>(le.event.p));
    buf.push_back(static_cast<char>(le.label));
    buf.push_back(0);
    buf.push_back(0);
  }
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw ParseError("cannot open '" + path + "' for writing", 0);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw ParseError("write failure on '" + path + "'", 0);
}

inline void write_events(const std::string& path, const SensorGeometry& geom,
                         std::span<const LabeledEvent> stream) {
  if (detail::has_suffix(path, ".csv"))
    write_events_csv(path, geom, stream);
  else
    write_events_binary(path, geom, stream);
}

// Parses one CSV data line "t_us,x,y,p,label". `line` is 1-based, used for
// parse errors only.
inline LabeledEvent parse_csv_event(std::string_view text, std::uint64_t line) {
  std::array<std::string_view, 5> field;
  std::size_t n = 0;
  while (n < 5) {
    const std::size_t comma = text.find(',');
    field[n++] = text.substr(0, comma);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (n != 5 || field[4].find(',') != std::string_view::npos)
    throw ParseError("expected 5 comma-separated fields", line);

  LabeledEvent le;
  le.event.t_us = detail::parse_int_field<std::uint64_t>(field[0], "t_us", line);
  le.event.x = detail::parse_int_field<std::uint16_t>(field[1], "x", line);
  le.event.y = detail::parse_int_field<std::uint16_t>(field[2], "y", line);
  const int p = detail::parse_int_field<int>(field[3], "polarity", line);
  if (p != 1 && p != -1) throw ParseError("polarity must be -1 or +1", line);
  le.event.p = static_cast<std::int8_t>(p);
  const int label = detail::parse_int_field<int>(field[4], "label", line);
  if (label < 0 || label > 1) throw ParseError("label must be 0 or 1", line);
  le.label = static_cast<std::uint8_t>(label);
  return le;
}

inline std::pair<SensorGeometry, std::vector<LabeledEvent>> read_events_csv(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open '" + path + "'", 0);

  SensorGeometry geom{0, 0};
  bool have_geom = false;
  bool have_header = false;
  std::vector<LabeledEvent> stream;
  std::string linebuf;
  std::uint64_t lineno = 0;
  std::uint64_t prev_t = 0;

  while (std::getline(f, linebuf)) {
    ++lineno;
    std::string_view line(linebuf);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      unsigned w = 0, h = 0;
      if (std::sscanf(linebuf.c_str(), "# width=%u height=%u", &w, &h) == 2) {
        if (w == 0 || w > 65535 || h == 0 || h > 65535)
          throw ParseError("geometry out of range", lineno);
        geom = {static_cast<std::uint16_t>(w), static_cast<std::uint16_t>(h)};
        have_geom = true;
      }
      continue;
    }
    if (!have_header) {
      if (line != kCsvHeader)
        throw ParseError("expected header '" + std::string(kCsvHeader) + "'", lineno);
      have_header = true;
      continue;
    }
    LabeledEvent le = parse_csv_event(line, lineno);
    if (!stream.empty() && le.event.t_us < prev_t)
      throw ParseError("non-monotone timestamp", lineno);
    prev_t = le.event.t_us;
    stream.push_back(le);
  }
  if (!have_header) throw ParseError("missing CSV header", lineno);

  if (!have_geom) {
    // Legacy files without the geometry comment: infer from coordinates.
    std::uint16_t w = 1, h = 1;
    for (const auto& le : stream) {
      w = std::max<std::uint16_t>(w, le.event.x + 1);
      h = std::max<std::uint16_t>(h, le.event.y + 1);
    }
    geom = {w, h};
  }
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (stream[i].event.x >= geom.width || stream[i].event.y >= geom.height)
      throw ParseError("event outside declared geometry", i + 3);
  }
  return {geom, std::move(stream)};
}

inline std::pair<SensorGeometry, std::vector<LabeledEvent>> read_events_binary(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open '" + path + "'", 0);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (data.size() < 16) throw ParseError("truncated header", data.size());
  if (std::memcmp(data.data(), kEventMagic, 4) != 0)
    throw ParseError("bad magic, expected 'EVS1'", 0);

  SensorGeometry geom;
  geom.width = detail::get_le<std::uint16_t>(data.data() + 4);
  geom.height = detail::get_le<std::uint16_t>(data.data() + 6);
  geom.validate();
  const std::uint64_t count = detail::get_le<std::uint64_t>(data.data() + 8);
  const std::uint64_t need = 16 + count * kEventRecordSize;
  if (data.size() < need)
    throw ParseError("truncated record: file ends mid-stream", data.size());

  std::vector<LabeledEvent> stream;
  stream.reserve(count);
  std::uint64_t prev_t = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const char* rec = data.data() + 16 + i * kEventRecordSize;
    const std::uint64_t off = 16 + i * kEventRecordSize;
    LabeledEvent le;
    le.event.t_us = detail::get_le<std::uint64_t>(rec);
    le.event.x = detail::get_le<std::uint16_t>(rec + 8);
    le.event.y = detail::get_le<std::uint16_t>(rec + 10);
    const std::int8_t p = static_cast<std::int8_t>(rec[12]);
    if (p != 1 && p != -1) throw ParseError("polarity must be -1 or +1", off + 12);
    le.event.p = p;
    le.label = static_cast<std::uint8_t>(rec[13]);
    if (le.label > 1) throw ParseError("label must be 0 or 1", off + 13);
    if (le.event.x >= geom.width || le.event.y >= geom.height)
      throw ParseError("event outside sensor bounds", off);
    if (i > 0 && le.event.t_us < prev_t)
      throw ParseError("non-monotone timestamp", off);
    prev_t = le.event.t_us;
    stream.push_back(le);
  }
  return {geom, std::move(stream)};
}

inline std::pair<SensorGeometry, std::vector<LabeledEvent>> read_events(
    const std::string& path) {
  if (detail::has_suffix(path, ".csv")) return read_events_csv(path);
  return read_events_binary(path);
}

}  // namespace evs
