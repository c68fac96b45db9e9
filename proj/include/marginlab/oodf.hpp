#pragma once

// OODF embedding files.
//
//   offset  size    field
//   0       4       magic "OODF"
//   4       1       u8 version (= 1)
//   5       4       u32 N
//   9       4       u32 D
//   13      4*N*D   f32 features, row-major
//   ...     4*N     i32 labels
//   ...     N       u8 ood flags (0 = ID, 1 = OOD, 0xFF = not applicable)
//
// All multi-byte fields are little-endian. Features widen to double on load.
// A CSV form with header "label,flag,f0,...,f{D-1}" is accepted on input.

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "marginlab/embedding_set.hpp"

namespace marginlab::oodf {

inline constexpr std::array<char, 4> kMagic{'O', 'O', 'D', 'F'};
inline constexpr std::uint8_t kVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

// Bounds-checked little-endian reader over an in-memory buffer.
class Reader {
 public:
  Reader(const std::string& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

  [[noreturn]] void error(const std::string& what) const {
    std::ostringstream msg;
    msg << source_ << ": offset " << pos_ << ": " << what;
    fail(ErrorKind::format, msg.str());
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) error("unexpected end of file");
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::format, path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::format, path.string() + ": cannot open file for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::format, path.string() + ": write failed");
}

}  // namespace detail

inline std::string encode(const EmbeddingSet& set) {
  set.validate();
  std::string out(kMagic.begin(), kMagic.end());
  out.push_back(static_cast<char>(kVersion));
  detail::put_u32(out, static_cast<std::uint32_t>(set.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(set.dim()));
  for (double v : set.features.data()) detail::put_f32(out, static_cast<float>(v));
  for (std::int32_t l : set.labels) detail::put_u32(out, static_cast<std::uint32_t>(l));
  for (std::uint8_t f : set.ood_flags) out.push_back(static_cast<char>(f));
  return out;
}

inline EmbeddingSet decode(const std::string& bytes, const std::string& source = "<memory>") {
  detail::Reader in(bytes, source);
  if (in.raw(4) != std::string(kMagic.begin(), kMagic.end())) in.error("bad magic, expected OODF");
  const std::uint8_t version = in.u8();
  if (version != kVersion) {
    std::ostringstream msg;
    msg << source << ": unsupported OODF version " << int(version);
    fail(ErrorKind::unsupported_version, msg.str());
  }
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  const std::uint64_t payload = static_cast<std::uint64_t>(n) * d * 4 + std::uint64_t{n} * 5;
  if (payload > bytes.size()) in.error("header declares more data than the file holds");

  EmbeddingSet set;
  set.features = Matrix(n, d);
  for (double& v : set.features.data()) v = in.f32();
  set.labels.resize(n);
  for (auto& l : set.labels) l = static_cast<std::int32_t>(in.u32());
  set.ood_flags.resize(n);
  for (auto& f : set.ood_flags) f = in.u8();
  if (!in.at_end()) in.error("trailing bytes after OODF payload");
  return set;
}

inline void write(const std::filesystem::path& path, const EmbeddingSet& set) {
  detail::write_file(path, encode(set));
}

inline EmbeddingSet parse_csv(const std::string& text, const std::string& source = "<memory>") {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto error = [&](const std::string& what) {
    std::ostringstream msg;
    msg << source << ": line " << line_no << ": " << what;
    fail(ErrorKind::format, msg.str());
  };
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };

  if (!std::getline(in, line)) error("empty CSV");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "label" || header[1] != "flag")
    error("expected header label,flag,f0,...");
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j + 2] != "f" + std::to_string(j)) error("unexpected feature column " + header[j + 2]);

  EmbeddingSet set;
  set.features = Matrix(0, d);
  Vector row(d);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != d + 2) error("wrong number of columns");
    try {
      std::size_t used = 0;
      const long label = std::stol(cells[0], &used);
      if (used != cells[0].size()) error("malformed label");
      const long flag = cells[1].empty() ? kFlagNotApplicable : std::stol(cells[1]);
      if (flag != 0 && flag != 1 && flag != kFlagNotApplicable) error("flag must be 0, 1 or 255");
      for (std::size_t j = 0; j < d; ++j) row[j] = std::stod(cells[j + 2]);
      set.push_back(row, static_cast<std::int32_t>(label), static_cast<std::uint8_t>(flag));
    } catch (const std::logic_error&) {
      error("malformed number");
    }
  }
  return set;
}

/// Loads an OODF file, or the CSV form when the path ends in ".csv".
inline EmbeddingSet read(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (path.extension() == ".csv") return parse_csv(bytes, path.string());
  return decode(bytes, path.string());
}

}  // namespace marginlab::oodf
