// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_IO_HPP_
#define PCEE_IO_HPP_

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace pcee {

/// Bad or inconsistent input data (files, headers, diagrams). Precondition
/// violations on arguments use std::invalid_argument instead.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trace validation failure, optionally pinned to a record index.
class TraceError : public DataError {
 public:
  explicit TraceError(const std::string& what, std::optional<std::size_t> record = std::nullopt)
      : DataError(record ? "record " + std::to_string(*record) + ": " + what : what), record_(record) {}

  std::optional<std::size_t> record() const noexcept { return record_; }

 private:
  std::optional<std::size_t> record_;
};

/// Shortest decimal that parses back to exactly `v`. Always contains a '.'
/// or exponent so JSON readers keep it a floating value (and keep -0).
template <typename Float>
std::string format_shortest(Float v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_shortest: to_chars failed");
  std::string s(buf, end);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError("read failed: " + path.string());
  return data;
}

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw DataError("write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw DataError("cannot rename into " + path.string() + ": " + ec.message());
  }
}

}  // namespace pcee

#endif  // PCEE_IO_HPP_
