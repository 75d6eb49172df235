#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace grokgeom {

/// %.17g, enough for a lossless f64 round-trip; "nan" for NaN.
std::string fmt_f64(double x);

template <class Int>
std::string fmt_opt(const std::optional<Int>& v) {
  return v ? std::to_string(*v) : std::string();
}

/// Writes to <path>.tmp and renames over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace grokgeom
