#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sslgrade/error.hpp"

namespace sslgrade {

// Ordinal Gleason grading classes.
enum class Grade : int { NC = 0, G3 = 1, G4 = 2, G5 = 3 };
inline constexpr std::size_t kGradeCount = 4;
inline constexpr std::array<std::string_view, kGradeCount> kGradeNames{"NC", "G3", "G4", "G5"};

inline std::string_view grade_name(Grade g) { return kGradeNames.at(static_cast<std::size_t>(g)); }

inline std::optional<Grade> parse_grade(std::string_view s) {
  for (std::size_t i = 0; i < kGradeCount; ++i)
    if (kGradeNames[i] == s) return static_cast<Grade>(i);
  return std::nullopt;
}

enum class Split { unassigned, train, val, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned" || s.empty()) return Split::unassigned;
  return std::nullopt;
}

struct PatchRecord {
  std::string patch_path;
  std::string source_id;
  std::size_t x = 0;
  std::size_t y = 0;
  std::optional<Grade> label;
  Split split = Split::unassigned;

  bool operator==(const PatchRecord&) const = default;
};

inline constexpr std::string_view kManifestHeader = "patch_path,source_id,x,y,label,split";

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  for (char ch : line) {
    if (ch == ',') {
      out.emplace_back();
    } else {
      out.back().push_back(ch);
    }
  }
  return out;
}

inline void write_manifest(const std::vector<PatchRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    for (const auto* field : {&r.patch_path, &r.source_id})
      if (field->find_first_of(",\n\r") != std::string::npos)
        throw DataError("manifest field contains a comma or newline: " + *field);
    if (r.patch_path.empty()) throw DataError("manifest record has an empty patch_path");
    out << r.patch_path << ',' << r.source_id << ',' << r.x << ',' << r.y << ','
        << (r.label ? grade_name(*r.label) : std::string_view{}) << ',' << split_name(r.split) << '\n';
  }
  if (!out) throw DataError("write failed for manifest " + path.string());
}

inline std::vector<PatchRecord> parse_manifest(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty manifest (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw DataError(source + ":1: unexpected manifest header");
  std::vector<PatchRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(lineno) + ": ";
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw DataError(where + "expected 6 fields, got " + std::to_string(f.size()));
    PatchRecord r;
    r.patch_path = f[0];
    r.source_id = f[1];
    if (r.patch_path.empty()) throw DataError(where + "empty patch_path");
    try {
      std::size_t used = 0;
      r.x = std::stoul(f[2], &used);
      if (used != f[2].size() || f[2].front() == '-') throw std::invalid_argument("x");
      r.y = std::stoul(f[3], &used);
      if (used != f[3].size() || f[3].front() == '-') throw std::invalid_argument("y");
    } catch (const std::logic_error&) {
      throw DataError(where + "origin must be non-negative integers");
    }
    if (!f[4].empty()) {
      r.label = parse_grade(f[4]);
      if (!r.label) throw DataError(where + "unknown grade label '" + f[4] + "'");
    }
    const auto split = parse_split(f[5]);
    if (!split) throw DataError(where + "unknown split '" + f[5] + "'");
    r.split = *split;
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<PatchRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("manifest not found: " + path.string());
  return parse_manifest(in, path.string());
}

// Patch paths in a manifest are relative to the manifest's directory unless
// absolute.
inline std::filesystem::path resolve_patch_path(const std::filesystem::path& manifest, const PatchRecord& r) {
  const std::filesystem::path p(r.patch_path);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

}  // namespace sslgrade
