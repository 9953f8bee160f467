#pragma once

// Ingestion of a patch-labelled dataset laid out either as per-grade
// subfolders (root/NC, root/G3, ...) or as a label CSV (root/labels.csv with an
// image_name column and either a `label` column or one-hot NC,G3,G4,G5
// columns). An optional root/split.csv (image_name,split) assigns splits.

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "sslgrade/data/image.hpp"
#include "sslgrade/data/manifest.hpp"
#include "sslgrade/data/patch.hpp"
#include "sslgrade/error.hpp"
#include "sslgrade/tensor.hpp"

namespace sslgrade {

struct IngestReport {
  std::vector<PatchRecord> records;
  std::array<std::size_t, kGradeCount> per_class{};
  std::size_t unlabeled = 0;
  std::size_t skipped = 0;
  std::vector<std::string> messages;

  std::string summary() const {
    std::ostringstream os;
    os << records.size() << " records";
    for (std::size_t g = 0; g < kGradeCount; ++g) os << ", " << kGradeNames[g] << ' ' << per_class[g];
    if (unlabeled) os << ", unlabeled " << unlabeled;
    os << ", skipped " << skipped;
    return os.str();
  }
};

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    for (auto& f : fields)
      if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline std::optional<std::size_t> column(const std::vector<std::string>& header, std::string_view name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

inline bool truthy(const std::string& s) {
  try {
    return std::stod(s) > 0.5;
  } catch (const std::logic_error&) {
    return false;
  }
}

struct Candidate {
  std::filesystem::path path;
  std::optional<Grade> label;
};

inline std::vector<Candidate> candidates_from_labels(const std::filesystem::path& root, const std::filesystem::path& csv) {
  const auto rows = read_csv_rows(csv);
  if (rows.empty()) throw DataError(csv.string() + ": empty label file");
  const auto& header = rows.front();
  auto name_col = column(header, "image_name");
  if (!name_col) name_col = column(header, "patch_path");
  if (!name_col) throw DataError(csv.string() + ": missing image_name column");
  const auto label_col = column(header, "label");
  std::array<std::optional<std::size_t>, kGradeCount> onehot;
  for (std::size_t g = 0; g < kGradeCount; ++g) onehot[g] = column(header, kGradeNames[g]);
  const auto g4c = column(header, "G4C");

  const auto image_dir = std::filesystem::is_directory(root / "images") ? root / "images" : root;
  std::vector<Candidate> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (*name_col >= row.size()) throw DataError(csv.string() + ":" + std::to_string(r + 1) + ": short row");
    Candidate c{image_dir / row[*name_col], std::nullopt};
    if (label_col && *label_col < row.size() && !row[*label_col].empty()) {
      c.label = parse_grade(row[*label_col]);
      if (!c.label && row[*label_col].size() == 1 && row[*label_col][0] >= '0' && row[*label_col][0] <= '3')
        c.label = static_cast<Grade>(row[*label_col][0] - '0');
      if (!c.label)
        throw DataError(csv.string() + ":" + std::to_string(r + 1) + ": unknown label '" + row[*label_col] + "'");
    } else {
      for (std::size_t g = 0; g < kGradeCount; ++g)
        if (onehot[g] && *onehot[g] < row.size() && truthy(row[*onehot[g]])) c.label = static_cast<Grade>(g);
      // Cribriform G4 is a sub-pattern of G4.
      if (!c.label && g4c && *g4c < row.size() && truthy(row[*g4c])) c.label = Grade::G4;
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<Candidate> candidates_from_folders(const std::filesystem::path& root) {
  std::vector<Candidate> out;
  for (std::size_t g = 0; g < kGradeCount; ++g) {
    const auto dir = root / std::string(kGradeNames[g]);
    if (!std::filesystem::is_directory(dir)) continue;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (auto& f : files) out.push_back({std::move(f), static_cast<Grade>(g)});
  }
  return out;
}

// "<slide>_Block_Region_..._xini_<x>_yini_<y>" style names carry the source
// slide and window origin.
inline void parse_origin(const std::string& stem, PatchRecord& r) {
  static const std::regex origin(R"(xini_(\d+)_yini_(\d+))");
  std::smatch m;
  if (std::regex_search(stem, m, origin)) {
    r.x = std::stoul(m[1].str());
    r.y = std::stoul(m[2].str());
  }
  const auto cut = stem.find('_');
  r.source_id = cut == std::string::npos ? stem : stem.substr(0, cut);
}

}  // namespace detail

inline IngestReport ingest_sicap(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  IngestReport report;
  const auto labels_csv = root / "labels.csv";
  auto candidates = std::filesystem::exists(labels_csv) ? detail::candidates_from_labels(root, labels_csv)
                                                        : detail::candidates_from_folders(root);

  std::map<std::string, Split> splits;
  if (std::filesystem::exists(root / "split.csv")) {
    const auto rows = detail::read_csv_rows(root / "split.csv");
    if (rows.empty()) throw DataError("split.csv is empty");
    const auto name_col = detail::column(rows.front(), "image_name");
    const auto split_col = detail::column(rows.front(), "split");
    if (!name_col || !split_col) throw DataError("split.csv needs image_name and split columns");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (std::max(*name_col, *split_col) >= row.size()) continue;
      const auto s = parse_split(row[*split_col]);
      if (!s) throw DataError("split.csv:" + std::to_string(r + 1) + ": unknown split '" + row[*split_col] + "'");
      splits[row[*name_col]] = *s;
    }
  }

  std::sort(candidates.begin(), candidates.end(),
            [](const detail::Candidate& a, const detail::Candidate& b) { return a.path < b.path; });
  for (auto& c : candidates) {
    try {
      (void)read_image(c.path);  // full decode so truncated pixel data is caught
    } catch (const DataError& e) {
      ++report.skipped;
      report.messages.push_back(std::string("skipped: ") + e.what());
      continue;
    }
    PatchRecord r;
    r.patch_path = std::filesystem::absolute(c.path).lexically_normal().string();
    detail::parse_origin(c.path.stem().string(), r);
    r.label = c.label;
    if (auto it = splits.find(c.path.filename().string()); it != splits.end()) r.split = it->second;
    if (r.label) {
      ++report.per_class[static_cast<std::size_t>(*r.label)];
    } else {
      ++report.unlabeled;
    }
    report.records.push_back(std::move(r));
  }
  if (report.records.empty()) report.messages.push_back("0 records");
  return report;
}

// Loads patches into an (n, 3, size, size) tensor scaled to [0, 1], resizing
// any patch whose size differs.
inline Tensor4<float> load_patches(const std::vector<PatchRecord>& records, const std::filesystem::path& manifest,
                                   std::size_t size) {
  Tensor4<float> out(records.size(), 3, size, size);
  for (std::size_t i = 0; i < records.size(); ++i) {
    Image img = read_image(resolve_patch_path(manifest, records[i]));
    if (img.width != size || img.height != size) img = resize_bilinear(img, size);
    auto dst = out.sample(i);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) dst[(c * size + y) * size + x] = img.at(x, y, c) / 255.0f;
  }
  return out;
}

inline std::vector<int> labels_of(const std::vector<PatchRecord>& records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw DataError("record " + r.patch_path + " has no label");
    out.push_back(static_cast<int>(*r.label));
  }
  return out;
}

}  // namespace sslgrade
