#pragma once

// Feature extraction plus the on-disk evaluation artefacts: metrics JSON,
// confusion CSV/SVG heatmap, and t-SNE scatter CSV/SVG.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sslgrade/data/manifest.hpp"
#include "sslgrade/error.hpp"
#include "sslgrade/eval/metrics.hpp"
#include "sslgrade/eval/tsne.hpp"
#include "sslgrade/model.hpp"
#include "sslgrade/train.hpp"

namespace sslgrade {

// Per-patch activations of `layer`, flattened to (n, features).
template <class Real>
Tensor4<Real> extract_features(const ModelGraph<Real>& g, const Tensor4<Real>& patches,
                               std::string_view layer = kPooledFeatures, std::size_t batch_size = 16) {
  if (g.find(layer) == nullptr) throw ShapeError("unknown feature layer: " + std::string(layer));
  Tensor4<Real> out;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < patches.n(); start += batch_size) {
    rows.resize(std::min(batch_size, patches.n() - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto acts = forward(g, gather(patches, rows), Mode::infer, layer);
    const auto& f = acts.at(layer);
    if (out.empty()) out = Tensor4<Real>::matrix(patches.n(), f.sample_size());
    std::copy(f.data().begin(), f.data().end(), out.sample(start).begin());
  }
  if (patches.n() == 0) {
    const auto& d = g.input_dims();
    const auto acts = forward(g, Tensor4<Real>(1, d[0], d[1], d[2]), Mode::infer, layer);
    out = Tensor4<Real>::matrix(0, acts.at(layer).sample_size());
  }
  return out;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json cm = nlohmann::json::array();
  for (std::size_t i = 0; i < r.confusion.classes(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < r.confusion.classes(); ++j) row.push_back(r.confusion(i, j));
    cm.push_back(row);
  }
  return {{"accuracy", r.accuracy},
          {"f1_per_class", r.f1_per_class},
          {"f1_macro", r.f1_macro},
          {"kappa_quadratic", r.kappa_quadratic},
          {"confusion", cm}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.accuracy = j.at("accuracy").get<double>();
    r.f1_per_class = j.at("f1_per_class").get<std::vector<double>>();
    r.f1_macro = j.at("f1_macro").get<double>();
    r.kappa_quadratic = j.at("kappa_quadratic").get<double>();
    const auto rows = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
    std::vector<std::int64_t> flat;
    for (const auto& row : rows) {
      if (row.size() != rows.size()) throw DataError("confusion matrix in metrics JSON is not square");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    r.confusion = ConfusionMatrix(rows.size(), std::move(flat));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metrics JSON: ") + e.what());
  }
  return r;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

inline std::string_view class_name(std::size_t c) {
  return c < kGradeCount ? kGradeNames[c] : std::string_view("?");
}

inline constexpr std::array<std::string_view, 4> kClassColors{"#2b8a3e", "#1971c2", "#f08c00", "#c92a2a"};

inline std::string svg_heatmap(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  const int cell = 60, margin = 70;
  const int size = margin + static_cast<int>(k) * cell + 10;
  std::int64_t peak = 1;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) peak = std::max(peak, cm(i, j));
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  os << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">predicted</text>\n";
  os << "<text x=\"5\" y=\"" << margin - 10 << "\" font-size=\"14\">true</text>\n";
  for (std::size_t i = 0; i < k; ++i) {
    os << "<text x=\"" << margin + static_cast<int>(i) * cell + cell / 3 << "\" y=\"" << margin - 10
       << "\" font-size=\"12\">" << class_name(i) << "</text>\n";
    os << "<text x=\"20\" y=\"" << margin + static_cast<int>(i) * cell + cell / 2 << "\" font-size=\"12\">"
       << class_name(i) << "</text>\n";
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double t = static_cast<double>(cm(i, j)) / static_cast<double>(peak);
      const int shade = static_cast<int>(255 - 200 * t);
      const int x = margin + static_cast<int>(j) * cell, y = margin + static_cast<int>(i) * cell;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
         << shade << ',' << shade << ",255)\" stroke=\"#444\"/>\n";
      os << "<text x=\"" << x + cell / 3 << "\" y=\"" << y + cell / 2 + 4 << "\" font-size=\"13\">" << cm(i, j)
         << "</text>\n";
    }
  os << "</svg>\n";
  return os.str();
}

inline std::string svg_scatter(const TsneResult& t, std::span<const int> labels) {
  const int size = 480, pad = 20;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (t.n > 0) {
    xmin = xmax = t.at(0, 0);
    ymin = ymax = t.at(0, 1);
    for (std::size_t i = 0; i < t.n; ++i) {
      xmin = std::min(xmin, t.at(i, 0)), xmax = std::max(xmax, t.at(i, 0));
      ymin = std::min(ymin, t.at(i, 1)), ymax = std::max(ymax, t.at(i, 1));
    }
  }
  const double sx = xmax > xmin ? (size - 2 * pad) / (xmax - xmin) : 1.0;
  const double sy = ymax > ymin ? (size - 2 * pad) / (ymax - ymin) : 1.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  char buf[160];
  for (std::size_t i = 0; i < t.n; ++i) {
    const int label = i < labels.size() ? labels[i] : -1;
    const auto color = label >= 0 && static_cast<std::size_t>(label) < kClassColors.size()
                           ? kClassColors[static_cast<std::size_t>(label)]
                           : std::string_view("#868e96");
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%.*s\"/>\n",
                  pad + (t.at(i, 0) - xmin) * sx, pad + (ymax - t.at(i, 1)) * sy, static_cast<int>(color.size()),
                  color.data());
    os << buf;
  }
  for (std::size_t c = 0; c < kGradeCount; ++c)
    os << "<text x=\"" << pad + 50 * static_cast<int>(c) << "\" y=\"14\" font-size=\"12\" fill=\"" << kClassColors[c]
       << "\">" << kGradeNames[c] << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace detail

struct ReportFiles {
  std::filesystem::path metrics_json, confusion_csv, confusion_svg, tsne_csv, tsne_svg;
};

inline ReportFiles write_metrics(const MetricsReport& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  ReportFiles files;
  files.metrics_json = out_dir / "metrics.json";
  detail::open_output(files.metrics_json) << to_json(r).dump(2) << '\n';

  files.confusion_csv = out_dir / "confusion.csv";
  {
    auto out = detail::open_output(files.confusion_csv);
    out << "true\\pred";
    for (std::size_t j = 0; j < r.confusion.classes(); ++j) out << ',' << detail::class_name(j);
    out << '\n';
    for (std::size_t i = 0; i < r.confusion.classes(); ++i) {
      out << detail::class_name(i);
      for (std::size_t j = 0; j < r.confusion.classes(); ++j) out << ',' << r.confusion(i, j);
      out << '\n';
    }
  }
  files.confusion_svg = out_dir / "confusion.svg";
  detail::open_output(files.confusion_svg) << detail::svg_heatmap(r.confusion);
  return files;
}

inline ReportFiles write_embedding(const TsneResult& t, std::span<const int> labels, const std::filesystem::path& out_dir) {
  if (labels.size() != t.n) throw ShapeError("embedding labels do not match point count");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  ReportFiles files;
  files.tsne_csv = out_dir / "tsne.csv";
  {
    auto out = detail::open_output(files.tsne_csv);
    out << "x,y,label\n";
    for (std::size_t i = 0; i < t.n; ++i)
      out << format_real(t.at(i, 0)) << ',' << format_real(t.dims > 1 ? t.at(i, 1) : 0.0) << ','
          << (labels[i] >= 0 ? detail::class_name(static_cast<std::size_t>(labels[i])) : std::string_view()) << '\n';
  }
  files.tsne_svg = out_dir / "tsne.svg";
  detail::open_output(files.tsne_svg) << detail::svg_scatter(t, labels);
  return files;
}

// Writes the metrics artefacts and, when an embedding is given, the t-SNE ones.
inline ReportFiles report(const MetricsReport& r, const TsneResult* embedding, std::span<const int> labels,
                          const std::filesystem::path& out_dir) {
  auto files = write_metrics(r, out_dir);
  if (embedding != nullptr) {
    const auto e = write_embedding(*embedding, labels, out_dir);
    files.tsne_csv = e.tsne_csv;
    files.tsne_svg = e.tsne_svg;
  }
  return files;
}

}  // namespace sslgrade
