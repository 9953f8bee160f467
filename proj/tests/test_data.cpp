#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <jpeglib.h>

#include "sslgrade/data/image.hpp"
#include "sslgrade/data/ingest.hpp"
#include "sslgrade/data/manifest.hpp"
#include "sslgrade/data/patch.hpp"
#include "sslgrade/data/synth.hpp"
#include "sslgrade/random.hpp"

using namespace sslgrade;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sslgrade_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image gradient_image(std::size_t w, std::size_t h) {
  Image img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>((x * 7 + y * 3 + c * 50) % 256);
  return img;
}

void write_jpeg(const Image& img, const fs::path& path) {
  const auto bytes = quantize(img);
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr err{};
  cinfo.err = jpeg_std_error(&err);
  jpeg_create_compress(&cinfo);
  FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 95, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(bytes.data() + cinfo.next_scanline * img.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Brute force: every integer origin whose window fits, kept if on the stride lattice.
std::size_t brute_force_count(std::size_t extent, std::size_t patch, std::size_t stride) {
  std::size_t n = 0;
  for (std::size_t o = 0; o + patch <= extent; ++o) n += o % stride == 0 ? 1 : 0;
  return n;
}

}  // namespace

// ---- patchify

TEST(PatchParams, StrideFromOverlap) {
  EXPECT_EQ(PatchParams{}.stride(), 256u);
  EXPECT_EQ((PatchParams{512, 0.0, 128}.stride()), 512u);
  EXPECT_EQ((PatchParams{5, 0.5, 4}.stride()), 3u);  // round(2.5) away from zero
  EXPECT_THROW((PatchParams{512, 1.0, 128}.stride()), ShapeError);
  EXPECT_THROW((PatchParams{512, -0.1, 128}.stride()), ShapeError);
}

TEST(Patchify, WindowCountExamples) {
  const PatchParams p{512, 0.5, 16};
  EXPECT_EQ(patchify(Image(512, 512), p).size(), 1u);
  EXPECT_EQ(patchify(Image(1024, 1024), p).size(), 9u);
  EXPECT_EQ(patchify(Image(768, 768), p).size(), 4u);
  EXPECT_EQ(patchify(Image(511, 1024), p).size(), 0u);
  const auto ps = patchify(Image(1024, 1024), p);
  std::set<std::pair<std::size_t, std::size_t>> origins;
  for (const auto& q : ps) origins.insert({q.x, q.y});
  for (std::size_t y : {0u, 256u, 512u})
    for (std::size_t x : {0u, 256u, 512u}) EXPECT_TRUE(origins.contains({x, y}));
  EXPECT_EQ(ps.front().pixels.width, 16u);
}

TEST(Patchify, CountMatchesBruteForceOnRandomSizes) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t patch = 1 + rng.below(64);
    const double overlap = rng.uniform(0.0, 0.95);
    const PatchParams p{patch, overlap, 4};
    if (std::llround(static_cast<double>(patch) * (1.0 - overlap)) == 0) {
      EXPECT_THROW(p.stride(), ShapeError);
      continue;
    }
    const std::size_t w = rng.below(300), h = rng.below(300);
    const auto xs = window_origins(w, patch, p.stride());
    const auto ys = window_origins(h, patch, p.stride());
    EXPECT_EQ(xs.size(), brute_force_count(w, patch, p.stride()));
    EXPECT_EQ(ys.size(), brute_force_count(h, patch, p.stride()));
    if (w >= patch) EXPECT_EQ(xs.size(), (w - patch) / p.stride() + 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      EXPECT_LE(xs[i] + patch, w);
      if (i > 0) EXPECT_EQ(xs[i] - xs[i - 1], p.stride());
    }
  }
}

TEST(Patchify, PatchContentComesFromItsWindow) {
  const auto img = gradient_image(40, 30);
  const auto ps = patchify(img, PatchParams{20, 0.5, 20});
  ASSERT_EQ(ps.size(), 3u * 2u);
  for (const auto& p : ps)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(p.pixels.at(3, 5, c), img.at(p.x + 3, p.y + 5, c));
}

// ---- resize

TEST(Resize, IdentityConstantAndMean) {
  const auto img = gradient_image(9, 7);
  EXPECT_EQ(resize_bilinear(img, 9, 7), img);
  Image flat(13, 11, 3, 42.5f);
  const auto r = resize_bilinear(flat, 5);
  for (float v : r.pixels) EXPECT_FLOAT_EQ(v, 42.5f);
  Image two(2, 2, 1);
  two.pixels = {0.f, 1.f, 2.f, 3.f};
  EXPECT_FLOAT_EQ(resize_bilinear(two, 1).pixels[0], 1.5f);
  EXPECT_THROW(resize_bilinear(Image(0, 3), 2), ShapeError);
}

TEST(Resize, OutputBoundedByInputRange) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Image img(1 + rng.below(40), 1 + rng.below(40));
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform(0.0, 255.0));
    const auto out = resize_bilinear(img, 1 + rng.below(50), 1 + rng.below(50));
    for (std::size_t c = 0; c < 3; ++c) {
      float lo = 1e9f, hi = -1e9f;
      for (std::size_t i = c; i < img.pixels.size(); i += 3) lo = std::min(lo, img.pixels[i]), hi = std::max(hi, img.pixels[i]);
      for (std::size_t i = c; i < out.pixels.size(); i += 3) {
        EXPECT_GE(out.pixels[i], lo - 1e-3f);
        EXPECT_LE(out.pixels[i], hi + 1e-3f);
      }
    }
  }
}

// ---- image I/O

TEST(ImageIo, PngAndPpmRoundTripExactly) {
  const auto dir = scratch("io");
  const auto img = gradient_image(17, 9);
  for (const char* name : {"a.png", "a.ppm"}) {
    write_image(img, dir / name);
    EXPECT_EQ(read_image(dir / name), img) << name;
    EXPECT_EQ(probe_image(dir / name), (std::pair<std::size_t, std::size_t>{17, 9}));
  }
}

TEST(ImageIo, JpegDecodes) {
  const auto dir = scratch("jpeg");
  Image flat(24, 16, 3, 0.0f);
  for (std::size_t i = 0; i < flat.pixels.size(); i += 3) flat.pixels[i] = 200, flat.pixels[i + 1] = 100, flat.pixels[i + 2] = 150;
  write_jpeg(flat, dir / "a.jpg");
  const auto back = read_image(dir / "a.jpg");
  ASSERT_EQ(back.width, 24u);
  ASSERT_EQ(back.height, 16u);
  EXPECT_NEAR(back.at(5, 5, 0), 200.0f, 4.0f);
  EXPECT_NEAR(back.at(5, 5, 1), 100.0f, 4.0f);
  EXPECT_EQ(probe_image(dir / "a.jpg"), (std::pair<std::size_t, std::size_t>{24, 16}));
}

TEST(ImageIo, CorruptAndUnknownFilesAreDataErrors) {
  const auto dir = scratch("corrupt");
  write_text(dir / "bad.png", "not a png at all");
  write_text(dir / "bad.jpg", "not a jpeg");
  write_text(dir / "short.ppm", "P6\n4 4\n255\nabc");
  write_text(dir / "x.bmp", "BM");
  for (const char* name : {"bad.png", "bad.jpg", "short.ppm", "x.bmp", "missing.png"})
    EXPECT_THROW(read_image(dir / name), DataError) << name;
  // A valid header with truncated pixel data.
  write_image(gradient_image(64, 64), dir / "whole.png");
  const auto bytes = [&] {
    std::ifstream in(dir / "whole.png", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }();
  write_text(dir / "trunc.png", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_image(dir / "trunc.png"), DataError);
}

// ---- manifest

TEST(Manifest, RoundTripPreservesEveryField) {
  const auto dir = scratch("manifest");
  const std::vector<PatchRecord> records{{"patches/a.png", "slideA", 256, 512, Grade::G4, Split::train},
                                         {"patches/b.png", "slideB", 0, 0, std::nullopt, Split::unassigned},
                                         {"/abs/c.png", "slideC", 3, 9, Grade::NC, Split::test}};
  write_manifest(records, dir / "m.csv");
  EXPECT_EQ(read_manifest(dir / "m.csv"), records);
  std::ifstream in(dir / "m.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "patch_path,source_id,x,y,label,split");
}

TEST(Manifest, ErrorsNameTheLine) {
  std::istringstream g7("patch_path,source_id,x,y,label,split\na.png,s,0,0,G3,train\nb.png,s,0,0,G7,train\n");
  try {
    parse_manifest(g7, "m.csv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("m.csv:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("G7"), std::string::npos) << e.what();
  }
  std::istringstream fields("patch_path,source_id,x,y,label,split\na.png,s,0,0\n");
  EXPECT_THROW(parse_manifest(fields, "m"), DataError);
  std::istringstream negative("patch_path,source_id,x,y,label,split\na.png,s,-4,0,NC,train\n");
  EXPECT_THROW(parse_manifest(negative, "m"), DataError);
  std::istringstream header("path,label\n");
  EXPECT_THROW(parse_manifest(header, "m"), DataError);
  std::istringstream split("patch_path,source_id,x,y,label,split\na.png,s,0,0,NC,holdout\n");
  EXPECT_THROW(parse_manifest(split, "m"), DataError);
}

TEST(Manifest, HeaderOnlyIsEmpty) {
  std::istringstream in("patch_path,source_id,x,y,label,split\n");
  EXPECT_TRUE(parse_manifest(in, "m").empty());
  EXPECT_THROW(read_manifest(scratch("nomanifest") / "absent.csv"), DataError);
}

TEST(Manifest, PathsResolveAgainstManifestDirectory) {
  const PatchRecord rel{"patches/a.png", "s", 0, 0, std::nullopt, Split::unassigned};
  EXPECT_EQ(resolve_patch_path("/runs/x/manifest.csv", rel), fs::path("/runs/x/patches/a.png"));
  const PatchRecord abs{"/data/a.png", "s", 0, 0, std::nullopt, Split::unassigned};
  EXPECT_EQ(resolve_patch_path("/runs/x/manifest.csv", abs), fs::path("/data/a.png"));
}

// ---- synthetic data

TEST(Synth, DeterministicBalancedFiles) {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  const auto ra = synth_generate({8, 8, 8, 8}, 7, a);
  const auto rb = synth_generate({8, 8, 8, 8}, 7, b);
  ASSERT_EQ(ra.size(), 32u);
  EXPECT_EQ(ra, rb);
  std::array<int, 4> counts{};
  for (const auto& r : ra) {
    ++counts[static_cast<std::size_t>(*r.label)];
    const auto img = read_image(a / r.patch_path);
    EXPECT_EQ(img.width, 128u);
    EXPECT_EQ(img, read_image(b / r.patch_path));
  }
  EXPECT_EQ(counts, (std::array<int, 4>{8, 8, 8, 8}));
  EXPECT_TRUE(fs::exists(a / "synth.json"));
  EXPECT_TRUE(synth_generate({0, 0, 0, 0}, 7, scratch("synth_empty")).empty());
}

TEST(Synth, SeedChangesPixels) {
  EXPECT_NE(synth_patch(Grade::G3, 1, 0), synth_patch(Grade::G3, 2, 0));
  EXPECT_EQ(synth_patch(Grade::G3, 1, 0), synth_patch(Grade::G3, 1, 0));
  EXPECT_NE(synth_patch(Grade::G3, 1, 0), synth_patch(Grade::G3, 1, 1));
}

TEST(Synth, ClassesDifferInMeanIntensity) {
  // Class means of the red channel must be well separated relative to the within-class spread.
  std::array<double, 4> mean{};
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t i = 0; i < 6; ++i) {
      const auto img = synth_patch(static_cast<Grade>(g), 3, i);
      double s = 0.0;
      for (std::size_t k = 0; k < img.pixels.size(); k += 3) s += img.pixels[k];
      mean[g] += s / static_cast<double>(img.width * img.height) / 6.0;
    }
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) EXPECT_GT(std::abs(mean[a] - mean[b]), 2.0) << a << " vs " << b;
}

// ---- ingestion

TEST(Ingest, EmptyDirectoryReportsZeroRecords) {
  const auto r = ingest_sicap(scratch("ingest_empty"));
  EXPECT_TRUE(r.records.empty());
  ASSERT_FALSE(r.messages.empty());
  EXPECT_EQ(r.messages.back(), "0 records");
  EXPECT_NE(r.summary().find("0 records"), std::string::npos);
  EXPECT_THROW(ingest_sicap(scratch("ingest_empty") / "absent"), DataError);
}

TEST(Ingest, FolderLayoutSkipsCorruptImages) {
  const auto root = scratch("ingest_folders");
  fs::create_directories(root / "G3");
  fs::create_directories(root / "G5");
  write_image(gradient_image(8, 8), root / "G3" / "s1_xini_512_yini_256.png");
  write_image(gradient_image(8, 8), root / "G3" / "s2.ppm");
  write_image(gradient_image(8, 8), root / "G5" / "s3.png");
  write_text(root / "G5" / "broken.png", "garbage");
  const auto r = ingest_sicap(root);
  EXPECT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.per_class[1], 2u);
  EXPECT_EQ(r.per_class[3], 1u);
  EXPECT_EQ(r.records[0].source_id, "s1");
  EXPECT_EQ(r.records[0].x, 512u);
  EXPECT_EQ(r.records[0].y, 256u);
  bool logged = false;
  for (const auto& m : r.messages) logged = logged || m.find("broken.png") != std::string::npos;
  EXPECT_TRUE(logged);
}

TEST(Ingest, LabelCsvWithOneHotColumnsAndSplitFile) {
  const auto root = scratch("ingest_csv");
  fs::create_directories(root / "images");
  for (const char* name : {"a.png", "b.png", "c.png", "d.png"}) write_image(gradient_image(8, 8), root / "images" / name);
  write_text(root / "labels.csv",
             "image_name,NC,G3,G4,G5,G4C\n"
             "a.png,1,0,0,0,0\n"
             "b.png,0,0,0,1,0\n"
             "c.png,0,0,0,0,1\n"
             "d.png,0,1,0,0,0\n");
  write_text(root / "split.csv", "image_name,split\nb.png,test\nd.png,train\n");
  const auto r = ingest_sicap(root);
  ASSERT_EQ(r.records.size(), 4u);
  EXPECT_EQ(r.per_class, (std::array<std::size_t, 4>{1, 1, 1, 1}));
  EXPECT_EQ(r.records[1].label, Grade::G5);
  EXPECT_EQ(r.records[1].split, Split::test);
  EXPECT_EQ(r.records[2].label, Grade::G4);  // cribriform folds into G4
  EXPECT_EQ(r.records[3].split, Split::train);
  EXPECT_EQ(r.records[0].split, Split::unassigned);
}

TEST(Ingest, LoadPatchesScalesAndResizes) {
  const auto dir = scratch("load");
  Image img(12, 12, 3, 255.0f);
  write_image(img, dir / "p.png");
  const std::vector<PatchRecord> records{{"p.png", "s", 0, 0, Grade::G3, Split::train}};
  const auto t = load_patches(records, dir / "manifest.csv", 4);
  EXPECT_EQ(t.dims(), (Tensor4<float>::Dims{1, 3, 4, 4}));
  for (float v : t.storage()) EXPECT_FLOAT_EQ(v, 1.0f);
  EXPECT_EQ(labels_of(records), std::vector<int>{1});
}
