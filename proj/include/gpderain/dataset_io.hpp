#pragma once

// On-disk dataset layout:
//   labeled/rainy/NNNN.pgm   labeled/clean/NNNN.pgm
//   unlabeled/rainy/NNNN.pgm                 (absent when everything is labeled)
//   test/rainy/NNNN.pgm      test/clean/NNNN.pgm   (optional held-out pairs)
//   manifest.json

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpderain/error.hpp"
#include "gpderain/image.hpp"
#include "gpderain/rain.hpp"

namespace gpderain::dataset {

namespace fs = std::filesystem;

inline nlohmann::json to_json(const rain::RainParams& p) {
  return {{"streak_count", {p.streak_count.lo, p.streak_count.hi}},
          {"length", {p.length.lo, p.length.hi}},
          {"angle_deg", {p.angle.lo, p.angle.hi}},
          {"intensity", {p.intensity.lo, p.intensity.hi}},
          {"thickness", p.thickness},
          {"blur_taps", p.blur_taps}};
}

inline nlohmann::json manifest(const rain::GenerationConfig& cfg, const rain::GeneratedData& data) {
  return {{"count", cfg.count},
          {"height", cfg.height},
          {"width", cfg.width},
          {"fraction_labeled", cfg.fraction_labeled},
          {"seed", cfg.seed},
          {"labeled_count", data.split.labeled.size()},
          {"unlabeled_count", data.split.unlabeled.size()},
          {"test_count", data.test.size()},
          {"labeled_regime", "labeled"},
          {"unlabeled_regime", cfg.unlabeled_regime},
          {"regimes", {{"labeled", to_json(rain::labeled_regime())}, {"shifted", to_json(rain::shifted_regime())}}}};
}

inline void write_pairs(const fs::path& root, const std::vector<rain::ImagePair>& pairs) {
  fs::create_directories(root / "rainy");
  fs::create_directories(root / "clean");
  for (const auto& p : pairs) {
    image::save_image(p.rainy, root / "rainy" / (p.id + ".pgm"));
    image::save_image(p.clean, root / "clean" / (p.id + ".pgm"));
  }
}

inline void write_dataset(const fs::path& dir, const rain::GenerationConfig& cfg, const rain::GeneratedData& data) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  write_pairs(dir / "labeled", data.split.labeled);
  if (!data.split.unlabeled.empty()) {
    fs::create_directories(dir / "unlabeled" / "rainy");
    for (const auto& u : data.split.unlabeled) image::save_image(u.rainy, dir / "unlabeled" / "rainy" / (u.id + ".pgm"));
  }
  if (!data.test.empty()) write_pairs(dir / "test", data.test);
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorKind::Io, "cannot write manifest in " + dir.string());
  out << manifest(cfg, data).dump(2) << "\n";
}

inline std::vector<fs::path> list_pgm(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<rain::ImagePair> read_pairs(const fs::path& root) {
  if (!fs::is_directory(root / "rainy") || !fs::is_directory(root / "clean"))
    fail(ErrorKind::Compatibility, "missing " + (root / "rainy").string() + " or " + (root / "clean").string());
  std::vector<rain::ImagePair> pairs;
  for (const auto& f : list_pgm(root / "rainy")) {
    const auto clean = root / "clean" / f.filename();
    if (!fs::exists(clean)) fail(ErrorKind::Compatibility, "no clean target for " + f.string());
    pairs.push_back({image::load_image(f), image::load_image(clean), f.stem().string()});
    if (pairs.back().rainy.shape != pairs.back().clean.shape)
      fail(ErrorKind::Compatibility, "rainy/clean size mismatch for " + f.string());
  }
  return pairs;
}

struct LoadedDataset {
  rain::DatasetSplit split;
  std::vector<rain::ImagePair> test;
};

inline LoadedDataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir / "labeled")) fail(ErrorKind::Compatibility, "dataset " + dir.string() + " has no labeled/ directory");
  LoadedDataset ds;
  ds.split.labeled = read_pairs(dir / "labeled");
  if (ds.split.labeled.empty()) fail(ErrorKind::Compatibility, "dataset " + dir.string() + " has no labeled pairs");
  if (fs::is_directory(dir / "unlabeled" / "rainy"))
    for (const auto& f : list_pgm(dir / "unlabeled" / "rainy"))
      ds.split.unlabeled.push_back({image::load_image(f), f.stem().string()});
  if (fs::is_directory(dir / "test")) ds.test = read_pairs(dir / "test");
  const double n = static_cast<double>(ds.split.labeled.size() + ds.split.unlabeled.size());
  ds.split.fraction_labeled = static_cast<double>(ds.split.labeled.size()) / n;
  return ds;
}

}  // namespace gpderain::dataset
