#pragma once

// Full-reference quality metrics (PSNR, SSIM) and evaluation reports.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpderain/error.hpp"
#include "gpderain/image.hpp"
#include "gpderain/model.hpp"
#include "gpderain/rain.hpp"

namespace gpderain::metrics {

using image::ImagePatch;

/// Reported when the two images are identical.
inline constexpr double kPsnrCap = 99.0;

inline double mse(const ImagePatch& a, const ImagePatch& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

inline double psnr(const ImagePatch& a, const ImagePatch& b, double peak = 1.0) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / e);
}

struct SsimOptions {
  int window = 8;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

/// Mean SSIM over every window x window position (stride 1) with uniform
/// weights and population (1/N) moments. Window sums come from summed-area tables.
inline double ssim(const ImagePatch& a, const ImagePatch& b, const SsimOptions& opt = {}) {
  require_same_shape(a, b, "ssim");
  const int win = opt.window;
  const int h = a.shape.h, w = a.shape.w;
  if (win < 1 || h < win || w < win)
    fail(ErrorKind::Size, "image " + a.shape.str() + " smaller than SSIM window " + std::to_string(win));
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
  const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  const double n = static_cast<double>(win) * win;
  const int sw = w + 1;
  double total = 0.0;
  std::size_t windows = 0;
  for (int c = 0; c < a.shape.c; ++c) {
    std::vector<double> sa((h + 1) * sw, 0.0), sb(sa), saa(sa), sbb(sa), sab(sa);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double va = a.at(c, y, x), vb = b.at(c, y, x);
        const int i = (y + 1) * sw + (x + 1);
        const int up = y * sw + (x + 1), left = (y + 1) * sw + x, diag = y * sw + x;
        sa[i] = va + sa[up] + sa[left] - sa[diag];
        sb[i] = vb + sb[up] + sb[left] - sb[diag];
        saa[i] = va * va + saa[up] + saa[left] - saa[diag];
        sbb[i] = vb * vb + sbb[up] + sbb[left] - sbb[diag];
        sab[i] = va * vb + sab[up] + sab[left] - sab[diag];
      }
    auto box = [&](const std::vector<double>& s, int y, int x) {
      return s[(y + win) * sw + (x + win)] - s[y * sw + (x + win)] - s[(y + win) * sw + x] + s[y * sw + x];
    };
    for (int y = 0; y + win <= h; ++y)
      for (int x = 0; x + win <= w; ++x) {
        const double ma = box(sa, y, x) / n, mb = box(sb, y, x) / n;
        const double va = box(saa, y, x) / n - ma * ma;
        const double vb = box(sbb, y, x) / n - mb * mb;
        const double cov = box(sab, y, x) / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
  }
  return total / static_cast<double>(windows);
}

/// Tile start positions covering [0, extent) with 50% overlap; the last tile is flush with the edge.
inline std::vector<int> tile_starts(int extent, int tile) {
  std::vector<int> starts;
  if (extent == tile) return {0};
  const int stride = std::max(1, tile / 2);
  for (int p = 0; p + tile < extent; p += stride) starts.push_back(p);
  starts.push_back(extent - tile);
  return starts;
}

/// Overlap-averaged tiling; always goes through the tile loop.
inline ImagePatch derain_tiles(const ImagePatch& x, const model::ParamSet& ps) {
  const int p = ps.config.patch_size;
  if (x.shape.c != ps.config.channels) fail(ErrorKind::Shape, "image channels do not match the model");
  if (x.shape.h < p || x.shape.w < p)
    fail(ErrorKind::Size, "image " + x.shape.str() + " smaller than model patch " + std::to_string(p));
  ImagePatch sum(x.shape, 0.0);
  std::vector<int> count(x.size(), 0);
  for (int oy : tile_starts(x.shape.h, p))
    for (int ox : tile_starts(x.shape.w, p)) {
      ImagePatch tile(Shape{x.shape.c, p, p});
      for (int c = 0; c < x.shape.c; ++c)
        for (int y = 0; y < p; ++y)
          for (int xx = 0; xx < p; ++xx) tile.at(c, y, xx) = x.at(c, oy + y, ox + xx);
      const ImagePatch out = model::derain(tile, ps);
      for (int c = 0; c < x.shape.c; ++c)
        for (int y = 0; y < p; ++y)
          for (int xx = 0; xx < p; ++xx) {
            sum.at(c, oy + y, ox + xx) += out.at(c, y, xx);
            ++count[(static_cast<std::size_t>(c) * x.shape.h + oy + y) * x.shape.w + ox + xx];
          }
    }
  for (std::size_t i = 0; i < sum.size(); ++i) sum.values[i] /= count[i];
  return sum;
}

/// Derains an image of any size >= the model patch; larger images are tiled.
inline ImagePatch derain_tiled(const ImagePatch& x, const model::ParamSet& ps) {
  if (x.shape.c == ps.config.channels && x.shape.h == ps.config.patch_size && x.shape.w == ps.config.patch_size)
    return model::derain(x, ps);
  return derain_tiles(x, ps);
}

struct EvalRow {
  std::string image_id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  /// Input (rainy) vs clean, for reference.
  double input_psnr_db = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<ImagePatch> outputs;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_input_psnr = 0.0;
  std::uint64_t config_hash = 0;
  std::string timestamp;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline EvalReport evaluate(const model::ParamSet& ps, const std::vector<rain::ImagePair>& pairs,
                           std::uint64_t config_hash = 0) {
  if (pairs.empty()) fail(ErrorKind::Config, "evaluation needs at least one test pair");
  EvalReport rep;
  rep.config_hash = config_hash;
  rep.timestamp = utc_timestamp();
  for (const auto& pr : pairs) {
    ImagePatch out;
    try {
      out = derain_tiled(pr.rainy, ps);
    } catch (const Error& e) {
      throw Error(e.kind(), "image " + pr.id + ": " + e.detail());
    }
    rep.rows.push_back({pr.id, psnr(out, pr.clean), ssim(out, pr.clean), psnr(pr.rainy, pr.clean)});
    rep.outputs.push_back(std::move(out));
  }
  const double n = static_cast<double>(rep.rows.size());
  for (const auto& r : rep.rows) {
    rep.mean_psnr += r.psnr_db;
    rep.mean_ssim += r.ssim;
    rep.mean_input_psnr += r.input_psnr_db;
  }
  rep.mean_psnr /= n;
  rep.mean_ssim /= n;
  rep.mean_input_psnr /= n;
  return rep;
}

/// Writes eval_report.csv, eval_summary.json and derained_<id>.pgm into `dir`.
inline void write_eval_report(const EvalReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "eval_report.csv");
  if (!csv) fail(ErrorKind::Io, "cannot write " + (dir / "eval_report.csv").string());
  csv << "image_id,psnr_db,ssim\n";
  char buf[128];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", r.psnr_db, r.ssim);
    csv << r.image_id << buf;
  }
  nlohmann::json summary = {
      {"count", rep.rows.size()},
      {"mean_psnr_db", rep.mean_psnr},
      {"mean_ssim", rep.mean_ssim},
      {"mean_input_psnr_db", rep.mean_input_psnr},
      {"config_hash", rep.config_hash},
      {"timestamp", rep.timestamp},
  };
  std::ofstream js(dir / "eval_summary.json");
  if (!js) fail(ErrorKind::Io, "cannot write " + (dir / "eval_summary.json").string());
  js << summary.dump(2) << "\n";
  for (std::size_t i = 0; i < rep.outputs.size(); ++i)
    image::save_image(rep.outputs[i], dir / ("derained_" + rep.rows[i].image_id + ".pgm"));
}

}  // namespace gpderain::metrics
