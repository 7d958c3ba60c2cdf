#pragma once

#include "fmri_analysis.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>

namespace smsr::report {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Rgb
{
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(Rgb const &) const = default;
};

struct Image
{
  Index width = 0, height = 0;
  std::vector<Rgb> px;

  Image() = default;
  Image(Index w, Index h, Rgb fill = {})
    : width(w)
    , height(h)
    , px(static_cast<std::size_t>(w * h), fill)
  {
  }
  Rgb &at(Index x, Index y) { return px[static_cast<std::size_t>(y * width + x)]; }
  Rgb const &at(Index x, Index y) const { return px[static_cast<std::size_t>(y * width + x)]; }
};

/// Binary PPM (P6).
inline void write_ppm(fs::path const &path, Image const &img)
{
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) { throw DataError("cannot write " + path.string()); }
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (auto const &p : img.px) {
    char const c[3] = {static_cast<char>(p.r), static_cast<char>(p.g), static_cast<char>(p.b)};
    f.write(c, 3);
  }
}

inline Image read_ppm(fs::path const &path)
{
  std::ifstream f(path, std::ios::binary);
  std::string magic;
  Index w = 0, h = 0, maxv = 0;
  f >> magic >> w >> h >> maxv;
  if (magic != "P6" || maxv != 255) { throw DataError("not a binary 8-bit PPM: " + path.string()); }
  f.get();
  Image img(w, h);
  for (auto &p : img.px) {
    char c[3];
    f.read(c, 3);
    p = {static_cast<std::uint8_t>(c[0]), static_cast<std::uint8_t>(c[1]), static_cast<std::uint8_t>(c[2])};
  }
  return img;
}

inline std::uint8_t byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * v), 0L, 255L)); }

/// Cyclic hue wheel: -pi and pi map to the same colour.
inline Rgb phase_color(double phase)
{
  double h = (phase + M_PI) / (2 * M_PI);
  h -= std::floor(h);
  double const x = 6.0 * h;
  int const sector = static_cast<int>(x) % 6;
  double const f = x - std::floor(x);
  double r = 0, g = 0, b = 0;
  switch (sector) {
  case 0: r = 1, g = f, b = 0; break;
  case 1: r = 1 - f, g = 1, b = 0; break;
  case 2: r = 0, g = 1, b = f; break;
  case 3: r = 0, g = 1 - f, b = 1; break;
  case 4: r = f, g = 0, b = 1; break;
  default: r = 1, g = 0, b = 1 - f; break;
  }
  return {byte(r), byte(g), byte(b)};
}

/// Black-red-yellow-white ramp over [0, 1].
inline Rgb heat_color(double v)
{
  v = std::clamp(v, 0.0, 1.0);
  return {byte(3 * v), byte(3 * v - 1), byte(3 * v - 2)};
}

inline Rgb gray(double v) { return {byte(v), byte(v), byte(v)}; }

/// Horizontal strip of `width` columns; column x shows phase -pi + 2 pi x / width, so the strip covers
/// [-pi, pi) and wraps onto itself.
inline Image phase_legend(Index width = 256, Index height = 24)
{
  Image img(width, height);
  for (Index x = 0; x < width; ++x) {
    auto const c = phase_color(-M_PI + 2 * M_PI * static_cast<double>(x) / static_cast<double>(width));
    for (Index y = 0; y < height; ++y) { img.at(x, y) = c; }
  }
  return img;
}

/// Slices laid side by side, each scaled up by an integer factor.
template <class ColorFn>
Image tile_slices(Index S, Index M, Index N, Index scale, ColorFn color)
{
  Image img(S * N * scale, M * scale);
  for (Index s = 0; s < S; ++s) {
    for (Index m = 0; m < M; ++m) {
      for (Index n = 0; n < N; ++n) {
        auto const c = color(s, m, n);
        for (Index dy = 0; dy < scale; ++dy) {
          for (Index dx = 0; dx < scale; ++dx) { img.at((s * N + n) * scale + dx, m * scale + dy) = c; }
        }
      }
    }
  }
  return img;
}

inline Image stack_rows(std::vector<Image> const &rows, Index gap = 2)
{
  Index w = 0, h = 0;
  for (auto const &r : rows) {
    w = std::max(w, r.width);
    h += r.height + gap;
  }
  h = std::max<Index>(0, h - gap);
  Image img(w, h, {255, 255, 255});
  Index y0 = 0;
  for (auto const &r : rows) {
    for (Index y = 0; y < r.height; ++y) {
      for (Index x = 0; x < r.width; ++x) { img.at(x, y0 + y) = r.at(x, y); }
    }
    y0 += r.height + gap;
  }
  return img;
}

/// Maps and an example frame for one reconstruction.
struct Panel
{
  std::string id, label;
  VoxelMap tsnr, phase, coherence;
  Tensor<Cx<double>, 3> example;
};

struct RenderOptions
{
  double coherence_threshold = 0.4;
  double tsnr_max = 0; // 0: largest finite value over all panels
  Index scale = 3;
};

namespace detail {

inline std::string fmt(double v, int prec = 3)
{
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

inline std::string cell(json const &v, int prec = 3)
{
  if (v.is_null()) { return "n/a"; }
  return fmt(v.get<double>(), prec);
}

inline double peakAbs(Tensor<Cx<double>, 3> const &x)
{
  double p = 0;
  for (auto const &v : x.flat()) { p = std::max(p, std::abs(v)); }
  return p > 0 ? p : 1.0;
}

} // namespace detail

/// Render tSNR and phase maps, the cyclic phase legend, a reconstruction comparison and ROI tables.
/// `metrics` is the analysis metrics document. Returns the summary that is also written to report.json.
inline json render(json const &metrics, std::vector<Panel> const &panels, Tensor<Cx<double>, 3> const &truth, fs::path const &dir,
                   RenderOptions const &opt = {})
{
  require(!panels.empty(), "report: no reconstructions to render");
  fs::create_directories(dir);
  Index const S = truth.dim(0), M = truth.dim(1), N = truth.dim(2);
  json summary;
  summary["config_hash"] = metrics.value("config_hash", "");
  summary["files"] = json::array();
  summary["warnings"] = json::array();
  auto emit = [&](std::string const &name, Image const &img) {
    write_ppm(dir / name, img);
    summary["files"].push_back(name);
  };

  double tmax = opt.tsnr_max;
  if (tmax <= 0) {
    for (auto const &p : panels) {
      for (auto v : p.tsnr.flat()) {
        if (std::isfinite(v)) { tmax = std::max(tmax, v); }
      }
    }
    if (tmax <= 0) { tmax = 1; }
  }
  summary["tsnr_colour_max"] = tmax;

  double const truthPeak = detail::peakAbs(truth);
  std::vector<Image> comparison = {
    tile_slices(S, M, N, opt.scale, [&](Index s, Index m, Index n) { return gray(std::abs(truth(s, m, n)) / truthPeak); })};
  summary["panels"] = json::array();
  for (auto const &p : panels) {
    emit("tsnr_" + p.id + ".ppm", tile_slices(S, M, N, opt.scale, [&](Index s, Index m, Index n) {
           double const v = p.tsnr(s, m, n);
           return std::isfinite(v) ? heat_color(v / tmax) : Rgb{255, 255, 255};
         }));
    double const peak = detail::peakAbs(p.example);
    emit("phase_" + p.id + ".ppm", tile_slices(S, M, N, opt.scale, [&](Index s, Index m, Index n) {
           if (p.coherence(s, m, n) >= opt.coherence_threshold) { return phase_color(p.phase(s, m, n)); }
           return gray(0.6 * std::abs(p.example(s, m, n)) / peak);
         }));
    comparison.push_back(tile_slices(S, M, N, opt.scale, [&](Index s, Index m, Index n) { return gray(std::abs(p.example(s, m, n)) / truthPeak); }));
    summary["panels"].push_back({{"id", p.id}, {"label", p.label}, {"phase_map", "phase_" + p.id + ".ppm"}, {"tsnr_map", "tsnr_" + p.id + ".ppm"}});
  }
  emit("phase_legend.ppm", phase_legend());
  summary["phase_legend"] = {{"min", -M_PI}, {"max", M_PI}, {"interval", "[-pi, pi)"}, {"cyclic", true}};
  emit("recon_comparison.ppm", stack_rows(comparison));
  summary["comparison_rows"] = json::array({"ground truth"});
  for (auto const &p : panels) { summary["comparison_rows"].push_back(p.label); }

  // Tables: coherence-defined ROI (as an experimenter would see it) and the known true ROI.
  auto const &recs = metrics.at("reconstructions");
  std::ostringstream md;
  md << "# Reconstruction and retinotopy report\n\n";
  md << "Config hash: `" << summary["config_hash"].get<std::string>() << "`\n\n";
  summary["tables"] = json::object();
  for (char const *roiKey : {"roi_coherence", "roi_true"}) {
    std::string const key = roiKey;
    md << "## " << (key == "roi_true" ? "True ROI" : "Coherence ROI (threshold " + detail::fmt(opt.coherence_threshold, 2) + ")") << "\n\n";
    md << "| Reconstruction | NMSE | Voxels | Mean abs phase error (rad) | tSNR mean | tSNR std |\n";
    md << "|---|---|---|---|---|---|\n";
    json rows = json::array();
    for (auto const &p : panels) {
      auto const &e = recs.at(p.id);
      auto const &r = e.at(key);
      Index const count = r.at("voxel_count").get<Index>();
      json row = {{"id", p.id}, {"label", p.label}, {"nmse", e.at("nmse")}, {"voxel_count", count}};
      md << "| " << p.label << " | " << detail::cell(e.at("nmse"), 4) << " | " << count << " | ";
      if (count == 0) {
        md << " | | |\n";
        summary["warnings"].push_back("empty ROI (" + key + ") for " + p.label);
      } else {
        row["mean_abs_phase_error"] = r.at("mean_abs_phase_error");
        row["tsnr_mean"] = r.at("tsnr_mean");
        row["tsnr_std"] = r.at("tsnr_std");
        md << detail::cell(r.at("mean_abs_phase_error")) << " | " << detail::cell(r.at("tsnr_mean"), 2) << " | "
           << detail::cell(r.at("tsnr_std"), 2) << " |\n";
      }
      rows.push_back(row);
    }
    // Difference row: DL minus the baseline at the same rate, else the first two reconstructions.
    if (rows.size() >= 2) {
      auto find = [&](char const *id, std::size_t fallback) -> json const & {
        for (auto const &r : rows) {
          if (r["id"] == id) { return r; }
        }
        return rows[fallback];
      };
      auto const &a = find("dl_target", 0);
      auto const &b = find("baseline_target", 1);
      json diff = {{"of", a["label"]}, {"minus", b["label"]}};
      diff["nmse"] = a["nmse"].get<double>() - b["nmse"].get<double>();
      diff["voxel_count"] = a["voxel_count"].get<Index>() - b["voxel_count"].get<Index>();
      md << "| " << a["label"].get<std::string>() << " minus " << b["label"].get<std::string>() << " | " << detail::fmt(diff["nmse"], 4)
         << " | " << diff["voxel_count"].get<Index>() << " | ";
      if (a.contains("mean_abs_phase_error") && b.contains("mean_abs_phase_error")) {
        diff["mean_abs_phase_error"] = a["mean_abs_phase_error"].get<double>() - b["mean_abs_phase_error"].get<double>();
        diff["tsnr_mean"] = a["tsnr_mean"].get<double>() - b["tsnr_mean"].get<double>();
        md << detail::fmt(diff["mean_abs_phase_error"]) << " | " << detail::fmt(diff["tsnr_mean"], 2) << " | |\n";
      } else {
        md << " | | |\n";
      }
      summary["tables"][key]["difference"] = diff;
    }
    summary["tables"][key]["rows"] = rows;
    md << "\n";
  }
  if (!summary["warnings"].empty()) {
    md << "## Warnings\n\n";
    for (auto const &w : summary["warnings"]) { md << "- " << w.get<std::string>() << "\n"; }
    md << "\n";
  }
  md << "## Figures\n\n";
  md << "- `recon_comparison.ppm`: rows are ground truth, then";
  for (auto const &p : panels) { md << " " << p.label << (&p == &panels.back() ? "" : ","); }
  md << "; columns are slices (first frame).\n";
  md << "- `phase_<id>.ppm`: response phase where coherence >= " << detail::fmt(opt.coherence_threshold, 2)
     << ", cyclic colour scale in `phase_legend.ppm` (left edge -pi, wrapping to +pi).\n";
  md << "- `tsnr_<id>.ppm`: tSNR, black 0 to white " << detail::fmt(tmax, 1) << ".\n";
  {
    std::ofstream f(dir / "report.md");
    f << md.str();
  }
  summary["files"].push_back("report.md");
  summary["files"].push_back("report.json");
  std::ofstream f(dir / "report.json");
  f << summary.dump(2) << '\n';
  return summary;
}

} // namespace smsr::report
