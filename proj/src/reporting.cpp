#include "crl/reporting.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "crl/error.hpp"
#include "crl/experiment.hpp"

namespace crl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::array<std::array<unsigned char, 3>, 8> kPalette = {{{31, 119, 180},
                                                                   {214, 39, 40},
                                                                   {44, 160, 44},
                                                                   {255, 127, 14},
                                                                   {148, 103, 189},
                                                                   {140, 86, 75},
                                                                   {227, 119, 194},
                                                                   {23, 190, 207}}};
constexpr std::array<unsigned char, 3> kGrey = {120, 120, 120};

struct Layout {
  double w, h, left, right, top, bottom;
  std::size_t T;
  double ymin, ymax;
  double px(std::size_t t) const {  // t is 0-based
    const double span = T > 1 ? static_cast<double>(T - 1) : 1.0;
    const double frac = T > 1 ? static_cast<double>(t) / span : 0.5;
    return left + frac * (w - left - right);
  }
  double py(double v) const { return top + (ymax - v) / (ymax - ymin) * (h - top - bottom); }
};

Layout layout(const Figure& fig, double w, double h, double left, double right, double top, double bottom) {
  std::size_t T = 0;
  for (const auto& s : fig.series) T = std::max(T, s.y.size());
  double hi = 0;
  for (const auto& s : fig.series)
    for (double v : s.y) hi = std::max(hi, v);
  return {w, h, left, right, top, bottom, std::max<std::size_t>(T, 1), 0.0, hi > 0.95 ? 1.0 : std::ceil(hi * 10 + 0.5) / 10};
}

std::string hex(const std::array<unsigned char, 3>& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string render_svg(const Figure& fig) {
  const Layout L = layout(fig, 640, 400, 60, 170, 40, 50);
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  o << "<text x=\"" << L.left << "\" y=\"24\" font-size=\"14\">" << escape(fig.title) << "</text>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = L.ymin + (L.ymax - L.ymin) * k / 5.0;
    const double y = L.py(v);
    o << "<line x1=\"" << L.left << "\" y1=\"" << y << "\" x2=\"" << L.w - L.right << "\" y2=\"" << y
      << "\" stroke=\"#e0e0e0\"/>\n";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", v * 100);
    o << "<text x=\"" << L.left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
  }
  for (std::size_t t = 0; t < L.T; ++t)
    o << "<text x=\"" << L.px(t) << "\" y=\"" << L.h - L.bottom + 18 << "\" text-anchor=\"middle\">" << t + 1
      << "</text>\n";
  o << "<rect x=\"" << L.left << "\" y=\"" << L.top << "\" width=\"" << L.w - L.left - L.right << "\" height=\""
    << L.h - L.top - L.bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (L.left + L.w - L.right) / 2 << "\" y=\"" << L.h - 12 << "\" text-anchor=\"middle\">task</text>\n";
  o << "<text transform=\"translate(16," << (L.top + L.h - L.bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(fig.y_label) << "</text>\n";

  std::size_t color = 0;
  for (std::size_t i = 0; i < fig.series.size(); ++i) {
    const auto& s = fig.series[i];
    const auto c = s.dashed ? kGrey : kPalette[color++ % kPalette.size()];
    o << "<polyline fill=\"none\" stroke=\"" << hex(c) << "\" stroke-width=\"2\""
      << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
    for (std::size_t t = 0; t < s.y.size(); ++t) o << L.px(t) << "," << L.py(s.y[t]) << " ";
    o << "\"/>\n";
    if (!s.dashed)
      for (std::size_t t = 0; t < s.y.size(); ++t)
        o << "<circle cx=\"" << L.px(t) << "\" cy=\"" << L.py(s.y[t]) << "\" r=\"3\" fill=\"" << hex(c) << "\"/>\n";
    const double ly = L.top + 10 + 18 * static_cast<double>(i);
    const double lx = L.w - L.right + 12;
    o << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 20 << "\" y2=\"" << ly << "\" stroke=\"" << hex(c)
      << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
    o << "<text x=\"" << lx + 26 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

namespace {

struct Canvas {
  int w, h;
  std::vector<unsigned char> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_ * 3, 255) {}
  void dot(int x, int y, const std::array<unsigned char, 3>& c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    auto* p = &px[(static_cast<std::size_t>(y) * w + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  void disc(double cx, double cy, double r, const std::array<unsigned char, 3>& c) {
    for (int y = static_cast<int>(cy - r); y <= static_cast<int>(cy + r); ++y)
      for (int x = static_cast<int>(cx - r); x <= static_cast<int>(cx + r); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) dot(x, y, c);
  }
  void line(double x0, double y0, double x1, double y1, const std::array<unsigned char, 3>& c, double width,
            bool dashed = false) {
    const double len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, static_cast<int>(len * 2));
    for (int i = 0; i <= steps; ++i) {
      const double f = static_cast<double>(i) / steps;
      if (dashed && std::fmod(f * len, 10.0) > 6.0) continue;
      disc(x0 + f * (x1 - x0), y0 + f * (y1 - y0), width / 2, c);
    }
  }
};

}  // namespace

void write_png(const Figure& fig, const fs::path& path, int width, int height) {
  const double sx = width / 640.0, sy = height / 400.0;
  const Layout L = layout(fig, width, height, 60 * sx, 40 * sx, 40 * sy, 50 * sy);
  Canvas cv(width, height);
  const std::array<unsigned char, 3> grid = {224, 224, 224}, black = {0, 0, 0};
  for (int k = 0; k <= 5; ++k) {
    const double y = L.py(L.ymin + (L.ymax - L.ymin) * k / 5.0);
    cv.line(L.left, y, L.w - L.right, y, grid, 1);
  }
  for (std::size_t t = 0; t < L.T; ++t) cv.line(L.px(t), L.h - L.bottom, L.px(t), L.h - L.bottom + 5, black, 1);
  cv.line(L.left, L.top, L.w - L.right, L.top, black, 1);
  cv.line(L.left, L.h - L.bottom, L.w - L.right, L.h - L.bottom, black, 1);
  cv.line(L.left, L.top, L.left, L.h - L.bottom, black, 1);
  cv.line(L.w - L.right, L.top, L.w - L.right, L.h - L.bottom, black, 1);
  std::size_t color = 0;
  for (const auto& s : fig.series) {
    const auto c = s.dashed ? kGrey : kPalette[color++ % kPalette.size()];
    for (std::size_t t = 1; t < s.y.size(); ++t)
      cv.line(L.px(t - 1), L.py(s.y[t - 1]), L.px(t), L.py(s.y[t]), c, 2, s.dashed);
    if (!s.dashed)
      for (std::size_t t = 0; t < s.y.size(); ++t) cv.disc(L.px(t), L.py(s.y[t]), 3.5, c);
  }

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, &cv.px[static_cast<std::size_t>(y) * width * 3]);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

std::vector<json> load_results(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw UsageError("no results files given");
  std::vector<json> docs;
  for (const auto& p : paths) {
    json d = read_json(fs::is_directory(p) ? p / "results.json" : p);
    if (!d.contains("num_tasks") || !d.contains("runs") || !d.contains("aggregate"))
      throw UsageError(p.string() + " is not an aggregate results.json");
    docs.push_back(std::move(d));
  }
  const int T = docs.front().at("num_tasks").get<int>();
  for (std::size_t i = 1; i < docs.size(); ++i)
    if (docs[i].at("num_tasks").get<int>() != T)
      throw UsageError("incompatible results: " + paths[0].string() + " has T=" + std::to_string(T) + " but " +
                       paths[i].string() + " has T=" + std::to_string(docs[i].at("num_tasks").get<int>()));
  return docs;
}

namespace {

std::vector<double> mean_curve(const json& runs, const std::function<std::vector<double>(const json&)>& get) {
  std::vector<double> acc;
  for (const auto& r : runs) {
    const auto y = get(r);
    if (acc.empty()) acc.assign(y.size(), 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) acc[i] += y[i];
  }
  for (auto& v : acc) v /= static_cast<double>(runs.size());
  return acc;
}

}  // namespace

std::vector<fs::path> cmd_plot(const std::vector<fs::path>& results, const fs::path& out_dir) {
  const auto docs = load_results(results);
  fs::create_directories(out_dir);
  std::map<std::string, Figure> figures;
  std::map<std::string, std::vector<double>> chance;
  for (const auto& d : docs) {
    const auto label = d.at("label").get<std::string>();
    for (const auto& pj : d.at("protocols")) {
      const auto p = pj.get<std::string>();
      if (p == "FLEP") {
        auto& fig = figures["FLEP"];
        fig.title = "FLEP: downstream accuracy after each task";
        fig.y_label = "accuracy (%)";
        fig.series.push_back({label, mean_curve(d.at("runs"), [](const json& r) {
                                return r.at("flep").at("curve").get<std::vector<double>>();
                              })});
        const double c = d.at("runs").at(0).at("flep").at("chance").get<double>();
        chance["FLEP"] = std::vector<double>(fig.series.back().y.size(), c);
        continue;
      }
      auto& fig = figures[p];
      fig.title = p + ": average accuracy over seen tasks";
      fig.y_label = "average accuracy (%)";
      fig.series.push_back({label, mean_curve(d.at("runs"), [&](const json& r) {
                              return r.at("in_domain").at(p).at("metrics").at("avg_accuracy").get<std::vector<double>>();
                            })});
      chance[p] = d.at("runs").at(0).at("in_domain").at(p).at("metrics").at("chance").get<std::vector<double>>();
    }
  }
  std::vector<fs::path> written;
  for (auto& [name, fig] : figures) {
    fig.series.push_back({"chance", chance.at(name), true});
    const std::string stem = name == "FLEP" ? "flep_curve" : name + "_trajectory";
    const fs::path svg = out_dir / (stem + ".svg"), png = out_dir / (stem + ".png");
    std::ofstream(svg, std::ios::binary) << render_svg(fig);
    write_png(fig, png);
    written.push_back(svg);
    written.push_back(png);
  }
  return written;
}

ReportTable build_report(const std::vector<json>& docs) {
  ReportTable t;
  std::vector<std::string> protos;
  for (const auto& d : docs)
    for (const auto& p : d.at("protocols"))
      if (std::find(protos.begin(), protos.end(), p.get<std::string>()) == protos.end())
        protos.push_back(p.get<std::string>());
  for (const auto& p : protos) {
    t.columns.push_back(p + " A");
    t.higher_is_better.push_back(true);
    if (p != "FLEP") {
      t.columns.push_back(p + " F");
      t.higher_is_better.push_back(false);
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& d : docs) {
    t.rows.push_back(d.at("label").get<std::string>());
    std::vector<double> row;
    for (const auto& p : protos) {
      const auto& agg = d.at("aggregate");
      const bool has = agg.contains(p);
      row.push_back(has ? agg.at(p).at("final_avg_accuracy").at("mean").get<double>() : nan);
      if (p != "FLEP") row.push_back(has ? agg.at(p).at("forgetting").at("mean").get<double>() : nan);
    }
    t.values.push_back(row);
  }
  return t;
}

std::string report_csv(const ReportTable& t) {
  std::ostringstream o;
  o << "run";
  for (const auto& c : t.columns) o << "," << c;
  o << "\n";
  char buf[64];
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    o << t.rows[r];
    for (double v : t.values[r]) {
      if (std::isnan(v)) {
        o << ",";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.17g", v);
      o << "," << buf;
    }
    o << "\n";
  }
  return o.str();
}

std::string report_markdown(const ReportTable& t) {
  std::vector<double> best(t.columns.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < t.columns.size(); ++c)
    for (const auto& row : t.values) {
      const double v = row[c];
      if (std::isnan(v)) continue;
      if (std::isnan(best[c]) || (t.higher_is_better[c] ? v > best[c] : v < best[c])) best[c] = v;
    }
  std::ostringstream o;
  o << "| run |";
  for (const auto& c : t.columns) o << " " << c << " |";
  o << "\n|---|";
  for (std::size_t c = 0; c < t.columns.size(); ++c) o << "---:|";
  o << "\n";
  char buf[64];
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    o << "| " << t.rows[r] << " |";
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      const double v = t.values[r][c];
      if (std::isnan(v)) {
        o << " - |";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.1f", v * 100);
      if (v == best[c]) o << " **" << buf << "** |";
      else o << " " << buf << " |";
    }
    o << "\n";
  }
  return o.str();
}

std::vector<fs::path> cmd_report(const std::vector<fs::path>& results, const fs::path& out_dir) {
  const auto table = build_report(load_results(results));
  fs::create_directories(out_dir);
  const fs::path csv = out_dir / "report.csv", md = out_dir / "report.md";
  std::ofstream(csv, std::ios::binary) << report_csv(table);
  std::ofstream(md, std::ios::binary) << report_markdown(table);
  return {csv, md};
}

}  // namespace crl
