#include "wheelload/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wheelload/error.hpp"

namespace wheelload::eval {

namespace fs = std::filesystem;
using nlohmann::json;

double rmse(const std::vector<double>& p, const std::vector<double>& t) {
  if (p.empty() || t.empty()) throw Error(ErrorCode::EmptySeries, "rmse of an empty series");
  if (p.size() != t.size()) {
    throw Error(ErrorCode::ShapeMismatch, "rmse: " + std::to_string(p.size()) + " predictions vs " +
                                              std::to_string(t.size()) + " targets");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sq += (p[i] - t[i]) * (p[i] - t[i]);
  return std::sqrt(sq / static_cast<double>(p.size()));
}

double max_error(const std::vector<SeriesPair>& segments) {
  if (segments.empty()) throw Error(ErrorCode::EmptySeries, "max_error needs at least one segment");
  double total = 0.0;
  for (const auto& s : segments) {
    if (s.predictions.empty()) throw Error(ErrorCode::EmptySeries, "max_error of an empty segment");
    if (s.predictions.size() != s.targets.size()) throw Error(ErrorCode::ShapeMismatch, "max_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < s.predictions.size(); ++i) worst = std::max(worst, std::abs(s.predictions[i] - s.targets[i]));
    total += worst;
  }
  return total / static_cast<double>(segments.size());
}

std::string dump_key(const std::string& segment, sim::Corner corner) {
  return segment + "_" + std::string(sim::to_string(corner));
}

namespace {

struct Counts {
  double sq = 0.0;
  std::size_t n = 0, covered = 0, model_covered = 0;
  double min_std = INFINITY;

  void add(const SampleDump& d) {
    for (std::size_t i = 0; i < d.mean.size(); ++i) {
      const double e = d.mean[i] - d.truth[i];
      sq += e * e;
      covered += std::abs(e) <= 2.0 * d.std[i];
      model_covered += std::abs(e) <= 2.0 * d.model_std[i];
      min_std = std::min(min_std, d.std[i]);
    }
    n += d.mean.size();
  }
  double rmse() const { return std::sqrt(sq / static_cast<double>(n)); }
  double coverage() const { return static_cast<double>(covered) / static_cast<double>(n); }
  double model_coverage() const { return static_cast<double>(model_covered) / static_cast<double>(n); }
};

}  // namespace

MetricsReport summarize(const std::map<std::string, SampleDump>& dumps, const std::vector<SegmentMetrics>& order) {
  if (order.empty()) throw Error(ErrorCode::EmptySeries, "no segments to summarize");
  MetricsReport r;
  Counts all;
  std::map<sim::Corner, Counts> per_corner;
  std::map<sim::Corner, std::vector<SeriesPair>> pairs;
  std::vector<SeriesPair> all_pairs;
  for (const auto& o : order) {
    auto it = dumps.find(dump_key(o.segment, o.corner));
    if (it == dumps.end()) throw Error(ErrorCode::SchemaMismatch, "no samples for " + dump_key(o.segment, o.corner));
    const SampleDump& d = it->second;
    if (d.mean.empty()) throw Error(ErrorCode::EmptySeries, "segment " + o.segment + " has no samples");
    Counts c;
    c.add(d);
    SegmentMetrics m = o;
    m.samples = c.n;
    m.rmse = rmse(d.mean, d.truth);
    m.max_error = max_error({{d.mean, d.truth}});
    m.coverage = c.coverage();
    m.model_coverage = c.model_coverage();
    m.min_std = c.min_std;
    r.segments.push_back(m);
    all.add(d);
    per_corner[o.corner].add(d);
    pairs[o.corner].push_back({d.mean, d.truth});
    all_pairs.push_back({d.mean, d.truth});
  }
  for (const auto& [corner, c] : per_corner) {
    r.corners.push_back({corner, c.n, c.rmse(), max_error(pairs[corner]), c.coverage(), c.model_coverage()});
  }
  r.samples = all.n;
  r.rmse = all.rmse();
  r.max_error = max_error(all_pairs);
  r.coverage = all.coverage();
  r.model_coverage = all.model_coverage();
  r.min_std = all.min_std;
  return r;
}

std::vector<std::size_t> segment_indices(const sim::Dataset& dataset, const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  for (const auto& id : ids) {
    std::size_t i = 0;
    while (i < dataset.segments.size() && dataset.segments[i].meta.id != id) ++i;
    if (i == dataset.segments.size()) throw Error(ErrorCode::SchemaMismatch, "dataset has no segment '" + id + "'");
    out.push_back(i);
  }
  return out;
}

Evaluation evaluate(const std::vector<pinn::Model>& models, const sim::Dataset& dataset,
                    const std::vector<std::size_t>& segments, std::size_t n_samples, std::uint64_t seed) {
  if (models.empty()) throw Error(ErrorCode::InvalidConfig, "evaluate needs at least one model");
  if (segments.empty()) throw Error(ErrorCode::EmptySeries, "evaluate needs at least one segment");
  std::set<sim::Corner> seen;
  for (const auto& m : models) {
    if (!seen.insert(m.corner).second) {
      throw Error(ErrorCode::InvalidConfig, "two models for corner " + std::string(sim::to_string(m.corner)));
    }
  }
  Evaluation ev;
  std::vector<SegmentMetrics> order;
  for (auto s : segments) {
    const auto& seg = dataset.segments.at(s);
    for (const auto& model : models) {
      const auto ci = static_cast<std::size_t>(model.corner);
      const auto& series = seg.corners[ci];
      if (series.empty()) throw Error(ErrorCode::EmptySeries, "segment " + seg.meta.id + " is empty");
      const auto key = dump_key(seg.meta.id, model.corner);
      Rng rng(derive_seed(seed, fnv1a(key)));
      const auto pred = pinn::predict(model, pinn::feature_rows(series), n_samples, rng);
      SampleDump d;
      d.truth = pinn::labels(series);
      for (const auto& f : series) d.t.push_back(f.t);
      d.mean = pred.mean;
      d.std = pred.std;
      d.model_std = pred.model_std;
      ev.samples.emplace(key, std::move(d));
      SegmentMetrics m;
      m.segment = seg.meta.id;
      m.corner = model.corner;
      order.push_back(m);
    }
  }
  ev.report = summarize(ev.samples, order);
  ev.report.label = std::string(pinn::to_string(models.front().mode));
  ev.report.mode = ev.report.label;
  ev.report.dataset_hash = dataset.hash();
  ev.report.mc_samples = n_samples;
  ev.report.seed = seed;
  return ev;
}

// ---- files --------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json parse_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": " + e.what());
  }
}

template <class T>
T field(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw Error(ErrorCode::SchemaMismatch, where.string() + " lacks '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, where.string() + ": field '" + key + "': " + e.what());
  }
}

json metrics_json(const MetricsReport& r) {
  json segs = json::array();
  for (const auto& s : r.segments) {
    segs.push_back({{"segment", s.segment},
                    {"corner", sim::to_string(s.corner)},
                    {"samples", s.samples},
                    {"rmse", s.rmse},
                    {"max_error", s.max_error},
                    {"coverage_2sigma", s.coverage},
                    {"model_coverage_2sigma", s.model_coverage},
                    {"min_std", s.min_std}});
  }
  json corners = json::array();
  for (const auto& c : r.corners) {
    corners.push_back({{"corner", sim::to_string(c.corner)},
                       {"samples", c.samples},
                       {"rmse", c.rmse},
                       {"max_error", c.max_error},
                       {"coverage_2sigma", c.coverage},
                       {"model_coverage_2sigma", c.model_coverage}});
  }
  return {{"format", "wheelload-metrics"},
          {"version", 1},
          {"label", r.label},
          {"mode", r.mode},
          {"dataset_hash", r.dataset_hash},
          {"mc_samples", r.mc_samples},
          {"seed", r.seed},
          {"samples", r.samples},
          {"rmse", r.rmse},
          {"max_error", r.max_error},
          {"coverage_2sigma", r.coverage},
          {"model_coverage_2sigma", r.model_coverage},
          {"min_std", r.min_std},
          {"corners", corners},
          {"segments", segs}};
}

std::string dump_csv(const SampleDump& d) {
  std::string out = "t,mean,std,model_std,truth\n";
  for (std::size_t i = 0; i < d.t.size(); ++i) {
    out += format_double(d.t[i]) + "," + format_double(d.mean[i]) + "," + format_double(d.std[i]) + "," +
           format_double(d.model_std[i]) + "," + format_double(d.truth[i]) + "\n";
  }
  return out;
}

SampleDump parse_dump(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "t,mean,std,model_std,truth") {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": expected header t,mean,std,model_std,truth");
  }
  SampleDump d;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) {
      char* end = nullptr;
      const double x = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size()) {
        throw Error(ErrorCode::SchemaMismatch, path.string() + " row " + std::to_string(row) + ": bad number '" + cell + "'");
      }
      v.push_back(x);
    }
    if (v.size() != 5) throw Error(ErrorCode::SchemaMismatch, path.string() + " row " + std::to_string(row) + " needs 5 columns");
    d.t.push_back(v[0]);
    d.mean.push_back(v[1]);
    d.std.push_back(v[2]);
    d.model_std.push_back(v[3]);
    d.truth.push_back(v[4]);
  }
  return d;
}

}  // namespace

void write_evaluation(const Evaluation& ev, const fs::path& dir) {
  write_text(dir / "metrics.json", metrics_json(ev.report).dump(2) + "\n");
  for (const auto& [key, d] : ev.samples) write_text(dir / "samples" / (key + ".csv"), dump_csv(d));
}

Evaluation read_evaluation(const fs::path& dir) {
  const fs::path mpath = dir / "metrics.json";
  const json j = parse_json(mpath);
  if (field<std::string>(j, "format", mpath) != "wheelload-metrics" || field<int>(j, "version", mpath) != 1) {
    throw Error(ErrorCode::SchemaMismatch, mpath.string() + " is not a version-1 metrics report");
  }
  Evaluation ev;
  std::vector<SegmentMetrics> order;
  for (const auto& s : field<json>(j, "segments", mpath)) {
    SegmentMetrics m;
    m.segment = field<std::string>(s, "segment", mpath);
    m.corner = sim::corner_from_string(field<std::string>(s, "corner", mpath));
    const auto key = dump_key(m.segment, m.corner);
    ev.samples.emplace(key, parse_dump(dir / "samples" / (key + ".csv")));
    order.push_back(m);
  }
  // Every number is recomputed from the per-sample files.
  ev.report = summarize(ev.samples, order);
  ev.report.label = field<std::string>(j, "label", mpath);
  ev.report.mode = field<std::string>(j, "mode", mpath);
  ev.report.dataset_hash = field<std::string>(j, "dataset_hash", mpath);
  ev.report.mc_samples = field<std::size_t>(j, "mc_samples", mpath);
  ev.report.seed = field<std::uint64_t>(j, "seed", mpath);
  return ev;
}

// ---- comparison ---------------------------------------------------------

namespace {

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }
std::string lpad(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }

}  // namespace

Comparison compare(const std::vector<Evaluation>& evaluations, const std::vector<std::string>& labels) {
  if (evaluations.empty()) throw Error(ErrorCode::InvalidConfig, "compare needs at least one report");
  if (labels.size() != evaluations.size()) throw Error(ErrorCode::InvalidConfig, "one label per report");
  for (const auto& e : evaluations) {
    if (e.report.dataset_hash != evaluations.front().report.dataset_hash) {
      throw Error(ErrorCode::DatasetMismatch, "reports were computed on different datasets (" +
                                                  evaluations.front().report.dataset_hash + " vs " +
                                                  e.report.dataset_hash + ")");
    }
  }
  Comparison c;
  const auto& ref = evaluations.front().report;
  for (std::size_t i = 0; i < evaluations.size(); ++i) {
    const auto& r = evaluations[i].report;
    c.rows.push_back({labels[i], r.rmse, r.max_error, r.coverage, r.rmse - ref.rmse, r.max_error - ref.max_error});
  }
  std::stable_sort(c.rows.begin(), c.rows.end(), [](const auto& a, const auto& b) {
    return a.rmse != b.rmse ? a.rmse < b.rmse : a.label < b.label;
  });

  std::size_t w = 6;
  for (const auto& r : c.rows) w = std::max(w, r.label.size() + 2);
  c.text = "dataset " + ref.dataset_hash + ", reference " + labels.front() + "\n";
  c.text += pad("method", w) + lpad("RMSE [N]", 11) + lpad("MaxErr [N]", 12) + lpad("cover2s", 9) +
            lpad("dRMSE", 10) + lpad("dMaxErr", 10) + "\n";
  c.csv = "label,rmse,max_error,coverage_2sigma,delta_rmse,delta_max_error\n";
  for (const auto& r : c.rows) {
    c.text += pad(r.label, w) + lpad(fixed(r.rmse), 11) + lpad(fixed(r.max_error), 12) + lpad(fixed(r.coverage), 9) +
              lpad(fixed(r.delta_rmse), 10) + lpad(fixed(r.delta_max_error), 10) + "\n";
    c.csv += r.label + "," + format_double(r.rmse) + "," + format_double(r.max_error) + "," + format_double(r.coverage) +
             "," + format_double(r.delta_rmse) + "," + format_double(r.delta_max_error) + "\n";
  }

  for (const auto& [key, first] : evaluations.front().samples) {
    std::vector<const SampleDump*> dumps;
    for (const auto& e : evaluations) {
      auto it = e.samples.find(key);
      if (it == e.samples.end()) break;
      dumps.push_back(&it->second);
    }
    if (dumps.size() == evaluations.size()) c.plots[key + ".svg"] = overlay_svg(key, labels, dumps);
  }
  return c;
}

void write_comparison(const Comparison& c, const fs::path& dir) {
  write_text(dir / "comparison.txt", c.text);
  write_text(dir / "comparison.csv", c.csv);
  for (const auto& [name, svg] : c.plots) write_text(dir / "plots" / name, svg);
}

std::string overlay_svg(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<const SampleDump*>& dumps) {
  if (dumps.empty() || dumps.front()->t.empty()) throw Error(ErrorCode::EmptySeries, "nothing to plot");
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double W = 960, H = 400, left = 70, right = 160, top = 36, bottom = 44;
  const auto& t = dumps.front()->t;
  double t0 = t.front(), t1 = t.back();
  double y0 = INFINITY, y1 = -INFINITY;
  for (const auto* d : dumps) {
    for (std::size_t i = 0; i < d->t.size(); ++i) {
      y0 = std::min({y0, d->truth[i], d->mean[i] - 2.0 * d->std[i]});
      y1 = std::max({y1, d->truth[i], d->mean[i] + 2.0 * d->std[i]});
    }
  }
  if (!(t1 > t0)) t1 = t0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  const double pad_y = 0.05 * (y1 - y0);
  y0 -= pad_y;
  y1 += pad_y;
  auto X = [&](double v) { return fixed(left + (v - t0) / (t1 - t0) * (W - left - right), 2); };
  auto Y = [&](double v) { return fixed(top + (y1 - v) / (y1 - y0) * (H - top - bottom), 2); };
  const std::string plot_right = fixed(W - right, 2), plot_bottom = fixed(H - bottom, 2);

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(W, 0) + "\" height=\"" + fixed(H, 0) +
       "\" viewBox=\"0 0 " + fixed(W, 0) + " " + fixed(H, 0) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<title>" + xml_escape(title) + "</title>\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + fixed(W, 0) + "\" height=\"" + fixed(H, 0) + "\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(left, 0) + "\" y=\"22\" font-size=\"14\">" + xml_escape(title) + "</text>\n";
  // Axes and ticks.
  s += "<g stroke=\"#444\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + fixed(left, 2) + "\" y1=\"" + plot_bottom + "\" x2=\"" + plot_right + "\" y2=\"" + plot_bottom + "\"/>\n";
  s += "<line x1=\"" + fixed(left, 2) + "\" y1=\"" + fixed(top, 2) + "\" x2=\"" + fixed(left, 2) + "\" y2=\"" + plot_bottom + "\"/>\n";
  s += "</g>\n<g fill=\"#444\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double tv = t0 + (t1 - t0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    s += "<text x=\"" + X(tv) + "\" y=\"" + fixed(H - bottom + 16, 2) + "\" text-anchor=\"middle\">" + fixed(tv, 1) + "</text>\n";
    s += "<text x=\"" + fixed(left - 6, 2) + "\" y=\"" + Y(yv) + "\" text-anchor=\"end\">" + fixed(yv, 0) + "</text>\n";
  }
  s += "<text x=\"" + fixed((left + W - right) / 2, 2) + "\" y=\"" + fixed(H - 8, 2) + "\" text-anchor=\"middle\">t [s]</text>\n";
  s += "<text x=\"16\" y=\"" + fixed((top + H - bottom) / 2, 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fixed((top + H - bottom) / 2, 2) + ")\">F_z [N]</text>\n";
  s += "</g>\n";

  for (std::size_t m = 0; m < dumps.size(); ++m) {
    const auto* d = dumps[m];
    const char* color = kColors[m % std::size(kColors)];
    std::string band;
    for (std::size_t i = 0; i < d->t.size(); ++i) band += X(d->t[i]) + "," + Y(d->mean[i] + 2.0 * d->std[i]) + " ";
    for (std::size_t i = d->t.size(); i-- > 0;) band += X(d->t[i]) + "," + Y(d->mean[i] - 2.0 * d->std[i]) + " ";
    band.pop_back();
    s += "<polygon fill=\"" + std::string(color) + "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"" + band + "\"/>\n";
  }
  auto polyline = [&](const std::vector<double>& tv, const std::vector<double>& yv, const std::string& color,
                      const std::string& width) {
    std::string pts;
    for (std::size_t i = 0; i < tv.size(); ++i) pts += X(tv[i]) + "," + Y(yv[i]) + " ";
    pts.pop_back();
    return "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" + width + "\" points=\"" + pts + "\"/>\n";
  };
  s += polyline(t, dumps.front()->truth, "#000000", "1.5");
  for (std::size_t m = 0; m < dumps.size(); ++m) {
    s += polyline(dumps[m]->t, dumps[m]->mean, kColors[m % std::size(kColors)], "1");
  }

  // Legend.
  const double lx = W - right + 14;
  auto entry = [&](std::size_t row, const std::string& color, const std::string& text) {
    const double y = top + 10 + 18.0 * static_cast<double>(row);
    return "<line x1=\"" + fixed(lx, 2) + "\" y1=\"" + fixed(y, 2) + "\" x2=\"" + fixed(lx + 20, 2) + "\" y2=\"" +
           fixed(y, 2) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n<text x=\"" + fixed(lx + 26, 2) +
           "\" y=\"" + fixed(y + 4, 2) + "\">" + xml_escape(text) + "</text>\n";
  };
  s += entry(0, "#000000", "truth");
  for (std::size_t m = 0; m < dumps.size(); ++m) {
    s += entry(m + 1, kColors[m % std::size(kColors)], (m < labels.size() ? labels[m] : "method") + " (+-2 std)");
  }
  s += "</svg>\n";
  return s;
}

// ---- ablation -----------------------------------------------------------

const AblationCell* AblationTable::find(pinn::AblationMode mode, std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.mode == mode && c.seed == seed) return &c;
  }
  return nullptr;
}

AblationTable tabulate(std::vector<AblationCell> cells) {
  AblationTable t;
  t.cells = std::move(cells);
  std::vector<std::uint64_t> seeds;
  for (const auto& c : t.cells) {
    if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
  }
  t.csv = "mode,seed,ok,rmse,max_error,coverage_2sigma,error\n";
  for (const auto& c : t.cells) {
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    t.csv += std::string(pinn::to_string(c.mode)) + "," + std::to_string(c.seed) + "," + (c.ok ? "1" : "0") + "," +
             (c.ok ? format_double(c.rmse) : "") + "," + (c.ok ? format_double(c.max_error) : "") + "," +
             (c.ok ? format_double(c.coverage) : "") + "," + err + "\n";
  }
  t.text = pad("mode", 14) + lpad("RMSE [N]", 10) + lpad("MaxErr [N]", 12);
  for (auto s : seeds) t.text += lpad("seed " + std::to_string(s), 10);
  t.text += "\n";
  for (auto mode : pinn::kAllModes) {
    double rmse_sum = 0.0, max_sum = 0.0;
    std::size_t ok = 0;
    std::string per_seed;
    bool any = false;
    for (auto s : seeds) {
      const auto* c = t.find(mode, s);
      if (!c) {
        per_seed += lpad("-", 10);
        continue;
      }
      any = true;
      if (c->ok) {
        rmse_sum += c->rmse;
        max_sum += c->max_error;
        ++ok;
        per_seed += lpad(fixed(c->rmse, 2), 10);
      } else {
        per_seed += lpad("failed", 10);
      }
    }
    if (!any) continue;
    const std::string r = ok ? fixed(rmse_sum / static_cast<double>(ok), 2) : "-";
    const std::string m = ok ? fixed(max_sum / static_cast<double>(ok), 2) : "-";
    t.text += pad(std::string(pinn::to_string(mode)), 14) + lpad(r, 10) + lpad(m, 12) + per_seed + "\n";
  }
  return t;
}

AblationTable ablation_suite(const sim::Dataset& dataset, const pinn::TrainConfig& base,
                             const std::vector<std::uint64_t>& seeds, std::size_t n_samples,
                             const std::optional<fs::path>& out, const ProgressFn& progress) {
  if (seeds.empty()) throw Error(ErrorCode::InvalidConfig, "ablation suite needs at least one seed");
  std::vector<AblationCell> cells;
  for (auto mode : pinn::kAllModes) {
    for (auto seed : seeds) {
      AblationCell cell;
      cell.mode = mode;
      cell.seed = seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        pinn::TrainConfig cfg = base;
        cfg.ablation = mode;
        cfg.seed = seed;
        const auto trained = pinn::train(dataset, cfg);
        const auto ev = evaluate({trained.model}, dataset, trained.report.split.held_out, n_samples, seed);
        cell.ok = true;
        cell.rmse = ev.report.rmse;
        cell.max_error = ev.report.max_error;
        cell.coverage = ev.report.coverage;
        if (out) {
          const fs::path dir = *out / std::string(pinn::to_string(mode)) / ("seed" + std::to_string(seed));
          pinn::save_checkpoint(trained.model, dir / "model.ckpt");
          pinn::write_report_csv(trained.report, dir / "training.csv");
          write_evaluation(ev, dir / "eval");
        }
      } catch (const Error& e) {
        cell.error = e.what();
      }
      cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (progress) progress(cell);
      cells.push_back(cell);
    }
  }
  AblationTable table = tabulate(std::move(cells));
  if (out) {
    write_text(*out / "ablation.txt", table.text);
    write_text(*out / "ablation.csv", table.csv);
  }
  return table;
}

// ---- run manifest -------------------------------------------------------

void write_run_manifest(const RunManifest& m, const fs::path& path) {
  const fs::path dir = path.parent_path();
  for (const auto& rel : {m.checkpoint, m.report}) {
    if (rel.empty() || !fs::exists(dir / rel)) {
      throw Error(ErrorCode::IoError, "run manifest references missing file '" + (dir / rel).string() + "'");
    }
  }
  if (!m.dataset.empty() && !fs::exists(dir / m.dataset / "manifest.txt")) {
    throw Error(ErrorCode::IoError, "run manifest references missing dataset '" + m.dataset + "'");
  }
  const json j{{"format", "wheelload-run"},
               {"version", 1},
               {"tool_version", m.tool_version},
               {"config_hash", m.config_hash},
               {"seeds", {{"train", m.train_seed}, {"split", m.split_seed}}},
               {"checkpoint", m.checkpoint},
               {"report", m.report},
               {"dataset", m.dataset},
               {"dataset_hash", m.dataset_hash},
               {"ablation", m.mode},
               {"corner", m.corner},
               {"held_out", m.held_out}};
  write_text(path, j.dump(2) + "\n");
}

RunManifest read_run_manifest(const fs::path& path) {
  const json j = parse_json(path);
  if (field<std::string>(j, "format", path) != "wheelload-run" || field<int>(j, "version", path) != 1) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + " is not a version-1 run manifest");
  }
  RunManifest m;
  m.tool_version = field<std::string>(j, "tool_version", path);
  m.config_hash = field<std::string>(j, "config_hash", path);
  const json seeds = field<json>(j, "seeds", path);
  m.train_seed = field<std::uint64_t>(seeds, "train", path);
  m.split_seed = field<std::uint64_t>(seeds, "split", path);
  m.checkpoint = field<std::string>(j, "checkpoint", path);
  m.report = field<std::string>(j, "report", path);
  m.dataset = field<std::string>(j, "dataset", path);
  m.dataset_hash = field<std::string>(j, "dataset_hash", path);
  m.mode = field<std::string>(j, "ablation", path);
  m.corner = field<std::string>(j, "corner", path);
  m.held_out = field<std::vector<std::string>>(j, "held_out", path);
  return m;
}

}  // namespace wheelload::eval
