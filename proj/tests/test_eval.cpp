#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "wheelload/error.hpp"
#include "wheelload/eval.hpp"

using namespace wheelload;
using namespace wheelload::eval;
namespace fs = std::filesystem;

namespace {

const sim::Dataset& short_dataset() {
  static const sim::Dataset ds = sim::make_benchmark({sim::VehicleParams::fixture(0)}, 2, sim::NoiseSpec{}, 3, 1.0);
  return ds;
}

pinn::TrainConfig tiny_config() {
  pinn::TrainConfig c;
  c.network.hidden = {8, 8};
  c.encoder.d_hidden = {4};
  c.encoder.d_width = 4;
  c.encoder.g_hidden = {4};
  c.encoder.film_widths = c.network.hidden;
  c.epochs = 2;
  c.batch_size = 50;
  c.collocation_count = 64;
  c.collocation_batch = 16;
  c.eval_samples = 8;
  return c;
}

const pinn::TrainResult& trained() {
  static const pinn::TrainResult r = pinn::train(short_dataset(), tiny_config());
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wheelload_eval_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

boost::property_tree::ptree parse_xml(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree tree;
  boost::property_tree::read_xml(in, tree);
  return tree;
}

}  // namespace

TEST_CASE("rmse") {
  CHECK(rmse({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
  CHECK(rmse({1.0, 2.0}, {1.0, 4.0}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(rmse({5.5, 7.5, -1.5}, {3.0, 5.0, -4.0}) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK_THROWS_AS(rmse({}, {}), Error);
  try {
    rmse({}, {});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySeries);
  }
  CHECK_THROWS_AS(rmse({1.0}, {1.0, 2.0}), Error);
}

TEST_CASE("max error averages per-segment maxima") {
  CHECK(max_error({{{1.0, -3.0, 2.0}, {0.0, 0.0, 0.0}}}) == 3.0);
  CHECK(max_error({{{2.0}, {0.0}}, {{0.0, 4.0}, {0.0, 0.0}}}) == 3.0);
  CHECK(max_error({{{1.0, 2.0}, {1.0, 2.0}}}) == 0.0);
  CHECK_THROWS_AS(max_error({}), Error);
  CHECK_THROWS_AS(max_error({{{}, {}}}), Error);
}

TEST_CASE("metrics match an independent recomputation on a 10-point fixture") {
  const std::vector<double> p{1010.5, 980.25, 1203.0, 1155.75, 990.0, 870.5, 905.0, 1012.25, 1100.0, 940.125};
  const std::vector<double> t{1000.0, 990.0, 1190.5, 1160.0, 1001.0, 880.0, 900.0, 1000.0, 1111.5, 950.0};
  // Sum of squares 995.703125 over 10 points.
  CHECK(std::abs(rmse(p, t) - 9.978492496364368) <= 1e-12);
  const SeriesPair a{{p.begin(), p.begin() + 5}, {t.begin(), t.begin() + 5}};
  const SeriesPair b{{p.begin() + 5, p.end()}, {t.begin() + 5, t.end()}};
  CHECK(std::abs(max_error({a, b}) - 12.375) <= 1e-12);

  std::map<std::string, SampleDump> dumps;
  dumps["s1_FL"] = {{0, 1, 2, 3, 4}, a.predictions, std::vector<double>(5, 6.0), std::vector<double>(5, 1.0), a.targets};
  dumps["s2_FL"] = {{0, 1, 2, 3, 4}, b.predictions, std::vector<double>(5, 6.0), std::vector<double>(5, 1.0), b.targets};
  SegmentMetrics o1, o2;
  o1.segment = "s1";
  o2.segment = "s2";
  const MetricsReport r = summarize(dumps, {o1, o2});
  CHECK(std::abs(r.rmse - 9.978492496364368) <= 1e-12);
  CHECK(std::abs(r.max_error - 12.375) <= 1e-12);
  CHECK(r.segments[0].max_error == 12.5);
  CHECK(r.segments[1].max_error == 12.25);
  CHECK(r.max_error >= 12.25);
  CHECK(r.max_error <= 12.5);
  // |e| <= 12: 8 of 10; |e| <= 2: none.
  CHECK(r.coverage == 0.8);
  CHECK(r.model_coverage == 0.0);
  REQUIRE(r.corners.size() == 1);
  CHECK(r.corners[0].rmse == r.rmse);
  CHECK(r.samples == 10);
}

TEST_CASE("ground truth as prediction scores zero") {
  const auto& seg = short_dataset().segments[0];
  SampleDump d;
  for (const auto& f : seg.corners[0]) {
    d.t.push_back(f.t);
    d.mean.push_back(*f.fz_truth);
    d.truth.push_back(*f.fz_truth);
    d.std.push_back(1.0);
    d.model_std.push_back(0.5);
  }
  SegmentMetrics o;
  o.segment = seg.meta.id;
  const auto r = summarize({{dump_key(seg.meta.id, sim::Corner::FL), d}}, {o});
  CHECK(r.rmse == 0.0);
  CHECK(r.max_error == 0.0);
  CHECK(r.coverage == 1.0);
}

TEST_CASE("evaluate is deterministic and independent of the segment subset") {
  const auto& ds = short_dataset();
  const auto& model = trained().model;
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const auto a = evaluate({model}, ds, all, 16, 9);
  const auto b = evaluate({model}, ds, all, 16, 9);
  const auto c = evaluate({model}, ds, {2}, 16, 9);
  const auto d = evaluate({model}, ds, all, 16, 10);
  const auto key = dump_key(ds.segments[2].meta.id, sim::Corner::FL);
  CHECK(a.samples.at(key).mean == b.samples.at(key).mean);
  CHECK(a.samples.at(key).std == c.samples.at(key).std);
  CHECK(a.samples.at(key).std != d.samples.at(key).std);
  CHECK(a.report.rmse == b.report.rmse);
  CHECK(a.report.segments.size() == 4);
  CHECK(a.report.min_std > 0.0);
  CHECK(a.report.dataset_hash == ds.hash());
  CHECK(a.report.mode == "full");
  for (const auto& s : a.report.segments) {
    CHECK(s.rmse >= 0.0);
    CHECK(s.max_error >= s.rmse);
  }
  CHECK_THROWS_AS(evaluate({model, model}, ds, all, 16, 9), Error);
  CHECK_THROWS_AS(evaluate({model}, ds, {}, 16, 9), Error);
  CHECK_THROWS_AS(evaluate({model}, ds, all, 1, 9), Error);
  CHECK(segment_indices(ds, {ds.segments[3].meta.id, ds.segments[1].meta.id}) == std::vector<std::size_t>{3, 1});
  CHECK_THROWS_AS(segment_indices(ds, {"nope"}), Error);
}

TEST_CASE("two corners are reported separately and in aggregate") {
  const auto& ds = short_dataset();
  pinn::TrainConfig cfg = tiny_config();
  cfg.corner = sim::Corner::RR;
  cfg.epochs = 1;
  const auto rr = pinn::train(ds, cfg);
  const auto ev = evaluate({trained().model, rr.model}, ds, {0, 1}, 8, 1);
  REQUIRE(ev.report.corners.size() == 2);
  CHECK(ev.report.corners[0].corner == sim::Corner::FL);
  CHECK(ev.report.corners[1].corner == sim::Corner::RR);
  CHECK(ev.report.samples == ev.report.corners[0].samples + ev.report.corners[1].samples);
  const double pooled = std::sqrt((std::pow(ev.report.corners[0].rmse, 2) + std::pow(ev.report.corners[1].rmse, 2)) / 2.0);
  CHECK(ev.report.rmse == doctest::Approx(pooled).epsilon(1e-12));
}

TEST_CASE("evaluation files re-derive every reported number") {
  const auto& ds = short_dataset();
  const auto ev = evaluate({trained().model}, ds, {0, 3}, 16, 2);
  const auto dir = scratch("files");
  write_evaluation(ev, dir);
  CHECK(fs::exists(dir / "metrics.json"));
  const auto back = read_evaluation(dir);
  CHECK(back.report.rmse == ev.report.rmse);
  CHECK(back.report.max_error == ev.report.max_error);
  CHECK(back.report.coverage == ev.report.coverage);
  CHECK(back.report.dataset_hash == ev.report.dataset_hash);
  CHECK(back.report.segments.size() == 2);
  for (const auto& [key, d] : ev.samples) CHECK(back.samples.at(key).mean == d.mean);

  // The header must name all five columns.
  const auto csv = dir / "samples" / (dump_key(ds.segments[0].meta.id, sim::Corner::FL) + ".csv");
  std::string text = slurp(csv);
  CHECK(text.rfind("t,mean,std,model_std,truth\n", 0) == 0);
  text.replace(0, text.find('\n'), "t,mean,std,truth");
  std::ofstream(csv, std::ios::binary) << text;
  CHECK_THROWS_AS(read_evaluation(dir), Error);
  fs::remove(csv);
  CHECK_THROWS_AS(read_evaluation(dir), Error);
  fs::remove_all(dir);
  CHECK_THROWS_AS(read_evaluation(dir), Error);
}

TEST_CASE("compare") {
  const auto& ds = short_dataset();
  const auto ev = evaluate({trained().model}, ds, {0, 1}, 8, 4);
  pinn::TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  const auto untrained = evaluate({pinn::train(ds, cfg).model}, ds, {0, 1}, 8, 4);

  const auto self = compare({ev, ev}, {"a", "b"});
  for (const auto& r : self.rows) {
    CHECK(r.delta_rmse == 0.0);
    CHECK(r.delta_max_error == 0.0);
  }

  const auto c = compare({untrained, ev}, {"untrained", "trained <&> model"});
  REQUIRE(c.rows.size() == 2);
  CHECK(c.rows[0].rmse <= c.rows[1].rmse);
  CHECK(c.rows[0].label == "trained <&> model");
  CHECK(c.rows[0].delta_rmse == ev.report.rmse - untrained.report.rmse);
  CHECK(c.csv.rfind("label,rmse,max_error,coverage_2sigma,delta_rmse,delta_max_error\n", 0) == 0);
  CHECK(c.text.find("untrained") != std::string::npos);
  CHECK(c.plots.size() == 2);
  for (const auto& [name, svg] : c.plots) {
    const auto tree = parse_xml(svg);
    const auto& root = tree.get_child("svg");
    std::size_t lines = 0, bands = 0;
    for (const auto& [tag, node] : root) {
      lines += tag == "polyline";
      bands += tag == "polygon";
    }
    CHECK(lines == 3);  // truth and two methods
    CHECK(bands == 2);
    CHECK(svg.find("trained &lt;&amp;&gt; model") != std::string::npos);
  }

  auto other = ev;
  other.report.dataset_hash = "0000000000000000";
  try {
    compare({ev, other}, {"a", "b"});
    FAIL("expected DatasetMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DatasetMismatch);
  }
  CHECK_THROWS_AS(compare({ev}, {"a", "b"}), Error);

  const auto dir = scratch("compare");
  write_comparison(c, dir);
  CHECK(slurp(dir / "comparison.csv") == c.csv);
  CHECK(fs::exists(dir / "plots" / c.plots.begin()->first));
  fs::remove_all(dir);
}

TEST_CASE("ablation suite covers every mode and records failures") {
  const auto& ds = short_dataset();
  pinn::TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  std::size_t calls = 0;
  const auto a = ablation_suite(ds, cfg, {0}, 8, std::nullopt, [&](const AblationCell&) { ++calls; });
  CHECK(calls == 5);
  REQUIRE(a.cells.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.cells[i].mode == pinn::kAllModes[i]);
    CHECK(a.cells[i].ok);
  }
  for (const char* name : {"full", "basic-model", "no-bayes", "no-dpc", "no-nsdropout"}) {
    CHECK(a.text.find(name) != std::string::npos);
  }
  const auto dir = scratch("ablation");
  const auto b = ablation_suite(ds, cfg, {0}, 8, dir);
  CHECK(b.csv == a.csv);
  CHECK(b.text == a.text);
  CHECK(fs::exists(dir / "no-dpc" / "seed0" / "model.ckpt"));
  CHECK(fs::exists(dir / "ablation.csv"));
  fs::remove_all(dir);

  // Mismatched corner hardware breaks every linkage-physics mode but not the basic model.
  sim::Dataset odd = ds;
  auto v = sim::VehicleParams::fixture(1);
  v.corner.spring.stiffness *= 1.2;
  odd.vehicles.push_back(v);
  const auto t = ablation_suite(odd, cfg, {0}, 8);
  for (const auto& cell : t.cells) {
    CHECK(cell.ok == (cell.mode == pinn::AblationMode::BasicModel));
    if (!cell.ok) CHECK(cell.error.find("InvalidConfig") != std::string::npos);
  }
  CHECK(t.text.find("failed") != std::string::npos);
}

TEST_CASE("run manifest") {
  const auto dir = scratch("run");
  fs::create_directories(dir);
  pinn::save_checkpoint(trained().model, dir / "model.ckpt");
  pinn::write_report_csv(trained().report, dir / "training.csv");
  RunManifest m;
  m.config_hash = tiny_config().hash();
  m.train_seed = 3;
  m.split_seed = 1;
  m.checkpoint = "model.ckpt";
  m.report = "training.csv";
  m.dataset_hash = short_dataset().hash();
  m.mode = "full";
  m.corner = "FL";
  m.held_out = {"x", "y"};
  write_run_manifest(m, dir / "run.json");
  const auto back = read_run_manifest(dir / "run.json");
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.train_seed == 3);
  CHECK(back.held_out == m.held_out);
  CHECK(back.tool_version == std::string(kToolVersion));

  m.checkpoint = "missing.ckpt";
  CHECK_THROWS_AS(write_run_manifest(m, dir / "run2.json"), Error);
  m.checkpoint = "model.ckpt";
  m.dataset = (dir / "no-dataset").string();
  CHECK_THROWS_AS(write_run_manifest(m, dir / "run2.json"), Error);
  std::ofstream(dir / "bad.json") << "{\"format\": \"other\"}";
  CHECK_THROWS_AS(read_run_manifest(dir / "bad.json"), Error);
  fs::remove_all(dir);
}
