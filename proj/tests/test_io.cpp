// File-format round trips: patient CSV (including exact double recovery and
// blank covariate cells), summary-table / config / calibration JSON with
// their validation errors, and the CSV emitters for traces and plot data.

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"

#include "synthipd/io.hpp"

#include "testutil.hpp"

using namespace synthipd;
using Catch::Matchers::ContainsSubstring;
using testutil::TempDir;

namespace {

IpdRecord make_record(double t, int event, int arm, std::optional<int> x) {
  IpdRecord r;
  r.time = t;
  r.event = event;
  r.arm = arm;
  r.covariate = x;
  return r;
}

}  // namespace

TEST_CASE("patient CSV round-trips doubles bit-exactly") {
  IpdDataset data;
  data.k_max = 3;
  data.records.push_back(make_record(0.1, 1, 0, 2));
  data.records.push_back(make_record(1.0 / 3.0, 0, 1, std::nullopt));
  data.records.push_back(make_record(1e-9, 1, 0, 0));
  data.records.push_back(make_record(12345.678901234567, 0, 1, 3));
  data.records.push_back(make_record(2.0 / 7.0, 1, 1, 1));
  data.records.push_back(
      make_record(std::nextafter(5.0, 6.0), 1, 0, std::nullopt));

  TempDir tmp;
  write_ipd_csv(tmp.file("a.csv"), data);
  const IpdDataset back = read_ipd_csv(tmp.file("a.csv"), 3);

  REQUIRE(back.k_max == 3);
  REQUIRE(back.records.size() == data.records.size());
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    REQUIRE(back.records[i].time == data.records[i].time);
    REQUIRE(back.records[i].event == data.records[i].event);
    REQUIRE(back.records[i].arm == data.records[i].arm);
    REQUIRE(back.records[i].covariate == data.records[i].covariate);
  }
}

TEST_CASE("patient CSV reader infers the label range when asked") {
  TempDir tmp;
  write_text_file(tmp.file("b.csv"),
                  "time,event,arm,covariate\n"
                  "1.5,1,0,0\n"
                  "2.5,0,1,2\n"
                  "3.5,1,0,\n");
  const IpdDataset data = read_ipd_csv(tmp.file("b.csv"));
  REQUIRE(data.k_max == 2);
  REQUIRE(data.records.size() == 3);
  REQUIRE_FALSE(data.records[2].covariate.has_value());

  // The covariate column is optional entirely.
  write_text_file(tmp.file("c.csv"), "time,event,arm\n4,1,1\n");
  const IpdDataset bare = read_ipd_csv(tmp.file("c.csv"));
  REQUIRE(bare.k_max == 0);
  REQUIRE_FALSE(bare.records[0].covariate.has_value());

  // Whitespace around fields and CRLF endings are tolerated.
  write_text_file(tmp.file("d.csv"),
                  "time,event,arm,covariate\r\n 7.5 , 1 , 0 , 1 \r\n");
  const IpdDataset crlf = read_ipd_csv(tmp.file("d.csv"));
  REQUIRE(crlf.records[0].time == 7.5);
  REQUIRE(crlf.records[0].covariate == 1);
}

TEST_CASE("patient CSV reader rejects malformed input") {
  TempDir tmp;
  write_text_file(tmp.file("bad1.csv"), "time,event,arm,foo\n1,1,0,\n");
  REQUIRE_THROWS_WITH(read_ipd_csv(tmp.file("bad1.csv")),
                      ContainsSubstring("expected header"));

  write_text_file(tmp.file("bad2.csv"), "");
  REQUIRE_THROWS_WITH(read_ipd_csv(tmp.file("bad2.csv")),
                      ContainsSubstring("empty"));

  write_text_file(tmp.file("bad3.csv"), "time,event,arm,covariate\n1,1\n");
  REQUIRE_THROWS_WITH(read_ipd_csv(tmp.file("bad3.csv")),
                      ContainsSubstring("expected 3-4 fields"));

  write_text_file(tmp.file("bad4.csv"), "time,event,arm,covariate\nx,1,0,\n");
  REQUIRE_THROWS_WITH(read_ipd_csv(tmp.file("bad4.csv")),
                      ContainsSubstring("not a number"));

  write_text_file(tmp.file("bad5.csv"), "time,event,arm,covariate\n1,2,0,\n");
  REQUIRE_THROWS_AS(read_ipd_csv(tmp.file("bad5.csv")), Error);

  // Label outside the declared range.
  write_text_file(tmp.file("bad6.csv"), "time,event,arm,covariate\n1,1,0,5\n");
  REQUIRE_THROWS_AS(read_ipd_csv(tmp.file("bad6.csv"), 1), Error);

  REQUIRE_THROWS_WITH(read_ipd_csv(tmp.file("no_such_file.csv")),
                      ContainsSubstring("cannot open"));
}

TEST_CASE("summary triples serialize not-estimable members as NE") {
  SummaryTriple t;
  t.estimate = 1.5;
  t.hi95 = 3.25;
  const Json j = to_json(t);
  REQUIRE(j["estimate"] == 1.5);
  REQUIRE(j["lo95"] == "NE");
  REQUIRE(j["hi95"] == 3.25);

  const SummaryTriple back = triple_from_json(j, "t");
  REQUIRE(back.estimate == t.estimate);
  REQUIRE_FALSE(back.lo95.has_value());
  REQUIRE(back.hi95 == t.hi95);

  // Every accepted spelling of "not estimable".
  for (const Json& ne : {Json("NE"), Json("NA"), Json(""), Json(nullptr)}) {
    const Json quirky{{"estimate", ne}, {"lo95", 2.0}, {"hi95", ne}};
    const SummaryTriple q = triple_from_json(quirky, "t");
    REQUIRE_FALSE(q.estimate.has_value());
    REQUIRE(q.lo95 == 2.0);
  }

  REQUIRE_THROWS_WITH(
      triple_from_json(Json{{"estimate", "bogus"}}, "t"),
      ContainsSubstring("expected a number"));
  REQUIRE_THROWS_AS(triple_from_json(Json{{"estimate", true}}, "t"), Error);
  REQUIRE_THROWS_AS(triple_from_json(Json::array(), "t"), Error);
}

namespace {

SubgroupSummaryTable sample_table() {
  SubgroupSummaryTable table;
  table.k_max = 1;
  table.rate_times = {6.0, 12.0};
  table.cells.resize(2);
  for (int x = 0; x < 2; ++x)
    for (int arm = 0; arm < 2; ++arm) {
      SubgroupCell cell;
      cell.n = 10 + 5 * x + arm;
      cell.median.estimate = 8.0 + x + arm;
      cell.median.lo95 = 6.0 + x;
      if (x == 0) cell.median.hi95 = 11.5;  // NE in the other subgroup
      cell.rates.resize(2);
      cell.rates[0].estimate = 0.7 - 0.1 * arm;
      cell.rates[1].estimate = 0.4 - 0.1 * arm;
      cell.rates[1].lo95 = 0.3;
      table.cells[std::size_t(x)][std::size_t(arm)] = cell;
    }
  table.hazard_ratios.resize(2);
  table.hazard_ratios[0].estimate = 0.7;
  table.hazard_ratios[0].lo95 = 0.5;
  table.hazard_ratios[0].hi95 = 0.95;
  table.hazard_ratios[1].estimate = 0.8;
  return table;
}

void require_triple_equal(const SummaryTriple& a, const SummaryTriple& b) {
  REQUIRE(a.estimate == b.estimate);
  REQUIRE(a.lo95 == b.lo95);
  REQUIRE(a.hi95 == b.hi95);
}

}  // namespace

TEST_CASE("summary tables survive a JSON round trip") {
  const SubgroupSummaryTable table = sample_table();
  const SubgroupSummaryTable back =
      table_from_json(parse_json(to_json(table).dump(), "rt"), "rt");

  REQUIRE(back.k_max == table.k_max);
  REQUIRE(back.rate_times == table.rate_times);
  REQUIRE(back.hazard_ratios.size() == 2);
  for (int x = 0; x < 2; ++x) {
    require_triple_equal(back.hazard_ratios[std::size_t(x)],
                         table.hazard_ratios[std::size_t(x)]);
    for (int arm = 0; arm < 2; ++arm) {
      const auto& a = back.cell(x, arm);
      const auto& b = table.cell(x, arm);
      REQUIRE(a.n == b.n);
      require_triple_equal(a.median, b.median);
      REQUIRE(a.rates.size() == b.rates.size());
      for (std::size_t i = 0; i < a.rates.size(); ++i)
        require_triple_equal(a.rates[i], b.rates[i]);
    }
  }
}

TEST_CASE("summary table parsing rejects structural defects") {
  const Json good = to_json(sample_table());

  Json j = good;
  j.erase("schema");
  REQUIRE_THROWS_WITH(table_from_json(j, "t"), ContainsSubstring("schema"));

  j = good;
  j["cells"][1]["x"] = 0;
  REQUIRE_THROWS_WITH(table_from_json(j, "t"),
                      ContainsSubstring("duplicate cell label"));

  j = good;
  j["cells"][1]["x"] = 7;
  REQUIRE_THROWS_WITH(table_from_json(j, "t"),
                      ContainsSubstring("out of range"));

  j = good;
  j["cells"].erase(1);
  REQUIRE_THROWS_WITH(table_from_json(j, "t"),
                      ContainsSubstring("array of 2 entries"));

  j = good;
  j["cells"][0]["arms"][0]["n"] = -4;
  REQUIRE_THROWS_WITH(table_from_json(j, "t"),
                      ContainsSubstring("negative cell count"));

  j = good;
  j["cells"][0]["arms"].erase(1);
  REQUIRE_THROWS_WITH(table_from_json(j, "t"),
                      ContainsSubstring("exactly two arm entries"));

  j = good;
  j["cells"][0]["arms"][0]["rates"].erase(1);
  REQUIRE_THROWS_WITH(table_from_json(j, "t"),
                      ContainsSubstring("rates length"));

  j = good;
  j["hazard_ratios"].erase(1);
  REQUIRE_THROWS_WITH(table_from_json(j, "t"),
                      ContainsSubstring("hazard_ratios length"));

  j = good;
  j["k_max"] = -1;
  REQUIRE_THROWS_AS(table_from_json(j, "t"), Error);

  // Omitted hazard ratios and rates default to not-estimable placeholders.
  j = good;
  j.erase("hazard_ratios");
  for (auto& cell : j["cells"])
    for (auto& arm : cell["arms"]) arm.erase("rates");
  const SubgroupSummaryTable sparse = table_from_json(j, "t");
  REQUIRE(sparse.hazard_ratios.size() == 2);
  REQUIRE_FALSE(sparse.hazard_ratios[0].any());
  REQUIRE(sparse.cell(0, 0).rates.size() == 2);
  REQUIRE_FALSE(sparse.cell(0, 0).rates[0].any());
}

TEST_CASE("optimizer configs survive a JSON round trip") {
  AnnealConfig cfg;
  cfg.max_iters = 12345;
  cfg.hr_ceiling = 0.02;
  cfg.swap_lo = 2.5;
  cfg.swap_hi = 15.0;
  cfg.acceptance = AcceptFamily::kZero;
  cfg.stop_tol_m = 0.003;
  cfg.ne_penalty = 0.5;
  cfg.seed = 777;
  cfg.trace_stride = 50;
  cfg.restarts = 4;
  cfg.adaptive_shrink = true;

  const AnnealConfig back =
      anneal_from_json(parse_json(to_json(cfg).dump(), "cfg"), "cfg");
  REQUIRE(back.max_iters == cfg.max_iters);
  REQUIRE(back.hr_ceiling == cfg.hr_ceiling);
  REQUIRE(back.swap_lo == cfg.swap_lo);
  REQUIRE(back.swap_hi == cfg.swap_hi);
  REQUIRE(back.acceptance == cfg.acceptance);
  REQUIRE(back.stop_tol_m == cfg.stop_tol_m);
  REQUIRE_FALSE(back.stop_tol_hr.has_value());
  REQUIRE(back.ne_penalty == cfg.ne_penalty);
  REQUIRE(back.seed == cfg.seed);
  REQUIRE(back.trace_stride == cfg.trace_stride);
  REQUIRE(back.restarts == cfg.restarts);
  REQUIRE(back.adaptive_shrink == cfg.adaptive_shrink);

  // Defaults apply when keys are absent; validation still runs.
  const AnnealConfig dflt =
      anneal_from_json(Json{{"schema", 1}}, "cfg");
  REQUIRE(dflt.max_iters == AnnealConfig{}.max_iters);
  REQUIRE(dflt.acceptance == AcceptFamily::kExpDecay);

  REQUIRE_THROWS_WITH(
      anneal_from_json(Json{{"schema", 1}, {"acceptance", "warp"}}, "cfg"),
      ContainsSubstring("unknown acceptance family"));
  REQUIRE_THROWS_AS(
      anneal_from_json(Json{{"schema", 1}, {"hr_ceiling", 2.0}}, "cfg"),
      Error);
  REQUIRE_THROWS_AS(
      anneal_from_json(
          Json{{"schema", 1}, {"swap_lo", 5.0}, {"swap_hi", 1.0}}, "cfg"),
      Error);
}

TEST_CASE("axis calibrations and selectors round-trip through JSON") {
  AxisCalibration cal;
  cal.x_anchors = {AxisAnchor{70.0, 0.0}, AxisAnchor{770.0, 36.0}};
  cal.y_anchors = {AxisAnchor{460.0, 0.0}, AxisAnchor{30.0, 1.0}};
  const AxisCalibration back =
      calibration_from_json(parse_json(to_json(cal).dump(), "cal"), "cal");
  for (int i = 0; i < 2; ++i) {
    REQUIRE(back.x_anchors[std::size_t(i)].pixel ==
            cal.x_anchors[std::size_t(i)].pixel);
    REQUIRE(back.x_anchors[std::size_t(i)].data ==
            cal.x_anchors[std::size_t(i)].data);
    REQUIRE(back.y_anchors[std::size_t(i)].pixel ==
            cal.y_anchors[std::size_t(i)].pixel);
    REQUIRE(back.y_anchors[std::size_t(i)].data ==
            cal.y_anchors[std::size_t(i)].data);
  }

  Json j = to_json(cal);
  j["x_anchors"].erase(1);
  REQUIRE_THROWS_WITH(calibration_from_json(j, "cal"),
                      ContainsSubstring("two anchors"));
  j = to_json(cal);
  j.erase("y_anchors");
  REQUIRE_THROWS_AS(calibration_from_json(j, "cal"), Error);
  // Coincident anchors cannot define a scale.
  j = to_json(cal);
  j["x_anchors"][1] = j["x_anchors"][0];
  REQUIRE_THROWS_AS(calibration_from_json(j, "cal"), Error);

  for (auto kind : {Selector::Kind::kId, Selector::Kind::kStroke,
                    Selector::Kind::kClass}) {
    Selector sel;
    sel.kind = kind;
    sel.value = "v";
    const Selector sback = selector_from_json(to_json(sel), "sel");
    REQUIRE(sback.kind == sel.kind);
    REQUIRE(sback.value == sel.value);
  }
  REQUIRE_THROWS_WITH(
      selector_from_json(Json{{"kind", "aura"}, {"value", "x"}}, "sel"),
      ContainsSubstring("id|stroke|class"));
  REQUIRE_THROWS_WITH(
      selector_from_json(Json{{"kind", "id"}, {"value", ""}}, "sel"),
      ContainsSubstring("empty"));
}

TEST_CASE("digitize jobs parse with path resolution and option overrides") {
  const Json j{
      {"schema", 1},
      {"svg", {"fig0.svg", "/abs/fig1.svg"}},
      {"selectors",
       {Json{{"kind", "id"}, {"value", "arm0"}},
        Json{{"kind", "stroke"}, {"value", "#d62728"}}}},
      {"calibration", "embedded"},
      {"grid", {0.0, 6.0, 12.0}},
      {"at_risk", {Json::array({10, 5, 2}), Json::array({10, 6, 3})}},
      {"reported_censor", {Json::array({1, 0}), Json::array({0, 1})}},
      {"seed", 77},
      {"tick_max_px", 9.0},
      {"tick_slack_px", 1.5}};

  const DigitizeJob job = digitize_job_from_json(j, "job", "/base");
  REQUIRE(job.svg_paths[0] == "/base/fig0.svg");
  REQUIRE(job.svg_paths[1] == "/abs/fig1.svg");
  REQUIRE(job.selectors[0].kind == Selector::Kind::kId);
  REQUIRE(job.selectors[1].kind == Selector::Kind::kStroke);
  REQUIRE(job.embedded_calibration);
  REQUIRE(job.risk.grid == std::vector<double>{0.0, 6.0, 12.0});
  REQUIRE(job.risk.at_risk[0] == std::vector<long>{10, 5, 2});
  REQUIRE(job.risk.reported_censor[1] == std::vector<long>{0, 1});
  REQUIRE(job.seed == 77);
  REQUIRE(job.parse_options.tick_max_px == 9.0);
  REQUIRE(job.parse_options.tick_slack_px == 1.5);

  // Inline calibration object instead of the embedded marker.
  Json j2 = j;
  AxisCalibration cal;
  cal.x_anchors = {AxisAnchor{0.0, 0.0}, AxisAnchor{100.0, 12.0}};
  cal.y_anchors = {AxisAnchor{100.0, 0.0}, AxisAnchor{0.0, 1.0}};
  j2["calibration"] = to_json(cal);
  const DigitizeJob job2 = digitize_job_from_json(j2, "job", "");
  REQUIRE_FALSE(job2.embedded_calibration);
  REQUIRE(job2.calibration.x_anchors[1].data == 12.0);
  REQUIRE(job2.svg_paths[0] == "fig0.svg");  // no base dir to prepend

  auto broken = [&](const char* key) {
    Json b = j;
    b.erase(key);
    return b;
  };
  REQUIRE_THROWS_AS(digitize_job_from_json(broken("svg"), "job", ""), Error);
  REQUIRE_THROWS_AS(digitize_job_from_json(broken("selectors"), "job", ""),
                    Error);
  REQUIRE_THROWS_WITH(
      digitize_job_from_json(broken("calibration"), "job", ""),
      ContainsSubstring("calibration"));
  REQUIRE_THROWS_AS(digitize_job_from_json(broken("grid"), "job", ""), Error);
  REQUIRE_THROWS_AS(digitize_job_from_json(broken("at_risk"), "job", ""),
                    Error);

  Json b = j;
  b["calibration"] = "axes";
  REQUIRE_THROWS_WITH(digitize_job_from_json(b, "job", ""),
                      ContainsSubstring("embedded"));
  b = j;
  b["at_risk"] = Json::array({Json::array({10, 5, 2})});
  REQUIRE_THROWS_AS(digitize_job_from_json(b, "job", ""), Error);
  b = j;
  b["at_risk"][0] = Json::array({10, 5});  // length != grid length
  REQUIRE_THROWS_AS(digitize_job_from_json(b, "job", ""), Error);
}

TEST_CASE("trace CSV is written row for row") {
  std::vector<TraceRow> trace(2);
  trace[0].iter = 0;
  trace[0].loss_m = 0.5;
  trace[0].loss_hr = 0.25;
  trace[0].gamma = 0;
  trace[0].accepted = true;
  trace[0].branch = 1;
  trace[1].iter = 10;
  trace[1].loss_m = 0.125;
  trace[1].loss_hr = 0.0625;
  trace[1].gamma = 3;
  trace[1].accepted = false;
  trace[1].branch = 4;

  TempDir tmp;
  write_trace_csv(tmp.file("trace.csv"), trace);
  REQUIRE(read_text_file(tmp.file("trace.csv")) ==
          "iter,loss_m,loss_hr,gamma,accepted,branch\n"
          "0,0.5,0.25,0,1,1\n"
          "10,0.125,0.0625,3,0,4\n");
}

TEST_CASE("plot CSV lists step vertices and censor marks per stratum") {
  IpdDataset data;
  data.k_max = 1;
  data.records.push_back(make_record(2.0, 1, 0, 0));
  data.records.push_back(make_record(4.0, 0, 0, 1));
  data.records.push_back(make_record(3.0, 1, 1, 0));
  data.records.push_back(make_record(5.0, 1, 1, 1));

  TempDir tmp;
  write_km_plot_csv(tmp.file("plot.csv"), data);
  const std::string text = read_text_file(tmp.file("plot.csv"));

  std::istringstream in(text);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == "arm,covariate,kind,time,survival");

  long pooled_steps = 0, labeled_rows = 0, censor_rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("0,,step,", 0) == 0 || line.rfind("1,,step,", 0) == 0)
      ++pooled_steps;
    if (line.rfind("0,0,", 0) == 0 || line.rfind("0,1,", 0) == 0 ||
        line.rfind("1,0,", 0) == 0 || line.rfind("1,1,", 0) == 0)
      ++labeled_rows;
    if (line.find(",censor,") != std::string::npos) ++censor_rows;
  }
  // Each arm's pooled curve has a start vertex, two rows per drop, and a
  // terminal vertex; arm 0 has one drop, arm 1 has two.
  REQUIRE(pooled_steps == 4 + 6);
  REQUIRE(labeled_rows > 0);   // per-label curves present when assigned
  REQUIRE(censor_rows >= 2);   // the arm-0 censoring, pooled + labeled
}
