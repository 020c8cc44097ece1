#pragma once

// On-disk formats: IPD CSV (time,event,arm,covariate with a blank cell for
// unassigned covariates), versioned JSON for summary tables / configs /
// jobs / reports (numbers absent from a source are the string "NE"), and
// CSV emitters for optimizer traces and step-function plot data.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "synthipd/common.hpp"
#include "synthipd/covgen.hpp"
#include "synthipd/digitize.hpp"
#include "synthipd/metrics.hpp"
#include "synthipd/survival.hpp"
#include "synthipd/types.hpp"

namespace synthipd {

using Json = nlohmann::json;

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  out << content;
  if (!out) throw Error("write failed: " + path);
}

// Shortest representation that round-trips a double exactly.
inline std::string csv_double(double v) { return format("%.17g", v); }

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const std::exception& e) {
    throw Error(what + ": invalid JSON: " + e.what());
  }
}

inline Json load_json_file(const std::string& path) {
  return parse_json(read_text_file(path), path);
}

inline void require_schema(const Json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("schema") || !j["schema"].is_number() ||
      j["schema"].get<int>() != 1)
    throw Error(what + ": missing or unsupported \"schema\" (expected 1)");
}

// ---- IPD CSV ----

inline void write_ipd_csv(std::ostream& out, const IpdDataset& data) {
  out << "time,event,arm,covariate\n";
  for (const auto& r : data.records) {
    out << csv_double(r.time) << ',' << r.event << ',' << r.arm << ',';
    if (r.covariate) out << *r.covariate;
    out << '\n';
  }
}

inline void write_ipd_csv(const std::string& path, const IpdDataset& data) {
  std::ostringstream buf;
  write_ipd_csv(buf, data);
  write_text_file(path, buf.str());
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  for (;;) {
    std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    std::size_t lead = 0;
    while (lead < f.size() && f[lead] == ' ') ++lead;
    f.erase(0, lead);
  }
  return fields;
}

inline double parse_csv_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(what + ": not a number: '" + s + "'");
  return v;
}

inline long parse_csv_long(const std::string& s, const std::string& what) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error(what + ": not an integer: '" + s + "'");
  return v;
}

}  // namespace detail

// `k_max` < 0 infers the label range from the data (0 when no labels).
inline IpdDataset read_ipd_csv(const std::string& path, int k_max = -1) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty IPD CSV");
  {
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "time" || header[1] != "event" ||
        header[2] != "arm" ||
        (header.size() == 4 && header[3] != "covariate") ||
        header.size() > 4)
      throw Error(path + ": expected header time,event,arm,covariate");
  }
  IpdDataset data;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 3 && f.size() != 4)
      throw Error(format("%s:%ld: expected 3-4 fields", path.c_str(),
                         line_no));
    const std::string where = format("%s:%ld", path.c_str(), line_no);
    IpdRecord rec;
    rec.time = detail::parse_csv_double(f[0], where);
    rec.event = int(detail::parse_csv_long(f[1], where));
    rec.arm = int(detail::parse_csv_long(f[2], where));
    if (f.size() == 4 && !f[3].empty())
      rec.covariate = int(detail::parse_csv_long(f[3], where));
    data.records.push_back(rec);
  }
  if (k_max >= 0) {
    data.k_max = k_max;
  } else {
    data.k_max = 0;
    for (const auto& r : data.records)
      if (r.covariate) data.k_max = std::max(data.k_max, *r.covariate);
  }
  validate(data);
  return data;
}

// ---- Summary triples and tables ----

inline Json to_json(const SummaryTriple& t) {
  auto field = [](const std::optional<double>& v) -> Json {
    if (!v) return "NE";
    return *v;
  };
  return Json{{"estimate", field(t.estimate)},
              {"lo95", field(t.lo95)},
              {"hi95", field(t.hi95)}};
}

inline std::optional<double> optional_from_json(const Json& j,
                                                const std::string& what) {
  if (j.is_null()) return std::nullopt;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "NE" || s == "NA" || s.empty()) return std::nullopt;
    throw Error(what + ": expected a number or \"NE\", got '" + s + "'");
  }
  if (j.is_number()) return j.get<double>();
  throw Error(what + ": expected a number or \"NE\"");
}

inline SummaryTriple triple_from_json(const Json& j, const std::string& what) {
  if (!j.is_object()) throw Error(what + ": expected an object");
  SummaryTriple t;
  if (j.contains("estimate"))
    t.estimate = optional_from_json(j["estimate"], what + ".estimate");
  if (j.contains("lo95")) t.lo95 = optional_from_json(j["lo95"], what + ".lo95");
  if (j.contains("hi95")) t.hi95 = optional_from_json(j["hi95"], what + ".hi95");
  return t;
}

inline Json to_json(const SubgroupSummaryTable& table) {
  Json cells = Json::array();
  for (int x = 0; x <= table.k_max; ++x) {
    Json arms = Json::array();
    for (int arm = 0; arm < 2; ++arm) {
      const auto& cell = table.cell(x, arm);
      Json rates = Json::array();
      for (const auto& r : cell.rates) rates.push_back(to_json(r));
      arms.push_back(Json{{"n", cell.n},
                          {"median", to_json(cell.median)},
                          {"rates", rates}});
    }
    cells.push_back(Json{{"x", x}, {"arms", arms}});
  }
  Json hrs = Json::array();
  for (const auto& hr : table.hazard_ratios) hrs.push_back(to_json(hr));
  return Json{{"schema", 1},
              {"k_max", table.k_max},
              {"rate_times", table.rate_times},
              {"cells", cells},
              {"hazard_ratios", hrs}};
}

inline SubgroupSummaryTable table_from_json(const Json& j,
                                            const std::string& what) {
  require_schema(j, what);
  SubgroupSummaryTable table;
  if (!j.contains("k_max") || !j["k_max"].is_number_integer())
    throw Error(what + ": missing integer \"k_max\"");
  table.k_max = j["k_max"].get<int>();
  if (table.k_max < 0) throw Error(what + ": k_max must be >= 0");
  if (j.contains("rate_times"))
    table.rate_times = j["rate_times"].get<std::vector<double>>();
  table.cells.resize(std::size_t(table.k_max) + 1);
  if (!j.contains("cells") || !j["cells"].is_array() ||
      j["cells"].size() != std::size_t(table.k_max) + 1)
    throw Error(format("%s: \"cells\" must be an array of %d entries",
                       what.c_str(), table.k_max + 1));
  std::vector<bool> seen(std::size_t(table.k_max) + 1, false);
  for (const auto& cj : j["cells"]) {
    const int x = cj.at("x").get<int>();
    if (x < 0 || x > table.k_max)
      throw Error(what + ": cell label out of range");
    if (seen[std::size_t(x)]) throw Error(what + ": duplicate cell label");
    seen[std::size_t(x)] = true;
    const auto& arms = cj.at("arms");
    if (!arms.is_array() || arms.size() != 2)
      throw Error(what + ": each cell needs exactly two arm entries");
    for (int arm = 0; arm < 2; ++arm) {
      SubgroupCell cell;
      const auto& aj = arms[std::size_t(arm)];
      cell.n = aj.at("n").get<long>();
      if (cell.n < 0) throw Error(what + ": negative cell count");
      if (aj.contains("median"))
        cell.median = triple_from_json(aj["median"], what + ".median");
      if (aj.contains("rates")) {
        for (const auto& rj : aj["rates"])
          cell.rates.push_back(triple_from_json(rj, what + ".rates"));
        if (cell.rates.size() != table.rate_times.size())
          throw Error(what + ": rates length != rate_times length");
      } else if (!table.rate_times.empty()) {
        cell.rates.assign(table.rate_times.size(), SummaryTriple{});
      }
      table.cells[std::size_t(x)][std::size_t(arm)] = std::move(cell);
    }
  }
  if (j.contains("hazard_ratios")) {
    for (const auto& hj : j["hazard_ratios"])
      table.hazard_ratios.push_back(
          triple_from_json(hj, what + ".hazard_ratios"));
  }
  if (table.hazard_ratios.empty())
    table.hazard_ratios.assign(std::size_t(table.k_max) + 1, SummaryTriple{});
  if (table.hazard_ratios.size() != std::size_t(table.k_max) + 1)
    throw Error(what + ": hazard_ratios length != k_max + 1");
  return table;
}

// ---- Optimizer config and reports ----

inline Json to_json(const AnnealConfig& cfg) {
  Json j{{"schema", 1},
         {"max_iters", cfg.max_iters},
         {"hr_ceiling", cfg.hr_ceiling},
         {"swap_lo", cfg.swap_lo},
         {"swap_hi", cfg.swap_hi},
         {"acceptance", accept_family_name(cfg.acceptance)},
         {"ne_penalty", cfg.ne_penalty},
         {"seed", cfg.seed},
         {"trace_stride", cfg.trace_stride},
         {"restarts", cfg.restarts},
         {"adaptive_shrink", cfg.adaptive_shrink}};
  if (cfg.stop_tol_m) j["stop_tol_m"] = *cfg.stop_tol_m;
  if (cfg.stop_tol_hr) j["stop_tol_hr"] = *cfg.stop_tol_hr;
  return j;
}

inline AnnealConfig anneal_from_json(const Json& j, const std::string& what) {
  require_schema(j, what);
  AnnealConfig cfg;
  auto num = [&](const char* key, double dflt) {
    return j.contains(key) ? j.at(key).get<double>() : dflt;
  };
  cfg.max_iters = j.contains("max_iters") ? j.at("max_iters").get<long>()
                                          : cfg.max_iters;
  cfg.hr_ceiling = num("hr_ceiling", cfg.hr_ceiling);
  cfg.swap_lo = num("swap_lo", cfg.swap_lo);
  cfg.swap_hi = num("swap_hi", cfg.swap_hi);
  if (j.contains("acceptance"))
    cfg.acceptance = parse_accept_family(j.at("acceptance").get<std::string>());
  if (j.contains("stop_tol_m")) cfg.stop_tol_m = j.at("stop_tol_m").get<double>();
  if (j.contains("stop_tol_hr"))
    cfg.stop_tol_hr = j.at("stop_tol_hr").get<double>();
  cfg.ne_penalty = num("ne_penalty", cfg.ne_penalty);
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("trace_stride"))
    cfg.trace_stride = j.at("trace_stride").get<long>();
  if (j.contains("restarts")) cfg.restarts = j.at("restarts").get<int>();
  if (j.contains("adaptive_shrink"))
    cfg.adaptive_shrink = j.at("adaptive_shrink").get<bool>();
  validate(cfg);
  return cfg;
}

inline Json to_json(const LossComponent& c) {
  Json j{{"statistic", c.statistic},
         {"x", c.x},
         {"member", c.member},
         {"target", c.target ? Json(*c.target) : Json("NE")},
         {"candidate", c.candidate ? Json(*c.candidate) : Json("NE")},
         {"rae", c.rae}};
  if (c.arm >= 0) j["arm"] = c.arm;
  if (!std::isnan(c.time)) j["time"] = c.time;
  return j;
}

inline Json to_json(const LossReport& r) {
  Json comps = Json::array();
  for (const auto& c : r.components) comps.push_back(to_json(c));
  Json j{{"schema", 1},
         {"loss_m", r.loss_m},
         {"loss_hr", r.loss_hr},
         {"iterations", r.iterations},
         {"gamma", r.gamma},
         {"converged", r.converged},
         {"components", comps},
         {"flags", r.flags}};
  if (r.loss_extra) j["loss_rate"] = *r.loss_extra;
  return j;
}

inline Json to_json(const MetricReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    cells.push_back(Json{{"x", c.x},
                         {"arm", c.arm},
                         {"n_true", c.n_true},
                         {"n_synth", c.n_synth},
                         {"tau", c.tau},
                         {"nauc", c.nauc},
                         {"ks", c.ks},
                         {"used", c.used}});
  }
  return Json{{"schema", 1},
              {"mode", r.mode},
              {"weighted_nauc", r.weighted_nauc},
              {"averaged_ks", r.averaged_ks},
              {"cells", cells},
              {"flags", r.flags}};
}

inline Json to_json(const DigitizeReport& r) {
  Json intervals = Json::array();
  for (const auto& a : r.intervals) {
    intervals.push_back(Json{{"arm", a.arm},
                             {"interval", a.index},
                             {"t_lo", a.t_lo},
                             {"t_hi", a.t_hi},
                             {"at_risk_start", a.at_risk_start},
                             {"at_risk_end", a.at_risk_end},
                             {"events_raw", a.events_raw},
                             {"events", a.events},
                             {"censorings", a.censorings},
                             {"naive_censorings", a.naive_censorings},
                             {"reported_censorings_used",
                              a.reported_censorings_used},
                             {"remainder_adjusted", a.remainder_adjusted},
                             {"flat_events_converted",
                              a.flat_events_converted}});
  }
  return Json{{"schema", 1},
              {"intervals", intervals},
              {"trailing_censored", r.trailing_censored},
              {"total_records", r.total_records},
              {"warnings", r.warnings}};
}

// ---- Digitize job ----

inline Json to_json(const AxisCalibration& cal) {
  auto anchors = [](const std::array<AxisAnchor, 2>& a) {
    return Json::array({Json{{"pixel", a[0].pixel}, {"data", a[0].data}},
                        Json{{"pixel", a[1].pixel}, {"data", a[1].data}}});
  };
  return Json{{"schema", 1},
              {"x_anchors", anchors(cal.x_anchors)},
              {"y_anchors", anchors(cal.y_anchors)}};
}

inline AxisCalibration calibration_from_json(const Json& j,
                                             const std::string& what) {
  AxisCalibration cal;
  auto anchors = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 2)
      throw Error(format("%s: \"%s\" must be an array of two anchors",
                         what.c_str(), key));
    std::array<AxisAnchor, 2> out;
    for (int i = 0; i < 2; ++i) {
      const auto& aj = j[key][std::size_t(i)];
      out[std::size_t(i)].pixel = aj.at("pixel").get<double>();
      out[std::size_t(i)].data = aj.at("data").get<double>();
    }
    return out;
  };
  cal.x_anchors = anchors("x_anchors");
  cal.y_anchors = anchors("y_anchors");
  validate(cal);
  return cal;
}

inline Selector selector_from_json(const Json& j, const std::string& what) {
  Selector sel;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "id") sel.kind = Selector::Kind::kId;
  else if (kind == "stroke") sel.kind = Selector::Kind::kStroke;
  else if (kind == "class") sel.kind = Selector::Kind::kClass;
  else throw Error(what + ": selector kind must be id|stroke|class");
  sel.value = j.at("value").get<std::string>();
  if (sel.value.empty()) throw Error(what + ": selector value is empty");
  return sel;
}

inline Json to_json(const Selector& sel) {
  const char* kind = sel.kind == Selector::Kind::kId ? "id"
                     : sel.kind == Selector::Kind::kStroke ? "stroke"
                                                           : "class";
  return Json{{"kind", kind}, {"value", sel.value}};
}

struct DigitizeJob {
  std::array<std::string, 2> svg_paths;
  std::array<Selector, 2> selectors;
  bool embedded_calibration = false;
  AxisCalibration calibration;  // used when not embedded
  RiskTable risk;
  std::uint64_t seed = 0;
  SvgParseOptions parse_options;
};

inline DigitizeJob digitize_job_from_json(const Json& j,
                                          const std::string& what,
                                          const std::string& base_dir) {
  require_schema(j, what);
  DigitizeJob job;
  if (!j.contains("svg") || !j["svg"].is_array() || j["svg"].size() != 2)
    throw Error(what + ": \"svg\" must list exactly two files (arm 0, arm 1)");
  for (int arm = 0; arm < 2; ++arm) {
    std::filesystem::path p = j["svg"][std::size_t(arm)].get<std::string>();
    if (p.is_relative() && !base_dir.empty())
      p = std::filesystem::path(base_dir) / p;
    job.svg_paths[std::size_t(arm)] = p.string();
  }
  if (!j.contains("selectors") || !j["selectors"].is_array() ||
      j["selectors"].size() != 2)
    throw Error(what + ": \"selectors\" must list exactly two selectors");
  for (int arm = 0; arm < 2; ++arm)
    job.selectors[std::size_t(arm)] =
        selector_from_json(j["selectors"][std::size_t(arm)], what);
  if (!j.contains("calibration"))
    throw Error(what + ": missing \"calibration\" (object or \"embedded\")");
  if (j["calibration"].is_string()) {
    if (j["calibration"].get<std::string>() != "embedded")
      throw Error(what + ": calibration must be an object or \"embedded\"");
    job.embedded_calibration = true;
  } else {
    job.calibration = calibration_from_json(j["calibration"],
                                            what + ".calibration");
  }
  if (!j.contains("grid"))
    throw Error(what + ": missing \"grid\" (at-risk table times)");
  job.risk.grid = j["grid"].get<std::vector<double>>();
  if (!j.contains("at_risk") || !j["at_risk"].is_array() ||
      j["at_risk"].size() != 2)
    throw Error(what + ": \"at_risk\" must hold two per-arm count arrays");
  for (int arm = 0; arm < 2; ++arm)
    job.risk.at_risk[std::size_t(arm)] =
        j["at_risk"][std::size_t(arm)].get<std::vector<long>>();
  if (j.contains("reported_censor")) {
    if (!j["reported_censor"].is_array() || j["reported_censor"].size() != 2)
      throw Error(what + ": \"reported_censor\" must hold two arrays");
    for (int arm = 0; arm < 2; ++arm)
      job.risk.reported_censor[std::size_t(arm)] =
          j["reported_censor"][std::size_t(arm)].get<std::vector<long>>();
  }
  if (j.contains("seed")) job.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("tick_max_px"))
    job.parse_options.tick_max_px = j.at("tick_max_px").get<double>();
  if (j.contains("tick_slack_px"))
    job.parse_options.tick_slack_px = j.at("tick_slack_px").get<double>();
  validate(job.risk);
  return job;
}

// ---- Trace and plot CSVs ----

inline void write_trace_csv(const std::string& path,
                            const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out << "iter,loss_m,loss_hr,gamma,accepted,branch\n";
  for (const auto& row : trace)
    out << row.iter << ',' << csv_double(row.loss_m) << ','
        << csv_double(row.loss_hr) << ',' << row.gamma << ','
        << (row.accepted ? 1 : 0) << ',' << row.branch << '\n';
  write_text_file(path, out.str());
}

// Step-function vertices per arm (and per subgroup when labels exist),
// ready for any line-plotting tool; censor marks carry their own row kind.
inline void write_km_plot_csv(const std::string& path,
                              const IpdDataset& data) {
  std::ostringstream out;
  out << "arm,covariate,kind,time,survival\n";
  auto emit = [&](int arm, std::optional<int> x) {
    const auto slice = subset(data, x, arm);
    if (slice.empty()) return;
    const KmCurve km = km_fit(slice);
    std::string label = x ? format("%d", *x) : "";
    double level = 1.0;
    out << arm << ',' << label << ",step,0," << csv_double(1.0) << '\n';
    for (std::size_t i = 0; i < km.step.times.size(); ++i) {
      out << arm << ',' << label << ",step,"
          << csv_double(km.step.times[i]) << ',' << csv_double(level) << '\n';
      level = km.step.survival[i];
      out << arm << ',' << label << ",step,"
          << csv_double(km.step.times[i]) << ',' << csv_double(level) << '\n';
    }
    out << arm << ',' << label << ",step," << csv_double(km.step.max_time())
        << ',' << csv_double(level) << '\n';
    for (double ct : km.step.censor_times)
      out << arm << ',' << label << ",censor," << csv_double(ct) << ','
          << csv_double(km.step.eval(ct)) << '\n';
  };
  for (int arm = 0; arm < 2; ++arm) {
    emit(arm, std::nullopt);
    if (data.fully_assigned())
      for (int x = 0; x <= data.k_max; ++x) emit(arm, x);
  }
  write_text_file(path, out.str());
}

}  // namespace synthipd
