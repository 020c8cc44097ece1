#pragma once

// Three-step orchestration: digitize a figure into covariate-free records,
// search for a covariate assignment matching a published subgroup table,
// and zip the two into the final synthetic dataset, with every artifact
// written to disk.  All randomness derives from the job seed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "synthipd/common.hpp"
#include "synthipd/covgen.hpp"
#include "synthipd/digitize.hpp"
#include "synthipd/io.hpp"
#include "synthipd/rng.hpp"
#include "synthipd/svg.hpp"
#include "synthipd/types.hpp"

namespace synthipd {

// Zips a covariate assignment onto records, preserving order.
inline IpdDataset combine(const IpdDataset& base,
                          const std::vector<int>& labels, int k_max) {
  if (labels.size() != base.records.size())
    throw Error(format("combine: %zu labels for %zu records", labels.size(),
                       base.records.size()));
  IpdDataset out = base;
  out.k_max = k_max;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > k_max)
      throw Error(format("combine: label %d out of range [0, %d]", labels[i],
                         k_max));
    out.records[i].covariate = labels[i];
  }
  validate(out);
  return out;
}

// Checks the per-(label, arm) record counts against a summary table's
// cell sizes; the two must agree exactly for an assignment to be valid.
inline void verify_counts(const IpdDataset& data,
                          const SubgroupSummaryTable& table) {
  if (data.k_max != table.k_max)
    throw Error(format("count check: dataset k_max %d != table k_max %d",
                       data.k_max, table.k_max));
  const auto counts = cell_counts(data);
  for (int x = 0; x <= table.k_max; ++x)
    for (int arm = 0; arm < 2; ++arm) {
      const long want = table.cell(x, arm).n;
      const long got = counts[std::size_t(x)][std::size_t(arm)];
      if (want != got)
        throw Error(format(
            "count check: cell (x=%d, arm=%d) has %ld records but the "
            "table says %ld",
            x, arm, got, want));
    }
}

// Reads both SVG files of a digitize job and extracts the two arm curves,
// using the figure-embedded calibration block when the job asks for it.
inline std::array<DigitizedCurve, 2> load_job_curves(const DigitizeJob& job) {
  std::array<DigitizedCurve, 2> curves;
  for (int arm = 0; arm < 2; ++arm) {
    const XmlNode root =
        parse_xml(read_text_file(job.svg_paths[std::size_t(arm)]));
    AxisCalibration cal = job.calibration;
    if (job.embedded_calibration) {
      const auto text = find_embedded_calibration(root);
      if (!text)
        throw Error(job.svg_paths[std::size_t(arm)] +
                    ": no embedded calibration block found");
      cal = calibration_from_json(
          parse_json(*text, "embedded calibration"), "embedded calibration");
    }
    curves[std::size_t(arm)] = parse_svg(
        root, cal, job.selectors[std::size_t(arm)], arm, job.parse_options);
  }
  return curves;
}

struct PipelineJob {
  DigitizeJob digitize_job;
  SubgroupSummaryTable targets;
  AnnealConfig anneal;
  std::string out_dir;
  std::uint64_t seed = 0;
};

// Job JSON: "digitize", "targets", and "anneal" are either inline objects
// or string paths (relative to the job file's directory).  A job-level
// "seed" supersedes any seed in the referenced configs: the digitizer gets
// stream 1 and the optimizer stream 2 of the job seed.
inline PipelineJob pipeline_job_from_json(const Json& j,
                                          const std::string& what,
                                          const std::string& base_dir) {
  require_schema(j, what);
  PipelineJob job;
  auto resolve = [&](const char* key) -> Json {
    if (!j.contains(key))
      throw Error(format("%s: missing \"%s\"", what.c_str(), key));
    if (j[key].is_string()) {
      std::filesystem::path p = j[key].get<std::string>();
      if (p.is_relative() && !base_dir.empty())
        p = std::filesystem::path(base_dir) / p;
      if (!std::filesystem::exists(p))
        throw Error(format("%s: \"%s\" references a missing file: %s",
                           what.c_str(), key, p.string().c_str()));
      return load_json_file(p.string());
    }
    return j[key];
  };
  job.digitize_job = digitize_job_from_json(resolve("digitize"),
                                            what + ".digitize", base_dir);
  job.targets = table_from_json(resolve("targets"), what + ".targets");
  job.anneal = anneal_from_json(resolve("anneal"), what + ".anneal");
  if (!j.contains("out_dir") || !j["out_dir"].is_string())
    throw Error(what + ": missing string \"out_dir\"");
  {
    std::filesystem::path p = j["out_dir"].get<std::string>();
    if (p.is_relative() && !base_dir.empty())
      p = std::filesystem::path(base_dir) / p;
    job.out_dir = p.string();
  }
  if (j.contains("seed")) {
    job.seed = j.at("seed").get<std::uint64_t>();
    job.digitize_job.seed = derive_seed(job.seed, 1);
    job.anneal.seed = derive_seed(job.seed, 2);
  }
  return job;
}

struct PipelineResult {
  IpdDataset final_data;
  LossReport loss;
  DigitizeReport digitize_report;
  std::map<std::string, std::string> artifacts;  // name -> path written
};

inline PipelineResult run_pipeline(const PipelineJob& job) {
  namespace fs = std::filesystem;
  fs::create_directories(job.out_dir);
  auto out_path = [&](const char* name) {
    return (fs::path(job.out_dir) / name).string();
  };
  PipelineResult result;

  log(LogLevel::kInfo, "pipeline: digitizing figures");
  const auto curves = load_job_curves(job.digitize_job);
  const IpdDataset digitized = digitize(curves, job.digitize_job.risk,
                                        job.digitize_job.seed,
                                        &result.digitize_report);
  write_ipd_csv(out_path("digitized_ipd.csv"), digitized);
  write_text_file(out_path("digitize_report.json"),
                  to_json(result.digitize_report).dump(2) + "\n");
  result.artifacts["digitized_ipd"] = out_path("digitized_ipd.csv");
  result.artifacts["digitize_report"] = out_path("digitize_report.json");

  log(LogLevel::kInfo, "pipeline: assigning covariates");
  const CovGenResult cg = run_covgen(digitized, job.targets, job.anneal);
  result.final_data = cg.dataset;
  result.loss = cg.report;
  verify_counts(result.final_data, job.targets);
  write_ipd_csv(out_path("synthetic_ipd.csv"), result.final_data);
  write_text_file(out_path("loss_report.json"),
                  to_json(cg.report).dump(2) + "\n");
  write_trace_csv(out_path("trace.csv"), cg.trace);
  result.artifacts["synthetic_ipd"] = out_path("synthetic_ipd.csv");
  result.artifacts["loss_report"] = out_path("loss_report.json");
  result.artifacts["trace"] = out_path("trace.csv");

  const SubgroupSummaryTable summary =
      summarize(result.final_data, job.targets.rate_times);
  write_text_file(out_path("summary_table.json"),
                  to_json(summary).dump(2) + "\n");
  write_km_plot_csv(out_path("km_plot.csv"), result.final_data);
  result.artifacts["summary_table"] = out_path("summary_table.json");
  result.artifacts["km_plot"] = out_path("km_plot.csv");

  log(LogLevel::kInfo,
      format("pipeline: done (loss_m %.6g, loss_hr %.6g, %ld iterations)",
             cg.report.loss_m, cg.report.loss_hr, cg.report.iterations));
  return result;
}

}  // namespace synthipd
