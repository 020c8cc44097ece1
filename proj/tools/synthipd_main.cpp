// Command-line front end: digitize figures, assign covariates, combine,
// simulate ground truth, evaluate fidelity, run the full pipeline, and
// render KM curves back to SVG.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "synthipd/synthipd.hpp"

namespace fs = std::filesystem;
using namespace synthipd;

namespace {

std::string job_base_dir(const std::string& job_path) {
  return fs::path(job_path).parent_path().string();
}

// Labels come either from a one-column CSV ("covariate" header) or from an
// IPD CSV whose covariate column is fully assigned.
std::vector<int> read_labels(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw Error(path + ": empty labels file");
  while (!header.empty() && (header.back() == '\r' || header.back() == ' '))
    header.pop_back();
  std::vector<int> labels;
  if (header == "covariate") {
    std::string line;
    long line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      labels.push_back(int(synthipd::detail::parse_csv_long(
          synthipd::detail::split_csv_line(line)[0],
          format("%s:%ld", path.c_str(), line_no))));
    }
    return labels;
  }
  const IpdDataset from_ipd = read_ipd_csv(path);
  if (!from_ipd.fully_assigned())
    throw Error(path + ": labels file has unassigned covariate cells");
  labels.reserve(from_ipd.records.size());
  for (const auto& r : from_ipd.records) labels.push_back(*r.covariate);
  return labels;
}

int run_digitize(const std::string& job_path, const std::string& out,
                 const std::string& report_path,
                 std::optional<std::uint64_t> seed) {
  DigitizeJob job = digitize_job_from_json(load_json_file(job_path),
                                           job_path, job_base_dir(job_path));
  if (seed) job.seed = *seed;
  const auto curves = load_job_curves(job);
  DigitizeReport report;
  const IpdDataset data = digitize(curves, job.risk, job.seed, &report);
  write_ipd_csv(out, data);
  if (!report_path.empty())
    write_text_file(report_path, to_json(report).dump(2) + "\n");
  std::printf("digitized %zu records (%ld + %ld) -> %s\n",
              data.records.size(), report.total_records[0],
              report.total_records[1], out.c_str());
  return 0;
}

int run_covgen_cmd(const std::string& ipd_path, const std::string& targets_path,
                   const std::string& config_path, const std::string& out,
                   const std::string& report_path, const std::string& trace_path,
                   std::optional<std::uint64_t> seed) {
  const SubgroupSummaryTable targets =
      table_from_json(load_json_file(targets_path), targets_path);
  IpdDataset data = read_ipd_csv(ipd_path, targets.k_max);
  AnnealConfig cfg;
  if (!config_path.empty())
    cfg = anneal_from_json(load_json_file(config_path), config_path);
  if (seed) cfg.seed = *seed;
  const CovGenResult result = run_covgen(data, targets, cfg);
  write_ipd_csv(out, result.dataset);
  if (!report_path.empty())
    write_text_file(report_path, to_json(result.report).dump(2) + "\n");
  if (!trace_path.empty()) write_trace_csv(trace_path, result.trace);
  std::printf(
      "assignment %s after %ld iterations: loss_m %.6g, loss_hr %.6g -> %s\n",
      result.report.converged ? "converged" : "stopped",
      result.report.iterations, result.report.loss_m, result.report.loss_hr,
      out.c_str());
  return 0;
}

int run_combine(const std::string& ipd_path, const std::string& labels_path,
                const std::string& out, std::string summary_path, int k_max) {
  const IpdDataset base = read_ipd_csv(ipd_path);
  const std::vector<int> labels = read_labels(labels_path);
  int k = k_max;
  if (k < 0) {
    k = 0;
    for (int v : labels) k = std::max(k, v);
  }
  const IpdDataset combined = combine(base, labels, k);
  write_ipd_csv(out, combined);
  if (summary_path.empty())
    summary_path = (fs::path(out).parent_path() /
                    (fs::path(out).stem().string() + ".summary.json"))
                       .string();
  write_text_file(summary_path, to_json(summarize(combined)).dump(2) + "\n");
  std::printf("combined %zu records -> %s (summary: %s)\n",
              combined.records.size(), out.c_str(), summary_path.c_str());
  return 0;
}

int run_simulate(int sim_case, long n, long reps, std::uint64_t seed,
                 const std::string& out_dir, const std::string& margin,
                 int threads) {
  SimSpec spec;
  switch (sim_case) {
    case 1: spec.sim_case = SimCase::kCoxPh; break;
    case 2: spec.sim_case = SimCase::kAft; break;
    case 3: spec.sim_case = SimCase::kCrossover; break;
    default: throw Error("simulate: --case must be 1, 2, or 3");
  }
  spec.n = n;
  if (margin == "x1") spec.margin = Margin::kX1;
  else if (margin == "x2") spec.margin = Margin::kX2;
  else if (margin == "joint") spec.margin = Margin::kJoint;
  else throw Error("simulate: --margin must be x1, x2, or joint");
  fs::create_directories(out_dir);

  std::vector<SimResult> results(static_cast<std::size_t>(reps));
  parallel_for(std::size_t(reps), threads, [&](std::size_t rep) {
    SimSpec rep_spec = spec;
    rep_spec.seed = derive_seed(seed, rep);
    results[rep] = simulate(rep_spec);
  });

  Json manifest{{"schema", 1},
                {"case", sim_case_name(spec.sim_case)},
                {"n", n},
                {"reps", reps},
                {"seed", seed},
                {"margin", margin_name(spec.margin)},
                {"censoring",
                 Json{{"target", spec.censor_target},
                      {"range", Json::array({spec.censor_lo, spec.censor_hi})},
                      {"shared_rate_across_arms", true}}}};
  Json label_map = Json::array();
  for (const auto& [x1, x2] : results.empty()
                                  ? std::vector<std::array<int, 2>>{}
                                  : results[0].label_map)
    label_map.push_back(Json::array({x1, x2}));
  manifest["label_map"] = label_map;
  Json rep_list = Json::array();
  for (long rep = 0; rep < reps; ++rep) {
    const auto& r = results[std::size_t(rep)];
    const std::string name = format("rep_%03ld.csv", rep);
    write_ipd_csv((fs::path(out_dir) / name).string(), r.data);
    rep_list.push_back(Json{{"file", name},
                            {"seed", derive_seed(seed, std::uint64_t(rep))},
                            {"censor_rate", r.censor_rate},
                            {"realized_censoring", r.realized_censoring}});
  }
  manifest["repetitions"] = rep_list;
  write_text_file((fs::path(out_dir) / "manifest.json").string(),
                  manifest.dump(2) + "\n");
  std::printf("wrote %ld repetitions to %s\n", reps, out_dir.c_str());
  return 0;
}

int run_evaluate(const std::string& truth_path, const std::string& synth_path,
                 std::optional<double> tau, bool event_grid,
                 const std::string& out) {
  const IpdDataset truth = read_ipd_csv(truth_path);
  const IpdDataset synth = read_ipd_csv(synth_path);
  const MetricReport report = aggregate(truth, synth, tau, event_grid);
  const std::string text = to_json(report).dump(2) + "\n";
  if (out.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_text_file(out, text);
  std::printf("weighted nauc %.6g, averaged ks %.6g over %s\n",
              report.weighted_nauc, report.averaged_ks,
              report.mode.c_str());
  return 0;
}

int run_pipeline_cmd(const std::string& job_path,
                     std::optional<std::uint64_t> seed) {
  Json j = load_json_file(job_path);
  if (seed) j["seed"] = *seed;
  const PipelineJob job =
      pipeline_job_from_json(j, job_path, job_base_dir(job_path));
  const PipelineResult result = run_pipeline(job);
  for (const auto& [name, path] : result.artifacts)
    std::printf("%s: %s\n", name.c_str(), path.c_str());
  std::printf("loss_m %.6g, loss_hr %.6g, %s after %ld iterations\n",
              result.loss.loss_m, result.loss.loss_hr,
              result.loss.converged ? "converged" : "stopped",
              result.loss.iterations);
  return 0;
}

int run_render(const std::string& ipd_path, const std::string& out,
               double max_time) {
  const IpdDataset data = read_ipd_csv(ipd_path);
  RenderStyle style;
  style.max_time = max_time;
  write_text_file(out, render_km_svg(data, style));
  std::printf("rendered %zu records -> %s\n", data.records.size(),
              out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "synthipd: reconstruct patient-level survival data from published "
      "Kaplan-Meier figures and subgroup summary tables"};
  app.require_subcommand(1);
  app.fallthrough(true);

  std::optional<std::uint64_t> seed;
  int threads = int(std::thread::hardware_concurrency());
  std::string log_level_name = "warn";
  app.add_option("--seed", seed, "Override the configured RNG seed");
  app.add_option("--threads", threads, "Worker threads for parallel verbs");
  app.add_option("--log-level", log_level_name, "error|warn|info|debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

  auto* digitize_cmd = app.add_subcommand(
      "digitize", "Reconstruct covariate-free records from a KM figure");
  std::string dj_job, dj_out, dj_report;
  digitize_cmd->add_option("--job", dj_job, "Digitize job JSON")
      ->required()
      ->check(CLI::ExistingFile);
  digitize_cmd->add_option("--out", dj_out, "Output IPD CSV")->required();
  digitize_cmd->add_option("--report", dj_report,
                           "Reconciliation report JSON");

  auto* covgen_cmd = app.add_subcommand(
      "covgen", "Assign covariates to match a subgroup summary table");
  std::string cg_ipd, cg_targets, cg_config, cg_out, cg_report, cg_trace;
  covgen_cmd->add_option("--ipd", cg_ipd, "Covariate-free IPD CSV")
      ->required()
      ->check(CLI::ExistingFile);
  covgen_cmd->add_option("--targets", cg_targets, "Target table JSON")
      ->required()
      ->check(CLI::ExistingFile);
  covgen_cmd->add_option("--config", cg_config, "Search config JSON")
      ->check(CLI::ExistingFile);
  covgen_cmd->add_option("--out", cg_out, "Output IPD CSV")->required();
  covgen_cmd->add_option("--report", cg_report, "Loss report JSON");
  covgen_cmd->add_option("--trace", cg_trace, "Search trace CSV");

  auto* combine_cmd = app.add_subcommand(
      "combine", "Zip a covariate assignment onto records");
  std::string cb_ipd, cb_labels, cb_out, cb_summary;
  int cb_kmax = -1;
  combine_cmd->add_option("--ipd", cb_ipd, "Base IPD CSV")
      ->required()
      ->check(CLI::ExistingFile);
  combine_cmd->add_option("--labels", cb_labels,
                          "Labels CSV (one 'covariate' column, or an IPD CSV)")
      ->required()
      ->check(CLI::ExistingFile);
  combine_cmd->add_option("--out", cb_out, "Output IPD CSV")->required();
  combine_cmd->add_option("--summary", cb_summary,
                          "Summary table JSON (default <out>.summary.json)");
  combine_cmd->add_option("--k-max", cb_kmax,
                          "Largest covariate label (default: inferred)");

  auto* simulate_cmd = app.add_subcommand(
      "simulate", "Generate ground-truth datasets");
  int sm_case = 1;
  long sm_n = 500, sm_reps = 1;
  std::uint64_t sm_seed = 0;
  std::string sm_out_dir, sm_margin = "x1";
  simulate_cmd->add_option("--case", sm_case, "Mechanism: 1|2|3")->required();
  simulate_cmd->add_option("--n", sm_n, "Sample size per repetition");
  simulate_cmd->add_option("--reps", sm_reps, "Number of repetitions");
  simulate_cmd->add_option("--out-dir", sm_out_dir, "Output directory")
      ->required();
  simulate_cmd->add_option("--margin", sm_margin,
                           "Covariate column: x1|x2|joint");

  auto* evaluate_cmd = app.add_subcommand(
      "evaluate", "Curve-fidelity metrics between two IPD files");
  std::string ev_truth, ev_synth, ev_out;
  std::optional<double> ev_tau;
  bool ev_event_grid = false;
  evaluate_cmd->add_option("--truth", ev_truth, "Reference IPD CSV")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--synth", ev_synth, "Synthetic IPD CSV")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--tau", ev_tau, "Restriction horizon override");
  evaluate_cmd->add_flag("--event-grid", ev_event_grid,
                         "Sample metrics on the reference event-time grid");
  evaluate_cmd->add_option("--out", ev_out, "Report JSON (default: stdout)");

  auto* pipeline_cmd = app.add_subcommand(
      "pipeline", "Run digitize, covgen, and combine end to end");
  std::string pl_job;
  pipeline_cmd->add_option("--job", pl_job, "Pipeline job JSON")
      ->required()
      ->check(CLI::ExistingFile);

  auto* render_cmd = app.add_subcommand(
      "render", "Render per-arm KM curves to a self-calibrating SVG");
  std::string rd_ipd, rd_out;
  double rd_max_time = 0.0;
  render_cmd->add_option("--ipd", rd_ipd, "IPD CSV")
      ->required()
      ->check(CLI::ExistingFile);
  render_cmd->add_option("--out", rd_out, "Output SVG")->required();
  render_cmd->add_option("--max-time", rd_max_time,
                         "Plot horizon (default: data maximum)");

  CLI11_PARSE(app, argc, argv);

  try {
    log_level() = parse_log_level(log_level_name);
    if (threads <= 0) threads = 1;
    if (digitize_cmd->parsed())
      return run_digitize(dj_job, dj_out, dj_report, seed);
    if (covgen_cmd->parsed())
      return run_covgen_cmd(cg_ipd, cg_targets, cg_config, cg_out, cg_report,
                            cg_trace, seed);
    if (combine_cmd->parsed())
      return run_combine(cb_ipd, cb_labels, cb_out, cb_summary, cb_kmax);
    if (simulate_cmd->parsed()) {
      if (seed) sm_seed = *seed;
      return run_simulate(sm_case, sm_n, sm_reps, sm_seed, sm_out_dir,
                          sm_margin, threads);
    }
    if (evaluate_cmd->parsed())
      return run_evaluate(ev_truth, ev_synth, ev_tau, ev_event_grid, ev_out);
    if (pipeline_cmd->parsed()) return run_pipeline_cmd(pl_job, seed);
    if (render_cmd->parsed()) return run_render(rd_ipd, rd_out, rd_max_time);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
