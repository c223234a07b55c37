#pragma once

// Command-line front end: scan, sensitivity, simulate, fit, resolution.
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure,
// 4 I/O error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fpiq/core_optics.hpp"
#include "fpiq/detector_sim.hpp"
#include "fpiq/fitting.hpp"
#include "fpiq/io.hpp"
#include "fpiq/metrology.hpp"
#include "fpiq/photon_stats.hpp"

namespace fpiq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "FPIQ_OUTPUT_DIR";

namespace detail {

// Flags land here as raw strings and are merged over the config file, so a
// file and the command line share one parser.
struct Options {
  std::string config_file;
  std::string out_dir;
  std::map<std::string, std::string> flags;
  bool classical = false, shot_noise = false, minima = false;
  unsigned threads = 0;

  // fit / resolution
  std::vector<std::string> files;
  std::string mode = "joint";
  std::string weighting = "uniform";
  std::string ks_filter;
  double guess_n = 0.0;
  double guess_r2 = 0.9;
  bool fit_scale = false;
  std::string report;
  double fsr_nm = 0.0;
  bool want_fsr = false;
};

inline void add_value(CLI::App* app, Options& o, const std::string& flag, const std::string& key,
                      const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&o, key](const std::string& v) { o.flags[key] = v; }, help);
}

inline void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config_file, "key=value configuration file; flags override it");
  app->add_option("--out", o.out_dir, "output directory (default $FPIQ_OUTPUT_DIR or .)");
  add_value(app, o, "--input", "input", "coherent:<n_bar> or fock:<n>");
  add_value(app, o, "--r2", "r2", "mirror power reflectivity in [0, 1)");
  add_value(app, o, "--grid", "grid", "start:stop:points in L/lambda");
  add_value(app, o, "--lambda-nm", "lambda_nm", "wavelength in nm");
}

inline RunConfig merged_config(const std::string& command, const Options& o) {
  KeyValues kv;
  if (!o.config_file.empty()) kv = parse_kv_text(read_file(o.config_file));
  std::map<std::string, std::string> flags = o.flags;
  if (o.classical) flags["classical"] = "true";
  if (o.shot_noise) flags["shot_noise"] = "true";
  if (o.minima) flags["minima"] = "true";
  for (const auto& [k, v] : flags) kv.emplace_back(k, v);
  const bool grid_given = std::any_of(kv.begin(), kv.end(), [](auto& p) { return p.first == "grid"; });
  RunConfig c = config_from_kv(kv);
  // A config file written for another command is still usable.
  c.command = command;
  if (!grid_given && command == "simulate") {
    // Default acquisition window: the first transmission peak +/- 10% FSR.
    const double x0 = peak_position(c.mirror());
    c.grid = PhaseGrid{x0 - 0.1 * kFreeSpectralRange, x0 + 0.1 * kFreeSpectralRange, 201};
  }
  return c;
}

inline std::filesystem::path output_dir(const Options& o) {
  std::filesystem::path dir = o.out_dir;
  if (dir.empty()) {
    const char* env = std::getenv(kOutputDirEnv);
    dir = (env && *env) ? env : ".";
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

inline std::string curve_tag(std::optional<int> k) { return k ? "k" + std::to_string(*k) : "mean"; }

// ---------------------------------------------------------------------------

inline int cmd_scan(const Options& o, std::ostream& out) {
  const RunConfig c = merged_config("scan", o);
  if (c.ks.empty() && !c.classical) throw ConfigError("scan needs --k and/or --classical");
  const auto curves = fringe_scan(c.input, c.mirror(), c.grid, c.ks, c.classical);
  const auto dir = output_dir(o);
  for (const auto& curve : curves) {
    const std::string tag = curve_tag(curve.k);
    CurveTable t{table_header(c, {{"curve", tag}, {"quantity", curve.k ? "p_k" : "mean_detected"}}),
                 {"l_over_lambda", curve.k ? "p" : "mean"},
                 {}};
    for (const auto& s : curve.samples) t.rows.push_back({s.l_over_lambda, s.value});
    const auto path = dir / ("scan_" + tag + ".csv");
    write_file_atomic(path, format_table(t));
    out << path.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_sensitivity(const Options& o, std::ostream& out) {
  const RunConfig c = merged_config("sensitivity", o);
  const auto m = c.mirror();
  const auto dir = output_dir(o);
  if (c.minima) {
    const auto rows = minima_table(m, c.n_first, c.n_last);
    CurveTable t{table_header(c, {{"quantity", "min_delta_l_over_lambda"}}),
                 {"n", "fock_min", "fock_at", "coherent_min", "coherent_at", "ratio"},
                 {}};
    for (const auto& r : rows) {
      t.rows.push_back({static_cast<double>(r.n), r.fock.delta_l_over_lambda, r.fock.l_over_lambda,
                        r.coherent.delta_l_over_lambda, r.coherent.l_over_lambda, r.ratio()});
    }
    const auto path = dir / "minima.csv";
    write_file_atomic(path, format_table(t));
    out << path.string() << "\n";
    if (c.ks.empty() && !c.shot_noise) return kExitOk;
  }
  if (c.ks.empty() && !c.shot_noise) throw ConfigError("sensitivity needs --k, --shot-noise or --minima");

  std::vector<std::pair<std::string, SensitivitySpec>> specs;
  const bool fock = std::holds_alternative<FockInput>(c.input);
  const double param = mean_photons(c.input);
  for (int k : c.ks) {
    specs.emplace_back("k" + std::to_string(k),
                       fock ? SensitivitySpec::fock_k(static_cast<int>(param), k)
                            : SensitivitySpec::coherent_k(param, k));
  }
  if (c.shot_noise) specs.emplace_back("shot-noise", SensitivitySpec::coherent_mean(param));
  for (const auto& [tag, spec] : specs) {
    const auto curve = sensitivity_scan(spec, m, c.grid);
    CurveTable t{table_header(c, {{"curve", tag}, {"quantity", "delta_l_over_lambda"}}),
                 {"l_over_lambda", "delta_l_over_lambda"},
                 {}};
    for (const auto& s : curve.samples) t.rows.push_back({s.l_over_lambda, s.delta_l_over_lambda});
    const auto path = dir / ("sensitivity_" + tag + ".csv");
    write_file_atomic(path, format_table(t));
    out << path.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_simulate(const Options& o, std::ostream& out) {
  const RunConfig c = merged_config("simulate", o);
  ScanOptions opt;
  opt.drift_per_point = c.drift;
  opt.thresholds = c.thresholds;
  opt.bin_width = c.bin_width;
  opt.threads = o.threads;
  const auto res = scan_experiment(c.input, c.mirror(), c.grid, c.pulses, c.detector, opt);
  const auto dir = output_dir(o);
  std::vector<std::string> written;
  const double n = static_cast<double>(res.pulses_per_point);

  for (const auto& curve : res.curves) {
    const std::string tag = curve_tag(curve.k);
    CurveTable t{table_header(c, {{"curve", tag}, {"quantity", "p_k"}}), {"l_over_lambda", "p", "stderr"}, {}};
    for (const auto& s : curve.samples) {
      t.rows.push_back({s.l_over_lambda, s.value, std::sqrt(s.value * (1.0 - s.value) / n)});
    }
    const auto path = dir / ("simulate_" + tag + ".csv");
    write_file_atomic(path, format_table(t));
    written.push_back(path.string());
  }
  {
    const auto cl = reconstruct_classical(res.curves, c.detector.k_max_observable);
    CurveTable t{table_header(c, {{"curve", "classical"}, {"quantity", "mean_detected_truncated"}}),
                 {"l_over_lambda", "mean"},
                 {}};
    for (const auto& s : cl.samples) t.rows.push_back({s.l_over_lambda, s.value});
    const auto path = dir / "simulate_classical.csv";
    write_file_atomic(path, format_table(t));
    written.push_back(path.string());
  }
  {
    std::string thr;
    for (std::size_t i = 0; i < res.histogram.thresholds.size(); ++i) {
      thr += (i ? " " : "") + format_double(res.histogram.thresholds[i]);
    }
    CurveTable t{table_header(c, {{"quantity", "pulse_integral_histogram"}, {"threshold_values", thr}}),
                 {"bin_center", "count"},
                 {}};
    for (std::size_t b = 0; b < res.histogram.counts.size(); ++b) {
      t.rows.push_back({res.histogram.center(b), static_cast<double>(res.histogram.counts[b])});
    }
    const auto path = dir / "histogram.csv";
    write_file_atomic(path, format_table(t));
    written.push_back(path.string());
  }
  KeyValues summary = table_header(c, {{"misassigned", std::to_string(res.misassigned)},
                                       {"overflow", std::to_string(res.overflow)}});
  std::string text;
  for (const auto& [k, v] : summary) text += k + "=" + v + "\n";
  const auto path = dir / "summary.txt";
  write_file_atomic(path, text);
  written.push_back(path.string());

  out << "seed=" << c.detector.seed << "\n"
      << "pulses_per_point=" << res.pulses_per_point << "\n"
      << "misassigned=" << res.misassigned << "\n"
      << "overflow=" << res.overflow << "\n";
  for (const auto& w : written) out << w << "\n";
  return kExitOk;
}

inline void print_fit(std::ostream& out, const std::string& prefix, const FitResult& r, bool with_scale) {
  out << prefix << "n_bar=" << format_double(r.n_bar_hat) << "\n"
      << prefix << "n_bar_stderr=" << format_double(r.n_bar_stderr) << "\n"
      << prefix << "r2=" << format_double(r.r2_hat) << "\n"
      << prefix << "r2_stderr=" << format_double(r.r2_stderr) << "\n"
      << prefix << "phase_offset=" << format_double(r.phase_offset_hat) << "\n"
      << prefix << "phase_offset_stderr=" << format_double(r.phase_offset_stderr) << "\n";
  if (with_scale) {
    out << prefix << "scale=" << format_double(r.scale_hat) << "\n"
        << prefix << "scale_stderr=" << format_double(r.scale_stderr) << "\n";
  }
  out << prefix << "residual_sse=" << format_double(r.residual_sse) << "\n"
      << prefix << "points=" << r.points << "\n"
      << prefix << "iterations=" << r.iterations << "\n";
}

inline int cmd_fit(const Options& o, std::ostream& out) {
  if (o.files.empty()) throw ConfigError("fit needs at least one data file");
  std::vector<FringeCurve> kcurves, classical;
  std::optional<double> pulses;
  const auto filter = parse_int_list(o.ks_filter, "k");
  for (const auto& f : o.files) {
    const auto t = read_table(f);
    const auto curve = curve_from_table(t);
    const RunConfig c = config_from_kv(t.header, {}, false);
    if (c.command == "simulate") pulses = static_cast<double>(c.pulses);
    if (!curve.k) {
      classical.push_back(curve);
    } else if (filter.empty() ? *curve.k >= 1
                              : std::find(filter.begin(), filter.end(), *curve.k) != filter.end()) {
      kcurves.push_back(curve);
    }
  }
  std::sort(kcurves.begin(), kcurves.end(), [](auto& a, auto& b) { return *a.k < *b.k; });

  FitOptions fopt;
  fopt.fit_scale = o.fit_scale;
  if (o.weighting == "inverse-variance") {
    if (!pulses) throw ConfigError("inverse-variance weighting needs simulated data with a pulse count");
    fopt.weighting = Weighting::inverse_variance;
    fopt.pulses_per_point = *pulses;
  } else if (o.weighting != "uniform") {
    throw ConfigError("weighting must be uniform or inverse-variance");
  }

  std::ostringstream rep;
  rep << "tool=" << kToolName << "\nversion=" << kToolVersion << "\n";
  if (!kcurves.empty()) {
    FitGuess g;
    g.r2 = o.guess_r2;
    if (o.guess_n > 0.0) {
      g.n_bar = o.guess_n;
    } else {
      // Peak of the reconstructed mean signal, a truncated lower bound on n_bar.
      double best = 0.0;
      for (std::size_t i = 0; i < kcurves.front().samples.size(); ++i) {
        double s = 0.0;
        for (const auto& c : kcurves) {
          if (i < c.samples.size()) s += *c.k * c.samples[i].value;
        }
        best = std::max(best, s);
      }
      g.n_bar = best > 0.0 ? best : 1.0;
    }
    if (o.mode == "joint") {
      rep << "mode=joint\nk=";
      for (std::size_t i = 0; i < kcurves.size(); ++i) rep << (i ? "," : "") << *kcurves[i].k;
      rep << "\n";
      print_fit(rep, "", fit_pnr_curves(kcurves, g, fopt), o.fit_scale);
    } else if (o.mode == "per-k") {
      rep << "mode=per-k\n";
      const auto fits = fit_pnr_curves_individually(kcurves, g, fopt);
      for (std::size_t i = 0; i < fits.size(); ++i) {
        print_fit(rep, "k" + std::to_string(*kcurves[i].k) + ".", fits[i], o.fit_scale);
      }
    } else {
      throw ConfigError("mode must be joint or per-k");
    }
    DipOptions dopt;
    dopt.pulses_per_point = pulses;
    try {
      const auto dip = dip_diagnostic(kcurves, dopt);
      for (const auto& f : dip.flags) rep << "dip.k" << f.k << "=" << (f.dip_present ? "true" : "false") << "\n";
      rep << "dip.lower=" << dip.lower << "\n";
      rep << "dip.upper=" << (dip.upper ? std::to_string(*dip.upper) : std::string()) << "\n";
      rep << "dip.consistent=" << (dip.consistent ? "true" : "false") << "\n";
    } catch (const std::invalid_argument& e) {
      rep << "dip.error=" << e.what() << "\n";
    }
  }
  for (const auto& c : classical) {
    FitGuess g;
    g.r2 = o.guess_r2;
    double peak = 0.0;
    for (const auto& s : c.samples) peak = std::max(peak, s.value);
    g.n_bar = o.guess_n > 0.0 ? o.guess_n : (peak > 0.0 ? peak : 1.0);
    print_fit(rep, "classical.", fit_classical(c, g, fopt), false);
  }
  if (kcurves.empty() && classical.empty()) throw ConfigError("no curves selected for fitting");
  out << rep.str();
  if (!o.report.empty()) write_file_atomic(o.report, rep.str());
  return kExitOk;
}

inline int cmd_resolution(const Options& o, std::ostream& out) {
  if (o.files.empty()) throw ConfigError("resolution needs at least one data file");
  struct Entry {
    FringeCurve curve;
    PeakStats stats;
  };
  std::vector<Entry> entries;
  RunConfig first;
  for (std::size_t i = 0; i < o.files.size(); ++i) {
    const auto t = read_table(o.files[i]);
    KeyValues hdr = t.header;
    for (const auto& [k, v] : o.flags) hdr.emplace_back(k, v);
    const RunConfig c = config_from_kv(hdr, {}, false);
    if (i == 0) first = c;
    auto curve = curve_from_table(t);
    curve.mirror = c.mirror();
    if (curve.samples.empty()) throw ConfigError(o.files[i] + ": no samples");
    const auto xs = curve.xs();
    const auto ys = curve.values();
    const auto imax = static_cast<std::size_t>(std::max_element(ys.begin(), ys.end()) - ys.begin());
    const auto stats = peak_stats(curve, resolution_window(curve.mirror, xs[imax]));
    if (o.want_fsr) {
      // A dipped k curve has two humps per fringe; count fringes, not humps.
      std::vector<double> fringes;
      for (const auto& mx : find_fringe_maxima(xs, ys)) {
        const double c = nearest_peak(curve.mirror, mx.position);
        if (fringes.empty() || std::abs(c - fringes.back()) > 0.25 * kFreeSpectralRange) fringes.push_back(c);
      }
      if (fringes.size() < 2) {
        throw ConfigError(o.files[i] + ": FSR needs two peaks, found " + std::to_string(fringes.size()));
      }
      const auto s1 = peak_stats(curve, resolution_window(curve.mirror, fringes[0]));
      const auto s2 = peak_stats(curve, resolution_window(curve.mirror, fringes[1]));
      const auto fsr = fsr_uncertainty(s1, s2);
      out << "fsr." << curve_tag(curve.k) << "=" << format_double(fsr.delta_l) << "\n"
          << "fsr_sigma." << curve_tag(curve.k) << "=" << format_double(fsr.sigma_delta_l) << "\n";
    }
    entries.push_back({std::move(curve), stats});
  }
  const double nm_per_unit = o.fsr_nm > 0.0 ? o.fsr_nm / kFreeSpectralRange : first.lambda_nm;

  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.curve.k.value_or(-1) < b.curve.k.value_or(-1);
  });
  const Entry* cl = nullptr;
  for (const auto& e : entries) {
    if (!e.curve.k) cl = &e;
  }

  CurveTable t{table_header(first, {{"quantity", "peak_sdm"}, {"nm_per_l_over_lambda", format_double(nm_per_unit)}}),
               {"k", "center", "sigma_l_over_lambda", "sigma_nm", "sdm_nm", "sigma_cl_over_sigma_k"},
               {}};
  out << "curve        sigma[nm]      sigma_cl/sigma_k\n";
  for (const auto& e : entries) {
    std::optional<double> ratio;
    if (cl && e.curve.k) ratio = cl->stats.sigma / e.stats.sigma;
    std::optional<double> k;
    if (e.curve.k) k = *e.curve.k;
    t.rows.push_back({k, e.stats.center, e.stats.sigma, e.stats.sigma * nm_per_unit,
                      e.stats.standard_error() * nm_per_unit, ratio});
    char line[128];
    std::snprintf(line, sizeof line, "%-12s %-14.6g %s\n", curve_tag(e.curve.k).c_str(),
                  e.stats.sigma * nm_per_unit, ratio ? format_double(*ratio).c_str() : "");
    out << line;
  }
  const auto dir = output_dir(o);
  const auto path = dir / "resolution.csv";
  write_file_atomic(path, format_table(t));
  out << path.string() << "\n";
  return kExitOk;
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Photon-number-resolved Fabry-Perot metrology toolkit", std::string(kToolName)};
  app.require_subcommand(1);
  detail::Options o;

  auto* scan = app.add_subcommand("scan", "model fringes p_k and the mean signal");
  detail::add_common(scan, o);
  detail::add_value(scan, o, "--k", "k", "photon numbers, e.g. 1,2,3 or 1..7");
  scan->add_flag("--classical", o.classical, "also write the mean detected photon number");

  auto* sens = app.add_subcommand("sensitivity", "length sensitivity curves and minima");
  detail::add_common(sens, o);
  detail::add_value(sens, o, "--k", "k", "photon numbers");
  sens->add_flag("--shot-noise", o.shot_noise, "also write the mean-intensity baseline");
  sens->add_flag("--minima", o.minima, "write the Fock vs coherent minimum table");
  detail::add_value(sens, o, "--n", "n", "photon-number range for --minima, e.g. 1..10");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo detector scan");
  detail::add_common(sim, o);
  detail::add_value(sim, o, "--pulses", "pulses", "pulses per grid point");
  detail::add_value(sim, o, "--kmax", "kmax", "largest resolvable photon number");
  detail::add_value(sim, o, "--seed", "seed", "RNG seed");
  detail::add_value(sim, o, "--gain", "gain", "pulse integral per photon");
  detail::add_value(sim, o, "--noise", "noise", "Gaussian spread per peak");
  detail::add_value(sim, o, "--thresholds", "thresholds", "oracle or valley");
  detail::add_value(sim, o, "--bin-width", "bin_width", "histogram bin width (0: gain/20)");
  detail::add_value(sim, o, "--drift", "drift", "L/lambda drift per grid point, e.g. 0.001perpoint");
  sim->add_option("--threads", o.threads, "worker threads (0: all cores)");

  auto* fit = app.add_subcommand("fit", "least-squares fit of per-k or classical curves");
  fit->add_option("files", o.files, "CSV files written by scan or simulate")->required();
  fit->add_option("--mode", o.mode, "joint or per-k");
  fit->add_option("--weighting", o.weighting, "uniform or inverse-variance");
  fit->add_option("--k", o.ks_filter, "photon numbers to include (default: all k >= 1)");
  fit->add_option("--guess-n", o.guess_n, "initial n_bar (default: from the data)");
  fit->add_option("--guess-r2", o.guess_r2, "initial r2");
  fit->add_flag("--fit-scale", o.fit_scale, "fit a common efficiency factor");
  fit->add_option("--report", o.report, "also write the report to this file");

  auto* res = app.add_subcommand("resolution", "peak SDM table and FSR uncertainty");
  res->add_option("files", o.files, "CSV files written by scan or simulate")->required();
  res->add_option("--out", o.out_dir, "output directory");
  detail::add_value(res, o, "--r2", "r2", "override the reflectivity from the file header");
  detail::add_value(res, o, "--lambda-nm", "lambda_nm", "wavelength in nm");
  res->add_option("--fsr-nm", o.fsr_nm, "calibrate the nm axis so one FSR spans this many nm");
  res->add_flag("--fsr", o.want_fsr, "estimate the FSR from two peaks");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "fpiq: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (scan->parsed()) return detail::cmd_scan(o, out);
    if (sens->parsed()) return detail::cmd_sensitivity(o, out);
    if (sim->parsed()) return detail::cmd_simulate(o, out);
    if (fit->parsed()) return detail::cmd_fit(o, out);
    if (res->parsed()) return detail::cmd_resolution(o, out);
  } catch (const IoError& e) {
    err << "fpiq: " << e.what() << "\n";
    return kExitIo;
  } catch (const FitError& e) {
    err << "fpiq: " << e.what() << "\n";
    detail::print_fit(err, "best.", e.best(), true);
    return kExitNumerical;
  } catch (const SeparationError& e) {
    err << "fpiq: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "fpiq: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "fpiq: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace fpiq::cli
