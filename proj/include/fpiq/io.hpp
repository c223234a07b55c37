#pragma once

// Run configuration and the CSV interchange format. Every output file starts
// with "# key=value" lines echoing the configuration, followed by a column
// line and comma-separated rows. Missing values are empty fields.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "fpiq/detector_sim.hpp"
#include "fpiq/photon_stats.hpp"

namespace fpiq {

inline constexpr std::string_view kToolName = "fpiq";
inline constexpr std::string_view kToolVersion = "0.1.0";

/// Bad user input: unparsable values, unknown keys, physical bounds.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command = "scan";
  InputState input = CoherentInput{4.0};
  double r2 = 0.7;
  PhaseGrid grid{0.0, 1.0, 2001};
  std::vector<int> ks;
  bool classical = false;
  bool shot_noise = false;
  bool minima = false;
  int n_first = 1;
  int n_last = 10;
  std::size_t pulses = 10000;
  DetectorModel detector;
  ThresholdMode thresholds = ThresholdMode::oracle;
  double bin_width = 0.0;
  double drift = 0.0;  // L/lambda per grid point
  double lambda_nm = 1550.0;

  MirrorSpec mirror() const { return MirrorSpec::from_power(r2); }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ---------------------------------------------------------------------------
// Scalar formatting and parsing

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("double formatting failed");
  return std::string(buf, end);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view s, std::string_view what) {
  const std::string t = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
    throw ConfigError(std::string(what) + ": not a number: '" + t + "'");
  }
  return v;
}

template <class Int>
Int parse_integer(std::string_view s, std::string_view what) {
  const std::string t = trim(s);
  Int v{};
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size()) {
    throw ConfigError(std::string(what) + ": not an integer: '" + t + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view s, std::string_view what) {
  const std::string t = trim(s);
  if (t == "1" || t == "true" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "no") return false;
  throw ConfigError(std::string(what) + ": expected true or false, got '" + t + "'");
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(std::string(s.substr(pos, next - pos)));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

/// "coherent:4" or "fock:3".
inline InputState parse_input(std::string_view s) {
  const auto parts = split(trim(s), ':');
  if (parts.size() != 2) throw ConfigError("input must look like coherent:<n_bar> or fock:<n>");
  if (parts[0] == "coherent") {
    CoherentInput c{parse_double(parts[1], "input")};
    try {
      validate(c);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    return c;
  }
  if (parts[0] == "fock") {
    FockInput f{parse_integer<int>(parts[1], "input")};
    try {
      validate(f);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    return f;
  }
  throw ConfigError("unknown input kind '" + parts[0] + "' (expected coherent or fock)");
}

inline std::string format_input(const InputState& s) {
  if (const auto* c = std::get_if<CoherentInput>(&s)) return "coherent:" + format_double(c->n_bar);
  return "fock:" + std::to_string(std::get<FockInput>(s).n);
}

/// "start:stop:points".
inline PhaseGrid parse_grid(std::string_view s) {
  const auto parts = split(trim(s), ':');
  if (parts.size() != 3) throw ConfigError("grid must look like start:stop:points");
  PhaseGrid g{parse_double(parts[0], "grid"), parse_double(parts[1], "grid"),
              parse_integer<std::size_t>(parts[2], "grid")};
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return g;
}

inline std::string format_grid(const PhaseGrid& g) {
  return format_double(g.start) + ":" + format_double(g.stop) + ":" + std::to_string(g.points);
}

/// Comma-separated integers and inclusive ranges: "1,2,5..7".
inline std::vector<int> parse_int_list(std::string_view s, std::string_view what) {
  std::vector<int> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(trim(s), ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_integer<int>(item, what));
      continue;
    }
    const int a = parse_integer<int>(item.substr(0, dots), what);
    const int b = parse_integer<int>(item.substr(dots + 2), what);
    if (b < a) throw ConfigError(std::string(what) + ": empty range '" + item + "'");
    for (int v = a; v <= b; ++v) out.push_back(v);
  }
  return out;
}

inline std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

/// Drift in L/lambda per grid point; a trailing "perpoint" is accepted.
inline double parse_drift(std::string_view s) {
  std::string t = trim(s);
  constexpr std::string_view suffix = "perpoint";
  if (t.size() > suffix.size() && t.ends_with(suffix)) t.resize(t.size() - suffix.size());
  return parse_double(t, "drift");
}

// ---------------------------------------------------------------------------
// RunConfig <-> key/value pairs

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline KeyValues kv_from_config(const RunConfig& c) {
  return {
      {"command", c.command},
      {"input", format_input(c.input)},
      {"r2", format_double(c.r2)},
      {"grid", format_grid(c.grid)},
      {"k", format_int_list(c.ks)},
      {"classical", c.classical ? "true" : "false"},
      {"shot_noise", c.shot_noise ? "true" : "false"},
      {"minima", c.minima ? "true" : "false"},
      {"n", std::to_string(c.n_first) + ".." + std::to_string(c.n_last)},
      {"pulses", std::to_string(c.pulses)},
      {"gain", format_double(c.detector.gain)},
      {"noise", format_double(c.detector.noise_sigma)},
      {"kmax", std::to_string(c.detector.k_max_observable)},
      {"seed", std::to_string(c.detector.seed)},
      {"thresholds", c.thresholds == ThresholdMode::oracle ? "oracle" : "valley"},
      {"bin_width", format_double(c.bin_width)},
      {"drift", format_double(c.drift)},
      {"lambda_nm", format_double(c.lambda_nm)},
  };
}

/// Keys written into file headers that are not part of the configuration.
inline bool is_table_key(std::string_view key) {
  return key == "tool" || key == "version" || key == "curve" || key == "quantity" ||
         key == "threshold_values" || key == "misassigned" || key == "overflow";
}

/// Applies key/value pairs on top of `base`. Unknown keys are an error when
/// `strict`; header-only keys are always skipped.
inline RunConfig config_from_kv(const KeyValues& kv, RunConfig base = {}, bool strict = true) {
  RunConfig c = std::move(base);
  for (const auto& [key, value] : kv) {
    if (key == "command") {
      c.command = trim(value);
    } else if (key == "input") {
      c.input = parse_input(value);
    } else if (key == "r2") {
      c.r2 = parse_double(value, "r2");
      if (!(c.r2 >= 0.0 && c.r2 < 1.0)) throw ConfigError("r2 must lie in [0, 1)");
    } else if (key == "grid") {
      c.grid = parse_grid(value);
    } else if (key == "k") {
      c.ks = parse_int_list(value, "k");
      for (int k : c.ks) {
        if (k < 0) throw ConfigError("k must be >= 0");
      }
    } else if (key == "classical") {
      c.classical = parse_bool(value, key);
    } else if (key == "shot_noise") {
      c.shot_noise = parse_bool(value, key);
    } else if (key == "minima") {
      c.minima = parse_bool(value, key);
    } else if (key == "n") {
      const auto ns = parse_int_list(value, "n");
      if (ns.empty() || ns.front() < 1) throw ConfigError("n range must start at 1 or above");
      for (std::size_t i = 1; i < ns.size(); ++i) {
        if (ns[i] != ns[i - 1] + 1) throw ConfigError("n must be a contiguous range such as 1..10");
      }
      c.n_first = ns.front();
      c.n_last = ns.back();
    } else if (key == "pulses") {
      c.pulses = parse_integer<std::size_t>(value, "pulses");
      if (c.pulses == 0) throw ConfigError("pulses must be positive");
    } else if (key == "gain") {
      c.detector.gain = parse_double(value, "gain");
    } else if (key == "noise") {
      c.detector.noise_sigma = parse_double(value, "noise");
    } else if (key == "kmax") {
      c.detector.k_max_observable = parse_integer<int>(value, "kmax");
    } else if (key == "seed") {
      c.detector.seed = parse_integer<std::uint64_t>(value, "seed");
    } else if (key == "thresholds") {
      const auto t = trim(value);
      if (t == "oracle") {
        c.thresholds = ThresholdMode::oracle;
      } else if (t == "valley") {
        c.thresholds = ThresholdMode::valley;
      } else {
        throw ConfigError("thresholds must be oracle or valley");
      }
    } else if (key == "bin_width") {
      c.bin_width = parse_double(value, "bin_width");
      if (!(c.bin_width >= 0.0)) throw ConfigError("bin_width must be >= 0");
    } else if (key == "drift") {
      c.drift = parse_drift(value);
    } else if (key == "lambda_nm") {
      c.lambda_nm = parse_double(value, "lambda_nm");
      if (!(c.lambda_nm > 0.0)) throw ConfigError("lambda_nm must be positive");
    } else if (strict && !is_table_key(key)) {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }
  try {
    c.detector.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Reads "key=value" lines. Blank lines and lines starting with "//" are
/// skipped; a leading "#" is tolerated so file headers can be reused.
inline KeyValues parse_kv_text(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t.starts_with("//")) continue;
    if (t.front() == '#') t = trim(std::string_view(t).substr(1));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    kv.emplace_back(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return kv;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

/// Writes to a sibling temporary file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto " + path.string());
  }
}

struct CurveTable {
  KeyValues header;
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;

  std::optional<std::string> get(std::string_view key) const {
    for (const auto& [k, v] : header) {
      if (k == key) return v;
    }
    return std::nullopt;
  }

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == name) return i;
    }
    throw ConfigError("table has no column '" + std::string(name) + "'");
  }
};

inline std::string format_table(const CurveTable& t) {
  std::string out;
  for (const auto& [k, v] : t.header) out += "# " + k + "=" + v + "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += "\n";
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size()) throw std::logic_error("row width differs from column count");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      if (row[i]) out += format_double(*row[i]);
    }
    out += "\n";
  }
  return out;
}

inline CurveTable parse_table(std::string_view text) {
  CurveTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_columns = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto kv = parse_kv_text(line);
      t.header.insert(t.header.end(), kv.begin(), kv.end());
      continue;
    }
    auto fields = split(line, ',');
    if (!have_columns) {
      for (auto& f : fields) t.columns.push_back(trim(f));
      have_columns = true;
      continue;
    }
    if (fields.size() != t.columns.size()) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected " +
                        std::to_string(t.columns.size()) + " fields");
    }
    std::vector<std::optional<double>> row;
    for (const auto& f : fields) {
      if (trim(f).empty()) {
        row.push_back(std::nullopt);
      } else {
        row.push_back(parse_double(f, "table value"));
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (!have_columns) throw ConfigError("table has no column line");
  return t;
}

inline CurveTable read_table(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return parse_table(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Header for one output file: tool, version, configuration, then extras.
inline KeyValues table_header(const RunConfig& c, const KeyValues& extra = {}) {
  KeyValues h{{"tool", std::string(kToolName)}, {"version", std::string(kToolVersion)}};
  const auto kv = kv_from_config(c);
  h.insert(h.end(), kv.begin(), kv.end());
  h.insert(h.end(), extra.begin(), extra.end());
  return h;
}

/// "k3" -> 3, "mean"/"classical" -> nullopt.
inline std::optional<int> parse_curve_tag(std::string_view tag) {
  if (tag.starts_with("k")) return parse_integer<int>(tag.substr(1), "curve");
  return std::nullopt;
}

/// Rebuilds a FringeCurve from a table written by scan or simulate. Rows with
/// a missing value are dropped.
inline FringeCurve curve_from_table(const CurveTable& t) {
  const RunConfig c = config_from_kv(t.header, {}, false);
  const auto tag = t.get("curve");
  if (!tag) throw ConfigError("table header lacks a curve key");
  FringeCurve curve{kind_of(c.input), mean_photons(c.input), parse_curve_tag(*tag), c.mirror(), {}};
  const std::size_t xi = t.column("l_over_lambda");
  const std::size_t yi = xi == 0 ? 1 : 0;
  if (t.columns.size() < 2) throw ConfigError("table needs an abscissa and a value column");
  for (const auto& row : t.rows) {
    if (row[xi] && row[yi]) curve.samples.push_back({*row[xi], *row[yi]});
  }
  return curve;
}

}  // namespace fpiq
