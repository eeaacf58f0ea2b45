#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "wmflow/error.hpp"
#include "wmflow/grid.hpp"
#include "wmflow/jko.hpp"
#include "wmflow/mobility.hpp"
#include "wmflow/oracle.hpp"
#include "wmflow/transport.hpp"

namespace wmflow {

/// 17 significant digits; reading the text back with from_chars restores the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw Error(ErrorCode::ParseError, key + ": not a number: '" + text + "'");
  return v;
}

inline long long parse_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ParseError, key + ": not an integer: '" + text + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorCode::ParseError, key + ": not a boolean: '" + text + "'");
}

struct MobilitySpec {
  std::string family = "linear";  // linear | power | double_power | table
  double beta1 = 1.0;
  double beta2 = 1.0;
  double ceiling = 1.0;  // double_power only
  std::string table;     // two-column z,m file for family = table

  friend bool operator==(const MobilitySpec&, const MobilitySpec&) = default;
};

struct ProfileSpec {
  std::string kind = "cosine";  // constant | cosine | gaussian | bump | file
  double a = 1.0;               // constant level or cosine offset
  double b = 0.5;               // cosine amplitude
  long long k = 1;              // cosine wave number
  double center = 0.5;
  double width = 0.1;           // gaussian standard deviation
  double amplitude = 1.0;
  double floor = 0.0;
  double half_width = 0.2;      // bump support radius
  double mass = 1.0;            // bump mass
  bool normalize = false;       // rescale the sampled profile to discrete mass `mass`
  std::string file;

  friend bool operator==(const ProfileSpec&, const ProfileSpec&) = default;
};

struct RunConfig {
  MobilitySpec mobility;
  double length = 1.0;
  long long cells = 128;
  ProfileSpec initial;
  bool has_target = false;
  ProfileSpec target;  // second endpoint for the distance subcommand
  double tau = 1e-3;
  double T = 0.05;
  std::vector<double> deltas;  // empty: no cascade schedule
  long long cascade_levels = 5;
  double tol = 1e-6;
  double tol_outer = 1e-10;
  long long max_iter = 5000;
  long long max_outer = 50;
  long long time_slices = 0;
  std::string method = "auto";  // auto | newton | primal_dual
  double oracle_tau = 1e-4;
  double max_error = 0.05;
  long long pairs = 10;
  std::uint64_t seed = 1;
  bool deterministic = true;
  long long threads = 0;  // 0: hardware concurrency
  std::string output_dir = "out";
  bool write_path = false;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

struct Binding {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_double(v[i]);
  }
  return out;
}

inline std::vector<double> split_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(parse_double(key, item.substr(b, e - b + 1)));
  }
  return out;
}

template <class T>
Binding bind_field(std::string section, std::string key, T RunConfig::*field) {
  const std::string name = section + "." + key;
  Binding b{section, key, {}, {}};
  if constexpr (std::is_same_v<T, double>) {
    b.get = [field](const RunConfig& c) { return format_double(c.*field); };
    b.set = [field, name](RunConfig& c, const std::string& s) { c.*field = parse_double(name, s); };
  } else if constexpr (std::is_same_v<T, bool>) {
    b.get = [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); };
    b.set = [field, name](RunConfig& c, const std::string& s) { c.*field = parse_bool(name, s); };
  } else if constexpr (std::is_same_v<T, long long>) {
    b.get = [field](const RunConfig& c) { return std::to_string(c.*field); };
    b.set = [field, name](RunConfig& c, const std::string& s) { c.*field = parse_integer(name, s); };
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    b.get = [field](const RunConfig& c) { return std::to_string(c.*field); };
    b.set = [field, name](RunConfig& c, const std::string& s) {
      std::uint64_t v = 0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) throw Error(ErrorCode::ParseError, name + ": not an unsigned integer");
      c.*field = v;
    };
  } else {
    b.get = [field](const RunConfig& c) { return c.*field; };
    b.set = [field](RunConfig& c, const std::string& s) { c.*field = s; };
  }
  return b;
}

template <class T>
Binding bind_nested(std::string section, std::string key, ProfileSpec RunConfig::*outer, T ProfileSpec::*field) {
  const std::string name = section + "." + key;
  Binding b{section, key, {}, {}};
  if constexpr (std::is_same_v<T, double>) {
    b.get = [=](const RunConfig& c) { return format_double(c.*outer.*field); };
    b.set = [=](RunConfig& c, const std::string& s) { c.*outer.*field = parse_double(name, s); };
  } else if constexpr (std::is_same_v<T, bool>) {
    b.get = [=](const RunConfig& c) { return std::string(c.*outer.*field ? "true" : "false"); };
    b.set = [=](RunConfig& c, const std::string& s) { c.*outer.*field = parse_bool(name, s); };
  } else if constexpr (std::is_same_v<T, long long>) {
    b.get = [=](const RunConfig& c) { return std::to_string(c.*outer.*field); };
    b.set = [=](RunConfig& c, const std::string& s) { c.*outer.*field = parse_integer(name, s); };
  } else {
    b.get = [=](const RunConfig& c) { return c.*outer.*field; };
    b.set = [=](RunConfig& c, const std::string& s) { c.*outer.*field = s; };
  }
  return b;
}

inline void bind_profile(std::vector<Binding>& out, const std::string& section, ProfileSpec RunConfig::*p) {
  out.push_back(bind_nested(section, "kind", p, &ProfileSpec::kind));
  out.push_back(bind_nested(section, "a", p, &ProfileSpec::a));
  out.push_back(bind_nested(section, "b", p, &ProfileSpec::b));
  out.push_back(bind_nested(section, "k", p, &ProfileSpec::k));
  out.push_back(bind_nested(section, "center", p, &ProfileSpec::center));
  out.push_back(bind_nested(section, "width", p, &ProfileSpec::width));
  out.push_back(bind_nested(section, "amplitude", p, &ProfileSpec::amplitude));
  out.push_back(bind_nested(section, "floor", p, &ProfileSpec::floor));
  out.push_back(bind_nested(section, "half_width", p, &ProfileSpec::half_width));
  out.push_back(bind_nested(section, "mass", p, &ProfileSpec::mass));
  out.push_back(bind_nested(section, "normalize", p, &ProfileSpec::normalize));
  out.push_back(bind_nested(section, "file", p, &ProfileSpec::file));
}

inline const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> b;
    const auto mob = [&](const char* key, auto field) {
      Binding x{"mobility", key, {}, {}};
      const std::string name = std::string("mobility.") + key;
      using F = std::remove_reference_t<decltype(MobilitySpec{}.*field)>;
      if constexpr (std::is_same_v<F, double>) {
        x.get = [=](const RunConfig& c) { return format_double(c.mobility.*field); };
        x.set = [=](RunConfig& c, const std::string& s) { c.mobility.*field = parse_double(name, s); };
      } else {
        x.get = [=](const RunConfig& c) { return c.mobility.*field; };
        x.set = [=](RunConfig& c, const std::string& s) { c.mobility.*field = s; };
      }
      b.push_back(std::move(x));
    };
    mob("family", &MobilitySpec::family);
    mob("beta1", &MobilitySpec::beta1);
    mob("beta2", &MobilitySpec::beta2);
    mob("ceiling", &MobilitySpec::ceiling);
    mob("table", &MobilitySpec::table);
    b.push_back(bind_field("grid", "length", &RunConfig::length));
    b.push_back(bind_field("grid", "cells", &RunConfig::cells));
    bind_profile(b, "initial", &RunConfig::initial);
    b.push_back(bind_field("target", "enabled", &RunConfig::has_target));
    bind_profile(b, "target", &RunConfig::target);
    b.push_back(bind_field("time", "tau", &RunConfig::tau));
    b.push_back(bind_field("time", "T", &RunConfig::T));
    Binding deltas{"cascade", "deltas", [](const RunConfig& c) { return join_doubles(c.deltas); },
                   [](RunConfig& c, const std::string& s) { c.deltas = split_doubles("cascade.deltas", s); }};
    b.push_back(std::move(deltas));
    b.push_back(bind_field("cascade", "levels", &RunConfig::cascade_levels));
    b.push_back(bind_field("solver", "tol", &RunConfig::tol));
    b.push_back(bind_field("solver", "tol_outer", &RunConfig::tol_outer));
    b.push_back(bind_field("solver", "max_iter", &RunConfig::max_iter));
    b.push_back(bind_field("solver", "max_outer", &RunConfig::max_outer));
    b.push_back(bind_field("solver", "time_slices", &RunConfig::time_slices));
    b.push_back(bind_field("solver", "method", &RunConfig::method));
    b.push_back(bind_field("compare", "oracle_tau", &RunConfig::oracle_tau));
    b.push_back(bind_field("compare", "max_error", &RunConfig::max_error));
    b.push_back(bind_field("compare", "pairs", &RunConfig::pairs));
    b.push_back(bind_field("run", "seed", &RunConfig::seed));
    b.push_back(bind_field("run", "deterministic", &RunConfig::deterministic));
    b.push_back(bind_field("run", "threads", &RunConfig::threads));
    b.push_back(bind_field("output", "dir", &RunConfig::output_dir));
    b.push_back(bind_field("output", "write_path", &RunConfig::write_path));
    return b;
  }();
  return table;
}

}  // namespace detail

/// Checks value ranges; every violation is reported as ParseError.
inline void validate_config(const RunConfig& c) {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::ParseError, msg); };
  static const std::set<std::string> families{"linear", "power", "double_power", "table"};
  static const std::set<std::string> kinds{"constant", "cosine", "gaussian", "bump", "file"};
  static const std::set<std::string> methods{"auto", "newton", "primal_dual"};
  if (!families.count(c.mobility.family)) fail("mobility.family: unknown family '" + c.mobility.family + "'");
  if (c.mobility.family == "table" && c.mobility.table.empty()) fail("mobility.table: path required");
  if (!kinds.count(c.initial.kind)) fail("initial.kind: unknown profile '" + c.initial.kind + "'");
  if (c.has_target && !kinds.count(c.target.kind)) fail("target.kind: unknown profile '" + c.target.kind + "'");
  if (!methods.count(c.method)) fail("solver.method: unknown method '" + c.method + "'");
  if (!(c.length > 0.0)) fail("grid.length must be positive");
  if (c.cells < 8) fail("grid.cells must be at least 8");
  if (!(c.tau > 0.0)) fail("time.tau must be positive");
  if (!(c.T >= c.tau)) fail("time.T must be at least time.tau");
  if (!(c.tol > 0.0) || !(c.tol_outer > 0.0)) fail("solver tolerances must be positive");
  if (c.max_iter <= 0 || c.max_outer <= 0) fail("solver iteration limits must be positive");
  if (c.time_slices < 0) fail("solver.time_slices must be nonnegative");
  if (!(c.oracle_tau > 0.0) || !(c.max_error > 0.0)) fail("compare tolerances must be positive");
  if (c.cascade_levels <= 0) fail("cascade.levels must be positive");
  if (c.pairs < 0 || c.threads < 0) fail("counts must be nonnegative");
}

inline std::string serialize(const RunConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& b : detail::bindings()) {
    if (b.section != section) {
      if (!section.empty()) os << '\n';
      section = b.section;
      os << '[' << section << "]\n";
    }
    os << b.key << " = " << b.get(c) << '\n';
  }
  return os.str();
}

/// Sectioned key = value text; '#' and ';' start comment lines. Unknown keys are rejected.
inline RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  RunConfig c;
  const auto& table = detail::bindings();
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) throw Error(ErrorCode::ParseError, "key outside a section: " + section);
    for (const auto& [key, value] : keys) {
      const auto it = std::find_if(table.begin(), table.end(),
                                   [&](const detail::Binding& b) { return b.section == section && b.key == key; });
      if (it == table.end()) throw Error(ErrorCode::ParseError, "unknown key " + section + "." + key);
      it->set(c, value.get_value<std::string>());
    }
  }
  validate_config(c);
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open config " + path);
  return parse_config(in);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(serialize(c))));
  return buf;
}

inline Mobility make_mobility(const MobilitySpec& s) {
  if (s.family == "linear") return Mobility::linear();
  if (s.family == "power") return Mobility::power(s.beta1);
  if (s.family == "double_power") return Mobility::double_power(s.beta1, s.beta2, s.ceiling);
  if (s.family == "table") {
    std::ifstream in(s.table);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open mobility table " + s.table);
    std::vector<double> z, m;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream row(line);
      double a, b;
      if (!(row >> a >> b)) throw Error(ErrorCode::ParseError, "bad mobility table row: " + line);
      z.push_back(a);
      m.push_back(b);
    }
    return Mobility::table(std::move(z), std::move(m));
  }
  throw Error(ErrorCode::ParseError, "unknown mobility family " + s.family);
}

inline DensityField make_profile(const Grid1D& g, const ProfileSpec& p, double ceiling) {
  std::vector<double> v;
  if (p.kind == "constant") v = constant_profile(g, p.a);
  else if (p.kind == "cosine") v = cosine_profile(g, p.a, p.b, static_cast<int>(p.k));
  else if (p.kind == "gaussian") v = gaussian_profile(g, p.center, p.width, p.amplitude, p.floor, ceiling);
  else if (p.kind == "bump") v = cos2_bump(g, p.center, p.half_width, p.mass);
  else if (p.kind == "file") {
    v = read_profile_csv(p.file);
    if (v.size() != g.cells()) throw Error(ErrorCode::GridMismatch, "profile file length differs from grid.cells");
  } else {
    throw Error(ErrorCode::ParseError, "unknown profile kind " + p.kind);
  }
  DensityField u(g, std::move(v));
  if (p.normalize) {
    const double s = p.mass / u.mass();
    for (double& x : u.values) x *= s;
  }
  return u;
}

inline Grid1D make_grid(const RunConfig& c) { return Grid1D(c.length, static_cast<std::size_t>(c.cells)); }

inline TransportOptions make_transport_options(const RunConfig& c) {
  TransportOptions o;
  o.tol = c.tol;
  o.max_iter = static_cast<int>(c.max_iter);
  o.time_slices = static_cast<std::size_t>(c.time_slices);
  o.method = c.method == "newton" ? TransportMethod::Newton
             : c.method == "primal_dual" ? TransportMethod::PrimalDual
                                         : TransportMethod::Auto;
  o.seed = c.seed;
  return o;
}

inline JkoOptions make_jko_options(const RunConfig& c) {
  JkoOptions o;
  o.tol_outer = c.tol_outer;
  o.max_outer = static_cast<int>(c.max_outer);
  o.transport = make_transport_options(c);
  return o;
}

}  // namespace wmflow
