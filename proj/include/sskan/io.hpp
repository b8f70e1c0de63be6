#pragma once

// Checkpoint and config file formats.
//
// Checkpoints store every float as a hex-float string ("0x1.8p+1") so a
// save/load round trip is bit-exact. Configs are plain JSON with a
// schema_version field; missing keys keep the preset's values and unknown
// keys are rejected with their field path.

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sskan/error.hpp"
#include "sskan/experiment.hpp"
#include "sskan/kan.hpp"
#include "sskan/linalg.hpp"
#include "sskan/normalization.hpp"
#include "sskan/ssmodel.hpp"
#include "sskan/trainer.hpp"

namespace sskan {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Hex floats

inline std::string hex_float(double v) {
  std::array<char, 64> buf{};
  const bool neg = std::signbit(v);
  const double mag = neg ? -v : v;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), mag, std::chars_format::hex);
  std::string body(buf.data(), res.ptr);
  if (!std::isfinite(v)) return (neg ? "-" : "") + body;
  return (neg ? "-0x" : "0x") + body;
}

inline double parse_hex_float(std::string_view s, const std::string& where) {
  bool neg = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    neg = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s.remove_prefix(2);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), "invalid-checkpoint",
          where + ": malformed hex float");
  return neg ? -v : v;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::array<char, 17> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + 16, v, 16);
  std::string s(buf.data(), res.ptr);
  return std::string(16 - s.size(), '0') + s;
}

// ---------------------------------------------------------------------------
// Files

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  require(!ec, "io-error", "cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "io-error", "cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  require(out.good(), "io-error", "write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "io-error", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json_file(const std::filesystem::path& path, const std::string& code) {
  const std::string text = read_text_file(path);
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), code, path.string() + ": not valid JSON");
  return j;
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Checkpoint encoding

namespace detail {

inline const json& member(const json& j, const char* key, const std::string& path) {
  require(j.is_object() && j.contains(key), "invalid-checkpoint", path + "." + key + ": missing");
  return j.at(key);
}

inline json hex_array(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(hex_float(x));
  return a;
}

inline Vector read_hex_array(const json& j, const std::string& path) {
  require(j.is_array(), "invalid-checkpoint", path + ": expected array");
  Vector v;
  v.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_string(), "invalid-checkpoint", path + "[" + std::to_string(i) + "]: expected hex string");
    v.push_back(parse_hex_float(j[i].get<std::string>(), path + "[" + std::to_string(i) + "]"));
  }
  return v;
}

inline double read_hex(const json& j, const char* key, const std::string& path) {
  const json& v = member(j, key, path);
  require(v.is_string(), "invalid-checkpoint", path + "." + key + ": expected hex string");
  return parse_hex_float(v.get<std::string>(), path + "." + key);
}

inline std::size_t read_count(const json& j, const char* key, const std::string& path) {
  const json& v = member(j, key, path);
  require(v.is_number_unsigned(), "invalid-checkpoint", path + "." + key + ": expected nonnegative integer");
  return v.get<std::size_t>();
}

}  // namespace detail

inline json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", detail::hex_array(m.values())}};
}

inline Matrix matrix_from_json(const json& j, const std::string& path) {
  const std::size_t r = detail::read_count(j, "rows", path);
  const std::size_t c = detail::read_count(j, "cols", path);
  const Vector data = detail::read_hex_array(detail::member(j, "data", path), path + ".data");
  require(data.size() == r * c, "invalid-checkpoint", path + ".data: expected rows * cols entries");
  Matrix m(r, c);
  std::copy(data.begin(), data.end(), m.values().begin());
  return m;
}

inline json linear_to_json(const LinearSS& s) {
  return json{{"A", matrix_to_json(s.A)}, {"B", matrix_to_json(s.B)}, {"C", matrix_to_json(s.C)},
              {"D", matrix_to_json(s.D)}};
}

inline LinearSS linear_from_json(const json& j, const std::string& path) {
  LinearSS s;
  s.A = matrix_from_json(detail::member(j, "A", path), path + ".A");
  s.B = matrix_from_json(detail::member(j, "B", path), path + ".B");
  s.C = matrix_from_json(detail::member(j, "C", path), path + ".C");
  s.D = matrix_from_json(detail::member(j, "D", path), path + ".D");
  try {
    s.validate();
  } catch (const Error& e) {
    fail("invalid-checkpoint", path + ": " + e.what());
  }
  return s;
}

inline json edge_to_json(const KanEdge& e) {
  return json{{"degree", e.basis.degree()},
              {"domain", detail::hex_array(std::array{e.basis.domain_lo(), e.basis.domain_hi()})},
              {"intervals", e.basis.n_intervals()},
              {"knots", detail::hex_array(e.basis.knots())},
              {"coeffs", detail::hex_array(e.coeffs)},
              {"w_b", hex_float(e.w_b)},
              {"w_s", hex_float(e.w_s)}};
}

inline KanEdge edge_from_json(const json& j, const std::string& path) {
  const json& deg = detail::member(j, "degree", path);
  const json& g = detail::member(j, "intervals", path);
  require(deg.is_number_integer() && g.is_number_integer(), "invalid-checkpoint",
          path + ": degree and intervals must be integers");
  const Vector dom = detail::read_hex_array(detail::member(j, "domain", path), path + ".domain");
  require(dom.size() == 2, "invalid-checkpoint", path + ".domain: expected [lo, hi]");
  KanEdge e;
  try {
    e.basis = make_uniform_basis(deg.get<int>(), dom[0], dom[1], g.get<int>());
  } catch (const Error& err) {
    fail("invalid-checkpoint", path + ": " + err.what());
  }
  const Vector knots = detail::read_hex_array(detail::member(j, "knots", path), path + ".knots");
  require(knots == e.basis.knots(), "invalid-checkpoint", path + ".knots: inconsistent with domain and degree");
  e.coeffs = detail::read_hex_array(detail::member(j, "coeffs", path), path + ".coeffs");
  require(e.coeffs.size() == e.basis.count(), "invalid-checkpoint", path + ".coeffs: wrong length");
  e.w_b = detail::read_hex(j, "w_b", path);
  e.w_s = detail::read_hex(j, "w_s", path);
  return e;
}

inline json network_to_json(const KanNetwork& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) {
    json edges = json::array();
    for (const auto& e : l.edges()) edges.push_back(edge_to_json(e));
    layers.push_back(json{{"n_in", l.n_in()}, {"n_out", l.n_out()}, {"edges", edges}});
  }
  return json{{"widths", net.widths()}, {"layers", layers}};
}

inline KanNetwork network_from_json(const json& j, const std::string& path) {
  const json& layers = detail::member(j, "layers", path);
  require(layers.is_array() && !layers.empty(), "invalid-checkpoint", path + ".layers: expected nonempty array");
  std::vector<KanLayer> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string lp = path + ".layers[" + std::to_string(l) + "]";
    const std::size_t n_in = detail::read_count(layers[l], "n_in", lp);
    const std::size_t n_out = detail::read_count(layers[l], "n_out", lp);
    const json& edges = detail::member(layers[l], "edges", lp);
    require(edges.is_array() && edges.size() == n_in * n_out && n_in > 0 && n_out > 0, "invalid-checkpoint",
            lp + ".edges: expected n_in * n_out edges");
    KanLayer layer(n_in, n_out, KanEdge{});
    for (std::size_t k = 0; k < edges.size(); ++k)
      layer.edges()[k] = edge_from_json(edges[k], lp + ".edges[" + std::to_string(k) + "]");
    out.push_back(std::move(layer));
  }
  try {
    return KanNetwork(std::move(out));
  } catch (const Error& e) {
    fail("invalid-checkpoint", path + ": " + e.what());
  }
}

inline json normalization_to_json(const Normalization& n) {
  return json{{"u", {{"scale", hex_float(n.u.scale)}, {"offset", hex_float(n.u.offset)}}},
              {"y", {{"scale", hex_float(n.y.scale)}, {"offset", hex_float(n.y.offset)}}}};
}

inline Normalization normalization_from_json(const json& j, const std::string& path) {
  Normalization n;
  const json& u = detail::member(j, "u", path);
  const json& y = detail::member(j, "y", path);
  n.u = {detail::read_hex(u, "scale", path + ".u"), detail::read_hex(u, "offset", path + ".u")};
  n.y = {detail::read_hex(y, "scale", path + ".y"), detail::read_hex(y, "offset", path + ".y")};
  require(n.u.scale != 0.0 && n.y.scale != 0.0, "invalid-checkpoint", path + ": zero normalization scale");
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint {
  int schema_version = kSchemaVersion;
  std::string role = "model";  // model | bla
  std::uint64_t seed = 0;
  std::string config_hash;
  json init = json::object();  // initialization scheme, informational
  std::variant<SsKanModel, CascadeModel> model;

  bool is_cascade() const { return std::holds_alternative<CascadeModel>(model); }
  const Normalization& normalization() const {
    return std::visit([](const auto& m) -> const Normalization& { return m.normalization; }, model);
  }
};

inline json checkpoint_to_json(const Checkpoint& c) {
  json j{{"schema_version", c.schema_version},
         {"format", "sskan-checkpoint"},
         {"role", c.role},
         {"seed", c.seed},
         {"config_hash", c.config_hash},
         {"init", c.init}};
  if (const auto* m = std::get_if<SsKanModel>(&c.model)) {
    j["kind"] = "sskan";
    j["normalization"] = normalization_to_json(m->normalization);
    j["linear"] = linear_to_json(m->linear);
    j["kan_f"] = m->kan_f ? network_to_json(*m->kan_f) : json(nullptr);
    j["kan_g"] = m->kan_g ? network_to_json(*m->kan_g) : json(nullptr);
  } else {
    const auto& cm = std::get<CascadeModel>(c.model);
    j["kind"] = "cascade";
    j["normalization"] = normalization_to_json(cm.normalization);
    j["front"] = linear_to_json(cm.front);
    j["mid_kan"] = network_to_json(cm.mid_kan);
    j["back"] = linear_to_json(cm.back);
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  const std::string p = "checkpoint";
  require(j.is_object(), "invalid-checkpoint", "checkpoint: expected JSON object");
  const json& ver = detail::member(j, "schema_version", p);
  require(ver.is_number_integer() && ver.get<int>() == kSchemaVersion, "invalid-checkpoint",
          "checkpoint.schema_version: unsupported version " + ver.dump());
  Checkpoint c;
  const json& role = detail::member(j, "role", p);
  const json& kind = detail::member(j, "kind", p);
  require(role.is_string() && kind.is_string(), "invalid-checkpoint", "checkpoint: role and kind must be strings");
  c.role = role.get<std::string>();
  c.seed = detail::member(j, "seed", p).get<std::uint64_t>();
  c.config_hash = detail::member(j, "config_hash", p).get<std::string>();
  if (j.contains("init")) c.init = j.at("init");
  const Normalization norm = normalization_from_json(detail::member(j, "normalization", p), p + ".normalization");
  if (kind.get<std::string>() == "sskan") {
    SsKanModel m;
    m.normalization = norm;
    m.linear = linear_from_json(detail::member(j, "linear", p), p + ".linear");
    const json& f = detail::member(j, "kan_f", p);
    const json& g = detail::member(j, "kan_g", p);
    if (!f.is_null()) m.kan_f = network_from_json(f, p + ".kan_f");
    if (!g.is_null()) m.kan_g = network_from_json(g, p + ".kan_g");
    try {
      m.validate();
    } catch (const Error& e) {
      fail("invalid-checkpoint", p + ": " + e.what());
    }
    c.model = std::move(m);
  } else if (kind.get<std::string>() == "cascade") {
    CascadeModel m{linear_from_json(detail::member(j, "front", p), p + ".front"),
                   network_from_json(detail::member(j, "mid_kan", p), p + ".mid_kan"),
                   linear_from_json(detail::member(j, "back", p), p + ".back"), norm};
    try {
      m.validate();
    } catch (const Error& e) {
      fail("invalid-checkpoint", p + ": " + e.what());
    }
    c.model = std::move(m);
  } else {
    fail("invalid-checkpoint", "checkpoint.kind: unknown model kind '" + kind.get<std::string>() + "'");
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_text_file(path, dump_json(checkpoint_to_json(c)));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(parse_json_file(path, "invalid-checkpoint"));
}

// ---------------------------------------------------------------------------
// Config

namespace detail {

inline json filter_to_json(const FilterSpec& f) { return json{{"b", f.b}, {"a", f.a}}; }

inline json kan_init_to_json(const KanInit& k) {
  return json{{"degree", k.degree},       {"grid_intervals", k.grid_intervals}, {"domain_lo", k.domain_lo},
              {"domain_hi", k.domain_hi}, {"coeff_scale", k.coeff_scale},       {"w_b", k.w_b},
              {"w_s", k.w_s},             {"w_b_out", k.w_b_out}};
}

inline json linear_init_to_json(const LinearInit& l) {
  return json{{"kind", l.kind == LinearInit::Kind::oscillator ? "oscillator" : "scaled-identity"},
              {"radius", l.radius},
              {"perturbation", l.perturbation},
              {"angle", l.angle},
              {"b_scale", l.b_scale},
              {"c_scale", l.c_scale}};
}

inline json train_to_json(const TrainConfig& t) {
  return json{{"lambda_l1", t.lambda_l1},
              {"lambda_l2", t.lambda_l2},
              {"lr0", t.lr0},
              {"lr_decay", t.lr_decay},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"grid_update_epochs", t.grid_update_epochs},
              {"validation_fraction", t.validation_fraction},
              {"adamw",
               {{"beta1", t.adamw.beta1},
                {"beta2", t.adamw.beta2},
                {"epsilon", t.adamw.epsilon},
                {"weight_decay", t.adamw.weight_decay}}}};
}

// Reads keys of one JSON object into fields, tracking the dotted path and
// rejecting keys that were never consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), "invalid-config", where() + ": expected object");
  }

  std::string where(std::string_view key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json* find(const char* key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const char* key, double& out) {
    if (const json* v = find(key)) {
      require(v->is_number(), "invalid-config", where(key) + ": expected number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const char* key, Int& out) {
    if (const json* v = find(key)) {
      require(v->is_number_integer(), "invalid-config", where(key) + ": expected integer");
      if constexpr (std::is_unsigned_v<Int>)
        require(v->get<std::int64_t>() >= 0, "invalid-config", where(key) + ": must be >= 0");
      out = v->get<Int>();
    }
  }

  void boolean(const char* key, bool& out) {
    if (const json* v = find(key)) {
      require(v->is_boolean(), "invalid-config", where(key) + ": expected boolean");
      out = v->get<bool>();
    }
  }

  void string(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      require(v->is_string(), "invalid-config", where(key) + ": expected string");
      out = v->get<std::string>();
    }
  }

  void numbers(const char* key, Vector& out) {
    if (const json* v = find(key)) {
      require(v->is_array(), "invalid-config", where(key) + ": expected array of numbers");
      out.clear();
      for (const auto& x : *v) {
        require(x.is_number(), "invalid-config", where(key) + ": expected array of numbers");
        out.push_back(x.get<double>());
      }
    }
  }

  template <typename Container>
  void counts(const char* key, Container& out) {
    if (const json* v = find(key)) {
      require(v->is_array(), "invalid-config", where(key) + ": expected array of integers");
      out.clear();
      for (const auto& x : *v) {
        require(x.is_number_unsigned(), "invalid-config", where(key) + ": expected array of integers >= 0");
        out.insert(out.end(), x.get<std::size_t>());
      }
    }
  }

  // Runs `fn(ObjectReader&)` on a nested object when present.
  template <typename Fn>
  void object(const char* key, Fn&& fn) {
    if (const json* v = find(key)) {
      ObjectReader sub(*v, where(key));
      fn(sub);
      sub.finish();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      (void)v;
      require(std::find(seen_.begin(), seen_.end(), k) != seen_.end(), "invalid-config",
              where(k) + ": unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline void read_filter(ObjectReader& r, FilterSpec& f) {
  r.numbers("b", f.b);
  r.numbers("a", f.a);
}

inline void read_kan_init(ObjectReader& r, KanInit& k) {
  r.integer("degree", k.degree);
  r.integer("grid_intervals", k.grid_intervals);
  r.number("domain_lo", k.domain_lo);
  r.number("domain_hi", k.domain_hi);
  r.number("coeff_scale", k.coeff_scale);
  r.number("w_b", k.w_b);
  r.number("w_s", k.w_s);
  r.number("w_b_out", k.w_b_out);
}

inline void read_linear_init(ObjectReader& r, LinearInit& l) {
  std::string kind = l.kind == LinearInit::Kind::oscillator ? "oscillator" : "scaled-identity";
  r.string("kind", kind);
  require(kind == "oscillator" || kind == "scaled-identity", "invalid-config",
          r.where("kind") + ": expected 'oscillator' or 'scaled-identity'");
  l.kind = kind == "oscillator" ? LinearInit::Kind::oscillator : LinearInit::Kind::scaled_identity;
  r.number("radius", l.radius);
  r.number("perturbation", l.perturbation);
  r.number("angle", l.angle);
  r.number("b_scale", l.b_scale);
  r.number("c_scale", l.c_scale);
}

inline void read_train(ObjectReader& r, TrainConfig& t) {
  r.number("lambda_l1", t.lambda_l1);
  r.number("lambda_l2", t.lambda_l2);
  r.number("lr0", t.lr0);
  r.number("lr_decay", t.lr_decay);
  r.integer("batch_size", t.batch_size);
  r.integer("epochs", t.epochs);
  r.counts("grid_update_epochs", t.grid_update_epochs);
  r.number("validation_fraction", t.validation_fraction);
  r.object("adamw", [&](ObjectReader& a) {
    a.number("beta1", t.adamw.beta1);
    a.number("beta2", t.adamw.beta2);
    a.number("epsilon", t.adamw.epsilon);
    a.number("weight_decay", t.adamw.weight_decay);
  });
}

}  // namespace detail

inline json config_to_json(const ExperimentConfig& c) {
  const DataSpec& d = c.data;
  const ModelSpec& m = c.model;
  return json{
      {"schema_version", c.schema_version},
      {"preset", c.preset},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"n_train", d.n_train},
        {"n_test", d.n_test},
        {"sample_rate", d.sample_rate},
        {"rate_factor", d.rate_factor},
        {"band_fraction", d.band_fraction},
        {"train_amplitude", d.train_amplitude},
        {"test_amp_start", d.test_amp_start},
        {"test_amp_end", d.test_amp_end},
        {"train_signal", d.train_signal},
        {"noise_std", d.noise_std},
        {"duffing", {{"m", d.duffing.m}, {"c", d.duffing.c}, {"k", d.duffing.k}, {"alpha", d.duffing.alpha}}},
        {"rk4_substeps", d.rk4_substeps},
        {"wh",
         {{"front", detail::filter_to_json(d.wh.front)},
          {"back", detail::filter_to_json(d.wh.back)},
          {"diode",
           {{"knee", d.wh.diode.knee}, {"slope", d.wh.diode.slope}, {"softness", d.wh.diode.softness}}}}},
        {"train_csv", d.train_csv},
        {"test_csv", d.test_csv}}},
      {"model",
       {{"kind", m.kind},
        {"n_x", m.n_x},
        {"kan_f_hidden", m.kan_f_hidden},
        {"kan_f_enabled", m.kan_f_enabled},
        {"kan_g_enabled", m.kan_g_enabled},
        {"kan_g_hidden", m.kan_g_hidden},
        {"kan", detail::kan_init_to_json(m.kan)},
        {"linear", detail::linear_init_to_json(m.linear)},
        {"cascade_hidden", m.cascade_hidden},
        {"front", detail::filter_to_json(m.front)},
        {"back", detail::filter_to_json(m.back)}}},
      {"train", detail::train_to_json(c.train)},
      {"bla", {{"n_x", c.bla.n_x}, {"init_from_filters", c.bla.init_from_filters}, {"train", detail::train_to_json(c.bla.train)}}},
      {"slice", {{"degree", c.slice.degree}, {"varied", c.slice.varied}, {"points", c.slice.points}}}};
}

// Applies the fields present in `j` on top of `base`.
inline ExperimentConfig apply_config_json(const json& j, ExperimentConfig c) {
  detail::ObjectReader r(j, "");
  if (const json* v = r.find("schema_version")) {
    require(v->is_number_integer() && v->get<int>() == kSchemaVersion, "invalid-config",
            "schema_version: unsupported version " + v->dump());
  } else {
    fail("invalid-config", "schema_version: missing");
  }
  r.find("preset");
  r.integer("seed", c.seed);
  r.string("output_dir", c.output_dir);
  r.object("data", [&](detail::ObjectReader& d) {
    DataSpec& s = c.data;
    d.integer("n_train", s.n_train);
    d.integer("n_test", s.n_test);
    d.number("sample_rate", s.sample_rate);
    d.number("rate_factor", s.rate_factor);
    d.number("band_fraction", s.band_fraction);
    d.number("train_amplitude", s.train_amplitude);
    d.number("test_amp_start", s.test_amp_start);
    d.number("test_amp_end", s.test_amp_end);
    d.string("train_signal", s.train_signal);
    d.number("noise_std", s.noise_std);
    d.object("duffing", [&](detail::ObjectReader& p) {
      p.number("m", s.duffing.m);
      p.number("c", s.duffing.c);
      p.number("k", s.duffing.k);
      p.number("alpha", s.duffing.alpha);
    });
    d.integer("rk4_substeps", s.rk4_substeps);
    d.object("wh", [&](detail::ObjectReader& w) {
      w.object("front", [&](detail::ObjectReader& f) { detail::read_filter(f, s.wh.front); });
      w.object("back", [&](detail::ObjectReader& f) { detail::read_filter(f, s.wh.back); });
      w.object("diode", [&](detail::ObjectReader& p) {
        p.number("knee", s.wh.diode.knee);
        p.number("slope", s.wh.diode.slope);
        p.number("softness", s.wh.diode.softness);
      });
    });
    d.string("train_csv", s.train_csv);
    d.string("test_csv", s.test_csv);
  });
  r.object("model", [&](detail::ObjectReader& m) {
    ModelSpec& s = c.model;
    m.string("kind", s.kind);
    m.integer("n_x", s.n_x);
    m.counts("kan_f_hidden", s.kan_f_hidden);
    m.boolean("kan_f_enabled", s.kan_f_enabled);
    m.boolean("kan_g_enabled", s.kan_g_enabled);
    m.counts("kan_g_hidden", s.kan_g_hidden);
    m.object("kan", [&](detail::ObjectReader& k) { detail::read_kan_init(k, s.kan); });
    m.object("linear", [&](detail::ObjectReader& l) { detail::read_linear_init(l, s.linear); });
    m.integer("cascade_hidden", s.cascade_hidden);
    m.object("front", [&](detail::ObjectReader& f) { detail::read_filter(f, s.front); });
    m.object("back", [&](detail::ObjectReader& f) { detail::read_filter(f, s.back); });
  });
  r.object("train", [&](detail::ObjectReader& t) { detail::read_train(t, c.train); });
  r.object("bla", [&](detail::ObjectReader& b) {
    b.integer("n_x", c.bla.n_x);
    b.boolean("init_from_filters", c.bla.init_from_filters);
    b.object("train", [&](detail::ObjectReader& t) { detail::read_train(t, c.bla.train); });
  });
  r.object("slice", [&](detail::ObjectReader& s) {
    s.integer("degree", c.slice.degree);
    s.integer("varied", c.slice.varied);
    s.integer("points", c.slice.points);
  });
  r.finish();
  c.train.seed = c.seed;
  c.bla.train.seed = c.seed;
  return c;
}

// Preset named by `preset_override`, else by the file's "preset" key, else
// silverbox-desk; then the file's fields on top.
inline ExperimentConfig config_from_json(const json& j, const std::string& preset_override = {}) {
  require(j.is_object(), "invalid-config", "config: expected JSON object");
  std::string preset = "silverbox-desk";
  if (j.contains("preset")) {
    require(j.at("preset").is_string(), "invalid-config", "preset: expected string");
    preset = j.at("preset").get<std::string>();
  }
  if (!preset_override.empty()) preset = preset_override;
  return apply_config_json(j, preset_config(preset));
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::string& preset_override = {}) {
  return config_from_json(parse_json_file(path, "invalid-config"), preset_override);
}

inline std::string config_hash(const ExperimentConfig& c) {
  return "fnv1a64:" + hex64(fnv1a64(config_to_json(c).dump()));
}

// Cross-field checks that the JSON reader cannot express.
inline void validate_config(const ExperimentConfig& c) {
  require(c.model.kind == "sskan" || c.model.kind == "cascade", "invalid-config",
          "model.kind: expected 'sskan' or 'cascade'");
  require(c.model.n_x >= 1, "invalid-config", "model.n_x: must be >= 1");
  require(c.bla.n_x >= 1, "invalid-config", "bla.n_x: must be >= 1");
  require(c.data.train_signal == "multisine" || c.data.train_signal == "filtered-noise" ||
              c.data.train_signal == "csv",
          "invalid-config", "data.train_signal: expected 'multisine', 'filtered-noise' or 'csv'");
  require(c.slice.degree >= 1, "invalid-config", "slice.degree: must be >= 1");
  require(c.slice.points >= 4, "invalid-config", "slice.points: must be >= 4");
  require(c.model.kan.degree >= 1 && c.model.kan.degree <= kMaxSplineDegree, "invalid-config",
          "model.kan.degree: must lie in [1, " + std::to_string(kMaxSplineDegree) + "]");
  require(c.model.kan.grid_intervals >= 1, "invalid-config", "model.kan.grid_intervals: must be >= 1");
  require(c.model.kan.domain_hi > c.model.kan.domain_lo, "invalid-config",
          "model.kan: domain_hi must exceed domain_lo");
  for (std::size_t w : c.model.kan_f_hidden) require(w >= 1, "invalid-config", "model.kan_f_hidden: widths must be >= 1");
  for (std::size_t w : c.model.kan_g_hidden) require(w >= 1, "invalid-config", "model.kan_g_hidden: widths must be >= 1");
  try {
    c.data.duffing.validate();
  } catch (const Error& e) {
    fail("invalid-config", std::string("data.duffing: ") + e.what());
  }
  try {
    c.data.wh.validate();
  } catch (const Error& e) {
    fail("invalid-config", std::string("data.wh: ") + e.what());
  }
  if (c.is_wh()) {
    try {
      validate_filter(c.model.front);
      validate_filter(c.model.back);
    } catch (const Error& e) {
      fail(e.code(), std::string("model filters: ") + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Training report CSV: epoch, loss, train_rmse, val_rmse, lr (normalized units).

inline std::string report_csv(const TrainReport& r) {
  std::string s = "epoch,loss,train_rmse,val_rmse,lr\n";
  char buf[160];
  for (const auto& e : r.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.loss, e.train_rmse, e.val_rmse, e.lr);
    s += buf;
  }
  return s;
}

}  // namespace sskan
