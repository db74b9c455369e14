#include "vsocc/config.hpp"

#include "vsocc/io.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>

namespace vsocc {

namespace {

struct Value {
  enum class Kind { Int, Float, Bool, Str, Array };
  Kind kind = Kind::Int;
  i64 i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;
  std::vector<Value> arr;
  int line = 0;
};

const char* kind_name(Value::Kind k) {
  switch (k) {
    case Value::Kind::Int: return "integer";
    case Value::Kind::Float: return "float";
    case Value::Kind::Bool: return "boolean";
    case Value::Kind::Str: return "string";
    case Value::Kind::Array: return "array";
  }
  return "?";
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

void skip_ws(const char*& p) {
  while (*p == ' ' || *p == '\t') ++p;
}

bool ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

Value parse_value(const char*& p, int line);

Value parse_scalar(const char*& p, int line) {
  const char* start = p;
  while (*p && *p != ',' && *p != ']' && *p != ' ' && *p != '\t') ++p;
  std::string tok(start, p);
  if (tok.empty()) fail(line, "expected a value");
  Value v;
  v.line = line;
  if (tok == "true" || tok == "false") {
    v.kind = Value::Kind::Bool;
    v.b = tok == "true";
    return v;
  }
  const bool floaty = tok.find('.') != std::string::npos || tok.find('e') != std::string::npos ||
                      tok.find('E') != std::string::npos || tok.find("inf") != std::string::npos ||
                      tok.find("nan") != std::string::npos;
  errno = 0;
  char* end = nullptr;
  if (floaty) {
    v.kind = Value::Kind::Float;
    v.f = std::strtod(tok.c_str(), &end);
  } else {
    v.kind = Value::Kind::Int;
    v.i = std::strtoll(tok.c_str(), &end, 10);
  }
  if (end != tok.c_str() + tok.size() || errno == ERANGE) {
    fail(line, "cannot parse value \"" + tok + "\"");
  }
  return v;
}

Value parse_value(const char*& p, int line) {
  skip_ws(p);
  Value v;
  v.line = line;
  if (*p == '[') {
    ++p;
    v.kind = Value::Kind::Array;
    skip_ws(p);
    if (*p == ']') {
      ++p;
      return v;
    }
    while (true) {
      v.arr.push_back(parse_value(p, line));
      skip_ws(p);
      if (*p == ',') {
        ++p;
        skip_ws(p);
        if (*p == ']') {  // tolerate a trailing comma
          ++p;
          return v;
        }
        continue;
      }
      if (*p == ']') {
        ++p;
        return v;
      }
      fail(line, "expected ',' or ']' in array");
    }
  }
  if (*p == '"') {
    ++p;
    v.kind = Value::Kind::Str;
    while (*p && *p != '"') {
      if (*p == '\\') {
        ++p;
        if (*p == '"' || *p == '\\') {
          v.s.push_back(*p);
        } else {
          fail(line, "unsupported escape in string");
        }
      } else {
        v.s.push_back(*p);
      }
      ++p;
    }
    if (*p != '"') fail(line, "unterminated string");
    ++p;
    return v;
  }
  return parse_scalar(p, line);
}

// Flat "section.key" -> value map with consumption tracking, so that any key
// the mapping below never asks for is reported as unknown.
class KeyTable {
 public:
  static KeyTable parse(const std::string& text) {
    KeyTable t;
    std::string section;
    int line = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string raw = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line;

      // strip comment (respecting quotes) and surrounding whitespace
      bool in_str = false;
      for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '"' && (i == 0 || raw[i - 1] != '\\')) in_str = !in_str;
        if (raw[i] == '#' && !in_str) {
          raw.resize(i);
          break;
        }
      }
      std::size_t b = raw.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      std::size_t e = raw.find_last_not_of(" \t\r");
      std::string ln = raw.substr(b, e - b + 1);

      if (ln.front() == '[') {
        if (ln.back() != ']' || ln.size() < 3) fail(line, "malformed section header");
        section = ln.substr(1, ln.size() - 2);
        for (char c : section) {
          if (!ident_char(c)) fail(line, "malformed section name \"" + section + "\"");
        }
        // An empty unknown section would otherwise slip past the unconsumed-key
        // check, so reject bad names here.
        if (section != "model" && section != "train" && section != "scene" &&
            section != "loss") {
          fail(line, "unknown section \"" + section + "\"");
        }
        continue;
      }
      const std::size_t eq = ln.find('=');
      if (eq == std::string::npos) fail(line, "expected key = value");
      std::string key = ln.substr(0, eq);
      while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
      if (key.empty()) fail(line, "missing key before '='");
      for (char c : key) {
        if (!ident_char(c)) fail(line, "malformed key \"" + key + "\"");
      }
      if (section.empty()) fail(line, "key \"" + key + "\" appears before any [section]");

      const std::string rhs = ln.substr(eq + 1);
      const char* p = rhs.c_str();
      Value v = parse_value(p, line);
      skip_ws(p);
      if (*p != '\0') fail(line, "unexpected text after value");

      const std::string full = section + "." + key;
      if (!t.values_.emplace(full, std::move(v)).second) {
        fail(line, "duplicate key \"" + full + "\"");
      }
    }
    return t;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const Value* get(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    consumed_.insert(key);
    return &it->second;
  }

  i64 geti(const std::string& key, i64 dflt) {
    const Value* v = get(key);
    if (!v) return dflt;
    if (v->kind != Value::Kind::Int) {
      fail(v->line, key + " wants an integer, got " + kind_name(v->kind));
    }
    return v->i;
  }

  std::uint64_t getu(const std::string& key, std::uint64_t dflt) {
    const Value* v = get(key);
    if (!v) return dflt;
    if (v->kind != Value::Kind::Int || v->i < 0) {
      fail(v->line, key + " wants a non-negative integer");
    }
    return static_cast<std::uint64_t>(v->i);
  }

  double getf(const std::string& key, double dflt) {
    const Value* v = get(key);
    if (!v) return dflt;
    if (v->kind == Value::Kind::Int) return static_cast<double>(v->i);
    if (v->kind != Value::Kind::Float) {
      fail(v->line, key + " wants a number, got " + kind_name(v->kind));
    }
    return v->f;
  }

  std::string gets(const std::string& key, const std::string& dflt) {
    const Value* v = get(key);
    if (!v) return dflt;
    if (v->kind != Value::Kind::Str) {
      fail(v->line, key + " wants a string, got " + kind_name(v->kind));
    }
    return v->s;
  }

  std::vector<Real> get_farr(const std::string& key, std::vector<Real> dflt) {
    const Value* v = get(key);
    if (!v) return dflt;
    if (v->kind != Value::Kind::Array) {
      fail(v->line, key + " wants an array, got " + kind_name(v->kind));
    }
    std::vector<Real> out;
    for (const Value& e : v->arr) {
      if (e.kind == Value::Kind::Int) {
        out.push_back(static_cast<Real>(e.i));
      } else if (e.kind == Value::Kind::Float) {
        out.push_back(e.f);
      } else {
        fail(e.line, key + " wants numeric elements");
      }
    }
    return out;
  }

  std::vector<std::uint64_t> get_uarr(const std::string& key, std::vector<std::uint64_t> dflt) {
    const Value* v = get(key);
    if (!v) return dflt;
    if (v->kind != Value::Kind::Array) {
      fail(v->line, key + " wants an array, got " + kind_name(v->kind));
    }
    std::vector<std::uint64_t> out;
    for (const Value& e : v->arr) {
      if (e.kind != Value::Kind::Int || e.i < 0) {
        fail(e.line, key + " wants non-negative integer elements");
      }
      out.push_back(static_cast<std::uint64_t>(e.i));
    }
    return out;
  }

  std::vector<std::pair<double, double>> get_pairs(const std::string& key) {
    const Value* v = get(key);
    if (!v) return {};
    if (v->kind != Value::Kind::Array) {
      fail(v->line, key + " wants an array of [lo, hi] pairs");
    }
    std::vector<std::pair<double, double>> out;
    for (const Value& e : v->arr) {
      if (e.kind != Value::Kind::Array || e.arr.size() != 2) {
        fail(e.line, key + " wants [lo, hi] pairs");
      }
      double lohi[2];
      for (int k = 0; k < 2; ++k) {
        const Value& n = e.arr[static_cast<std::size_t>(k)];
        if (n.kind == Value::Kind::Int) {
          lohi[k] = static_cast<double>(n.i);
        } else if (n.kind == Value::Kind::Float) {
          lohi[k] = n.f;
        } else {
          fail(n.line, key + " wants numeric bounds");
        }
      }
      out.emplace_back(lohi[0], lohi[1]);
    }
    return out;
  }

  // Every stored key must have been consumed by now.
  void finish() const {
    std::string unknown;
    for (const auto& [key, v] : values_) {
      if (consumed_.count(key) == 0) {
        if (!unknown.empty()) unknown += ", ";
        unknown += key;
      }
    }
    if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
  }

 private:
  std::map<std::string, Value> values_;
  std::set<std::string> consumed_;
};

std::string fmt_f(double v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_farr(const std::vector<Real>& a) {
  std::string s = "[";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) s += ", ";
    s += fmt_f(a[i]);
  }
  return s + "]";
}

std::string fmt_uarr(const std::vector<std::uint64_t>& a) {
  std::string s = "[";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(a[i]);
  }
  return s + "]";
}

const char* partition_kind_str(PartitionSpec::Kind k) {
  switch (k) {
    case PartitionSpec::Kind::Default: return "default";
    case PartitionSpec::Kind::Uniform: return "uniform";
    case PartitionSpec::Kind::Explicit: return "explicit";
  }
  return "?";
}

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig config_from_text(const std::string& text) {
  KeyTable t = KeyTable::parse(text);
  ExperimentConfig c;

  ModelConfig& m = c.model;
  m.channels = t.geti("model.channels", m.channels);
  m.classes = t.geti("model.classes", m.classes);
  m.reduction = t.geti("model.reduction", m.reduction);
  m.encoder_depth = t.geti("model.encoder_depth", m.encoder_depth);
  {
    const std::string kind = t.gets("model.partition", "default");
    if (kind == "default") {
      m.partition.kind = PartitionSpec::Kind::Default;
    } else if (kind == "uniform") {
      m.partition.kind = PartitionSpec::Kind::Uniform;
    } else if (kind == "explicit") {
      m.partition.kind = PartitionSpec::Kind::Explicit;
    } else {
      throw ConfigError("model.partition must be default, uniform, or explicit, got \"" + kind +
                        "\"");
    }
    m.partition.uniform_n = t.geti("model.partition_slices", m.partition.uniform_n);
    if (m.partition.kind == PartitionSpec::Kind::Explicit) {
      m.partition.intervals = t.get_pairs("model.partition_intervals");
      if (m.partition.intervals.empty()) {
        throw ConfigError("model.partition = \"explicit\" needs model.partition_intervals");
      }
    } else if (t.has("model.partition_intervals")) {
      throw ConfigError(
          "model.partition_intervals is only valid with model.partition = \"explicit\"");
    }
  }
  m.vsf_mode = vsf_mode_from_string(t.gets("model.vsf_mode", to_string(m.vsf_mode)));
  m.attention = attention_variant_from_string(t.gets("model.attention", to_string(m.attention)));
  m.seed = t.getu("model.seed", m.seed);

  TrainConfig& tr = c.train;
  tr.steps = t.geti("train.steps", tr.steps);
  tr.batch_size = t.geti("train.batch_size", tr.batch_size);
  tr.learning_rate = t.getf("train.learning_rate", tr.learning_rate);
  tr.optimizer = t.gets("train.optimizer", tr.optimizer);
  tr.momentum = t.getf("train.momentum", tr.momentum);
  tr.clip_norm = t.getf("train.clip_norm", tr.clip_norm);
  tr.eval_every = t.geti("train.eval_every", tr.eval_every);
  tr.n_train = t.geti("train.n_train", tr.n_train);
  tr.n_val = t.geti("train.n_val", tr.n_val);
  tr.data_seed = t.getu("train.data_seed", tr.data_seed);
  tr.seeds = t.get_uarr("train.seeds", tr.seeds);

  SceneConfig& sc = c.scene;
  sc.x = t.geti("scene.x", sc.x);
  sc.y = t.geti("scene.y", sc.y);
  sc.z = t.geti("scene.z", sc.z);
  sc.z_min_m = t.getf("scene.z_min_m", sc.z_min_m);
  sc.z_max_m = t.getf("scene.z_max_m", sc.z_max_m);
  sc.channels = t.geti("scene.channels", sc.channels);
  sc.sigma_cam = t.getf("scene.sigma_cam", sc.sigma_cam);
  sc.sigma_lidar = t.getf("scene.sigma_lidar", sc.sigma_lidar);
  sc.sigma_distractor = t.getf("scene.sigma_distractor", sc.sigma_distractor);
  sc.max_place_retries = t.geti("scene.max_place_retries", sc.max_place_retries);

  LossConfig& lo = c.loss;
  lo.gamma = t.getf("loss.gamma", lo.gamma);
  lo.alpha = t.get_farr("loss.alpha", lo.alpha);
  lo.w_focal = t.getf("loss.w_focal", lo.w_focal);
  lo.w_lovasz = t.getf("loss.w_lovasz", lo.w_lovasz);
  lo.w_geo = t.getf("loss.w_geo", lo.w_geo);
  lo.w_sem = t.getf("loss.w_sem", lo.w_sem);

  t.finish();
  validate_config(c);
  return c;
}

ExperimentConfig config_from_file(const std::string& path) {
  return config_from_text(read_file_text(path));
}

std::string config_to_text(const ExperimentConfig& c) {
  std::string s;
  const ModelConfig& m = c.model;
  s += "[model]\n";
  s += "channels = " + std::to_string(m.channels) + "\n";
  s += "classes = " + std::to_string(m.classes) + "\n";
  s += "reduction = " + std::to_string(m.reduction) + "\n";
  s += "encoder_depth = " + std::to_string(m.encoder_depth) + "\n";
  s += std::string("partition = \"") + partition_kind_str(m.partition.kind) + "\"\n";
  s += "partition_slices = " + std::to_string(m.partition.uniform_n) + "\n";
  if (m.partition.kind == PartitionSpec::Kind::Explicit) {
    s += "partition_intervals = [";
    for (std::size_t i = 0; i < m.partition.intervals.size(); ++i) {
      if (i) s += ", ";
      s += "[" + fmt_f(m.partition.intervals[i].first) + ", " +
           fmt_f(m.partition.intervals[i].second) + "]";
    }
    s += "]\n";
  }
  s += std::string("vsf_mode = \"") + to_string(m.vsf_mode) + "\"\n";
  s += std::string("attention = \"") + to_string(m.attention) + "\"\n";
  s += "seed = " + std::to_string(m.seed) + "\n";

  const TrainConfig& tr = c.train;
  s += "\n[train]\n";
  s += "steps = " + std::to_string(tr.steps) + "\n";
  s += "batch_size = " + std::to_string(tr.batch_size) + "\n";
  s += "learning_rate = " + fmt_f(tr.learning_rate) + "\n";
  s += "optimizer = \"" + tr.optimizer + "\"\n";
  s += "momentum = " + fmt_f(tr.momentum) + "\n";
  s += "clip_norm = " + fmt_f(tr.clip_norm) + "\n";
  s += "eval_every = " + std::to_string(tr.eval_every) + "\n";
  s += "n_train = " + std::to_string(tr.n_train) + "\n";
  s += "n_val = " + std::to_string(tr.n_val) + "\n";
  s += "data_seed = " + std::to_string(tr.data_seed) + "\n";
  s += "seeds = " + fmt_uarr(tr.seeds) + "\n";

  const SceneConfig& sc = c.scene;
  s += "\n[scene]\n";
  s += "x = " + std::to_string(sc.x) + "\n";
  s += "y = " + std::to_string(sc.y) + "\n";
  s += "z = " + std::to_string(sc.z) + "\n";
  s += "z_min_m = " + fmt_f(sc.z_min_m) + "\n";
  s += "z_max_m = " + fmt_f(sc.z_max_m) + "\n";
  s += "channels = " + std::to_string(sc.channels) + "\n";
  s += "sigma_cam = " + fmt_f(sc.sigma_cam) + "\n";
  s += "sigma_lidar = " + fmt_f(sc.sigma_lidar) + "\n";
  s += "sigma_distractor = " + fmt_f(sc.sigma_distractor) + "\n";
  s += "max_place_retries = " + std::to_string(sc.max_place_retries) + "\n";

  const LossConfig& lo = c.loss;
  s += "\n[loss]\n";
  s += "gamma = " + fmt_f(lo.gamma) + "\n";
  s += "alpha = " + fmt_farr(lo.alpha) + "\n";
  s += "w_focal = " + fmt_f(lo.w_focal) + "\n";
  s += "w_lovasz = " + fmt_f(lo.w_lovasz) + "\n";
  s += "w_geo = " + fmt_f(lo.w_geo) + "\n";
  s += "w_sem = " + fmt_f(lo.w_sem) + "\n";
  return s;
}

void validate_config(const ExperimentConfig& c) {
  const ModelConfig& m = c.model;
  if (m.channels <= 0) throw ConfigError("model.channels must be positive");
  if (m.classes < 2 || m.classes > 256) {
    throw ConfigError("model.classes must be in [2,256], got " + std::to_string(m.classes));
  }
  if (m.encoder_depth < 1) throw ConfigError("model.encoder_depth must be >= 1");
  if (m.reduction <= 0 || m.channels % m.reduction != 0) {
    throw ConfigError("model.channels " + std::to_string(m.channels) +
                      " not divisible by model.reduction " + std::to_string(m.reduction));
  }
  validate(c.scene);
  // Also proves the partition tiles the scene's z range cleanly.
  (void)m.partition.build(c.scene.z, c.scene.z_min_m, c.scene.z_max_m);

  const TrainConfig& tr = c.train;
  if (tr.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (tr.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(tr.learning_rate > 0.0) || !std::isfinite(tr.learning_rate)) {
    throw ConfigError("train.learning_rate must be positive and finite");
  }
  if (tr.optimizer != "gd" && tr.optimizer != "momentum") {
    throw ConfigError("train.optimizer must be gd or momentum, got \"" + tr.optimizer + "\"");
  }
  if (!(tr.momentum >= 0.0) || !(tr.momentum < 1.0)) {
    throw ConfigError("train.momentum must be in [0,1)");
  }
  if (!(tr.clip_norm >= 0.0) || !std::isfinite(tr.clip_norm)) {
    throw ConfigError("train.clip_norm must be >= 0 and finite");
  }
  if (tr.eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
  if (tr.n_train < 1) throw ConfigError("train.n_train must be >= 1");
  if (tr.n_val < 1) throw ConfigError("train.n_val must be >= 1");

  const LossConfig& lo = c.loss;
  if (!(lo.gamma >= 0.0) || !std::isfinite(lo.gamma)) {
    throw ConfigError("loss.gamma must be >= 0 and finite");
  }
  if (!lo.alpha.empty() && static_cast<i64>(lo.alpha.size()) != m.classes) {
    throw ConfigError("loss.alpha needs one weight per class (" + std::to_string(m.classes) +
                      "), got " + std::to_string(lo.alpha.size()));
  }
  for (Real a : lo.alpha) {
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw ConfigError("loss.alpha entries must be >= 0 and finite");
    }
  }
  for (Real w : {lo.w_focal, lo.w_lovasz, lo.w_geo, lo.w_sem}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("loss weights must be >= 0 and finite");
    }
  }
}

}  // namespace vsocc
