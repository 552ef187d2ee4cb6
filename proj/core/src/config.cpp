#include "sparseattn/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "sparseattn/archive.hpp"
#include "sparseattn/errors.hpp"

namespace sparseattn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t as_size(const std::string& v, const std::string& key) {
  long n = 0;
  try {
    n = parse_long(v, key);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (n < 0) throw ConfigError(key + " must be >= 0");
  return static_cast<std::size_t>(n);
}

long as_long(const std::string& v, const std::string& key) {
  try {
    return parse_long(v, key);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

double as_double(const std::string& v, const std::string& key) {
  try {
    return parse_double(v, key);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

bool as_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::vector<double> as_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(as_double(trim(item), key));
  return out;
}

std::string list_str(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, member)                                                    \
  Field {                                                                           \
    name, [](RunConfig& c, const std::string& v) { c.member = as_size(v, name); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                 \
  }
#define LONG_FIELD(name, member)                                                    \
  Field {                                                                           \
    name, [](RunConfig& c, const std::string& v) { c.member = as_long(v, name); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                 \
  }
#define DOUBLE_FIELD(name, member)                                                    \
  Field {                                                                             \
    name, [](RunConfig& c, const std::string& v) { c.member = as_double(v, name); }, \
        [](const RunConfig& c) { return format_double(c.member); }                    \
  }
#define BOOL_FIELD(name, member)                                                    \
  Field {                                                                           \
    name, [](RunConfig& c, const std::string& v) { c.member = as_bool(v, name); }, \
        [](const RunConfig& c) { return bool_str(c.member); }                       \
  }
#define STRING_FIELD(name, member)                                       \
  Field {                                                                \
    name, [](RunConfig& c, const std::string& v) { c.member = v; },     \
        [](const RunConfig& c) { return c.member; }                      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"model",
            [](RunConfig& c, const std::string& v) {
              if (v != "sparse" && v != "baseline") {
                throw ConfigError("model must be 'sparse' or 'baseline', got '" + v + "'");
              }
              c.model_kind = v;
            },
            [](const RunConfig& c) { return c.model_kind; }},
      BOOL_FIELD("synthetic", synthetic),
      STRING_FIELD("dataset", dataset),
      STRING_FIELD("manifest", manifest),
      STRING_FIELD("out", out),
      Field{"seed",
            [](RunConfig& c, const std::string& v) {
              c.seed = static_cast<std::uint64_t>(as_size(v, "seed"));
            },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      DOUBLE_FIELD("train-fraction", train_fraction),
      SIZE_FIELD("image-size", synth.image_size),
      SIZE_FIELD("classes", synth.class_count),
      DOUBLE_FIELD("noise-sigma", synth.noise_sigma),
      SIZE_FIELD("samples-per-class", synth.samples_per_class),
      SIZE_FIELD("coarse-channels", model.coarse_channels),
      SIZE_FIELD("embed-hidden", model.embed_hidden),
      SIZE_FIELD("dim", model.dim),
      SIZE_FIELD("heads", model.heads),
      SIZE_FIELD("hidden", model.hidden),
      SIZE_FIELD("blocks", model.blocks),
      DOUBLE_FIELD("fine-epsilon", model.fine_epsilon),
      LONG_FIELD("k-init", model.k.k_init),
      LONG_FIELD("k-min", model.k.k_min),
      LONG_FIELD("k-max", model.k.k_max),
      LONG_FIELD("k-step-up", model.k.step_up),
      LONG_FIELD("k-step-down", model.k.step_down),
      DOUBLE_FIELD("ema-beta", model.k.beta),
      DOUBLE_FIELD("k-alpha", model.k.alpha),
      SIZE_FIELD("epochs", train.epochs),
      SIZE_FIELD("batch", train.batch_size),
      DOUBLE_FIELD("lr", train.learning_rate),
      DOUBLE_FIELD("wd", train.weight_decay),
      DOUBLE_FIELD("plateau-factor", train.plateau_factor),
      SIZE_FIELD("patience", train.plateau_patience),
      DOUBLE_FIELD("val-fraction", train.validation_fraction),
      BOOL_FIELD("inverse-frequency-alpha", train.inverse_frequency_alpha),
      DOUBLE_FIELD("gamma", train.loss.gamma),
      Field{"alpha",
            [](RunConfig& c, const std::string& v) {
              c.train.loss.alpha_per_class = as_list(v, "alpha");
            },
            [](const RunConfig& c) { return list_str(c.train.loss.alpha_per_class); }},
      DOUBLE_FIELD("lambda-contrast", train.loss.lambda_contrast),
      DOUBLE_FIELD("lambda-distill", train.loss.lambda_distill),
      DOUBLE_FIELD("tau", train.loss.tau),
      DOUBLE_FIELD("emphasis", train.loss.emphasis),
  };
  return table;
}

#undef SIZE_FIELD
#undef LONG_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train-fraction must lie in (0, 1)");
  }
  if (synth.image_size < 8) throw ConfigError("image-size must be >= 8");
  if (synth.class_count < 2 || synth.class_count > 3) {
    throw ConfigError("synthetic data supports 2 or 3 classes");
  }
  if (!(synth.noise_sigma >= 0.0)) throw ConfigError("noise-sigma must be >= 0");
  if (synth.samples_per_class == 0) throw ConfigError("samples-per-class must be >= 1");
  if (model.dim == 0 || model.heads == 0) throw ConfigError("dim and heads must be >= 1");
  if (model.dim % model.heads != 0) throw ConfigError("dim must be divisible by heads");
  if (model.hidden == 0 || model.embed_hidden == 0 || model.coarse_channels == 0) {
    throw ConfigError("layer widths must be >= 1");
  }
  if (model.k.k_init < 1 || model.k.k_min < 1) throw ConfigError("k-init and k-min must be >= 1");
  if (model.k.k_max != 0 && model.k.k_max < model.k.k_min) {
    throw ConfigError("k-max must be 0 (full image) or >= k-min");
  }
  if (model.k.step_up < 0 || model.k.step_down < 0) throw ConfigError("k steps must be >= 0");
  if (!(model.k.beta >= 0.0 && model.k.beta <= 1.0)) throw ConfigError("ema-beta must lie in [0, 1]");
  if (!(model.k.alpha >= 0.0 && model.k.alpha <= 1.0)) throw ConfigError("k-alpha must lie in [0, 1]");
  if (!train.loss.alpha_per_class.empty() && train.loss.alpha_per_class.size() != model.classes) {
    throw ConfigError("alpha needs one weight per class");
  }
  train.validate();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!find_field(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + key + "'");
  f->set(cfg, value);
}

RunConfig resolve_config(const std::map<std::string, std::string>& file_kv,
                         const std::map<std::string, std::string>& flag_kv,
                         std::optional<std::string> env_seed) {
  RunConfig cfg;
  for (const auto& [k, v] : file_kv) apply_setting(cfg, k, v);
  for (const auto& [k, v] : flag_kv) apply_setting(cfg, k, v);
  if (!file_kv.count("seed") && !flag_kv.count("seed") && env_seed && !env_seed->empty()) {
    apply_setting(cfg, "seed", *env_seed);
  }
  cfg.model.height = cfg.synth.image_size;
  cfg.model.width = cfg.synth.image_size;
  cfg.model.classes = cfg.synth.class_count;
  cfg.model.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

std::string format_config(const RunConfig& cfg) {
  std::string s;
  for (const Field& f : fields()) s += f.key + "=" + f.get(cfg) + "\n";
  return s;
}

}  // namespace sparseattn
