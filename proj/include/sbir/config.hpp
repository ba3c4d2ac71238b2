#pragma once

// Flat key=value experiment configuration.
//
// Precedence, lowest first: built-in defaults, config file, SBIR_<KEY>
// environment variables, command-line flags. Unknown keys are errors in
// every layer. Lines starting with '#' and blank lines are ignored.

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbir/synthetic.hpp"
#include "sbir/trainer.hpp"

extern char** environ;

namespace sbir {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  TrainConfig train;

  // gen-data
  int n_labeled = 200;
  int n_unlabeled = 2000;
  int n_test = 200;
  ShapeSpec shape;

  // paths, relative to the working directory
  std::string data_dir = "data";
  std::string out_dir = "runs/default";

  // eval / plot
  std::string checkpoint = "latest";  // "teacher", "pretrain", "latest" or a cycle number
  int certainty_pairs = 500;
  std::string labeled_fractions = "0.3,0.6,1.0";
  int seeds = 3;
};

inline ExperimentConfig desk_defaults() {
  ExperimentConfig c;
  TrainConfig& t = c.train;
  t.gen.encoder_widths = {16, 32, 32, 64};
  t.gen.latent_dim = 32;
  t.gen.hidden_size = 128;
  t.gen.attention_dim = 32;
  t.gen.mixtures = 10;
  t.gen.max_length = 40;
  t.ret.widths = {16, 32, 32, 64};
  t.ret.embed_dim = 64;
  t.disc.widths = {16, 32, 64};
  t.pretrain_lr = 1e-3;
  t.lr = 1e-3;
  t.pretrain_gen_epochs = 300;
  t.pretrain_ret_epochs = 100;
  t.cycles = 100;
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Shortest text that reads back to the same double.
inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
#define SBIR_INT(NAME, DOC, EXPR)                                                                                      \
  k.push_back({NAME, DOC, [](const C& c) { return std::to_string(c.EXPR); },                                          \
               [](C& c, const std::string& v) { c.EXPR = parse_int(NAME, v); }})
#define SBIR_DBL(NAME, DOC, EXPR)                                                                                      \
  k.push_back({NAME, DOC, [](const C& c) { return num(c.EXPR); },                                                      \
               [](C& c, const std::string& v) { c.EXPR = parse_double(NAME, v); }})
#define SBIR_BOOL(NAME, DOC, EXPR)                                                                                     \
  k.push_back({NAME, DOC, [](const C& c) { return std::string(c.EXPR ? "true" : "false"); },                          \
               [](C& c, const std::string& v) { c.EXPR = parse_bool(NAME, v); }})
#define SBIR_LIST(NAME, DOC, EXPR)                                                                                     \
  k.push_back({NAME, DOC, [](const C& c) { return join(c.EXPR); },                                                     \
               [](C& c, const std::string& v) { c.EXPR = parse_int_list(NAME, v); }})
#define SBIR_STR(NAME, DOC, EXPR)                                                                                      \
  k.push_back({NAME, DOC, [](const C& c) { return c.EXPR; }, [](C& c, const std::string& v) { c.EXPR = v; }})

    k.push_back({"seed", "base random seed", [](const C& c) { return std::to_string(c.train.seed); },
                 [](C& c, const std::string& v) { c.train.seed = parse_u64("seed", v); }});
    // data
    SBIR_STR("data_dir", "corpus directory (gen-data writes <data_dir>/train and <data_dir>/test)", data_dir);
    SBIR_STR("out_dir", "run directory", out_dir);
    SBIR_INT("n_labeled", "labeled training pairs generated", n_labeled);
    SBIR_INT("n_unlabeled", "unlabeled training photos generated", n_unlabeled);
    SBIR_INT("n_test", "held-out pairs generated (query sketches and gallery photos)", n_test);
    k.push_back({"shape_family", "polygon | ellipse | composite | mixed",
                 [](const C& c) { return to_string(c.shape.family); },
                 [](C& c, const std::string& v) {
                   try {
                     c.shape.family = parse_shape_family(v);
                   } catch (const std::exception&) {
                     throw ConfigError("config key 'shape_family': unknown family '" + v + "'");
                   }
                 }});
    SBIR_DBL("stroke_jitter", "sketch offset noise sigma in pixels", shape.stroke_jitter);
    SBIR_DBL("vertex_dropout", "probability of dropping a sketch vertex (at most 0.2)", shape.vertex_dropout);
    SBIR_INT("image_size", "photo and raster side length in pixels", shape.image_size);
    SBIR_INT("raster_pad", "rasterizer border in pixels", train.raster_pad);
    // schedule
    SBIR_INT("k_r", "retrieval+critic steps per cycle", train.k_r);
    SBIR_INT("k_g", "generator steps per cycle", train.k_g);
    SBIR_INT("cycles", "joint-training cycles", train.cycles);
    SBIR_INT("pretrain_gen_epochs", "generator pre-training epochs", train.pretrain_gen_epochs);
    SBIR_INT("pretrain_ret_epochs", "retrieval pre-training epochs", train.pretrain_ret_epochs);
    SBIR_INT("eval_every", "evaluate every N cycles during training (0 = off)", train.eval_every);
    SBIR_INT("eval_gallery", "evaluation gallery size; n_test must be a multiple (0 = whole test set)", train.eval_gallery);
    SBIR_INT("checkpoint_every", "checkpoint every N cycles (the final cycle is always saved)", train.checkpoint_every);
    // objective
    SBIR_DBL("margin", "triplet margin", train.margin);
    SBIR_DBL("kl_weight", "KL weight in the VAE loss", train.kl_weight);
    SBIR_DBL("lambda_kd", "distillation weight", train.lambda_kd);
    SBIR_DBL("lambda_r1", "reward weight of the triplet term", train.lambda_r1);
    SBIR_DBL("lambda_r2", "reward weight of the critic term", train.lambda_r2);
    SBIR_DBL("lambda_g", "policy-gradient weight", train.lambda_g);
    SBIR_DBL("lr", "joint-training learning rate", train.lr);
    SBIR_DBL("pretrain_lr", "pre-training learning rate", train.pretrain_lr);
    SBIR_INT("batch_gen", "generator VAE batch", train.batch_gen);
    SBIR_INT("batch_ret", "retrieval batch (labeled and unlabeled each)", train.batch_ret);
    SBIR_INT("batch_rl", "photos per source in the policy-gradient path", train.batch_rl);
    SBIR_DBL("rl_temperature", "sampling temperature in the policy-gradient path", train.rl_temperature);
    // switches
    SBIR_BOOL("iw", "instance weighting by critic certainty", train.iw);
    SBIR_BOOL("tr", "teacher regularisation", train.tr);
    SBIR_BOOL("jt", "joint training of the generator", train.jt);
    SBIR_BOOL("attention_2d", "2-D attention (false: 1-D over the flattened map)", train.gen.attention_2d);
    SBIR_BOOL("use_unlabeled", "use unlabeled photos (false: supervised baseline)", train.use_unlabeled);
    SBIR_BOOL("baseline", "subtract the batch-mean reward", train.baseline);
    SBIR_BOOL("log_wall_time", "add wall-clock seconds to log records", train.log_wall_time);
    k.push_back({"kd_mode", "relative | absolute",
                 [](const C& c) { return std::string(c.train.kd_mode == KdMode::relative ? "relative" : "absolute"); },
                 [](C& c, const std::string& v) {
                   if (v == "relative") c.train.kd_mode = KdMode::relative;
                   else if (v == "absolute") c.train.kd_mode = KdMode::absolute;
                   else throw ConfigError("config key 'kd_mode': expected relative|absolute, got '" + v + "'");
                 }});
    k.push_back({"pseudo_mode", "greedy | stochastic",
                 [](const C& c) { return std::string(c.train.pseudo_mode == PseudoMode::greedy ? "greedy" : "stochastic"); },
                 [](C& c, const std::string& v) {
                   if (v == "greedy") c.train.pseudo_mode = PseudoMode::greedy;
                   else if (v == "stochastic") c.train.pseudo_mode = PseudoMode::stochastic;
                   else throw ConfigError("config key 'pseudo_mode': expected greedy|stochastic, got '" + v + "'");
                 }});
    k.push_back({"rl_mode", "combined | alternate",
                 [](const C& c) { return std::string(c.train.rl_mode == RlMode::combined ? "combined" : "alternate"); },
                 [](C& c, const std::string& v) {
                   if (v == "combined") c.train.rl_mode = RlMode::combined;
                   else if (v == "alternate") c.train.rl_mode = RlMode::alternate;
                   else throw ConfigError("config key 'rl_mode': expected combined|alternate, got '" + v + "'");
                 }});
    // architecture
    SBIR_LIST("gen_widths", "generator encoder channel widths", train.gen.encoder_widths);
    SBIR_INT("latent_dim", "latent size N_z", train.gen.latent_dim);
    SBIR_INT("hidden_size", "decoder LSTM width", train.gen.hidden_size);
    SBIR_INT("attention_dim", "attention projection width", train.gen.attention_dim);
    SBIR_INT("mixtures", "mixture components M", train.gen.mixtures);
    SBIR_INT("max_length", "maximum sketch length T_max", train.gen.max_length);
    SBIR_LIST("ret_widths", "retrieval backbone channel widths", train.ret.widths);
    SBIR_INT("embed_dim", "embedding size d", train.ret.embed_dim);
    SBIR_LIST("disc_widths", "critic channel widths", train.disc.widths);
    // evaluation
    SBIR_STR("checkpoint", "eval target: teacher | pretrain | latest | <cycle>", checkpoint);
    SBIR_INT("certainty_pairs", "pseudo pairs scored for the certainty table", certainty_pairs);
    SBIR_STR("labeled_fractions", "labeled fractions for the data-size sweep", labeled_fractions);
    SBIR_INT("seeds", "seeds per setting in sweeps", seeds);
#undef SBIR_INT
#undef SBIR_DBL
#undef SBIR_BOOL
#undef SBIR_LIST
#undef SBIR_STR
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void set_key(ExperimentConfig& c, const std::string& name, const std::string& value, const std::string& where) {
  const ConfigKey* k = find_key(name);
  if (!k) throw ConfigError(where + ": unknown config key '" + name + "'");
  try {
    k->set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

// Keeps derived sizes consistent: every model uses the data image size.
inline void sync_derived(ExperimentConfig& c) {
  c.train.gen.image_size = c.shape.image_size;
  c.train.ret.image_size = c.shape.image_size;
  c.train.disc.image_size = c.shape.image_size;
  c.shape.pad = c.train.raster_pad;
}

// "0.3,0.6,1.0" -> {0.3, 0.6, 1.0}; each in (0, 1].
inline std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = detail::trim(tok);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty() || !(v > 0.0 && v <= 1.0))
      throw ConfigError("config key 'labeled_fractions': expected fractions in (0, 1], got '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config key 'labeled_fractions': empty list");
  return out;
}

inline void validate(ExperimentConfig& c) {
  sync_derived(c);
  try {
    c.train.validate();
    c.shape.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.n_labeled < 2 || c.n_unlabeled < 0 || c.n_test < 2) throw ConfigError("config: corpus sizes too small");
  if (c.seeds < 1) throw ConfigError("config: seeds must be at least 1");
  parse_fractions(c.labeled_fractions);
}

inline void apply_text(ExperimentConfig& c, std::istream& is, const std::string& name) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = name + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    set_key(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)), where);
  }
}

inline void apply_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  apply_text(c, is, path);
}

inline constexpr const char* kEnvPrefix = "SBIR_";

// SBIR_<KEY> with the key upper-cased, e.g. SBIR_LAMBDA_KD=0.2.
inline void apply_env(ExperimentConfig& c, char** env = environ) {
  if (!env) return;
  for (char** e = env; *e; ++e) {
    const std::string kv = *e;
    if (kv.rfind(kEnvPrefix, 0) != 0) continue;
    const auto eq = kv.find('=');
    std::string key = kv.substr(5, eq - 5);
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
    set_key(c, key, kv.substr(eq + 1), "environment " + kv.substr(0, eq));
  }
}

inline std::string dump_config(const ExperimentConfig& c) {
  std::string out = "# effective configuration\n";
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

inline std::string describe_keys() {
  const ExperimentConfig d = desk_defaults();
  std::string out;
  for (const auto& k : config_keys()) out += "  " + k.name + " (default " + k.get(d) + "): " + k.doc + "\n";
  return out;
}

}  // namespace sbir
