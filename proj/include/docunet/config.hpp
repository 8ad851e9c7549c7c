#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "docunet/model.hpp"
#include "docunet/synthetic.hpp"

namespace docunet {

/// Everything a training run depends on. The data section either names
/// DocRED-format files or, when `train_path` is empty, describes a synthetic
/// corpus split into `train_docs` + `dev_docs` documents.
struct TrainConfig {
  // data
  std::string train_path, dev_path, rel_info_path;
  std::size_t train_docs = 200, dev_docs = 50;
  SyntheticWorldConfig world = default_world();

  // model; vocab_size and num_relations come from the data
  ModelConfig model = default_model();

  // optimization
  std::size_t epochs = 25;
  std::size_t batch_size = 4;
  std::size_t accumulation_steps = 1;
  double lr_encoder = 3e-4;
  double lr_head = 4e-4;
  double warmup = 0.06;
  double weight_decay = 5e-4;
  double clip_norm = 1.0;
  std::size_t patience = 5;
  std::size_t max_steps = 0;  // 0: run all epochs
  bool eval_train = false;    // score the training split after every epoch
  std::uint64_t seed = 0;

  // outputs
  std::string log_path, checkpoint_path;

  /// Three countries, four or five regions and six to nine cities per
  /// document: 13 to 17 entities, so most gold facts need composition.
  static SyntheticWorldConfig default_world() {
    SyntheticWorldConfig w;
    w.min_countries = w.max_countries = 3;
    w.min_regions = 4, w.max_regions = 5;
    w.min_cities = 6, w.max_cities = 9;
    w.seed = 1234;
    return w;
  }

  static ModelConfig default_model() {
    ModelConfig m;
    m.encoder.embed_dim = 32;
    m.encoder.num_heads = 4;
    m.encoder.feedforward_dim = 64;
    m.head_hidden = 32;
    return m;
  }

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (accumulation_steps == 0) throw ConfigError("accumulation_steps must be >= 1");
    // Zero is accepted so a run can be checked to leave parameters untouched.
    if (!(lr_encoder >= 0.0) || !(lr_head >= 0.0) || !std::isfinite(lr_encoder) ||
        !std::isfinite(lr_head)) {
      throw ConfigError("learning rates must be finite and non-negative");
    }
    if (!(warmup >= 0.0 && warmup < 1.0)) throw ConfigError("warmup must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (train_path.empty()) {
      if (train_docs == 0) throw ConfigError("train_docs must be >= 1");
      world.validate();
    } else if (rel_info_path.empty()) {
      throw ConfigError("rel_info_path is required with train_path");
    }
    if (model.unet.channels[0] != model.reduced_channels) {
      throw ConfigError(detail::cat("unet_channels must start with reduced_channels (",
                                    model.reduced_channels, ")"));
    }
    model.encoder.validate();
    if (model.reduced_channels == 0) throw ConfigError("reduced_channels must be >= 1");
    if (model.head_hidden == 0) throw ConfigError("head_hidden must be >= 1");
    model.unet.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("'" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

// Shortest representation that reads back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

struct ConfigField {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto size = [&](std::string key, auto member) {
      f.push_back({key, [member](const TrainConfig& c) { return std::to_string(member(c)); },
                   [member, key](TrainConfig& c, const std::string& v) {
                     member(c) = parse_number<std::size_t>(key, v);
                   }});
    };
    auto real = [&](std::string key, auto member) {
      f.push_back({key, [member](const TrainConfig& c) { return format_double(member(c)); },
                   [member, key](TrainConfig& c, const std::string& v) {
                     member(c) = parse_number<double>(key, v);
                   }});
    };
    auto flag = [&](std::string key, auto member) {
      f.push_back({key,
                   [member](const TrainConfig& c) {
                     return std::string(member(c) ? "true" : "false");
                   },
                   [member, key](TrainConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }});
    };
    auto text = [&](std::string key, auto member) {
      f.push_back({key, [member](const TrainConfig& c) { return member(c); },
                   [member](TrainConfig& c, const std::string& v) { member(c) = v; }});
    };
    auto choice = [&](std::string key, auto member, std::vector<std::string> names) {
      f.push_back({key,
                   [member, names](const TrainConfig& c) {
                     return names.at(std::size_t(member(c)));
                   },
                   [member, names, key](TrainConfig& c, const std::string& v) {
                     for (std::size_t i = 0; i < names.size(); ++i) {
                       if (names[i] == v) {
                         member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(i);
                         return;
                       }
                     }
                     std::string allowed;
                     for (const auto& n : names) allowed += (allowed.empty() ? "" : ", ") + n;
                     throw ConfigError("'" + key + "': expected one of " + allowed + ", got '" + v + "'");
                   }});
    };
#define DUN_M(expr) [](auto& c) -> auto& { return expr; }
    text("train_path", DUN_M(c.train_path));
    text("dev_path", DUN_M(c.dev_path));
    text("rel_info_path", DUN_M(c.rel_info_path));
    size("train_docs", DUN_M(c.train_docs));
    size("dev_docs", DUN_M(c.dev_docs));
    size("world.min_countries", DUN_M(c.world.min_countries));
    size("world.max_countries", DUN_M(c.world.max_countries));
    size("world.min_regions", DUN_M(c.world.min_regions));
    size("world.max_regions", DUN_M(c.world.max_regions));
    size("world.min_cities", DUN_M(c.world.min_cities));
    size("world.max_cities", DUN_M(c.world.max_cities));
    size("world.distractors", DUN_M(c.world.num_distractors));
    size("world.name_pool", DUN_M(c.world.name_pool));
    real("world.noise_rate", DUN_M(c.world.noise_rate));
    flag("world.closure", DUN_M(c.world.closure));
    size("world.seed", DUN_M(c.world.seed));
    size("embed_dim", DUN_M(c.model.encoder.embed_dim));
    size("num_layers", DUN_M(c.model.encoder.num_layers));
    size("num_heads", DUN_M(c.model.encoder.num_heads));
    size("feedforward_dim", DUN_M(c.model.encoder.feedforward_dim));
    size("window_length", DUN_M(c.model.encoder.window_length));
    size("window_stride", DUN_M(c.model.encoder.window_stride));
    flag("last_layer_attention", DUN_M(c.model.encoder.last_layer_attention));
    choice("strategy", DUN_M(c.model.strategy), {"similarity", "context"});
    flag("elementwise_similarity", DUN_M(c.model.elementwise_similarity));
    size("matrix_size", DUN_M(c.model.matrix_size));
    size("reduced_channels", DUN_M(c.model.reduced_channels));
    flag("use_unet", DUN_M(c.model.use_unet));
    f.push_back({"unet_channels",
                 [](const TrainConfig& c) {
                   std::string s;
                   for (auto ch : c.model.unet.channels) s += (s.empty() ? "" : ",") + std::to_string(ch);
                   return s;
                 },
                 [](TrainConfig& c, const std::string& v) {
                   std::vector<std::size_t> ch;
                   std::stringstream ss(v);
                   for (std::string item; std::getline(ss, item, ',');) {
                     ch.push_back(parse_number<std::size_t>("unet_channels", trim(item)));
                   }
                   if (ch.size() != 6) throw ConfigError("'unet_channels': expected 6 comma-separated widths");
                   std::copy(ch.begin(), ch.end(), c.model.unet.channels.begin());
                 }});
    size("unet_kernel", DUN_M(c.model.unet.kernel));
    size("head_hidden", DUN_M(c.model.head_hidden));
    choice("combine", DUN_M(c.model.combine), {"concat", "add"});
    choice("loss", DUN_M(c.model.loss), {"balanced", "bce"});
    flag("include_diagonal", DUN_M(c.model.include_diagonal));
    size("epochs", DUN_M(c.epochs));
    size("batch_size", DUN_M(c.batch_size));
    size("accumulation_steps", DUN_M(c.accumulation_steps));
    real("lr_encoder", DUN_M(c.lr_encoder));
    real("lr_head", DUN_M(c.lr_head));
    real("warmup", DUN_M(c.warmup));
    real("weight_decay", DUN_M(c.weight_decay));
    real("clip_norm", DUN_M(c.clip_norm));
    size("patience", DUN_M(c.patience));
    size("max_steps", DUN_M(c.max_steps));
    flag("eval_train", DUN_M(c.eval_train));
    size("seed", DUN_M(c.seed));
    text("log_path", DUN_M(c.log_path));
    text("checkpoint_path", DUN_M(c.checkpoint_path));
#undef DUN_M
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Sets one field by key; unknown keys are errors.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Parses `key = value` lines over the defaults. `#` starts a comment;
/// blank lines are ignored; a key given twice is an error.
inline TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(detail::cat("line ", line_no, ": expected 'key = value'"));
    }
    const auto key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(detail::cat("line ", line_no, ": '", key, "' given twice"));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(detail::cat("line ", line_no, ": ", e.what()));
    }
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Every field, one `key = value` line each, in a fixed order.
inline std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace docunet
