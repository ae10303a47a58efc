#pragma once

// Plain-text run configuration: one `key = value` per line, `#` comments.
// Overrides use the same syntax. Every key is known in advance; anything
// else is rejected by name.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qpi/dataset.hpp"
#include "qpi/deconv.hpp"
#include "qpi/error.hpp"
#include "qpi/evaluation.hpp"
#include "qpi/training.hpp"

namespace qpi {

namespace detail {

struct KeyInfo {
  const char* name;
  const char* default_value;
};

// Declaration order is the echo order. An empty default for `epochs` means
// "the maximum for the training mode".
inline constexpr KeyInfo kConfigKeys[] = {
    {"seed", "0"},
    {"kernels", "100"},
    {"obs", "500"},
    {"kernel_train_fraction", "0.8"},
    {"sample_train_fraction", "0.8"},
    {"epochs", ""},
    {"enforce_epoch_limit", "true"},
    {"batch_size", "8"},
    {"learning_rate", "1e-4"},
    {"alpha", "0.75"},
    {"beta", "0"},
    {"sym_fold_for_A0", "4"},
    {"patience", "0"},
    {"val_fraction", "0.1"},
    {"sample_latent", "true"},
    {"encoder_y_init", "from_kernel"},
    {"lambda", "1e-8"},
    {"cg_max_iter", "500"},
    {"cg_tol", "1e-10"},
    {"support", "64"},
    {"deconv_observations", "10"},
    {"per_image_metrics", "false"},
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

} // namespace detail

class Config {
public:
  Config() {
    for (const auto& k : detail::kConfigKeys) values_[k.name] = k.default_value;
  }

  static bool known(const std::string& key) {
    for (const auto& k : detail::kConfigKeys)
      if (key == k.name) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  // "key=value" or "key = value".
  void apply(const std::string& assignment, const std::string& where = "override") {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + assignment + "'");
    set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
  }

  void parse(const std::string& text, const std::string& source = "config") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      apply(line, source + ":" + std::to_string(lineno));
    }
  }

  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double number(const std::string& key) const {
    const std::string& s = raw(key);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
    return v;
  }

  long long integer(const std::string& key) const {
    const std::string& s = raw(key);
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": not an integer: '" + s + "'");
    return v;
  }

  std::uint64_t unsigned_integer(const std::string& key) const {
    const std::string& s = raw(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError(key + ": not a non-negative integer: '" + s + "'");
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = raw(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
  }

  // Fills in what depends on the training mode so the echo is complete.
  void resolve(TrainMode mode) {
    if (raw("epochs").empty()) values_["epochs"] = std::to_string(max_epochs(mode));
  }

  std::string echo() const {
    std::string s;
    for (const auto& k : detail::kConfigKeys) s += std::string(k.name) + " = " + values_.at(k.name) + "\n";
    return s;
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  GenerationConfig generation() const {
    GenerationConfig g;
    g.kernel_count = static_cast<int>(integer("kernels"));
    g.observations_per_kernel = static_cast<int>(integer("obs"));
    g.master_seed = unsigned_integer("seed");
    g.kernel_train_fraction = number("kernel_train_fraction");
    g.observation_train_fraction = number("sample_train_fraction");
    try {
      g.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("kernels/obs/fractions: ") + e.what());
    }
    return g;
  }

  TrainConfig training(TrainMode mode) const {
    TrainConfig c;
    c.mode = mode;
    c.epochs = raw("epochs").empty() ? max_epochs(mode) : static_cast<int>(integer("epochs"));
    c.batch_size = static_cast<int>(integer("batch_size"));
    c.learning_rate = number("learning_rate");
    c.seed = unsigned_integer("seed");
    c.loss.alpha = number("alpha");
    c.loss.beta = number("beta");
    c.loss.fold_for_total_symmetry = static_cast<int>(integer("sym_fold_for_A0"));
    c.patience = static_cast<int>(integer("patience"));
    c.validation_fraction = number("val_fraction");
    c.sample_latent = flag("sample_latent");
    const std::string& init = raw("encoder_y_init");
    if (init == "from_kernel")
      c.encoder_y_init = EncoderInit::from_kernel;
    else if (init == "random")
      c.encoder_y_init = EncoderInit::random;
    else
      throw ConfigError("encoder_y_init: expected from_kernel or random, got '" + init + "'");

    if (c.epochs <= 0) throw ConfigError("epochs must be positive");
    if (flag("enforce_epoch_limit") && c.epochs > max_epochs(mode))
      throw ConfigError("epochs: " + std::to_string(c.epochs) + " exceeds the " + to_string(mode) + " limit of " +
                        std::to_string(max_epochs(mode)) + " (set enforce_epoch_limit=false to allow)");
    if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(c.loss.alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (!(c.loss.beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if (c.loss.fold_for_total_symmetry <= 0) throw ConfigError("sym_fold_for_A0 must be positive");
    if (c.patience < 0) throw ConfigError("patience must be non-negative");
    if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0))
      throw ConfigError("val_fraction must lie in [0, 1)");
    return c;
  }

  TikhonovConfig tikhonov() const {
    TikhonovConfig t;
    t.lambda = number("lambda");
    t.max_iterations = static_cast<int>(integer("cg_max_iter"));
    t.tolerance = number("cg_tol");
    t.validate();
    return t;
  }

  EvalOptions evaluation() const {
    EvalOptions o;
    o.per_image = flag("per_image_metrics");
    o.tikhonov = tikhonov();
    o.deconv_observations = static_cast<int>(integer("deconv_observations"));
    o.deconv_support = static_cast<int>(integer("support"));
    if (o.deconv_observations <= 0) throw ConfigError("deconv_observations must be positive");
    if (o.deconv_support < kImageSize) throw ConfigError("support must be at least 64");
    return o;
  }

  // Checks every section, so a bad key is reported whatever the command.
  void validate(TrainMode mode = TrainMode::step1) const {
    generation();
    training(mode);
    evaluation();
  }

private:
  std::map<std::string, std::string> values_;
};

inline Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    c.parse(ss.str(), path);
  }
  for (const auto& o : overrides) c.apply(o);
  return c;
}

} // namespace qpi
