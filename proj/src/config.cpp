#include "bem/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace bem {

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::Pairwise ? "pairwise" : "independent";
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(epochs > 0.0) || !std::isfinite(epochs)) throw ConfigError("epochs must be positive");
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw ConfigError("lambda1 and lambda2 must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be non-negative");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
  if (bootstrap_replicates < 1) throw ConfigError("bootstrap_replicates must be positive");
  if (n_iter < 1) throw ConfigError("n_iter must be positive");
}

Index TrainConfig::steps_for(Index n) const {
  const double t = std::ceil(epochs * static_cast<double>(n) / static_cast<double>(batch_size));
  return std::max<Index>(1, static_cast<Index>(t));
}

Index TrainConfig::scale_dim(Index d_z) const {
  return model == ModelKind::Independent ? d_z : edge.scale_dim(d_z);
}

std::string to_key_values(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "batch_size = " << cfg.batch_size << '\n'
     << "epochs = " << cfg.epochs << '\n'
     << "lambda1 = " << cfg.lambda1 << '\n'
     << "lambda2 = " << cfg.lambda2 << '\n'
     << "learning_rate = " << cfg.learning_rate << '\n'
     << "hidden_dim = " << cfg.hidden_dim << '\n'
     << "bootstrap_replicates = " << cfg.bootstrap_replicates << '\n'
     << "edge = " << to_string(cfg.edge.kind) << '\n'
     << "model = " << to_string(cfg.model) << '\n'
     << "n_iter = " << cfg.n_iter << '\n'
     << "seed = " << cfg.seed << '\n'
     << "normalize_inputs = " << (cfg.normalize_inputs ? "true" : "false") << '\n';
  return os.str();
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty())
    throw ConfigError("value '" + std::string(value) + "' for " + std::string(key) +
                      " is not a number");
  return out;
}

}  // namespace

void apply_key_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "batch_size" || key == "nB") cfg.batch_size = parse_number<Index>(key, value);
  else if (key == "epochs") cfg.epochs = parse_number<double>(key, value);
  else if (key == "lambda1") cfg.lambda1 = parse_number<double>(key, value);
  else if (key == "lambda2") cfg.lambda2 = parse_number<double>(key, value);
  else if (key == "learning_rate" || key == "lr") cfg.learning_rate = parse_number<double>(key, value);
  else if (key == "hidden_dim" || key == "nh") cfg.hidden_dim = parse_number<Index>(key, value);
  else if (key == "bootstrap_replicates") cfg.bootstrap_replicates = parse_number<Index>(key, value);
  else if (key == "n_iter") cfg.n_iter = parse_number<Index>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "edge") {
    auto kind = parse_edge_kind(value);
    if (!kind) throw ConfigError("unknown edge function '" + std::string(value) + "'");
    cfg.edge.kind = *kind;
  } else if (key == "model") {
    if (value == "pairwise" || value == "p") cfg.model = ModelKind::Pairwise;
    else if (value == "independent" || value == "i") cfg.model = ModelKind::Independent;
    else throw ConfigError("unknown model '" + std::string(value) + "'");
  } else if (key == "normalize_inputs") {
    if (value == "true" || value == "1") cfg.normalize_inputs = true;
    else if (value == "false" || value == "0") cfg.normalize_inputs = false;
    else throw ConfigError("normalize_inputs must be true or false");
  } else {
    throw ConfigError("unknown configuration key '" + std::string(key) + "'");
  }
}

TrainConfig parse_key_values(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + " is not 'key = value'");
    apply_key_value(base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

}  // namespace bem
