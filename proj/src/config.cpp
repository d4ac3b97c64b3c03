#include "opesel/config.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace opesel {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_scalar(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw std::invalid_argument("bad value '" + text + "' for " + key);
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_scalar<T>(key, item));
  return out;
}

/// "a:b" expands to a, a+1, ..., b.
std::vector<int> parse_int_ranges(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      out.push_back(parse_scalar<int>(key, item));
      continue;
    }
    const int lo = parse_scalar<int>(key, item.substr(0, colon));
    const int hi = parse_scalar<int>(key, item.substr(colon + 1));
    if (hi < lo) throw std::invalid_argument("empty range '" + item + "' for " + key);
    for (int v = lo; v <= hi; ++v) out.push_back(v);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    if constexpr (std::is_floating_point_v<T>) {
      out << format_number(values[i]);
    } else {
      out << values[i];
    }
  }
  return out.str();
}

bool set_net(nn::NetConfig& net, const std::string& field, const std::string& key,
             const std::string& value) {
  if (field == "hidden_layers") net.hidden_layers = parse_scalar<int>(key, value);
  else if (field == "hidden_units") net.hidden_units = parse_scalar<int>(key, value);
  else if (field == "learning_rate") net.learning_rate = parse_scalar<double>(key, value);
  else if (field == "batch_size") net.batch_size = parse_scalar<int>(key, value);
  else if (field == "max_epochs") net.max_epochs = parse_scalar<int>(key, value);
  else if (field == "patience") net.patience = parse_scalar<int>(key, value);
  else if (field == "val_fraction") net.val_fraction = parse_scalar<double>(key, value);
  else return false;
  return true;
}

void describe_net(std::ostream& out, const std::string& prefix, const nn::NetConfig& net) {
  out << prefix << ".hidden_layers = " << net.hidden_layers << '\n'
      << prefix << ".hidden_units = " << net.hidden_units << '\n'
      << prefix << ".learning_rate = " << format_number(net.learning_rate) << '\n'
      << prefix << ".batch_size = " << net.batch_size << '\n'
      << prefix << ".max_epochs = " << net.max_epochs << '\n'
      << prefix << ".patience = " << net.patience << '\n'
      << prefix << ".val_fraction = " << format_number(net.val_fraction) << '\n';
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  tabular_iterations.resize(20);
  std::iota(tabular_iterations.begin(), tabular_iterations.end(), 1);
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  const std::string group = dot == std::string::npos ? std::string() : key.substr(0, dot);
  const std::string field = dot == std::string::npos ? key : key.substr(dot + 1);

  if (key == "env") env = value;
  else if (key == "state_mode") {
    if (value == "discrete") state_mode = StateMode::discrete;
    else if (value == "continuous") state_mode = StateMode::continuous;
    else throw std::invalid_argument("state_mode must be discrete or continuous, got '" + value + "'");
  }
  else if (key == "data.m_train") m_train = parse_scalar<int>(key, value);
  else if (key == "data.m_val") m_val = parse_scalar<int>(key, value);
  else if (key == "data.max_len") max_len = parse_scalar<int>(key, value);
  else if (key == "data.behavior") behavior = BehaviorSpec::parse(value);
  else if (key == "discount") discount = parse_scalar<double>(key, value);
  else if (key == "candidates.iterations") tabular_iterations = parse_int_ranges(key, value);
  else if (key == "grid.hidden_layers") grid.hidden_layers = parse_list<int>(key, value);
  else if (key == "grid.hidden_units") grid.hidden_units = parse_list<int>(key, value);
  else if (key == "grid.learning_rates") grid.learning_rates = parse_list<double>(key, value);
  else if (key == "grid.fqi_iterations") grid.fqi_iterations = parse_int_ranges(key, value);
  else if (group == "fqi" && set_net(fqi_net, field, key, value)) {}
  else if (group == "aux" && set_net(aux_net, field, key, value)) {}
  else if (key == "ope.methods") methods = split_list(value);
  else if (key == "ope.epsilon") epsilon = parse_scalar<double>(key, value);
  else if (key == "ope.fqe_horizon") fqe_horizon = parse_scalar<int>(key, value);
  else if (key == "ope.am_horizon") am_horizon = parse_scalar<int>(key, value);
  else if (key == "selection.stage1") stage1 = value;
  else if (key == "selection.stage2") stage2 = value;
  else if (key == "selection.alpha") alpha = parse_scalar<int>(key, value);
  else if (key == "seeds") seeds = parse_list<std::uint64_t>(key, value);
  else if (key == "output_dir") output_dir = value;
  else if (key == "workers") workers = parse_scalar<int>(key, value);
  else if (key == "analyze.epsilon") sweep_epsilon = parse_list<double>(key, value);
  else if (key == "analyze.horizon") sweep_horizon = parse_list<int>(key, value);
  else if (key == "analyze.m_val") sweep_m_val = parse_list<int>(key, value);
  else if (key == "analyze.behavior") sweep_behavior = split_list(value);
  else if (key == "analyze.alphas") cdf_alphas = parse_int_ranges(key, value);
  else if (key == "analyze.betas") cdf_betas = parse_int_ranges(key, value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

void ExperimentConfig::validate() const {
  if (env != "sepsis") throw std::invalid_argument("unsupported env '" + env + "'");
  if (m_train < 1 || m_val < 1) throw std::invalid_argument("data.m_train and data.m_val must be >= 1");
  if (max_len < 1) throw std::invalid_argument("data.max_len must be >= 1");
  if (!(discount >= 0.0 && discount <= 1.0)) throw std::invalid_argument("discount must lie in [0, 1]");
  if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("ope.epsilon must lie in [0, 1)");
  if (fqe_horizon < 1 || am_horizon < 1) throw std::invalid_argument("OPE horizons must be >= 1");
  if (alpha < 0) throw std::invalid_argument("selection.alpha must be >= 0");
  if (state_mode == StateMode::discrete) {
    if (tabular_iterations.empty()) throw std::invalid_argument("candidates.iterations must not be empty");
    for (int it : tabular_iterations) {
      if (it < 1) throw std::invalid_argument("candidates.iterations must be >= 1");
    }
  } else {
    if (grid.size() == 0) throw std::invalid_argument("grid must not be empty");
  }
  const std::vector<std::string> known{"wis", "am", "fqe", "wdr_fqe", "wdr_am", "fqi_value", "rms_tde"};
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw std::invalid_argument("unknown OPE method '" + m + "'");
    }
  }
  for (const auto* m : {&stage1, &stage2}) {
    if (std::find(methods.begin(), methods.end(), *m) == methods.end()) {
      throw std::invalid_argument("selection method '" + *m + "' is not among ope.methods");
    }
  }
  aux_net.validate();
  fqi_net.validate();
}

std::string ExperimentConfig::describe() const {
  std::ostringstream out;
  out << "env = " << env << '\n'
      << "state_mode = " << (state_mode == StateMode::discrete ? "discrete" : "continuous") << '\n'
      << "data.m_train = " << m_train << '\n'
      << "data.m_val = " << m_val << '\n'
      << "data.max_len = " << max_len << '\n'
      << "data.behavior = " << behavior.label() << '\n'
      << "discount = " << format_number(discount) << '\n'
      << "candidates.iterations = " << join(tabular_iterations) << '\n'
      << "grid.hidden_layers = " << join(grid.hidden_layers) << '\n'
      << "grid.hidden_units = " << join(grid.hidden_units) << '\n'
      << "grid.learning_rates = " << join(grid.learning_rates) << '\n'
      << "grid.fqi_iterations = " << join(grid.fqi_iterations) << '\n';
  describe_net(out, "fqi", fqi_net);
  out << "ope.methods = " << join(methods) << '\n'
      << "ope.epsilon = " << format_number(epsilon) << '\n'
      << "ope.fqe_horizon = " << fqe_horizon << '\n'
      << "ope.am_horizon = " << am_horizon << '\n';
  describe_net(out, "aux", aux_net);
  out << "selection.stage1 = " << stage1 << '\n'
      << "selection.stage2 = " << stage2 << '\n'
      << "selection.alpha = " << alpha << '\n'
      << "seeds = " << join(seeds) << '\n'
      << "output_dir = " << output_dir.string() << '\n'
      << "workers = " << workers << '\n'
      << "analyze.epsilon = " << join(sweep_epsilon) << '\n'
      << "analyze.horizon = " << join(sweep_horizon) << '\n'
      << "analyze.m_val = " << join(sweep_m_val) << '\n'
      << "analyze.behavior = " << join(sweep_behavior) << '\n'
      << "analyze.alphas = " << join(cdf_alphas) << '\n'
      << "analyze.betas = " << join(cdf_betas) << '\n';
  return out.str();
}

int ExperimentConfig::resolved_alpha(std::size_t n_candidates) const {
  const int k = static_cast<int>(n_candidates);
  if (alpha > 0) return std::min(alpha, k);
  return std::max(1, k / 4);
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), std::move(base));
}

std::string comment_block(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) out << "# " << line << '\n';
  return out.str();
}

}  // namespace opesel
