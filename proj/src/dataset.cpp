#include "opesel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace opesel {

Dataset::Dataset(std::vector<Transition> transitions, Provenance provenance)
    : transitions_(std::move(transitions)), provenance_(std::move(provenance)) {
  std::vector<int> seen_ids;
  for (std::size_t i = 0; i < transitions_.size(); ++i) {
    const auto& tr = transitions_[i];
    const bool starts_episode = i == 0 || transitions_[i - 1].episode_id != tr.episode_id;
    if (starts_episode) {
      if (tr.t != 1) {
        throw std::invalid_argument("Dataset: episode " + std::to_string(tr.episode_id) +
                                    " does not start at t = 1");
      }
      starts_.push_back(i);
      seen_ids.push_back(tr.episode_id);
    } else {
      const auto& prev = transitions_[i - 1];
      if (tr.t != prev.t + 1) {
        throw std::invalid_argument("Dataset: non-contiguous t in episode " +
                                    std::to_string(tr.episode_id));
      }
      if (prev.done) {
        throw std::invalid_argument("Dataset: transition after done in episode " +
                                    std::to_string(tr.episode_id));
      }
    }
  }
  std::sort(seen_ids.begin(), seen_ids.end());
  if (std::adjacent_find(seen_ids.begin(), seen_ids.end()) != seen_ids.end()) {
    throw std::invalid_argument("Dataset: episode ids are not contiguous blocks");
  }
}

std::span<const Transition> Dataset::episode(std::size_t j) const {
  const std::size_t begin = starts_.at(j);
  const std::size_t end = j + 1 < starts_.size() ? starts_[j + 1] : transitions_.size();
  return std::span<const Transition>(transitions_).subspan(begin, end - begin);
}

std::vector<int> Dataset::initial_states() const {
  std::vector<int> states;
  states.reserve(starts_.size());
  for (std::size_t start : starts_) states.push_back(transitions_[start].state);
  return states;
}

int Dataset::max_episode_length() const {
  int longest = 0;
  for (std::size_t j = 0; j < n_episodes(); ++j) {
    longest = std::max(longest, static_cast<int>(episode(j).size()));
  }
  return longest;
}

BehaviorSpec BehaviorSpec::uniform() { return {}; }

BehaviorSpec BehaviorSpec::epsilon_greedy(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("BehaviorSpec: epsilon must lie in [0, 1]");
  }
  BehaviorSpec spec;
  spec.kind = Kind::epsilon_greedy;
  spec.epsilon = epsilon;
  return spec;
}

BehaviorSpec BehaviorSpec::mixture(std::vector<std::pair<BehaviorSpec, int>> components) {
  if (components.empty()) throw std::invalid_argument("BehaviorSpec: empty mixture");
  for (const auto& [spec, count] : components) {
    if (spec.kind == Kind::mixture) throw std::invalid_argument("BehaviorSpec: nested mixture");
    if (count < 0) throw std::invalid_argument("BehaviorSpec: negative mixture count");
  }
  BehaviorSpec spec;
  spec.kind = Kind::mixture;
  spec.components = std::move(components);
  return spec;
}

std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  // Prefer the shortest representation that round-trips.
  for (int precision = 1; precision <= 17; ++precision) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", precision, x);
    if (std::strtod(shorter, nullptr) == x) return shorter;
  }
  return buf;
}

std::string BehaviorSpec::label() const {
  switch (kind) {
    case Kind::uniform_random:
      return "uniform";
    case Kind::epsilon_greedy:
      return "egreedy-" + format_number(epsilon);
    case Kind::mixture: {
      std::string out = "mixture-";
      for (std::size_t i = 0; i < components.size(); ++i) {
        if (i > 0) out += '+';
        out += components[i].first.label() + ":" + std::to_string(components[i].second);
      }
      return out;
    }
  }
  return {};
}

BehaviorSpec BehaviorSpec::parse(const std::string& label) {
  if (label == "uniform" || label == "random") return uniform();
  if (label == "egreedy") return epsilon_greedy();
  if (label.rfind("egreedy-", 0) == 0) {
    std::size_t used = 0;
    const std::string number = label.substr(8);
    double eps = 0.0;
    try {
      eps = std::stod(number, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != number.size()) {
      throw std::invalid_argument("BehaviorSpec: bad epsilon in '" + label + "'");
    }
    return epsilon_greedy(eps);
  }
  if (label.rfind("mixture-", 0) == 0) {
    std::vector<std::pair<BehaviorSpec, int>> parts;
    std::stringstream ss(label.substr(8));
    std::string item;
    while (std::getline(ss, item, '+')) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) {
        throw std::invalid_argument("BehaviorSpec: mixture component needs ':<count>'");
      }
      parts.emplace_back(parse(item.substr(0, colon)), std::stoi(item.substr(colon + 1)));
    }
    return mixture(std::move(parts));
  }
  throw std::invalid_argument("BehaviorSpec: unknown behavior '" + label + "'");
}

namespace {

struct ActionRule {
  BehaviorSpec::Kind kind;
  double epsilon;
  const std::vector<int>* greedy;

  int choose(int state, int n_actions, Rng& rng) const {
    if (kind == BehaviorSpec::Kind::epsilon_greedy && rng.uniform() >= epsilon) {
      return (*greedy)[static_cast<std::size_t>(state)];
    }
    return rng.uniform_int(n_actions);
  }
};

void roll_out_episode(const Simulator& env, const ActionRule& rule, int episode_id, int max_len,
                      std::uint64_t seed, std::vector<Transition>& out) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(episode_id)));
  int state = env.initial_state(rng);
  for (int t = 1; t <= max_len; ++t) {
    const int action = rule.choose(state, env.n_actions(), rng);
    const StepResult step = env.step(state, action, rng);
    out.push_back({episode_id, t, state, action, step.reward, step.next_state, step.done});
    if (step.done) break;
    state = step.next_state;
  }
}

}  // namespace

Dataset generate(const Simulator& env, const BehaviorSpec& behavior, int m, int max_len,
                 std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("generate: m must be >= 1");
  if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");

  std::vector<std::pair<BehaviorSpec, int>> blocks;
  if (behavior.kind == BehaviorSpec::Kind::mixture) {
    int total = 0;
    for (const auto& [spec, count] : behavior.components) total += count;
    if (total != m) {
      throw std::invalid_argument("generate: mixture counts sum to " + std::to_string(total) +
                                  ", expected m = " + std::to_string(m));
    }
    blocks = behavior.components;
  } else {
    blocks.emplace_back(behavior, m);
  }

  std::vector<int> greedy;
  const bool needs_greedy = std::any_of(blocks.begin(), blocks.end(), [](const auto& b) {
    return b.first.kind == BehaviorSpec::Kind::epsilon_greedy;
  });
  if (needs_greedy) {
    const double discount = std::find_if(blocks.begin(), blocks.end(), [](const auto& b) {
                              return b.first.kind == BehaviorSpec::Kind::epsilon_greedy;
                            })->first.discount;
    greedy = value_iteration(env.exact_mdp(discount), 1e-8).greedy;
  }

  std::vector<Transition> transitions;
  int episode_id = 0;
  for (const auto& [spec, count] : blocks) {
    const ActionRule rule{spec.kind, spec.epsilon, &greedy};
    for (int k = 0; k < count; ++k, ++episode_id) {
      roll_out_episode(env, rule, episode_id, max_len, seed, transitions);
    }
  }
  return Dataset(std::move(transitions), Provenance{seed, behavior.label(), env.label()});
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  const auto& p = dataset.provenance();
  out << "# opesel-dataset v1; env=" << p.env << "; behavior=" << p.behavior
      << "; seed=" << p.seed << "; m=" << dataset.n_episodes() << '\n';
  for (const auto& tr : dataset.transitions()) {
    out << tr.episode_id << ',' << tr.t << ',' << tr.state << ',' << tr.action << ','
        << format_number(tr.reward) << ',' << tr.next_state << ',' << (tr.done ? 1 : 0) << '\n';
  }
}

namespace {

std::string header_field(const std::string& header, const std::string& key, std::size_t line) {
  const std::string needle = key + "=";
  std::stringstream ss(header);
  std::string part;
  while (std::getline(ss, part, ';')) {
    const auto first = part.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    part = part.substr(first);
    if (part.rfind(needle, 0) == 0) return part.substr(needle.size());
  }
  throw ParseError("dataset header lacks '" + key + "'", line);
}

template <typename T>
T parse_field(const std::string& text, const char* what, std::size_t line) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !in.eof()) {
    throw ParseError(std::string("bad ") + what + " '" + text + "'", line);
  }
  return value;
}

}  // namespace

Dataset read_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", line_no);
  const std::string magic = "# opesel-dataset v1;";
  if (line.rfind(magic, 0) != 0) throw ParseError("missing opesel-dataset v1 header", line_no);
  Provenance provenance;
  provenance.env = header_field(line, "env", line_no);
  provenance.behavior = header_field(line, "behavior", line_no);
  provenance.seed = parse_field<std::uint64_t>(header_field(line, "seed", line_no), "seed", line_no);
  const auto m = parse_field<std::size_t>(header_field(line, "m", line_no), "m", line_no);

  std::vector<Transition> transitions;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) {
      throw ParseError("expected 7 comma-separated fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    }
    Transition tr;
    tr.episode_id = parse_field<int>(cells[0], "episode_id", line_no);
    tr.t = parse_field<int>(cells[1], "t", line_no);
    tr.state = parse_field<int>(cells[2], "state", line_no);
    tr.action = parse_field<int>(cells[3], "action", line_no);
    tr.reward = parse_field<double>(cells[4], "reward", line_no);
    tr.next_state = parse_field<int>(cells[5], "next_state", line_no);
    const int done = parse_field<int>(cells[6], "done", line_no);
    if (done != 0 && done != 1) throw ParseError("done must be 0 or 1", line_no);
    tr.done = done == 1;
    if (!transitions.empty()) {
      const auto& prev = transitions.back();
      if (prev.episode_id == tr.episode_id && tr.t != prev.t + 1) {
        throw ParseError("non-contiguous t in episode " + std::to_string(tr.episode_id), line_no);
      }
      if (prev.episode_id == tr.episode_id && prev.done) {
        throw ParseError("transition after done in episode " + std::to_string(tr.episode_id),
                         line_no);
      }
      if (prev.episode_id != tr.episode_id && tr.t != 1) {
        throw ParseError("episode " + std::to_string(tr.episode_id) + " does not start at t = 1",
                         line_no);
      }
    } else if (tr.t != 1) {
      throw ParseError("episode " + std::to_string(tr.episode_id) + " does not start at t = 1",
                       line_no);
    }
    transitions.push_back(tr);
  }
  Dataset dataset;
  try {
    dataset = Dataset(std::move(transitions), std::move(provenance));
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), line_no);
  }
  if (dataset.n_episodes() != m) {
    throw ParseError("header declares m=" + std::to_string(m) + " but file holds " +
                         std::to_string(dataset.n_episodes()) + " episodes",
                     1);
  }
  return dataset;
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
  std::ostringstream out;
  write_dataset(out, dataset);
  write_file_atomic(path, out.str());
}

Dataset load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
  return read_dataset(in);
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split: fraction must lie in (0, 1)");
  }
  const std::size_t m = dataset.n_episodes();
  std::vector<std::size_t> order(m);
  for (std::size_t j = 0; j < m; ++j) order[j] = j;
  Rng rng(seed);
  shuffle(order, rng);
  const auto first_count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m)));
  std::vector<bool> in_first(m, false);
  for (std::size_t k = 0; k < first_count; ++k) in_first[order[k]] = true;

  std::vector<Transition> first, second;
  for (std::size_t j = 0; j < m; ++j) {
    const auto ep = dataset.episode(j);
    auto& target = in_first[j] ? first : second;
    target.insert(target.end(), ep.begin(), ep.end());
  }
  return {Dataset(std::move(first), dataset.provenance()),
          Dataset(std::move(second), dataset.provenance())};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace opesel
