#include "opesel/policy_learning.hpp"

#include "opesel/parallel.hpp"
#include "opesel/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace opesel {

double clip_value(double x) { return std::clamp(x, -kValueClip, kValueClip); }

TabularPolicy QFunction::greedy_policy() const {
  const auto actions = greedy();
  return TabularPolicy::deterministic(actions, n_actions());
}

int QFunction::greedy_action(const Eigen::VectorXd& features) const {
  if (!model) throw std::logic_error("QFunction::greedy_action: no network attached");
  const Eigen::VectorXd out = model->predict_one(features);
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < out.size(); ++a) {
    if (out(a) > out(best)) best = a;
  }
  return static_cast<int>(best);
}

Eigen::MatrixXd materialize(const nn::Model& model, const Eigen::MatrixXd& features) {
  return model.predict(features);
}

std::vector<QFunction> fqi_tabular(const Dataset& dataset, int n_states, int n_actions,
                                   int horizon, double discount) {
  if (horizon < 1) throw std::invalid_argument("fqi_tabular: horizon must be >= 1");
  const auto transitions = dataset.transitions();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_actions);
  for (const auto& tr : transitions) counts(tr.state, tr.action) += 1.0;

  std::vector<QFunction> out;
  out.reserve(static_cast<std::size_t>(horizon));
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n_states, n_actions);
  for (int h = 1; h <= horizon; ++h) {
    const Eigen::VectorXd v = q.rowwise().maxCoeff();
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_states, n_actions);
    for (const auto& tr : transitions) {
      const double y = tr.done ? tr.reward : tr.reward + discount * v(tr.next_state);
      sums(tr.state, tr.action) += clip_value(y);
    }
    q = (counts.array() > 0.0).select(sums.array() / counts.array().max(1.0), 0.0);
    out.push_back(QFunction{q, nullptr});
  }
  return out;
}

std::vector<QFunction> fqi_neural(const Dataset& dataset, const Eigen::MatrixXd& features,
                                  int n_actions, const nn::NetConfig& config,
                                  std::span<const int> checkpoints, double discount) {
  std::vector<int> wanted(checkpoints.begin(), checkpoints.end());
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  if (wanted.empty() || wanted.front() < 1) {
    throw std::invalid_argument("fqi_neural: checkpoints must be >= 1");
  }
  const auto transitions = dataset.transitions();
  if (transitions.empty()) throw std::invalid_argument("fqi_neural: empty dataset");

  nn::PatternSet patterns;
  const auto n = static_cast<Eigen::Index>(transitions.size());
  patterns.inputs.resize(n, features.cols());
  patterns.targets.resize(n, 1);
  patterns.columns.resize(transitions.size());
  patterns.heads = n_actions;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = transitions[static_cast<std::size_t>(i)];
    patterns.inputs.row(i) = features.row(tr.state);
    patterns.columns[static_cast<std::size_t>(i)] = tr.action;
  }

  std::vector<QFunction> out;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(features.rows(), n_actions);
  std::size_t next = 0;
  for (int h = 1; h <= wanted.back(); ++h) {
    const Eigen::VectorXd v = q.rowwise().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& tr = transitions[static_cast<std::size_t>(i)];
      const double y = tr.done ? tr.reward : tr.reward + discount * v(tr.next_state);
      patterns.targets(i, 0) = clip_value(y);
    }
    nn::NetConfig step = config;
    step.seed = derive_seed(config.seed, static_cast<std::uint64_t>(h));
    auto model = std::make_shared<nn::Model>(nn::fit_regressor(patterns, step));
    q = materialize(*model, features);
    if (h == wanted[next]) {
      out.push_back(QFunction{q, model});
      ++next;
    }
  }
  return out;
}

TabularPolicy soften(const TabularPolicy& policy, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("soften: epsilon must lie in [0, 1)");
  const int n_actions = policy.n_actions();
  if (n_actions < 2 || epsilon == 0.0) return policy;
  const double share = epsilon / static_cast<double>(n_actions - 1);
  Eigen::MatrixXd probs =
      (1.0 - epsilon) * policy.probs().array() + share * (1.0 - policy.probs().array());
  return TabularPolicy(std::move(probs));
}

std::string Candidate::hyperparams() const {
  std::ostringstream out;
  if (hidden_layers == 0) {
    out << "tabular;iteration=" << iteration;
  } else {
    out << "layers=" << hidden_layers << ";units=" << hidden_units
        << ";lr=" << format_number(learning_rate) << ";iteration=" << iteration;
  }
  return out.str();
}

namespace {

std::string candidate_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "p%03zu", index);
  return buf;
}

}  // namespace

CandidateSet build_tabular_candidates(const Dataset& dataset, int n_states, int n_actions,
                                      std::span<const int> iterations, double discount) {
  if (iterations.empty()) throw std::invalid_argument("build_tabular_candidates: no iterations");
  const int horizon = *std::max_element(iterations.begin(), iterations.end());
  auto qs = fqi_tabular(dataset, n_states, n_actions, horizon, discount);
  CandidateSet set;
  set.seed = dataset.provenance().seed;
  set.dataset_label = dataset.provenance().behavior;
  for (int it : iterations) {
    if (it < 1) throw std::invalid_argument("build_tabular_candidates: iterations must be >= 1");
    Candidate c;
    c.id = candidate_id(set.candidates.size());
    c.iteration = it;
    c.q = qs[static_cast<std::size_t>(it - 1)];
    c.actions = c.q.greedy();
    set.candidates.push_back(std::move(c));
  }
  return set;
}

CandidateSet build_candidates(const Dataset& dataset, const Eigen::MatrixXd& features,
                              int n_actions, const HyperGrid& grid, const nn::NetConfig& base,
                              std::uint64_t seed, double discount, int workers) {
  struct Run {
    int layers;
    int units;
    double lr;
  };
  std::vector<Run> runs;
  for (int layers : grid.hidden_layers) {
    for (int units : grid.hidden_units) {
      for (double lr : grid.learning_rates) runs.push_back({layers, units, lr});
    }
  }
  std::vector<std::vector<QFunction>> results(runs.size());
  parallel_for(runs.size(), workers, [&](std::size_t r) {
    nn::NetConfig config = base;
    config.hidden_layers = runs[r].layers;
    config.hidden_units = runs[r].units;
    config.learning_rate = runs[r].lr;
    config.seed = derive_seed(seed, r);
    results[r] = fqi_neural(dataset, features, n_actions, config, grid.fqi_iterations, discount);
  });

  std::vector<int> sorted = grid.fqi_iterations;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  CandidateSet set;
  set.seed = seed;
  set.dataset_label = dataset.provenance().behavior;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      Candidate c;
      c.id = candidate_id(set.candidates.size());
      c.hidden_layers = runs[r].layers;
      c.hidden_units = runs[r].units;
      c.learning_rate = runs[r].lr;
      c.iteration = sorted[k];
      c.q = results[r][k];
      c.actions = c.q.greedy();
      set.candidates.push_back(std::move(c));
    }
  }
  return set;
}

void write_qtable(std::ostream& out, const Eigen::MatrixXd& table) {
  out << table.rows() << ',' << table.cols() << '\n';
  char buf[32];
  for (Eigen::Index s = 0; s < table.rows(); ++s) {
    for (Eigen::Index a = 0; a < table.cols(); ++a) {
      std::snprintf(buf, sizeof buf, "%.17g", table(s, a));
      out << (a ? "," : "") << buf;
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_qtable(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_qtable: empty input");
  const auto comma = line.find(',');
  if (comma == std::string::npos) throw std::runtime_error("read_qtable: bad shape line");
  const long rows = std::stol(line.substr(0, comma));
  const long cols = std::stol(line.substr(comma + 1));
  Eigen::MatrixXd table(rows, cols);
  for (long s = 0; s < rows; ++s) {
    if (!std::getline(in, line)) throw std::runtime_error("read_qtable: truncated at row " + std::to_string(s));
    const char* p = line.c_str();
    for (long a = 0; a < cols; ++a) {
      char* end = nullptr;
      table(s, a) = std::strtod(p, &end);
      if (end == p) throw std::runtime_error("read_qtable: bad number in row " + std::to_string(s));
      p = *end == ',' ? end + 1 : end;
    }
  }
  return table;
}

void save_candidates(const CandidateSet& set, const std::filesystem::path& manifest,
                     const std::string& header_comment) {
  const auto dir = manifest.has_parent_path() ? manifest.parent_path() : std::filesystem::path(".");
  const std::string stem = manifest.stem().string();
  std::ostringstream out;
  out << "# opesel-candidates v1; seed=" << set.seed << "; dataset=" << set.dataset_label << '\n';
  if (!header_comment.empty()) {
    std::istringstream lines(header_comment);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
  }
  out << "policy_id,hidden_layers,hidden_units,learning_rate,iteration,qtable_path,model_path\n";
  for (const auto& c : set.candidates) {
    const std::string qpath = stem + "_q/" + c.id + ".txt";
    std::ostringstream q;
    write_qtable(q, c.q.table);
    write_file_atomic(dir / qpath, q.str());
    std::string mpath;
    if (c.q.model) {
      mpath = stem + "_models/" + c.id + ".txt";
      std::ostringstream m;
      nn::write_model(m, *c.q.model);
      write_file_atomic(dir / mpath, m.str());
    }
    out << c.id << ',' << c.hidden_layers << ',' << c.hidden_units << ','
        << format_number(c.learning_rate) << ',' << c.iteration << ',' << qpath << ',' << mpath
        << '\n';
  }
  write_file_atomic(manifest, out.str());
}

CandidateSet load_candidates(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  const auto dir = manifest.has_parent_path() ? manifest.parent_path() : std::filesystem::path(".");
  CandidateSet set;
  std::string line;
  std::size_t line_no = 0;
  bool saw_columns = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line_no == 1) {
        const auto seed_at = line.find("seed=");
        const auto data_at = line.find("dataset=");
        if (seed_at != std::string::npos) set.seed = std::stoull(line.substr(seed_at + 5));
        if (data_at != std::string::npos) set.dataset_label = line.substr(data_at + 8);
      }
      continue;
    }
    if (!saw_columns) {
      saw_columns = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == 6) cells.emplace_back();
    if (cells.size() != 7) {
      throw ParseError("expected 7 manifest fields, got " + std::to_string(cells.size()), line_no);
    }
    Candidate c;
    try {
      c.id = cells[0];
      c.hidden_layers = std::stoi(cells[1]);
      c.hidden_units = std::stoi(cells[2]);
      c.learning_rate = std::stod(cells[3]);
      c.iteration = std::stoi(cells[4]);
    } catch (const std::logic_error&) {
      throw ParseError("malformed manifest numbers", line_no);
    }
    std::ifstream q(dir / cells[5]);
    if (!q) throw ParseError("cannot open Q table " + cells[5], line_no);
    c.q.table = read_qtable(q);
    if (!cells[6].empty()) {
      c.q.model = std::make_shared<nn::Model>(nn::load_model(dir / cells[6]));
    }
    c.actions = c.q.greedy();
    set.candidates.push_back(std::move(c));
  }
  return set;
}

}  // namespace opesel
