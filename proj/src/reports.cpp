#include "opesel/reports.hpp"

#include "opesel/selection.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace opesel {

namespace {

using Json = nlohmann::ordered_json;

std::string full_precision(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double parse_double(const std::string& text, std::size_t line) {
  char* end = nullptr;
  const double x = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0') throw ParseError("bad number '" + text + "'", line);
  return x;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

/// Non-comment, non-empty lines with their 1-based line numbers; the first
/// is the column header and is checked against `columns`.
std::vector<std::pair<std::size_t, std::string>> data_lines(std::istream& in, const std::string& columns) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != columns) throw ParseError("expected column header '" + columns + "'", line_no);
      header_seen = true;
      continue;
    }
    out.emplace_back(line_no, line);
  }
  if (!header_seen) throw ParseError("missing column header '" + columns + "'", line_no);
  return out;
}

Json optional_number(std::optional<double> x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x;
}

}  // namespace

const std::vector<OpeEstimate>& ScoreTable::of(const std::string& method) const {
  const auto it = std::find(methods.begin(), methods.end(), method);
  if (it == methods.end()) throw std::out_of_range("no scores for method '" + method + "'");
  return estimates[static_cast<std::size_t>(it - methods.begin())];
}

std::vector<double> ScoreTable::scores(const std::string& method) const {
  std::vector<double> out;
  for (const auto& est : of(method)) {
    double s = est.score();
    if (method == "rms_tde" && est.defined) s = -s;
    out.push_back(s);
  }
  return out;
}

void write_scores(std::ostream& out, const ScoreTable& table, const std::string& header) {
  out << comment_block(header);
  out << "policy_id,method,hyperparams,value,defined,diagnostics\n";
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    for (std::size_t p = 0; p < table.policy_ids.size(); ++p) {
      const auto& est = table.estimates[m][p];
      out << table.policy_ids[p] << ',' << table.methods[m] << ',' << est.hyperparams << ','
          << (est.defined ? full_precision(est.value) : "nan") << ',' << (est.defined ? 1 : 0) << ',';
      for (std::size_t k = 0; k < est.diagnostics.size(); ++k) {
        out << (k ? ";" : "") << est.diagnostics[k].first << '=' << full_precision(est.diagnostics[k].second);
      }
      out << '\n';
    }
  }
}

ScoreTable read_scores(std::istream& in) {
  ScoreTable table;
  std::map<std::string, std::size_t> method_index;
  std::map<std::string, std::size_t> policy_index;
  std::vector<std::vector<std::pair<std::size_t, OpeEstimate>>> rows;
  for (const auto& [line_no, line] : data_lines(in, "policy_id,method,hyperparams,value,defined,diagnostics")) {
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw ParseError("expected 6 fields, got " + std::to_string(cells.size()), line_no);
    auto [pit, new_policy] = policy_index.try_emplace(cells[0], table.policy_ids.size());
    if (new_policy) table.policy_ids.push_back(cells[0]);
    auto [mit, new_method] = method_index.try_emplace(cells[1], table.methods.size());
    if (new_method) {
      table.methods.push_back(cells[1]);
      rows.emplace_back();
    }
    OpeEstimate est;
    est.method = cells[1];
    est.hyperparams = cells[2];
    if (cells[4] != "0" && cells[4] != "1") throw ParseError("defined must be 0 or 1", line_no);
    est.defined = cells[4] == "1";
    est.value = parse_double(cells[3], line_no);
    std::stringstream diag(cells[5]);
    std::string item;
    while (std::getline(diag, item, ';')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParseError("bad diagnostic '" + item + "'", line_no);
      est.diagnostics.emplace_back(item.substr(0, eq), parse_double(item.substr(eq + 1), line_no));
    }
    rows[mit->second].emplace_back(pit->second, std::move(est));
  }
  table.estimates.resize(table.methods.size());
  for (std::size_t m = 0; m < rows.size(); ++m) {
    table.estimates[m].resize(table.policy_ids.size());
    std::vector<bool> seen(table.policy_ids.size(), false);
    for (auto& [p, est] : rows[m]) {
      if (seen[p]) throw std::runtime_error("duplicate score for " + table.policy_ids[p] + "/" + table.methods[m]);
      seen[p] = true;
      table.estimates[m][p] = std::move(est);
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw std::runtime_error("method " + table.methods[m] + " lacks scores for some policies");
    }
  }
  return table;
}

void write_truths(std::ostream& out, const Truths& truths, const std::string& header) {
  out << comment_block(header);
  out << "policy_id,truth\n";
  for (std::size_t i = 0; i < truths.policy_ids.size(); ++i) {
    out << truths.policy_ids[i] << ',' << full_precision(truths.values[i]) << '\n';
  }
}

Truths read_truths(std::istream& in) {
  Truths truths;
  for (const auto& [line_no, line] : data_lines(in, "policy_id,truth")) {
    const auto cells = split_csv(line);
    if (cells.size() != 2) throw ParseError("expected 2 fields", line_no);
    truths.policy_ids.push_back(cells[0]);
    truths.values.push_back(parse_double(cells[1], line_no));
  }
  return truths;
}

MethodSummary summarize_method(const std::string& name, const std::vector<double>& scores,
                               const std::vector<double>& truths, const std::vector<std::string>& ids) {
  MethodSummary s;
  s.method = name;
  const auto k = scores.size();
  s.spearman = spearman_rho(scores, truths);
  s.regret_at_1 = regret_at_n(scores, truths, 1);
  s.regret_at_5 = regret_at_n(scores, truths, std::min<std::size_t>(5, k));
  s.regret_at_10 = regret_at_n(scores, truths, std::min<std::size_t>(10, k));
  s.chosen = ids[order_by_score(scores).front()];
  return s;
}

SelectionReport make_report(const ScoreTable& scores, const Truths& truths,
                            const ExperimentConfig& config, std::uint64_t seed) {
  if (truths.policy_ids != scores.policy_ids) {
    throw std::invalid_argument("make_report: truths and scores list different policies");
  }
  const std::size_t k = scores.policy_ids.size();
  if (k < 2) throw std::invalid_argument("make_report: need at least two candidates");
  SelectionReport report;
  report.seed = seed;
  report.policy_ids = scores.policy_ids;
  report.truths = truths.values;
  report.scores = scores;
  for (const auto& m : scores.methods) {
    report.methods.push_back(summarize_method(m, scores.scores(m), truths.values, scores.policy_ids));
  }

  report.stage1 = config.stage1;
  report.stage2 = config.stage2;
  report.alpha = config.resolved_alpha(k);
  const auto first = scores.scores(config.stage1);
  const auto second = scores.scores(config.stage2);
  const auto chosen = two_stage_select(first, [&](std::size_t i) { return second[i]; },
                                       static_cast<std::size_t>(report.alpha));
  report.stage2_calls = chosen.stage2_calls;
  for (std::size_t i : chosen.subset) report.subset.push_back(scores.policy_ids[i]);

  // The two-stage ranking: the subset by stage-2 score, then the rest by stage-1 score.
  std::vector<std::size_t> ranked(chosen.subset.size());
  std::iota(ranked.begin(), ranked.end(), std::size_t{0});
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    const double sa = chosen.stage2_scores[a];
    const double sb = chosen.stage2_scores[b];
    return sa > sb || (sa == sb && chosen.subset[a] < chosen.subset[b]);
  });
  std::vector<double> staged(k, 0.0);
  std::vector<bool> kept(k, false);
  double next = static_cast<double>(k);
  for (std::size_t r : ranked) {
    staged[chosen.subset[r]] = next--;
    kept[chosen.subset[r]] = true;
  }
  for (std::size_t i : order_by_score(first)) {
    if (!kept[i]) staged[i] = next--;
  }
  auto two_stage = summarize_method("two_stage", staged, truths.values, scores.policy_ids);
  two_stage.chosen = scores.policy_ids[chosen.chosen];
  report.methods.push_back(std::move(two_stage));

  const std::vector<std::vector<double>> pair{first, second};
  report.methods.push_back(summarize_method("average_score", average_score(pair), truths.values, scores.policy_ids));
  report.methods.push_back(summarize_method("average_rank", average_rank(pair), truths.values, scores.policy_ids));
  return report;
}

void write_report_csv(std::ostream& out, const SelectionReport& report, const std::string& header) {
  out << comment_block(header);
  const auto& methods = report.scores.methods;
  out << "policy_id,truth";
  for (const auto& m : methods) out << ',' << m;
  out << ",rank_truth";
  for (const auto& m : methods) out << ",rank_" << m;
  out << '\n';

  auto descending_ranks = [](std::vector<double> v) {
    for (double& x : v) x = -x;
    return average_ranks(v);
  };
  std::vector<std::vector<double>> ranks;
  for (const auto& m : methods) ranks.push_back(descending_ranks(report.scores.scores(m)));
  const auto truth_ranks = descending_ranks(report.truths);
  for (std::size_t p = 0; p < report.policy_ids.size(); ++p) {
    out << report.policy_ids[p] << ',' << full_precision(report.truths[p]);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const auto& est = report.scores.estimates[m][p];
      out << ',' << (est.defined ? full_precision(est.value) : "nan");
    }
    out << ',' << full_precision(truth_ranks[p]);
    for (std::size_t m = 0; m < methods.size(); ++m) out << ',' << full_precision(ranks[m][p]);
    out << '\n';
  }
}

namespace {

Json method_json(const MethodSummary& s) {
  Json j;
  j["spearman"] = optional_number(s.spearman);
  j["regret@1"] = s.regret_at_1;
  j["regret@5"] = s.regret_at_5;
  j["regret@10"] = s.regret_at_10;
  j["chosen"] = s.chosen;
  return j;
}

}  // namespace

std::string summary_json(const SelectionReport& report, const ExperimentConfig& config) {
  Json j;
  j["config"] = config.describe();
  j["seed"] = report.seed;
  j["n_candidates"] = report.policy_ids.size();
  const double best = *std::max_element(report.truths.begin(), report.truths.end());
  j["best_truth"] = best;
  Json methods = Json::object();
  for (const auto& s : report.methods) methods[s.method] = method_json(s);
  j["methods"] = methods;
  Json staged;
  staged["stage1"] = report.stage1;
  staged["stage2"] = report.stage2;
  staged["alpha"] = report.alpha;
  staged["stage2_calls"] = report.stage2_calls;
  staged["subset"] = report.subset;
  j["two_stage"] = staged;
  return j.dump(2) + "\n";
}

std::string aggregate_json(const std::vector<SelectionReport>& reports, const ExperimentConfig& config,
                           const std::vector<std::string>& failures) {
  Json j;
  j["config"] = config.describe();
  std::vector<std::uint64_t> seeds;
  for (const auto& r : reports) seeds.push_back(r.seed);
  j["seeds"] = seeds;
  j["failures"] = failures;
  Json methods = Json::object();
  if (!reports.empty()) {
    for (std::size_t m = 0; m < reports.front().methods.size(); ++m) {
      const std::string name = reports.front().methods[m].method;
      std::vector<double> rhos;
      std::vector<double> r1;
      std::vector<double> r5;
      std::vector<double> r10;
      for (const auto& r : reports) {
        const auto& s = r.methods[m];
        if (s.spearman) rhos.push_back(*s.spearman);
        r1.push_back(s.regret_at_1);
        r5.push_back(s.regret_at_5);
        r10.push_back(s.regret_at_10);
      }
      auto stats = [](std::vector<double> v) {
        Json out;
        if (v.empty()) {
          out["n"] = 0;
          return out;
        }
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        std::sort(v.begin(), v.end());
        auto quantile = [&](double q) {
          const double pos = q * static_cast<double>(v.size() - 1);
          const auto lo = static_cast<std::size_t>(std::floor(pos));
          const auto hi = static_cast<std::size_t>(std::ceil(pos));
          return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
        };
        out["n"] = v.size();
        out["mean"] = mean;
        out["std"] = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        out["min"] = v.front();
        out["q25"] = quantile(0.25);
        out["median"] = quantile(0.5);
        out["q75"] = quantile(0.75);
        out["max"] = v.back();
        return out;
      };
      Json entry;
      entry["spearman"] = stats(rhos);
      entry["regret@1"] = stats(r1);
      entry["regret@5"] = stats(r5);
      entry["regret@10"] = stats(r10);
      methods[name] = entry;
    }
  }
  j["methods"] = methods;
  return j.dump(2) + "\n";
}

}  // namespace opesel
