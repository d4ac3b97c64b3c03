#include "opesel/sepsis.hpp"

#include <map>
#include <stdexcept>

namespace opesel::sepsis {

namespace {

constexpr std::array<int, 8> kRadix = {3, 3, 2, 5, 2, 2, 2, 2};

std::array<int, 8> fields(const State& s) {
  return {s.hr, s.sbp, s.o2, s.glu, s.abx, s.vaso, s.vent, s.diab};
}

State from_fields(const std::array<int, 8>& f) {
  return {f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7]};
}

}  // namespace

int State::num_abnormal() const {
  return (hr != 1) + (sbp != 1) + (o2 != 1) + (glu != 2);
}

Action Action::decode(int index) {
  if (index < 0 || index >= kNumActions) throw std::out_of_range("sepsis: action index");
  return {index / 4, (index / 2) % 2, index % 2};
}

int encode_state(const State& state) {
  const auto f = fields(state);
  int index = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] < 0 || f[i] >= kRadix[i]) throw std::out_of_range("sepsis: state level");
    index = index * kRadix[i] + f[i];
  }
  return index;
}

State decode_state(int index) {
  if (index < 0 || index >= kNumPatientStates) {
    throw std::out_of_range("sepsis: not a patient state index");
  }
  std::array<int, 8> f{};
  for (std::size_t i = f.size(); i-- > 0;) {
    f[i] = index % kRadix[i];
    index /= kRadix[i];
  }
  return from_fields(f);
}

bool is_absorbing(int index) { return index == kDischarge || index == kDeath; }

Eigen::VectorXd encode_features(const State& state) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(kFeatureDim);
  const auto f = fields(state);
  int offset = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    x(offset + f[i]) = 1.0;
    offset += kRadix[i];
  }
  return x;
}

Eigen::VectorXd encode_features(int index) {
  if (is_absorbing(index)) return Eigen::VectorXd::Zero(kFeatureDim);
  return encode_features(decode_state(index));
}

std::optional<State> decode_features(const Eigen::VectorXd& features) {
  if (features.size() != kFeatureDim) return std::nullopt;
  std::array<int, 8> f{};
  int offset = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    int hot = -1;
    for (int k = 0; k < kRadix[i]; ++k) {
      const double x = features(offset + k);
      if (x == 1.0) {
        if (hot >= 0) return std::nullopt;
        hot = k;
      } else if (x != 0.0) {
        return std::nullopt;
      }
    }
    if (hot < 0) return std::nullopt;
    f[i] = hot;
    offset += kRadix[i];
  }
  return from_fields(f);
}

Eigen::MatrixXd feature_matrix() {
  Eigen::MatrixXd x(kNumStates, kFeatureDim);
  for (int s = 0; s < kNumStates; ++s) x.row(s) = encode_features(s).transpose();
  return x;
}

namespace {

// Spontaneous +/-1 move: down w.p. p, up w.p. p, staying put at the range ends.
int fluctuate(int level, int max_level, double p, Rng& rng) {
  const double u = rng.uniform();
  if (u < p) return level > 0 ? level - 1 : level;
  if (u < 2.0 * p) return level < max_level ? level + 1 : level;
  return level;
}

}  // namespace

State apply_dynamics(const State& state, const Action& action, Rng& rng) {
  State next = state;
  bool hr_free = true;
  bool sbp_free = true;
  bool o2_free = true;
  bool glu_free = true;

  // antibiotics
  if (action.abx == 1) {
    if (next.hr == 2 && rng.uniform() < 0.5) next.hr = 1;
    if (next.sbp == 2 && rng.uniform() < 0.5) next.sbp = 1;
    hr_free = sbp_free = false;
  } else if (state.abx == 1) {
    if (next.hr == 1 && rng.uniform() < 0.1) next.hr = 2;
    if (next.sbp == 1 && rng.uniform() < 0.5) next.sbp = 2;
    hr_free = sbp_free = false;
  }

  // ventilation
  if (action.vent == 1) {
    if (next.o2 == 0 && rng.uniform() < 0.7) next.o2 = 1;
    o2_free = false;
  } else if (state.vent == 1) {
    if (next.o2 == 1 && rng.uniform() < 0.1) next.o2 = 0;
    o2_free = false;
  }

  // vasopressors
  if (action.vaso == 1) {
    if (next.diab == 0) {
      if (next.sbp == 0) {
        if (rng.uniform() < 0.7) next.sbp = 1;
      } else if (next.sbp == 1) {
        if (rng.uniform() < 0.7) next.sbp = 2;
      }
    } else {
      if (next.sbp == 0) {
        const double u = rng.uniform();
        if (u < 0.5) {
          next.sbp = 1;
        } else if (u < 0.9) {
          next.sbp = 2;
        }
      } else if (next.sbp == 1) {
        if (rng.uniform() < 0.9) next.sbp = 2;
      }
      if (next.glu < 4 && rng.uniform() < 0.5) next.glu += 1;
    }
    sbp_free = glu_free = false;
  } else if (state.vaso == 1) {
    const double p = next.diab == 0 ? 0.1 : 0.05;
    if (next.sbp == 1) {
      if (rng.uniform() < p) next.sbp = 0;
    } else if (next.sbp == 2) {
      if (rng.uniform() < p) next.sbp = 1;
    }
    sbp_free = false;
  }

  if (hr_free) next.hr = fluctuate(next.hr, 2, 0.1, rng);
  if (sbp_free) next.sbp = fluctuate(next.sbp, 2, 0.1, rng);
  if (o2_free) next.o2 = fluctuate(next.o2, 1, 0.1, rng);
  if (glu_free) next.glu = fluctuate(next.glu, 4, next.diab == 1 ? 0.3 : 0.1, rng);

  next.abx = action.abx;
  next.vent = action.vent;
  next.vaso = action.vaso;
  return next;
}

namespace {

// Distribution over a single variable's level.
using Marginal = std::vector<std::pair<int, double>>;

Marginal point(int level) { return {{level, 1.0}}; }

// Moves `from` to `to` w.p. p when the current level equals `from`.
Marginal shift(const Marginal& in, int from, int to, double p) {
  Marginal out;
  for (const auto& [level, prob] : in) {
    if (level == from) {
      out.emplace_back(to, prob * p);
      out.emplace_back(level, prob * (1.0 - p));
    } else {
      out.emplace_back(level, prob);
    }
  }
  return out;
}

Marginal spread(const Marginal& in, int max_level, double p) {
  Marginal out;
  for (const auto& [level, prob] : in) {
    out.emplace_back(level > 0 ? level - 1 : level, prob * p);
    out.emplace_back(level < max_level ? level + 1 : level, prob * p);
    out.emplace_back(level, prob * (1.0 - 2.0 * p));
  }
  return out;
}

}  // namespace

std::vector<std::pair<State, double>> dynamics_distribution(const State& state,
                                                            const Action& action) {
  // hr, o2 and glu each evolve independently; sbp is touched by antibiotics
  // and vasopressors in sequence, which composes as a Markov chain on its level.
  Marginal hr = point(state.hr);
  Marginal sbp = point(state.sbp);
  Marginal o2 = point(state.o2);
  Marginal glu = point(state.glu);
  bool hr_free = true, sbp_free = true, o2_free = true, glu_free = true;

  if (action.abx == 1) {
    hr = shift(hr, 2, 1, 0.5);
    sbp = shift(sbp, 2, 1, 0.5);
    hr_free = sbp_free = false;
  } else if (state.abx == 1) {
    hr = shift(hr, 1, 2, 0.1);
    sbp = shift(sbp, 1, 2, 0.5);
    hr_free = sbp_free = false;
  }

  if (action.vent == 1) {
    o2 = shift(o2, 0, 1, 0.7);
    o2_free = false;
  } else if (state.vent == 1) {
    o2 = shift(o2, 1, 0, 0.1);
    o2_free = false;
  }

  if (action.vaso == 1) {
    Marginal next_sbp;
    for (const auto& [level, prob] : sbp) {
      if (state.diab == 0) {
        if (level == 0) {
          next_sbp.insert(next_sbp.end(), {{1, prob * 0.7}, {0, prob * 0.3}});
        } else if (level == 1) {
          next_sbp.insert(next_sbp.end(), {{2, prob * 0.7}, {1, prob * 0.3}});
        } else {
          next_sbp.emplace_back(level, prob);
        }
      } else {
        if (level == 0) {
          next_sbp.insert(next_sbp.end(), {{1, prob * 0.5}, {2, prob * 0.4}, {0, prob * 0.1}});
        } else if (level == 1) {
          next_sbp.insert(next_sbp.end(), {{2, prob * 0.9}, {1, prob * 0.1}});
        } else {
          next_sbp.emplace_back(level, prob);
        }
      }
    }
    sbp = std::move(next_sbp);
    if (state.diab == 1) {
      Marginal next_glu;
      for (const auto& [level, prob] : glu) {
        if (level < 4) {
          next_glu.insert(next_glu.end(), {{level + 1, prob * 0.5}, {level, prob * 0.5}});
        } else {
          next_glu.emplace_back(level, prob);
        }
      }
      glu = std::move(next_glu);
    }
    sbp_free = glu_free = false;
  } else if (state.vaso == 1) {
    const double p = state.diab == 0 ? 0.1 : 0.05;
    Marginal next_sbp;
    for (const auto& [level, prob] : sbp) {
      if (level == 1) {
        next_sbp.insert(next_sbp.end(), {{0, prob * p}, {1, prob * (1.0 - p)}});
      } else if (level == 2) {
        next_sbp.insert(next_sbp.end(), {{1, prob * p}, {2, prob * (1.0 - p)}});
      } else {
        next_sbp.emplace_back(level, prob);
      }
    }
    sbp = std::move(next_sbp);
    sbp_free = false;
  }

  if (hr_free) hr = spread(hr, 2, 0.1);
  if (sbp_free) sbp = spread(sbp, 2, 0.1);
  if (o2_free) o2 = spread(o2, 1, 0.1);
  if (glu_free) glu = spread(glu, 4, state.diab == 1 ? 0.3 : 0.1);

  std::map<int, double> joint;
  for (const auto& [h, ph] : hr) {
    for (const auto& [b, pb] : sbp) {
      for (const auto& [o, po] : o2) {
        for (const auto& [g, pg] : glu) {
          const double p = ph * pb * po * pg;
          if (p == 0.0) continue;
          State next{h, b, o, g, action.abx, action.vaso, action.vent, state.diab};
          joint[encode_state(next)] += p;
        }
      }
    }
  }
  std::vector<std::pair<State, double>> out;
  out.reserve(joint.size());
  for (const auto& [index, p] : joint) out.emplace_back(decode_state(index), p);
  return out;
}

const std::array<std::vector<int>, 2>& initial_state_support() {
  static const std::array<std::vector<int>, 2> support = [] {
    std::array<std::vector<int>, 2> by_diab;
    for (int s = 0; s < kNumPatientStates; ++s) {
      const State st = decode_state(s);
      if (!st.terminating()) by_diab[static_cast<std::size_t>(st.diab)].push_back(s);
    }
    return by_diab;
  }();
  return support;
}

int Simulator::initial_state(Rng& rng) const {
  const int diab = rng.uniform() < 0.2 ? 1 : 0;
  const auto& pool = initial_state_support()[static_cast<std::size_t>(diab)];
  return pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
}

StepResult Simulator::step(int state, int action, Rng& rng) const {
  if (is_absorbing(state)) return {state, 0.0, true};
  const State s = decode_state(state);
  if (s.death_eligible()) return {kDeath, -1.0, true};
  if (s.discharge_eligible()) return {kDischarge, 1.0, true};
  return {encode_state(apply_dynamics(s, Action::decode(action), rng)), 0.0, false};
}

TabularMDP Simulator::exact_mdp(double discount) const {
  TabularMDP mdp(kNumStates, kNumActions, discount);
  for (int s = 0; s < kNumPatientStates; ++s) {
    const State st = decode_state(s);
    for (int a = 0; a < kNumActions; ++a) {
      if (st.death_eligible()) {
        mdp.set_row(s, a, {{kDeath, 1.0}});
        mdp.set_reward(s, a, -1.0);
      } else if (st.discharge_eligible()) {
        mdp.set_row(s, a, {{kDischarge, 1.0}});
        mdp.set_reward(s, a, 1.0);
      } else {
        std::vector<Outcome> row;
        for (const auto& [next, p] : dynamics_distribution(st, Action::decode(a))) {
          row.push_back({encode_state(next), p});
        }
        mdp.set_row(s, a, std::move(row));
        mdp.set_reward(s, a, 0.0);
      }
    }
  }
  mdp.make_absorbing(kDischarge);
  mdp.make_absorbing(kDeath);

  std::vector<double> mu0(kNumStates, 0.0);
  const auto& support = initial_state_support();
  for (int diab = 0; diab < 2; ++diab) {
    const double mass = diab == 1 ? 0.2 : 0.8;
    const auto& pool = support[static_cast<std::size_t>(diab)];
    for (int s : pool) mu0[static_cast<std::size_t>(s)] = mass / static_cast<double>(pool.size());
  }
  mdp.set_initial_dist(std::move(mu0));
  return mdp;
}

}  // namespace opesel::sepsis
