#pragma once

// Sepsis treatment simulator: 1,440 patient states plus discharge and death
// absorbing states, 8 actions formed by three binary treatments.

#include "opesel/simulator.hpp"

#include <Eigen/Dense>

#include <array>
#include <optional>

namespace opesel::sepsis {

inline constexpr int kNumPatientStates = 1440;
inline constexpr int kDischarge = 1440;
inline constexpr int kDeath = 1441;
inline constexpr int kNumStates = 1442;
inline constexpr int kNumActions = 8;
inline constexpr int kFeatureDim = 21;
inline constexpr int kMaxEpisodeLength = 20;

/// Levels: hr, sbp in {0: L, 1: N, 2: H}; o2 in {0: L, 1: N};
/// glu in {0: LL, 1: L, 2: N, 3: H, 4: HH}; treatment and diabetes flags in {0, 1}.
struct State {
  int hr = 1;
  int sbp = 1;
  int o2 = 1;
  int glu = 2;
  int abx = 0;
  int vaso = 0;
  int vent = 0;
  int diab = 0;

  bool operator==(const State&) const = default;

  int num_abnormal() const;
  bool treatments_off() const { return abx == 0 && vaso == 0 && vent == 0; }
  /// Three or more abnormal vitals.
  bool death_eligible() const { return num_abnormal() >= 3; }
  /// All vitals normal and every treatment stopped.
  bool discharge_eligible() const { return num_abnormal() == 0 && treatments_off(); }
  bool terminating() const { return death_eligible() || discharge_eligible(); }
};

struct Action {
  int abx = 0;
  int vent = 0;
  int vaso = 0;

  static Action decode(int index);
  int encode() const { return abx * 4 + vent * 2 + vaso; }
};

/// Mixed-radix index, most significant first: hr(3), sbp(3), o2(2), glu(5),
/// abx(2), vaso(2), vent(2), diab(2). Indices 1440 and 1441 are the absorbing
/// discharge and death states. Dataset files store these indices.
int encode_state(const State& state);
State decode_state(int index);
bool is_absorbing(int index);

/// One-hot per variable block (sizes 3,3,2,5,2,2,2,2, same order as the index);
/// absorbing states map to the zero vector.
Eigen::VectorXd encode_features(int index);
Eigen::VectorXd encode_features(const State& state);
/// Inverse of encode_features for valid one-hot vectors; nullopt otherwise.
std::optional<State> decode_features(const Eigen::VectorXd& features);
/// Row s holds encode_features(s), for all 1442 indices.
Eigen::MatrixXd feature_matrix();

/// Applies one step of patient dynamics with sequential random draws:
/// antibiotics, ventilation and vasopressor effects (in that order), then
/// spontaneous fluctuation of every vital no treatment event targeted.
/// Treatment flags are updated to the action. No termination handling.
State apply_dynamics(const State& state, const Action& action, Rng& rng);

/// All outcomes of apply_dynamics with their probabilities, enumerated
/// exactly over the independent random branches.
std::vector<std::pair<State, double>> dynamics_distribution(const State& state,
                                                            const Action& action);

class Simulator final : public opesel::Simulator {
 public:
  std::string label() const override { return "sepsis"; }
  int n_states() const override { return kNumStates; }
  int n_actions() const override { return kNumActions; }

  /// diab = 1 w.p. 0.2, then uniform over the 303 non-terminating states with
  /// that diabetes value.
  int initial_state(Rng& rng) const override;

  /// From a terminating state any action moves to discharge (+1) or death (-1)
  /// and ends the episode; otherwise the dynamics apply with reward 0.
  /// Absorbing states step to themselves with reward 0 and done.
  StepResult step(int state, int action, Rng& rng) const override;

  TabularMDP exact_mdp(double discount) const override;
};

/// Indices of the non-terminating states, split by diabetes flag (303 each).
const std::array<std::vector<int>, 2>& initial_state_support();

}  // namespace opesel::sepsis
