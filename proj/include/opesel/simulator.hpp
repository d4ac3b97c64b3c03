#pragma once

#include "opesel/mdp.hpp"
#include "opesel/rng.hpp"

#include <string>

namespace opesel {

struct StepResult {
  int next_state = 0;
  double reward = 0.0;
  bool done = false;
};

/// Episodic environment over integer state indices with a known exact model.
class Simulator {
 public:
  virtual ~Simulator() = default;

  virtual std::string label() const = 0;
  virtual int n_states() const = 0;
  virtual int n_actions() const = 0;
  virtual int initial_state(Rng& rng) const = 0;
  virtual StepResult step(int state, int action, Rng& rng) const = 0;
  virtual TabularMDP exact_mdp(double discount) const = 0;
};

}  // namespace opesel
