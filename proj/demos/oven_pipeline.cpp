// Library walkthrough on the oven: simulate, monitor, certify, identify.
#include <iostream>

#include "safectl/certify.hpp"
#include "safectl/sindy.hpp"
#include "safectl/stl.hpp"
#include "safectl/systems.hpp"

using namespace safectl;

int main() {
  const OvenParams p;
  SimulationSettings sim;
  sim.dt = 0.01;
  sim.horizon = 60.0;
  const Trace trace = integrate(OvenSystem{p}, baseline_controller(p), State::Constant(1, 70.0), sim);
  std::cout << "final temperature " << trace.final_state()[0] << " F\n";

  const OvenSpecReport specs = check_oven_specs(trace, p);
  for (const auto& e : specs.entries())
    std::cout << e.name << ": " << to_string(e.formula) << "  robustness " << e.robustness << '\n';

  RiskConfig risk;
  const auto transition = OffsetLinearTransition::oven(p, 1.0);
  const FalsifierResult r = falsify(abs_offset_lyapunov(p.temp_desired), transition,
                                    State::Constant(1, p.temp_desired), risk, FalsifierConfig{});
  std::cout << "|x - 200| as Lyapunov function: " << to_string(r.verdict) << " (" << r.boxes_processed
            << " boxes)\n";

  const SparseModel model = identify(trace, 2);
  write_model_report(std::cout, model, SindyConfig{});
  return 0;
}
