"""What unmeasured confounding does to the estimates.

An unmeasured variable ``U`` acts on survival or on cost.  The pipeline
only sees ``l``, so the NBS estimates drift away from the truth.  Cost
confounding hurts most at small willingness-to-pay, where cost dominates
the net benefit; survival confounding grows with ``lambda``.

    python demos/confounding.py
"""

import numpy as np

from nbsreg import run_pipeline
from nbsreg.simulation import ScenarioConfig, generate_scenario_data, true_theta_oracle

for kind in ("cost", "survival"):
    cfg = ScenarioConfig(n=5000, censoring_target=0.30, confounding=kind, level="high")
    spec = cfg.pipeline_spec()
    est = np.mean([run_pipeline(generate_scenario_data(cfg, np.random.default_rng(s)), spec).thetas
                   for s in range(10)], axis=0)
    print(f"\n{kind} confounding (high), mean over 10 datasets of n=5000")
    for i, lam in enumerate(spec.lambdas):
        for j, prof in enumerate(spec.profiles):
            truth = true_theta_oracle(cfg, lam, prof["x"], 200_000)
            print(f"  lambda={lam:>4g} x={prof['x']}: truth {truth:.3f}  estimate {est[i, j]:.3f}  "
                  f"bias {est[i, j] - truth:+.3f}")
