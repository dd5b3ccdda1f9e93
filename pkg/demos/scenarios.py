"""Supervised scenarios: plain model, empirical-prior reset and a naive reset.

Also sweeps fixed prior variances on the same stream.
"""

from ebblip import (
    BootstrapConfig,
    EnvironmentSpec,
    ScenarioSpec,
    generate_environment,
    generate_supervised_stream,
    run_scenarios,
    run_tau_sweep,
)
from ebblip.simulate import default_synthetic_schema

env = generate_environment(EnvironmentSpec(default_synthetic_schema(), seed=4))
stream = generate_supervised_stream(env, 5000, 6, seed=4)
spec = ScenarioSpec(bootstrap=BootstrapConfig(seed=4))

for name, series in run_scenarios(spec, stream).items():
    print(f"{name:>11}: log loss per batch", [round(float(v), 4) for v in series.column("log_loss")])
for name, series in run_tau_sweep(spec, stream).items():
    print(f"{name:>22}: final log loss {series.rows[-1].log_loss:.4f}")
