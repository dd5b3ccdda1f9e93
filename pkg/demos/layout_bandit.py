"""Thompson sampling over page layouts, with and without an empirical prior.

Both policies share the environment, the random-phase arms and the reward
noise, so their difference comes from the prior alone.
"""

from ebblip import EnvironmentSpec, FIRST_ORDER, SECOND_ORDER, generate_environment, run_bandit
from ebblip.features import LayoutSpace

space = LayoutSpace((2, 3, 3, 2))
for seed in range(4):
    env = generate_environment(EnvironmentSpec(space, {FIRST_ORDER: 0.6, SECOND_ORDER: 0.2},
                                               seed=seed))
    line = []
    for policy in ("standard", "eb"):
        res = run_bandit(env, policy, 20_000, random_phase=2000, seed=seed)
        learn = res.regret[res.random_phase:].sum()
        line.append(f"{policy} total {res.cumulative_regret[-1]:7.1f} (learning {learn:6.2f})")
    print(f"seed {seed}: " + "; ".join(line))
