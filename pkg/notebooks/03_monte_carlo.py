# %% [markdown]
# # Monte-Carlo comparison
#
# Twenty paired-seed runs per scenario, position RMSE after a 200-step
# burn-in, summarised by mean, median and quartiles. Pass ``workers`` to
# spread runs over processes; results do not depend on it.
#
# A full run takes a few minutes on one core. Set ``RUNS`` lower for a
# quick look.

# %%
import os

from mccfusion import ScenarioConfig, run_monte_carlo

RUNS = 20
workers = os.cpu_count() or 1

tables = {
    1: run_monte_carlo(ScenarioConfig(scenario=1), ("kf", "mcckf"), n_runs=RUNS, workers=workers),
    2: run_monte_carlo(ScenarioConfig(scenario=2), ("kf", "mcckf", "mcckf2"), n_runs=RUNS,
                       workers=workers),
}

# %%
for scenario, t in tables.items():
    print(f"scenario {scenario} ({t.runs} runs, {t.failure_count} failed)")
    for f in t.filters:
        sx, sy = t.stats[f]["x"], t.stats[f]["y"]
        print(f"  {f:6s} x mean {sx['mean']:.4f} [{sx['p25']:.4f}, {sx['p75']:.4f}]"
              f"  y mean {sy['mean']:.4f} [{sy['p25']:.4f}, {sy['p75']:.4f}]")
    for a in "xy":
        print(f"  MCC-KF improvement over KF on {a}: {t.improvement('mcckf', 'kf', a):.1%}")

# %% [markdown]
# The same tables, plus the figure CSVs, come out of the command line tool:
#
#     mccfusion --scenario 2 --filters kf,mcckf,mcckf2 --out results
