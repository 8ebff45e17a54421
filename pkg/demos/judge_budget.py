"""Compare system rankings from a noisy judge against human labels.

A ladder of simulated recommenders is pooled, labelled by the world's
ground truth ("human") and by a noisy synthetic judge, and Kendall's tau
between the two system rankings is reported per label budget.  Results are
written to ./out/judge_budget.
"""

from pathlib import Path

from recjudge.analysis import grade_gap_sweep, ranking_agreement
from recjudge.corpus import Qrels, SplitSpec, split
from recjudge.judge import synthetic_oracle_verdict
from recjudge.pooling import build_pool
from recjudge.simlab import WorldSpec, generate_world, quality_ladder, run_recommender

SEED = 0
world = generate_world(WorldSpec(n_users=51, n_items=2000, interactions_per_user=60, seed=SEED))
train, _ = split(world.interactions, SplitSpec("global_time", cutoff_timestamp=10**12))
runs = [run_recommender(r, world, train, 100) for r in quality_ladder(14, seed=SEED, low=0.3, high=0.7)]
human = world.truth_qrels(build_pool(runs, 50).pairs())
judge = Qrels(
    ((u, i), synthetic_oracle_verdict(u, i, human, 2.0, SEED, item_bias=3.0).overall) for (u, i), _ in human.pairs()
)

report, _ = ranking_agreement(runs, human, judge, budgets=[10, 50, 100, None], seed=SEED)
print(report.table.to_string(index=False))
gaps = grade_gap_sweep(human, judge)
print(gaps.table.to_string(index=False))

out = Path("out/judge_budget")
report.write(out)
gaps.write(out)
print(f"reports written to {out}/")
