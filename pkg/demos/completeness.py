"""How incomplete are split-derived qrels, and does holding out more help?

Generates a synthetic world, holds out a growing share of each user's
history, and reports Judged@100 for a popularity baseline.
"""

from recjudge.corpus import SplitSpec, derive_qrels_from_test, split
from recjudge.corpus.splitting import implicit_grade_map
from recjudge.metrics import judged_at_k
from recjudge.simlab import WorldSpec, generate_world, popularity_recommender, run_recommender

world = generate_world(WorldSpec(n_users=200, n_items=2000, interactions_per_user=60, seed=0))
print("test fraction  Judged@100")
for test_fraction in (0.2, 0.4, 0.6, 0.8):
    train, test = split(world.interactions, SplitSpec("per_user_time_ordered", 1.0 - test_fraction))
    qrels = derive_qrels_from_test(test, implicit_grade_map())
    run = run_recommender(popularity_recommender(), world, train, 100)
    print(f"{test_fraction:>13.1f}  {judged_at_k(run, qrels, 100).aggregate:.3f}")
