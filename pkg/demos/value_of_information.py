"""How much does each communication link buy?

Compares the optimal state-feedback costs of the four information
patterns as the process noise grows.  Centralized control is the
floor and the one-way delayed pattern is the ceiling.
"""

from delqg import corpus
from delqg.model import Pattern
from delqg.policy import pattern_costs

sc = corpus.load("correlated_2x2")
order = [Pattern.CENTRALIZED, Pattern.NO_DELAY, Pattern.ONE_ZERO, Pattern.ONE_INF]
print("noise " + "".join(f"{p.value:>14s}" for p in order))
for scale in (0.0, 0.25, 0.5, 1.0, 2.0):
    costs = pattern_costs(sc.model.scaled_noise(scale))
    print(f"{scale:5.2f} " + "".join(f"{costs[p]:14.6f}" for p in order))
