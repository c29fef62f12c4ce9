"""Why player 1 must anticipate player 2's reaction to its own innovation.

Player 2 applies a gain to its innovation psi.  Part of psi is predictable
from player 1's innovation phi whenever the process noise couples the two
subsystems, so player 1's estimate of u2 has to include that part.  Dropping
it leaves the law stable but measurably suboptimal.
"""

import numpy as np

from delqg import corpus
from delqg.model import Mode, Pattern
from delqg.policy import NestedPolicy, synthesize
from delqg.sim import exact_closed_loop_cost

coupled = np.array([[2.0, 0.8], [0.8, 1.0]])
model = corpus.load("nested_2x2").model.replace(
    V=np.array([[2.0, 1.0], [1.0, 2.0]]), Q=coupled, S=coupled)
syn = synthesize(model, Pattern.ONE_INF, Mode.STATE)


class Uncorrected(NestedPolicy):
    """Player 1 predicts u2 from the Riccati part alone."""

    def player1(self, t, xhat, y1):
        u1, _ = super().player1(t, xhat, y1)
        return u1, -xhat @ self.gains.K[t, self.model.dims.m1:].T


naive = Uncorrected(model, Pattern.ONE_INF, Mode.STATE, syn.est, gains=syn.gains, F=syn.F)
print(f"optimal law          {syn.cost:.6f}")
print(f"without correction   {exact_closed_loop_cost(model, naive):.6f}")
