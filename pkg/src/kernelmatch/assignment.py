"""Dense linear assignment by forward auction with epsilon scaling.

Payoffs are dense (n_targets, n_sources) score matrices: rows are target
vertices, columns are source vertices. Solutions maximize the total score.
Payoffs are integerized at a fixed relative resolution before the auction
runs, so results are exactly optimal w.r.t. the integerized scores.
"""

import numpy as np
from numba import njit

UNMATCHED = -1

#: relative resolution used to integerize payoffs (fraction of the spread)
INTEGER_RESOLUTION = 1e-9

#: epsilon-scaling shrink factor per auction phase
EPS_SCALING_FACTOR = 7.0


class Assignment:
    """A (partial) injective column-to-row map with its objective value.

    Parameters
    ----------
    target_of : (n_sources,) int array
        Target row per source column; UNMATCHED (-1) marks slack-absorbed
        sources.
    n_targets : int
    objective : float
        Total payoff over matched pairs.
    prices : (n_targets,) array, optional
        Final auction prices (original payoff units), for optimality
        certificates.
    epsilon : float
        Final auction epsilon in original payoff units.
    """

    def __init__(self, target_of, n_targets, objective=np.nan, prices=None, epsilon=0.0):
        t = np.asarray(target_of, dtype=np.int64).copy()
        matched = t[t != UNMATCHED]
        if matched.size and (matched.min() < 0 or matched.max() >= n_targets):
            raise ValueError("target index out of range")
        if np.unique(matched).size != matched.size:
            raise ValueError("assignment is not injective: a target row is used twice")
        self.target_of = t
        self.n_targets = int(n_targets)
        self.objective = float(objective)
        self.prices = None if prices is None else np.asarray(prices, dtype=np.float64)
        self.epsilon = float(epsilon)
        self.target_of.flags.writeable = False

    @property
    def n_sources(self):
        return self.target_of.size

    @property
    def matched_mask(self):
        return self.target_of != UNMATCHED

    @property
    def n_matched(self):
        return int(self.matched_mask.sum())

    @property
    def is_total(self):
        return bool(self.matched_mask.all())

    def pairs(self):
        """Matched (sources, targets) index arrays, ascending source order."""
        src = np.nonzero(self.matched_mask)[0]
        return src, self.target_of[src]

    def source_of(self):
        """Inverse map: (n_targets,) array, UNMATCHED where no source maps."""
        inv = np.full(self.n_targets, UNMATCHED, dtype=np.int64)
        src, tgt = self.pairs()
        inv[tgt] = src
        return inv

    def same_matching(self, other):
        return (
            self.n_targets == other.n_targets
            and np.array_equal(self.target_of, other.target_of)
        )

    def __repr__(self):
        return (
            f"Assignment({self.n_matched}/{self.n_sources} matched -> "
            f"{self.n_targets} targets, objective={self.objective:.6g})"
        )


def identity_assignment(n, payoff=None):
    t = np.arange(n, dtype=np.int64)
    obj = float(np.trace(payoff)) if payoff is not None else np.nan
    return Assignment(t, n, obj, prices=np.zeros(n), epsilon=0.0)


def integerize_payoff(payoff):
    """Round payoff to integer multiples of INTEGER_RESOLUTION * spread.

    Returns
    -------
    (a_int, resolution, offset) : a_int holds non-negative integral floats
        with payoff ~= a_int * resolution + offset.
    """
    a = np.asarray(payoff, dtype=np.float64)
    offset = float(a.min())
    spread = float(a.max()) - offset
    if spread == 0.0:
        return np.zeros_like(a), 0.0, offset
    res = INTEGER_RESOLUTION * spread
    return np.round((a - offset) / res), res, offset


@njit(cache=True)
def _auction_phases(a, eps_start, eps_final, theta):
    """Forward auction with epsilon scaling on an integral payoff matrix.

    Gauss-Seidel bidding: the lowest unassigned column bids first; a
    column's best row resolves value ties to the lowest row index.
    Prices persist across phases, assignments reset.
    """
    n = a.shape[0]
    prices = np.zeros(n)
    target_of = np.full(n, -1, dtype=np.int64)
    source_of = np.full(n, -1, dtype=np.int64)
    eps = eps_start
    while True:
        target_of[:] = -1
        source_of[:] = -1
        n_unassigned = n
        while n_unassigned > 0:
            for j in range(n):
                if target_of[j] != -1:
                    continue
                best_i = 0
                best_v = a[0, j] - prices[0]
                second_v = -np.inf
                for i in range(1, n):
                    v = a[i, j] - prices[i]
                    if v > best_v:
                        second_v = best_v
                        best_v = v
                        best_i = i
                    elif v > second_v:
                        second_v = v
                if second_v == -np.inf:
                    second_v = best_v
                prices[best_i] = a[best_i, j] - second_v + eps
                prev = source_of[best_i]
                if prev != -1:
                    target_of[prev] = -1
                    n_unassigned += 1
                source_of[best_i] = j
                target_of[j] = best_i
                n_unassigned -= 1
        if eps <= eps_final:
            break
        eps = eps / theta
        if eps < eps_final:
            eps = eps_final
    return target_of, prices


def solve_lap(payoff, eps_final=None):
    """Solve a square max-payoff linear assignment exactly via auction.

    Parameters
    ----------
    payoff : (n, n) array
        Rows are targets, columns are sources.
    eps_final : float, optional
        Final auction epsilon in payoff units. Defaults to
        resolution / (n + 1), which makes the result exactly optimal for
        the integerized payoff. The returned objective is within
        n * eps_final of the true maximum.

    Returns
    -------
    Assignment
    """
    a = np.asarray(payoff, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square payoff required, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("payoff contains non-finite entries")
    if eps_final is not None and eps_final <= 0:
        raise ValueError("eps_final must be positive")
    n = a.shape[0]

    a_int, res, _ = integerize_payoff(a)
    if res == 0.0:  # constant payoff: every permutation is optimal
        return identity_assignment(n, a)

    spread_int = float(a_int.max())
    eps_int_final = (1.0 / (n + 1)) if eps_final is None else eps_final / res
    eps_int_start = max(spread_int / 2.0, eps_int_final)
    target_of, prices_int = _auction_phases(
        a_int, eps_int_start, eps_int_final, EPS_SCALING_FACTOR
    )
    objective = float(a[target_of, np.arange(n)].sum())
    return Assignment(
        target_of, n, objective, prices=prices_int * res, epsilon=eps_int_final * res
    )


def solve_lap_rectangular(payoff, slack_value="auto", eps_final=None):
    """Solve a rectangular assignment by padding with constant slack rows.

    The payoff is (n_targets, n_sources); the smaller side is matched
    completely. Sources landing on slack rows come back UNMATCHED, and the
    matched objective is independent of the slack constant for any value
    strictly below all genuine payoffs.

    Parameters
    ----------
    slack_value : float or 'auto'
        'auto' uses min(payoff) - spread, strictly dominated by every
        genuine entry.
    """
    a = np.asarray(payoff, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"2-d payoff required, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("payoff contains non-finite entries")
    n_t, n_s = a.shape
    if n_t == n_s:
        return solve_lap(a, eps_final=eps_final)
    if n_t > n_s:
        flipped = solve_lap_rectangular(a.T, slack_value=slack_value, eps_final=eps_final)
        # flipped maps original targets -> original sources; invert back
        target_of = flipped.source_of()
        tgt_idx = np.nonzero(flipped.matched_mask)[0]
        objective = float(a[tgt_idx, flipped.target_of[tgt_idx]].sum())
        return Assignment(target_of, n_t, objective, epsilon=flipped.epsilon)

    spread = float(a.max() - a.min())
    if slack_value == "auto":
        c = float(a.min()) - (spread if spread > 0.0 else 1.0)
    else:
        c = float(slack_value)
    padded = np.full((n_s, n_s), c)
    padded[:n_t, :] = a
    full = solve_lap(padded, eps_final=eps_final)
    target_of = full.target_of.copy()
    target_of[target_of >= n_t] = UNMATCHED
    matched = target_of != UNMATCHED
    objective = float(a[target_of[matched], np.nonzero(matched)[0]].sum())
    return Assignment(
        target_of, n_t, objective,
        prices=None if full.prices is None else full.prices[:n_t],
        epsilon=full.epsilon,
    )


def project_to_permutation(payoff):
    """Nearest permutation in Frobenius norm: argmin ||P - payoff||^2.

    Identical to maximizing <P, payoff> over permutations, so this is a
    plain LAP solve at the default epsilon.
    """
    return solve_lap(payoff)
