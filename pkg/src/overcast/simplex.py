"""Dense bounded-variable simplex solver.

Two-phase primal simplex on an explicit tableau. Every variable carries its
own [lb, ub] interval (ub may be +inf), rows are '<=', '>=' or '==' with
arbitrary right-hand sides, and nonbasic variables rest at one of their
bounds. Phase 1 seeds slack variables where the all-at-lower-bound start is
already row-feasible and artificial variables elsewhere, then minimizes the
artificial mass; phase 2 minimizes the real objective with artificials
pinned at zero.

Pricing is Dantzig (most violating reduced cost, lowest index on ties) with
a switch to Bland's rule after a run of degenerate pivots, so the solver
cannot cycle and identical inputs pivot identically. Reduced costs are
updated incrementally and recomputed from the basis at a fixed cadence to
bound drift; optimality is only declared after a full recompute confirms it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_AT_LB, _AT_UB, _BASIC = 0, 1, 2

_PIVOT_TOL = 1e-9
_DUAL_TOL = 1e-9
_STEP_TOL = 1e-12
_STALL_LIMIT = 60
_REFRESH_EVERY = 400


class SimplexError(RuntimeError):
    """Internal solver failure (iteration cap or numerical breakdown)."""


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None  # structural variable values
    objective: float | None
    infeasibility: float = 0.0  # phase-1 residual when infeasible
    iterations: int = 0


def solve(
    c,
    a,
    senses,
    b,
    lb,
    ub,
    max_iterations: int = 200_000,
) -> LpResult:
    """Minimize c.x subject to a x (senses) b and lb <= x <= ub.

    `a` is a dense (m, n) array, `senses` a sequence of '<=', '>=', '=='.
    Returns structural values only; slacks are internal.
    """
    c = np.asarray(c, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    m, n = a.shape if a.ndim == 2 else (0, c.size)
    if m == 0:
        x = np.where(c > 0, lb, np.where(c < 0, ub, lb))
        if not np.all(np.isfinite(x)):
            return LpResult(UNBOUNDED, None, None)
        return LpResult(OPTIMAL, x, float(c @ x))

    state = _Tableau(c, a, list(senses), b, lb, ub, max_iterations)
    return state.run()


class _Tableau:
    def __init__(self, c, a, senses, b, lb, ub, max_iterations):
        m, n = a.shape
        self.m, self.n_struct = m, n
        self.max_iterations = max_iterations
        self._c = np.asarray(c, dtype=float)

        n_slack = sum(1 for s in senses if s in ("<=", ">="))
        cols = n + n_slack + m  # every row gets an artificial column slot
        ext = np.zeros((m, cols))
        ext[:, :n] = a
        ext_lb = np.full(cols, 0.0)
        ext_ub = np.full(cols, np.inf)
        ext_lb[:n] = lb
        ext_ub[:n] = ub

        # Start with structural variables at their lower bound (fixed vars sit
        # at their single value); choose slack or artificial per row so the
        # initial basis is diagonal and feasible.
        start = lb.copy()
        if not np.all(np.isfinite(start)):
            raise SimplexError("structural lower bounds must be finite")
        resid = b - a @ start

        self.slack_col = {}
        col = n
        for r, sense in enumerate(senses):
            if sense == "<=":
                ext[r, col] = 1.0
                self.slack_col[r] = col
                col += 1
            elif sense == ">=":
                ext[r, col] = -1.0
                self.slack_col[r] = col
                col += 1
            elif sense != "==":
                raise ValueError(f"bad sense {sense!r}")
        self.art_first = n + n_slack
        self.art_cols = []

        self.values = np.zeros(cols)
        self.values[:n] = start
        basis = np.empty(m, dtype=int)
        for r, sense in enumerate(senses):
            rv = resid[r]
            use_slack = (
                (sense == "<=" and rv >= -_PIVOT_TOL)
                or (sense == ">=" and rv <= _PIVOT_TOL)
            )
            if use_slack:
                sc = self.slack_col[r]
                basis[r] = sc
                self.values[sc] = abs(rv) if abs(rv) > _PIVOT_TOL else 0.0
            else:
                ac = self.art_first + r
                ext[r, ac] = 1.0 if rv >= 0 else -1.0
                self.art_cols.append(ac)
                basis[r] = ac
                self.values[ac] = abs(rv)

        self.ext = ext
        self.lb, self.ub = ext_lb, ext_ub
        self.b = b.astype(float)
        self.basis = basis
        self.status = np.full(cols, _AT_LB, dtype=np.int8)
        self.status[basis] = _BASIC
        self.ncols = cols

        # Tableau = B^-1 @ ext; initial basis is diagonal +-1.
        diag = ext[np.arange(m), basis]
        self.t = ext / diag[:, None]
        self.iterations = 0

    # -- basic machinery ---------------------------------------------------

    def _refresh(self):
        """Recompute tableau and basic values from the original matrix."""
        bmat = self.ext[:, self.basis]
        try:
            self.t = np.linalg.solve(bmat, self.ext)
        except np.linalg.LinAlgError as exc:
            raise SimplexError("singular basis") from exc
        self._recompute_basics()

    def _recompute_basics(self):
        nb_mask = self.status != _BASIC
        nb_cols = np.nonzero(nb_mask)[0]
        rhs = np.linalg.solve(
            self.ext[:, self.basis], self.b - self.ext[:, nb_cols] @ self.values[nb_cols]
        )
        self.values[self.basis] = rhs

    def _reduced_costs(self, cost):
        return cost - cost[self.basis] @ self.t

    def _entering(self, d, bland):
        movable = self.ub - self.lb > _PIVOT_TOL
        lb_ok = (self.status == _AT_LB) & (d < -_DUAL_TOL) & movable
        ub_ok = (self.status == _AT_UB) & (d > _DUAL_TOL) & movable
        eligible = np.nonzero(lb_ok | ub_ok)[0]
        if eligible.size == 0:
            return -1
        if bland:
            return int(eligible[0])
        return int(eligible[np.argmax(np.abs(d[eligible]))])

    def _ratio_test(self, q, direction):
        """Return (step, leaving_row, leaving_to_ub). leaving_row -1 = bound flip."""
        col = self.t[:, q] * direction
        basic_vals = self.values[self.basis]
        blb = self.lb[self.basis]
        bub = self.ub[self.basis]

        steps = np.full(self.m, np.inf)
        dec = col > _PIVOT_TOL  # basic decreases toward its lower bound
        inc = col < -_PIVOT_TOL  # basic increases toward its upper bound
        steps[dec] = (basic_vals[dec] - blb[dec]) / col[dec]
        with np.errstate(invalid="ignore"):
            steps[inc] = (bub[inc] - basic_vals[inc]) / (-col[inc])
        steps = np.where(steps < 0, 0.0, steps)

        limit = self.ub[q] - self.lb[q]
        best = steps.min() if self.m else np.inf
        if best >= limit:
            return limit, -1, False
        ties = np.nonzero(steps <= best + _STEP_TOL)[0]
        # Deterministic (and Bland-compatible) tie-break: lowest basic index.
        row = int(ties[np.argmin(self.basis[ties])])
        return float(best), row, bool(col[row] < 0)

    def _pivot(self, q, direction, step, row, leaves_to_ub, d):
        col = self.t[:, q].copy()
        if step > 0:
            self.values[self.basis] -= direction * step * col
        if row < 0:
            # Bound flip: q moves to its other bound, basis unchanged.
            self.status[q] = _AT_UB if direction > 0 else _AT_LB
            self.values[q] = self.ub[q] if direction > 0 else self.lb[q]
            return d
        leaving = self.basis[row]
        self.values[q] = (self.lb[q] if self.status[q] == _AT_LB else self.ub[q]) + direction * step
        self.values[leaving] = self.ub[leaving] if leaves_to_ub else self.lb[leaving]
        self.status[leaving] = _AT_UB if leaves_to_ub else _AT_LB
        self.status[q] = _BASIC
        self.basis[row] = q

        pivot = self.t[row, q]
        if abs(pivot) < _PIVOT_TOL:
            raise SimplexError("pivot element vanished")
        prow = self.t[row] / pivot
        col[row] = 0.0
        self.t -= np.outer(col, prow)
        self.t[row] = prow
        # Incremental reduced-cost update keeps d consistent with the new basis.
        return d - d[q] * prow

    def _minimize(self, cost, phase1_cap=None):
        """Run pivots until optimal for `cost`. Returns objective value."""
        d = self._reduced_costs(cost)
        stall = 0
        bland = False
        since_refresh = 0
        while True:
            if self.iterations >= self.max_iterations:
                raise SimplexError("iteration limit exceeded")
            q = self._entering(d, bland)
            if q < 0:
                # Confirm with freshly computed reduced costs before declaring.
                self._refresh()
                d = self._reduced_costs(cost)
                since_refresh = 0
                q = self._entering(d, bland=False)
                if q < 0:
                    return float(cost @ self.values)
            direction = 1.0 if self.status[q] == _AT_LB else -1.0
            step, row, to_ub = self._ratio_test(q, direction)
            if not np.isfinite(step):
                return -np.inf
            d = self._pivot(q, direction, step, row, to_ub, d)
            self.iterations += 1
            since_refresh += 1
            if step <= _STEP_TOL:
                stall += 1
                if stall >= _STALL_LIMIT:
                    bland = True
            else:
                stall = 0
                bland = False
            if since_refresh >= _REFRESH_EVERY:
                self._refresh()
                d = self._reduced_costs(cost)
                since_refresh = 0
            if phase1_cap is not None and self.art_cols:
                # Early exit once the artificial mass is gone; verify against
                # a fresh recompute so drift cannot fake feasibility.
                if float(self.values[self.art_cols].sum()) <= phase1_cap:
                    self._refresh()
                    d = self._reduced_costs(cost)
                    since_refresh = 0
                    if float(self.values[self.art_cols].sum()) <= phase1_cap:
                        return float(self.values[self.art_cols].sum())

    # -- driver --------------------------------------------------------------

    def run(self) -> LpResult:
        art = np.array(self.art_cols, dtype=int)
        if art.size:
            cost1 = np.zeros(self.ncols)
            cost1[art] = 1.0
            value = self._minimize(cost1, phase1_cap=1e-9)
            self._refresh()
            residual = float(self.values[art].sum())
            if residual > 1e-7:
                return LpResult(INFEASIBLE, None, None, infeasibility=residual,
                                iterations=self.iterations)
            self._drive_out_artificials()
            # Artificials are pinned: they can never re-enter.
            self.lb[art] = 0.0
            self.ub[art] = 0.0
            self.values[art] = np.where(self.status[art] == _BASIC, self.values[art], 0.0)

        cost2 = np.zeros(self.ncols)
        cost2[: self.n_struct] = self._c
        value = self._minimize(cost2)
        if value == -np.inf:
            return LpResult(UNBOUNDED, None, None, iterations=self.iterations)
        self._refresh()
        x = self.values[: self.n_struct].copy()
        x = np.clip(x, self.lb[: self.n_struct], self.ub[: self.n_struct])
        return LpResult(OPTIMAL, x, float(self._c @ x), iterations=self.iterations)

    def _drive_out_artificials(self):
        art_set = set(self.art_cols)
        for row in range(self.m):
            if self.basis[row] not in art_set:
                continue
            # Degenerate pivot onto any usable non-artificial column.
            candidates = np.nonzero(np.abs(self.t[row, : self.art_first]) > 1e-7)[0]
            swapped = False
            for q in candidates:
                if self.status[q] == _BASIC:
                    continue
                d = np.zeros(self.ncols)
                self._pivot(int(q), 1.0 if self.status[q] == _AT_LB else -1.0, 0.0, row, False, d)
                swapped = True
                break
            # A row with no candidate is linearly dependent; the artificial
            # stays basic at zero with bounds pinned, which is harmless.
            if swapped:
                self.iterations += 1
