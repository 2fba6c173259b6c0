"""LP/IP formulation of the relay-network design problem.

Decision variables, all in [0,1] (binary for the exact solver):

    z[i]      reflector i is switched on
    y[k,i]    reflector i subscribes to stream k
    x[k,i,j]  sink j receives stream k via reflector i

Row families, in emission order:

    feed-use        y[k,i] <= z[i]
    relay-use       x[k,i,j] <= y[k,i]
    fanout          sum_kj x[k,i,j] <= F_i * z[i]        (bandwidth form scales by bitrate)
    feed-fanout     sum_j x[k,i,j] <= F_i * y[k,i]       (redundant for the IP, tightens the LP)
    weight          sum_i w[k,i,j] * x[k,i,j] >= W_j     (exactly one row per sink)
    color           sum_{i in group} x[k,i,j] <= 1        (one row per sink/color, when enabled)

In full mode the objective charges reflector fixed costs on z, first-hop
costs on y and second-hop costs on x. In transmission mode z and y are
free and each x pays its full source-to-sink bandwidth cost.
"""

from __future__ import annotations

import heapq
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import simplex
from .model import Instance, WeightTable

INTEGRALITY_TOL = 1e-6
FIX_TOL = 1e-7
ROW_TOL = 1e-7


class InfeasibleError(Exception):
    """The instance admits no assignment; carries a certificate."""

    def __init__(self, message: str, certificate: dict | None = None):
        super().__init__(message)
        self.certificate = certificate or {}


class UnsupportedInstanceError(ValueError):
    """The requested pipeline cannot handle this instance shape."""


@dataclass(frozen=True)
class ModeOptions:
    mode: str = "full"  # "full" | "transmission"
    bandwidth: bool = False
    colors: bool = False

    @staticmethod
    def from_instance(inst: Instance) -> "ModeOptions":
        return ModeOptions(
            mode=inst.mode,
            bandwidth=inst.bandwidth_enabled,
            colors=inst.colors_enabled,
        )


@dataclass
class LpRow:
    kind: str
    label: str
    idx: np.ndarray
    coef: np.ndarray
    sense: str
    rhs: float


@dataclass
class TimeBudget:
    seconds: float | None = None
    node_limit: int | None = None


class LpModel:
    """Built formulation: variables, rows, objective and lookup tables."""

    def __init__(self, inst: Instance, opts: ModeOptions):
        self.inst = inst
        self.opts = opts
        self.weights = WeightTable(inst)

        self.names: list[str] = []
        self.z_index: dict[str, int] = {}
        self.y_index: dict[tuple[str, str], int] = {}
        self.x_index: dict[tuple[str, str, str], int] = {}
        obj: list[float] = []

        transmission = opts.mode == "transmission"
        for r in inst.reflectors:
            self.z_index[r.id] = len(self.names)
            self.names.append(f"z[{r.id}]")
            obj.append(0.0 if transmission else r.cost)
        for s in inst.sources:
            for r in inst.reflectors:
                edge = inst.src_edges.get((s.id, r.id))
                if edge is None:
                    continue
                self.y_index[(s.id, r.id)] = len(self.names)
                self.names.append(f"y[{s.id},{r.id}]")
                obj.append(0.0 if transmission else edge.cost)
        for d in inst.sinks:
            k = d.stream
            for r in inst.reflectors:
                if (k, r.id) not in inst.src_edges:
                    continue
                edge = inst.refl_edges.get((r.id, d.id))
                if edge is None:
                    continue
                self.x_index[(k, r.id, d.id)] = len(self.names)
                self.names.append(f"x[{k},{r.id},{d.id}]")
                if transmission:
                    obj.append(inst.src_edges[(k, r.id)].cost + edge.cost)
                else:
                    obj.append(edge.cost)

        self.obj = np.array(obj)
        self.nvars = len(self.names)
        self.lb = np.zeros(self.nvars)
        self.ub = np.ones(self.nvars)
        self.rows: list[LpRow] = []
        self.sink_weight_row: dict[str, int] = {}
        self.capacities = self._effective_capacities()
        self.uniform_bitrate = self._uniform_bitrate()
        self._build_rows()
        self._dense: tuple | None = None

    # -- construction -------------------------------------------------------

    def _uniform_bitrate(self) -> float | None:
        if not self.opts.bandwidth:
            return None
        rates = {s.bitrate for s in self.inst.sources}
        if len(rates) == 1 and None not in rates:
            return rates.pop()
        return None

    def _effective_capacities(self) -> dict[str, int] | None:
        """Per-reflector stream budget used by the rounding/flow pipeline."""
        if not self.opts.bandwidth:
            return {r.id: r.fanout for r in self.inst.reflectors}
        rate = self._uniform_bitrate()
        if rate is None:
            return None  # heterogeneous bitrates: exact solver only
        caps = {}
        for r in self.inst.reflectors:
            if r.bandwidth is None:
                raise UnsupportedInstanceError(
                    f"bandwidth mode needs a bandwidth cap on reflector {r.id}"
                )
            caps[r.id] = int(math.floor(r.bandwidth / rate))
        return caps

    def _add_row(self, kind, label, terms, sense, rhs):
        idx = np.array([t[0] for t in terms], dtype=int)
        coef = np.array([t[1] for t in terms], dtype=float)
        self.rows.append(LpRow(kind, label, idx, coef, sense, rhs))

    def _build_rows(self):
        inst, opts = self.inst, self.opts
        x_by_reflector: dict[str, list[tuple[str, str, str]]] = {r.id: [] for r in inst.reflectors}
        x_by_feed: dict[tuple[str, str], list[tuple[str, str, str]]] = {}
        for key in self.x_index:
            k, i, j = key
            x_by_reflector[i].append(key)
            x_by_feed.setdefault((k, i), []).append(key)

        for (k, i), yi in self.y_index.items():
            self._add_row("feed-use", f"feed_use[{k},{i}]", [(yi, 1.0), (self.z_index[i], -1.0)], "<=", 0.0)

        for key, xi in self.x_index.items():
            k, i, j = key
            yi = self.y_index[(k, i)]
            self._add_row("relay-use", f"relay_use[{k},{i},{j}]", [(xi, 1.0), (yi, -1.0)], "<=", 0.0)

        if opts.bandwidth:
            for r in inst.reflectors:
                if r.bandwidth is None:
                    raise UnsupportedInstanceError(
                        f"bandwidth mode needs a bandwidth cap on reflector {r.id}"
                    )
                terms = []
                for key in x_by_reflector[r.id]:
                    k = key[0]
                    rate = inst.source_by_id[k].bitrate
                    if rate is None:
                        raise UnsupportedInstanceError(
                            f"bandwidth mode needs a bitrate on source {k}"
                        )
                    terms.append((self.x_index[key], rate))
                terms.append((self.z_index[r.id], -r.bandwidth))
                self._add_row("fanout", f"bandwidth[{r.id}]", terms, "<=", 0.0)
            for (k, i), keys in sorted(x_by_feed.items()):
                rate = inst.source_by_id[k].bitrate
                cap = inst.reflector_by_id[i].bandwidth
                terms = [(self.x_index[key], rate) for key in keys]
                terms.append((self.y_index[(k, i)], -cap))
                self._add_row("feed-fanout", f"bandwidth_feed[{k},{i}]", terms, "<=", 0.0)
        else:
            for r in inst.reflectors:
                terms = [(self.x_index[key], 1.0) for key in x_by_reflector[r.id]]
                terms.append((self.z_index[r.id], -float(r.fanout)))
                self._add_row("fanout", f"fanout[{r.id}]", terms, "<=", 0.0)
            for (k, i), keys in sorted(x_by_feed.items()):
                cap = float(inst.reflector_by_id[i].fanout)
                terms = [(self.x_index[key], 1.0) for key in keys]
                terms.append((self.y_index[(k, i)], -cap))
                self._add_row("feed-fanout", f"feed_fanout[{k},{i}]", terms, "<=", 0.0)

        for d in inst.sinks:
            k = d.stream
            terms = []
            for (i, w) in self.weights.sink_entries(d.id):
                terms.append((self.x_index[(k, i, d.id)], w))
            if not terms and d.weight_threshold > 0:
                raise InfeasibleError(
                    f"sink {d.id} has no usable relay path",
                    certificate={"sink": d.id, "demanded": d.weight_threshold, "attainable": 0.0},
                )
            self.sink_weight_row[d.id] = len(self.rows)
            self._add_row("weight", f"weight[{d.id}]", terms, ">=", d.weight_threshold)

        if opts.colors:
            for d in inst.sinks:
                k = d.stream
                groups: dict[int, list[int]] = {}
                for (i, _w) in self.weights.sink_entries(d.id):
                    color = inst.reflector_by_id[i].color
                    if color is None:
                        continue
                    groups.setdefault(color, []).append(self.x_index[(k, i, d.id)])
                for color in sorted(groups):
                    terms = [(xi, 1.0) for xi in groups[color]]
                    self._add_row("color", f"color[{d.id},{color}]", terms, "<=", 1.0)

    # -- array access ---------------------------------------------------------

    def arrays(self):
        """Dense (c, A, senses, b) suitable for the simplex core; cached."""
        if self._dense is None:
            m = len(self.rows)
            a = np.zeros((m, self.nvars))
            b = np.empty(m)
            senses = []
            for r_idx, row in enumerate(self.rows):
                a[r_idx, row.idx] = row.coef
                b[r_idx] = row.rhs
                senses.append(row.sense)
            self._dense = (self.obj, a, senses, b)
        return self._dense

    def row_values(self, x: np.ndarray) -> np.ndarray:
        _, a, _, _ = self.arrays()
        return a @ x

    def check_rows(self, x: np.ndarray, tol: float = ROW_TOL) -> list[str]:
        """Labels of rows the assignment violates beyond tol."""
        bad = []
        for row in self.rows:
            v = float(x[row.idx] @ row.coef)
            if row.sense == "<=" and v > row.rhs + tol:
                bad.append(row.label)
            elif row.sense == ">=" and v < row.rhs - tol:
                bad.append(row.label)
        return bad

    def weight_feasibility_certificate(self) -> dict | None:
        """Per-sink necessary condition: even all-ones must reach the threshold."""
        violated = []
        for d in self.inst.sinks:
            attainable = sum(w for _i, w in self.weights.sink_entries(d.id))
            if attainable < d.weight_threshold - 1e-9:
                violated.append(
                    {"sink": d.id, "demanded": d.weight_threshold, "attainable": attainable}
                )
        if violated:
            return {"kind": "weight-rows", "rows": violated}
        return None


def build_model(inst: Instance, opts: ModeOptions | None = None) -> LpModel:
    return LpModel(inst, opts or ModeOptions.from_instance(inst))


@dataclass
class FractionalSolution:
    model: LpModel
    values: np.ndarray
    objective: float

    def z_hat(self, i: str) -> float:
        return float(self.values[self.model.z_index[i]])

    def y_hat(self, k: str, i: str) -> float:
        return float(self.values[self.model.y_index[(k, i)]])

    def x_hat(self, k: str, i: str, j: str) -> float:
        return float(self.values[self.model.x_index[(k, i, j)]])

    def by_name(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.model.names, self.values)}

    def to_json_doc(self) -> dict:
        return {"objective": self.objective, "values": self.by_name()}


@dataclass
class IntegralSolution:
    model: LpModel
    values: np.ndarray
    objective: float
    provenance: str  # "exact-ip" | "approxhack"
    status: str  # "optimal" | "timeout" | "infeasible_fixing"
    bound: float
    nodes: int

    def chosen_triples(self) -> list[tuple[str, str, str]]:
        return [key for key, xi in self.model.x_index.items() if self.values[xi] > 0.5]

    def by_name(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.model.names, self.values)}


def solve_lp(model: LpModel, lb=None, ub=None) -> FractionalSolution:
    """Exact LP relaxation optimum; raises InfeasibleError with a certificate."""
    cert = model.weight_feasibility_certificate()
    if cert is not None:
        raise InfeasibleError("weight thresholds unattainable", certificate=cert)
    c, a, senses, b = model.arrays()
    res = simplex.solve(
        c, a, senses, b,
        model.lb if lb is None else lb,
        model.ub if ub is None else ub,
    )
    if res.status == simplex.INFEASIBLE:
        raise InfeasibleError(
            "linear relaxation infeasible",
            certificate={"kind": "phase1", "residual": res.infeasibility},
        )
    if res.status != simplex.OPTIMAL:
        raise simplex.SimplexError(f"unexpected LP status {res.status}")
    return FractionalSolution(model=model, values=res.x, objective=res.objective)


def _is_integral(values: np.ndarray) -> bool:
    return bool(np.all(np.abs(values - np.round(values)) <= INTEGRALITY_TOL))


def solve_ip(
    model: LpModel,
    budget: TimeBudget | None = None,
    warm: np.ndarray | None = None,
) -> IntegralSolution:
    """Branch and bound over the LP relaxation.

    Best-bound node order, branching on the most fractional variable
    (largest distance from integrality, ties to the lowest index), children
    explored one-up first. A warm incumbent is used only after it passes a
    feasibility check against the rows; infeasible warm starts are ignored.
    """
    budget = budget or TimeBudget()
    cert = model.weight_feasibility_certificate()
    if cert is not None:
        raise InfeasibleError("weight thresholds unattainable", certificate=cert)

    t0 = time.perf_counter()
    incumbent = None
    inc_obj = math.inf
    if warm is not None:
        w = np.round(np.asarray(warm, dtype=float))
        if (
            np.all(w >= model.lb - 1e-9)
            and np.all(w <= model.ub + 1e-9)
            and not model.check_rows(w)
        ):
            incumbent = w
            inc_obj = float(model.obj @ w)

    c, a, senses, b = model.arrays()

    def node_lp(lb, ub):
        res = simplex.solve(c, a, senses, b, lb, ub)
        return res

    counter = 0
    root = node_lp(model.lb, model.ub)
    if root.status == simplex.INFEASIBLE:
        raise InfeasibleError(
            "integer program infeasible",
            certificate={"kind": "phase1", "residual": root.infeasibility},
        )
    heap: list = []
    heapq.heappush(heap, (root.objective, counter, model.lb.copy(), model.ub.copy(), root))
    nodes = 0
    timed_out = False

    while heap:
        bound, _cnt, lb, ub, solved = heapq.heappop(heap)
        if bound >= inc_obj - 1e-9:
            continue  # pruned by incumbent
        out_of_budget = (
            budget.seconds is not None and time.perf_counter() - t0 > budget.seconds
        ) or (budget.node_limit is not None and nodes >= budget.node_limit)
        if out_of_budget:
            # Put the node back so the reported bound stays a true lower bound.
            heapq.heappush(heap, (bound, _cnt, lb, ub, solved))
            timed_out = True
            break
        if solved is None:
            res = node_lp(lb, ub)
            if res.status == simplex.INFEASIBLE:
                continue
            if res.objective >= inc_obj - 1e-9:
                continue
            # Re-queue with the true bound so best-bound order stays honest.
            counter += 1
            heapq.heappush(heap, (res.objective, counter, lb, ub, res))
            continue
        res = solved
        nodes += 1
        values = res.x
        frac = np.abs(values - np.round(values))
        if np.all(frac <= INTEGRALITY_TOL):
            rounded = np.round(values)
            if res.objective < inc_obj - 1e-9:
                incumbent = rounded
                inc_obj = float(model.obj @ rounded)
            continue
        branch_var = int(np.argmax(frac))
        for fix in (1.0, 0.0):
            nlb, nub = lb.copy(), ub.copy()
            if fix == 1.0:
                nlb[branch_var] = 1.0
            else:
                nub[branch_var] = 0.0
            counter += 1
            heapq.heappush(heap, (res.objective, counter, nlb, nub, None))

    best_bound = inc_obj
    if heap:
        open_bounds = [entry[0] for entry in heap]
        best_bound = min(min(open_bounds), inc_obj)
    if incumbent is None:
        if timed_out:
            return IntegralSolution(
                model, np.zeros(model.nvars), math.inf, "exact-ip", "timeout",
                bound=best_bound, nodes=nodes,
            )
        raise InfeasibleError(
            "integer program infeasible",
            certificate={"kind": "search-exhausted"},
        )
    status = "timeout" if (timed_out and inc_obj - best_bound > 1e-6) else "optimal"
    return IntegralSolution(
        model, incumbent, inc_obj, "exact-ip", status, bound=best_bound, nodes=nodes
    )


def approx_hack(
    model: LpModel,
    frac: FractionalSolution,
    budget: TimeBudget | None = None,
) -> IntegralSolution:
    """Fix every LP-integral variable, then solve the residual IP exactly.

    When the fixing makes the residual infeasible the result comes back with
    status "infeasible_fixing" so the caller can fall back to the rounding
    pipeline.
    """
    lb = model.lb.copy()
    ub = model.ub.copy()
    lb[frac.values >= 1.0 - FIX_TOL] = 1.0
    ub[frac.values <= FIX_TOL] = 0.0
    fixed_model = _with_bounds(model, lb, ub)
    try:
        res = solve_ip(fixed_model, budget=budget)
    except InfeasibleError:
        return IntegralSolution(
            model, np.zeros(model.nvars), math.inf, "approxhack", "infeasible_fixing",
            bound=frac.objective, nodes=0,
        )
    return IntegralSolution(
        model, res.values, res.objective, "approxhack", res.status,
        bound=res.bound, nodes=res.nodes,
    )


def _with_bounds(model: LpModel, lb, ub) -> LpModel:
    clone = LpModel.__new__(LpModel)
    clone.__dict__.update(model.__dict__)
    clone.lb = lb
    clone.ub = ub
    return clone


# -- text export ---------------------------------------------------------------

def _sanitize(name: str, seen: dict[str, int]) -> str:
    base = re.sub(r"[^A-Za-z0-9_]", "_", name)
    if base[0].isdigit():
        base = "v_" + base
    count = seen.get(base)
    if count is None:
        seen[base] = 0
        return base
    seen[base] = count + 1
    return f"{base}_{count + 1}"


def export_lp(model: LpModel, integral: bool = False) -> str:
    """Model as solver-interchange LP text, for cross-checks outside the tree."""
    seen: dict[str, int] = {}
    names = [_sanitize(n, seen) for n in model.names]

    def term(coef, var, lead):
        sign = "-" if coef < 0 else ("" if lead else "+")
        mag = abs(coef)
        return f"{sign} {mag:.12g} {var}"

    lines = ["Minimize", " obj:"]
    parts = [
        term(c, names[i], i == 0)
        for i, c in enumerate(model.obj)
    ]
    for start in range(0, len(parts), 8):
        lines.append("  " + " ".join(parts[start : start + 8]))
    lines.append("Subject To")
    label_seen: dict[str, int] = {}
    for row in model.rows:
        label = _sanitize(row.label, label_seen)
        parts = [
            term(c, names[i], n == 0)
            for n, (i, c) in enumerate(zip(row.idx, row.coef))
        ]
        op = "<=" if row.sense == "<=" else (">=" if row.sense == ">=" else "=")
        body = " ".join(parts) if parts else "0 " + names[0]
        lines.append(f" {label}: {body} {op} {row.rhs:.12g}")
    lines.append("Bounds")
    for i, name in enumerate(names):
        lines.append(f" {model.lb[i]:.12g} <= {name} <= {model.ub[i]:.12g}")
    if integral:
        lines.append("Binaries")
        for start in range(0, len(names), 12):
            lines.append(" " + " ".join(names[start : start + 12]))
    lines.append("End")
    return "\n".join(lines) + "\n"
