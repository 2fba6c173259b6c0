"""Synthetic instance generators.

Two families: seeded random three-layer networks in three loss regimes, and
exact set-cover reductions (one reflector per set, one sink per element,
weight-1 member links, unit reflector cost) whose integral optimum equals
the cover optimum.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Instance, combined_loss, instance_from_doc, loss_to_weight

LOSS_REGIMES = {
    "low": (0.0, 0.01),
    "avg": (0.005, 0.05),
    "high": (0.02, 0.20),
}
COST_RANGE = (1.0, 10.0)
REFLECTOR_COST_RANGE = (5.0, 50.0)
MAX_ATTEMPTS = 100
# how many of a sink's best paths its threshold is allowed to demand
_TOP_PATH_WEIGHTS = ((1, 0.55), (2, 0.30), (3, 0.15))


class GenerationError(RuntimeError):
    """No feasible instance came out after the redraw budget."""


def _pick_top_count(rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    for count, share in _TOP_PATH_WEIGHTS:
        acc += share
        if u < acc:
            return count
    return _TOP_PATH_WEIGHTS[-1][0]


def _draw_doc(
    rng: np.random.Generator,
    sizes: tuple[int, int, int],
    regime: str,
    density: float,
    colors: int | None,
) -> dict | None:
    n_src, n_refl, n_sink = sizes
    lo, hi = LOSS_REGIMES[regime]

    sources = [{"id": f"s{k}"} for k in range(n_src)]
    fan_hi = max(2, math.ceil(2 * n_sink / n_refl))
    reflectors = []
    for i in range(n_refl):
        rec = {
            "id": f"r{i}",
            "cost": float(rng.uniform(*REFLECTOR_COST_RANGE)),
            "fanout": int(rng.integers(2, fan_hi + 1)),
        }
        if colors is not None:
            rec["color"] = i % colors
        reflectors.append(rec)

    src_edges = []
    for k in range(n_src):
        for i in range(n_refl):
            keep = rng.random() < density
            loss = float(rng.uniform(lo, hi))
            cost = float(rng.uniform(*COST_RANGE))
            if keep:
                src_edges.append(
                    {"from": f"s{k}", "to": f"r{i}", "loss": loss, "cost": cost}
                )
    refl_edges = []
    for i in range(n_refl):
        for j in range(n_sink):
            keep = rng.random() < density
            loss = float(rng.uniform(lo, hi))
            cost = float(rng.uniform(*COST_RANGE))
            if keep:
                refl_edges.append(
                    {"from": f"r{i}", "to": f"d{j}", "loss": loss, "cost": cost}
                )

    src_loss = {(e["from"], e["to"]): e["loss"] for e in src_edges}
    refl_loss = {(e["from"], e["to"]): e["loss"] for e in refl_edges}
    color_of = {r["id"]: r.get("color") for r in reflectors}

    # per-sink candidate paths, best first; with colors on, one per group
    sinks = []
    demands: list[list[tuple[float, str]]] = []
    for j in range(n_sink):
        stream = f"s{j % n_src}"
        paths = []
        for i in range(n_refl):
            rid = f"r{i}"
            first = src_loss.get((stream, rid))
            second = refl_loss.get((rid, f"d{j}"))
            if first is None or second is None:
                continue
            paths.append((loss_to_weight(combined_loss(first, second)), rid))
        paths.sort(key=lambda p: (-p[0], p[1]))
        if colors is not None:
            best_per_group: dict[int, tuple[float, str]] = {}
            for w, rid in paths:
                group = color_of[rid]
                if group not in best_per_group:
                    best_per_group[group] = (w, rid)
            paths = sorted(best_per_group.values(), key=lambda p: (-p[0], p[1]))
        n_top = _pick_top_count(rng)
        alpha = float(rng.uniform(0.5, 0.95))
        if not paths:
            return None
        n_top = min(n_top, len(paths))
        threshold_weight = alpha * sum(w for w, _rid in paths[:n_top])
        sinks.append(
            {
                "id": f"d{j}",
                "stream": stream,
                "loss_threshold": float(2.0 ** (-threshold_weight)),
            }
        )
        demands.append(paths)

    # greedy feasibility: serve sinks in order from their best usable paths
    loads = {r["id"]: 0 for r in reflectors}
    caps = {r["id"]: r["fanout"] for r in reflectors}
    for j, paths in enumerate(demands):
        need = -math.log2(sinks[j]["loss_threshold"]) if sinks[j]["loss_threshold"] < 1 else 0.0
        got = 0.0
        used_groups: set[int] = set()
        for w, rid in paths:
            if got >= need - 1e-9:
                break
            if loads[rid] >= caps[rid]:
                continue
            group = color_of[rid]
            if colors is not None and group in used_groups:
                continue
            loads[rid] += 1
            if colors is not None:
                used_groups.add(group)
            got += min(w, need)
        if got < need - 1e-9:
            return None

    return {
        "sources": sources,
        "reflectors": reflectors,
        "sinks": sinks,
        "src_edges": src_edges,
        "refl_edges": refl_edges,
        "colors_enabled": colors is not None,
    }


def gen_random(
    sizes: tuple[int, int, int],
    regime: str = "avg",
    seed: int = 0,
    density: float = 1.0,
    colors: int | None = None,
) -> Instance:
    """Draw a seeded three-layer instance with per-sink reachable thresholds.

    Every sink's loss ceiling is alpha times the weight of its best one to
    three paths (alpha < 1), and a greedy assignment under the fan-out caps
    is verified before the draw is accepted; a draw that cannot be certified
    is retried with a fresh substream, up to 100 times.
    """
    n_src, n_refl, n_sink = sizes
    if min(n_src, n_refl, n_sink) < 1:
        raise ValueError("sizes must all be at least 1")
    if n_src > n_sink:
        raise ValueError("need at least as many sinks as sources")
    if regime not in LOSS_REGIMES:
        raise ValueError(f"unknown loss regime {regime!r}")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    if colors is not None and colors < 1:
        raise ValueError("colors must be a positive count")

    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(seed), spawn_key=(attempt,))
        )
        doc = _draw_doc(rng, sizes, regime, density, colors)
        if doc is not None:
            return instance_from_doc(doc)
    raise GenerationError(
        f"no feasible draw in {MAX_ATTEMPTS} attempts for sizes {sizes};"
        " raise density or shrink the network"
    )


def gen_setcover(universe_size: int, sets: list) -> Instance:
    """Encode a set-cover system: picking a reflector is picking its set.

    One source feeds every set-reflector losslessly at zero cost; a member
    link carries loss one half (weight one) at zero cost; every sink needs
    total weight one, so any cover is feasible and the integral optimum
    counts the chosen sets.
    """
    if universe_size < 1:
        raise ValueError("universe must hold at least one element")
    clean = [sorted(set(int(e) for e in s)) for s in sets]
    for idx, members in enumerate(clean):
        for e in members:
            if not 0 <= e < universe_size:
                raise ValueError(f"set {idx}: element {e} outside the universe")
    covered = set()
    for members in clean:
        covered.update(members)
    missing = sorted(set(range(universe_size)) - covered)
    if missing:
        raise ValueError(f"elements {missing} are covered by no set")

    doc = {
        "sources": [{"id": "s"}],
        "reflectors": [
            {"id": f"set{idx}", "cost": 1.0, "fanout": universe_size}
            for idx in range(len(clean))
        ],
        "sinks": [
            {"id": f"e{j}", "stream": "s", "loss_threshold": 0.5}
            for j in range(universe_size)
        ],
        "src_edges": [
            {"from": "s", "to": f"set{idx}", "loss": 0.0, "cost": 0.0}
            for idx in range(len(clean))
        ],
        "refl_edges": [
            {"from": f"set{idx}", "to": f"e{j}", "loss": 0.5, "cost": 0.0}
            for idx, members in enumerate(clean)
            for j in members
        ],
    }
    return instance_from_doc(doc)


def random_cover_system(
    rng: np.random.Generator, max_universe: int = 8, max_sets: int = 10
) -> tuple[int, list[list[int]]]:
    """Draw a covered random set system, folding stray elements into it."""
    universe = int(rng.integers(2, max_universe + 1))
    n_sets = int(rng.integers(2, max_sets + 1))
    sets = []
    for _ in range(n_sets):
        mask = rng.random(universe) < rng.uniform(0.2, 0.7)
        members = [int(e) for e in np.flatnonzero(mask)]
        if members:
            sets.append(members)
    if not sets:
        sets.append(list(range(universe)))
    covered = set()
    for members in sets:
        covered.update(members)
    for e in range(universe):
        if e not in covered:
            sets[int(rng.integers(0, len(sets)))].append(e)
    return universe, sets


def greedy_cover_cost(universe_size: int, sets: list) -> int:
    """Classic largest-remaining-set greedy; an upper bound on the optimum."""
    remaining = set(range(universe_size))
    chosen = 0
    pool = [set(s) for s in sets]
    while remaining:
        best = max(range(len(pool)), key=lambda idx: (len(pool[idx] & remaining), -idx))
        gain = pool[best] & remaining
        if not gain:
            raise ValueError("uncoverable residue; system was not a cover")
        remaining -= gain
        chosen += 1
    return chosen
