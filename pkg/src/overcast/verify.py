"""Audits of delivered networks, plus a packet-level loss simulation.

Three audit profiles, matching what each solver family guarantees:

    exact   every demanded weight met in full, fan-outs within the caps
    approx  masses in {1/2, 1}, fan-outs within 4x, weights within 1/4
    color   one use of a color group may fan out to 13 copies, cost 13x

The simulation drives independent per-link Bernoulli losses. A first-hop
link (stream, reflector) is sampled once per packet and shared by every
sink fed from it, so cross-sink correlation is preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import PathUnavailableError
from .solution import PathSet

AUDIT_TOL = 1e-6
PROFILES = ("exact", "approx", "color")


@dataclass
class AuditReport:
    profile: str
    ok: bool
    failures: list[str]
    cost: float
    sink_weights: dict[str, float]
    sink_losses: dict[str, float]

    def summary(self) -> str:
        state = "ok" if self.ok else "FAIL"
        lines = [f"audit[{self.profile}]: {state}, cost {self.cost:.6f}"]
        lines.extend(f"  - {f}" for f in self.failures)
        return "\n".join(lines)


def _structural_failures(ps: PathSet, profile: str) -> list[str]:
    inst = ps.instance
    bad = []
    if ps.mode != inst.mode:
        bad.append(f"mode mismatch: routes say {ps.mode!r}, instance says {inst.mode!r}")
    allowed = {1.0} if profile in ("exact", "color") else {0.5, 1.0}
    for (k, i, j), mass in ps.x_tilde.items():
        if mass not in allowed:
            bad.append(f"route ({k},{i},{j}): mass {mass} not in {sorted(allowed)}")
        sink = inst.sink_by_id.get(j)
        if sink is None:
            bad.append(f"route ({k},{i},{j}): unknown sink")
            continue
        if sink.stream != k:
            bad.append(f"route ({k},{i},{j}): sink demands {sink.stream}")
        if (k, i) not in inst.src_edges:
            bad.append(f"route ({k},{i},{j}): no first-hop edge")
        if (i, j) not in inst.refl_edges:
            bad.append(f"route ({k},{i},{j}): no second-hop edge")
    return bad


def _fanout_failures(ps: PathSet, factor: float, extra: float = 0.0) -> list[str]:
    """Flag reflectors whose load exceeds factor * cap + extra.

    `extra` is an additive allowance (in route counts, or in units of the
    largest bitrate seen at the reflector when bandwidth caps apply).
    """
    inst = ps.instance
    bad = []
    count: dict[str, int] = {}
    rate_load: dict[str, float] = {}
    rate_max: dict[str, float] = {}
    for (k, i, _j) in ps.x_tilde:
        count[i] = count.get(i, 0) + 1
        if inst.bandwidth_enabled:
            rate = inst.source_by_id[k].bitrate or 0.0
            rate_load[i] = rate_load.get(i, 0.0) + rate
            rate_max[i] = max(rate_max.get(i, 0.0), rate)
    for i, n in count.items():
        r = inst.reflector_by_id[i]
        if inst.bandwidth_enabled:
            cap = r.bandwidth if r.bandwidth is not None else 0.0
            limit = factor * cap + extra * rate_max[i]
            if rate_load[i] > limit + AUDIT_TOL:
                bad.append(
                    f"reflector {i}: bandwidth load {rate_load[i]:.6f} over {factor:g}x cap {cap}"
                )
        elif n > factor * r.fanout + extra + AUDIT_TOL:
            bad.append(f"reflector {i}: {n} routes over {factor:g}x fan-out {r.fanout}")
    return bad


def _weight_failures(ps: PathSet, fraction: float) -> list[str]:
    bad = []
    for d in ps.instance.sinks:
        if d.weight_threshold <= 0:
            continue
        try:
            kept = ps.weight_mass(d.id)
        except PathUnavailableError:
            continue  # already reported structurally
        need = fraction * d.weight_threshold
        if kept < need - AUDIT_TOL:
            bad.append(
                f"sink {d.id}: kept weight {kept:.6f} under {fraction:g} * {d.weight_threshold:.6f}"
            )
    return bad


def _color_group_counts(ps: PathSet) -> dict[tuple[str, int], int]:
    inst = ps.instance
    counts: dict[tuple[str, int], int] = {}
    for (_k, i, j) in ps.x_tilde:
        color = inst.reflector_by_id[i].color
        if color is None:
            continue
        key = (j, color)
        counts[key] = counts.get(key, 0) + 1
    return counts


def audit(ps: PathSet, profile: str = "exact", claimed_cost: float | None = None) -> AuditReport:
    if profile not in PROFILES:
        raise ValueError(f"unknown audit profile {profile!r}")
    inst = ps.instance
    failures = _structural_failures(ps, profile)

    if profile == "exact":
        failures += _fanout_failures(ps, 1.0)
        failures += _weight_failures(ps, 1.0)
        if inst.colors_enabled:
            for (j, color), n in _color_group_counts(ps).items():
                if n > 1:
                    failures.append(f"sink {j}: color {color} used {n} times")
    elif profile == "approx":
        failures += _fanout_failures(ps, 4.0)
        failures += _weight_failures(ps, 0.25)
    else:  # color
        # Capacity rows guarantee < 4 * (2 * cap) + 9 routes per reflector.
        failures += _fanout_failures(ps, 8.0, extra=9.0)
        for (j, color), n in _color_group_counts(ps).items():
            if n > 13:
                failures.append(f"sink {j}: color {color} used {n} times, cap 13")
        for d in inst.sinks:
            if d.weight_threshold > 0 and not ps.sink_routes(d.id):
                failures.append(f"sink {d.id}: no route at all")
        draw_cost = ps.meta.get("draw_cost")
        if draw_cost is not None and draw_cost > 0:
            path_cost = ps.meta.get("path_cost_total")
            if path_cost is not None and path_cost > 13.0 * draw_cost + AUDIT_TOL:
                failures.append(
                    f"selected path cost {path_cost:.6f} over 13x draw cost {draw_cost:.6f}"
                )

    cost = ps.cost
    if claimed_cost is not None and not math.isclose(
        cost, claimed_cost, rel_tol=0.0, abs_tol=AUDIT_TOL
    ):
        failures.append(f"claimed cost {claimed_cost!r} is not the recomputed {cost!r}")

    sink_weights = {}
    sink_losses = {}
    for d in inst.sinks:
        try:
            sink_weights[d.id] = ps.weight_mass(d.id)
        except PathUnavailableError:
            sink_weights[d.id] = float("nan")
        sink_losses[d.id] = ps.analytic_loss(d.id)

    if profile == "exact":
        for d in inst.sinks:
            loss = sink_losses[d.id]
            if loss > d.loss_threshold * (1.0 + 1e-5) + 1e-15:
                failures.append(
                    f"sink {d.id}: delivery loss {loss:.3e} over threshold {d.loss_threshold:.3e}"
                )

    return AuditReport(
        profile=profile,
        ok=not failures,
        failures=failures,
        cost=cost,
        sink_weights=sink_weights,
        sink_losses=sink_losses,
    )


def simulate_losses(
    ps: PathSet, packets: int, seed: int, chunk_size: int = 1 << 16
) -> dict[str, float]:
    """Per-sink delivery loss over simulated packets.

    Each packet draws one Bernoulli per first-hop link and one per used relay
    leg; a sink misses the packet when every one of its routes dropped it.
    Chunked drawing keeps memory flat; the per-chunk generator is derived
    from (seed, chunk index), so results are reproducible for a fixed
    chunk_size.
    """
    if packets <= 0:
        raise ValueError("packets must be positive")
    inst = ps.instance
    feeds = ps.feeds
    routes = ps.routes
    feed_idx = {f: n for n, f in enumerate(feeds)}
    p_feed = np.array([inst.src_edges[f].loss for f in feeds])
    p_leg = np.array([inst.refl_edges[(i, j)].loss for (_k, i, j) in routes])
    route_feed = np.array([feed_idx[(k, i)] for (k, i, _j) in routes], dtype=int)
    routes_by_sink = {d.id: [] for d in inst.sinks}
    for pos, (_k, _i, j) in enumerate(routes):
        routes_by_sink[j].append(pos)

    delivered = {d.id: 0 for d in inst.sinks}
    done = 0
    chunk_no = 0
    while done < packets:
        n = min(chunk_size, packets - done)
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(chunk_no,)))
        )
        u_feed = rng.random((n, len(feeds)))
        u_leg = rng.random((n, len(routes)))
        feed_ok = u_feed >= p_feed
        if routes:
            route_ok = feed_ok[:, route_feed] & (u_leg >= p_leg)
        for j, cols in routes_by_sink.items():
            if cols:
                delivered[j] += int(route_ok[:, cols].any(axis=1).sum())
        done += n
        chunk_no += 1
    return {j: 1.0 - delivered[j] / packets for j in delivered}


def simulate_loss(ps: PathSet, sink: str, packets: int, seed: int, **kw) -> float:
    return simulate_losses(ps, packets, seed, **kw)[sink]
