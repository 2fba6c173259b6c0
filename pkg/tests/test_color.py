"""Colored path rounding: decomposition, filtering, the walk, and guarantees."""

import numpy as np
import pytest

from overcast.color import (
    ColorStageError,
    FlowEdge,
    RelayPath,
    build_rounding_system,
    decompose_flow,
    enumerate_paths,
    filter_and_scale,
    karp_round,
    run_color_stage,
)
from overcast.flow import MinCostFlow
from overcast.gapflow import build_boxes
from overcast.lp import build_model, solve_lp
from overcast.model import instance_from_doc
from overcast.rounding import RoundingConfig, round_with_retries
from overcast.solution import PathSet
from overcast.verify import audit


def colored_doc(phi=0.01, colors=(0, 0, 1, 1), n_sinks=3):
    reflectors = []
    refl_edges = []
    for idx, color in enumerate(colors):
        rid = f"r{idx}"
        reflectors.append(
            {"id": rid, "cost": 2.0 + idx, "fanout": 4, "color": color}
        )
    sinks = []
    src_edges = [
        {"from": "s0", "to": f"r{i}", "loss": 0.02, "cost": 1.0 + 0.1 * i}
        for i in range(len(colors))
    ]
    for j in range(n_sinks):
        did = f"d{j}"
        sinks.append({"id": did, "stream": "s0", "loss_threshold": phi})
        for i in range(len(colors)):
            refl_edges.append(
                {"from": f"r{i}", "to": did, "loss": 0.05, "cost": 0.5 + 0.2 * ((i + j) % 3)}
            )
    return {
        "sources": [{"id": "s0"}],
        "reflectors": reflectors,
        "sinks": sinks,
        "src_edges": src_edges,
        "refl_edges": refl_edges,
        "colors_enabled": True,
    }


def accepted_draw(doc, multiplier=8.0, seed=5):
    inst = instance_from_doc(doc)
    model = build_model(inst)
    frac = solve_lp(model)
    config = RoundingConfig(multiplier=multiplier, seed=seed)
    return round_with_retries(frac, config)


def recompute_increases(a, v0, v):
    return np.asarray(a) @ (np.asarray(v) - np.asarray(v0))


def test_karp_round_pair_example():
    a = np.array([[1.0, 1.0]])
    v0 = np.array([0.5, 0.5])
    v, cert = karp_round(a, v0, t=1.0)
    assert cert.ok
    assert v.tolist() == [1.0, 0.0]
    # enumerate all four roundings against the contract
    valid = set()
    for cand in ((0, 0), (0, 1), (1, 0), (1, 1)):
        inc = recompute_increases(a, v0, np.array(cand, dtype=float))
        if np.all(inc < 1.0 - 1e-9):
            valid.add(cand)
    assert valid == {(0, 0), (0, 1), (1, 0)}
    assert tuple(int(x) for x in v) in valid


def test_karp_round_integral_input_unchanged():
    a = np.array([[2.0, -1.0, 0.5], [0.0, 1.0, 1.0]])
    v0 = np.array([1.0, 0.0, 3.0])
    v, cert = karp_round(a, v0, t=4.0)
    assert np.array_equal(v, v0)
    assert cert.ok and cert.max_increase == 0.0


def test_karp_round_random_systems_meet_contract():
    rng = np.random.default_rng(1234)
    t = 3.0
    for trial in range(40):
        m = int(rng.integers(1, 5))
        n = int(rng.integers(m + 2, m + 9))
        a = rng.uniform(-1.0, 1.0, size=(m, n))
        pos = np.where(a > 0, a, 0.0).sum(axis=0)
        neg = -np.where(a < 0, a, 0.0).sum(axis=0)
        scale = t / np.maximum(t, np.maximum(pos, neg))
        a = a * scale
        v0 = rng.uniform(0.0, 1.0, size=n)
        v, cert = karp_round(a, v0, t=t)
        assert cert.ok, f"trial {trial}: certificate rejected"
        assert np.all((v == np.floor(v0)) | (v == np.ceil(v0)))
        inc = recompute_increases(a, v0, v)
        assert np.all(inc < t - 1e-9)
        # the walk is deterministic
        v2, _ = karp_round(a, v0, t=t)
        assert np.array_equal(v, v2)


def test_decompose_flow_hand_diamond():
    edges = [
        FlowEdge(0, 1, 2.0, "sa"),
        FlowEdge(0, 2, 1.0, "sb"),
        FlowEdge(1, 3, 2.0, "at"),
        FlowEdge(2, 3, 1.0, "bt"),
    ]
    paths = decompose_flow(4, edges, 0, 3)
    assert paths == [(2.0, [0, 2]), (1.0, [1, 3])]


def test_decompose_flow_matches_flow_solver_cost():
    rng = np.random.default_rng(77)
    checked = 0
    for _trial in range(12):
        left = int(rng.integers(2, 5))
        right = int(rng.integers(2, 5))
        solver = MinCostFlow(2 + left + right)
        s, t = 0, 1 + left + right
        specs = []
        handles = []
        for a in range(left):
            cap = int(rng.integers(1, 4))
            specs.append((s, 1 + a, cap, 0.0))
        for a in range(left):
            for b in range(right):
                if rng.random() < 0.7:
                    specs.append((1 + a, 1 + left + b, int(rng.integers(1, 3)), float(rng.uniform(0, 4))))
        for b in range(right):
            specs.append((1 + left + b, t, int(rng.integers(1, 4)), 0.0))
        for u, v, cap, cost in specs:
            handles.append(solver.add_edge(u, v, cap, cost))
        sent, cost = solver.run(s, t)
        if sent == 0:
            continue
        checked += 1
        edges = [
            FlowEdge(u, v, float(solver.flow_on(h)), cost)
            for (u, v, _cap, cost), h in zip(specs, handles)
        ]
        paths = decompose_flow(2 + left + right, edges, s, t)
        total = sum(
            mass * sum(edges[idx].tag for idx in route) for mass, route in paths
        )
        assert total == pytest.approx(cost, abs=1e-9)
        assert sum(mass for mass, _route in paths) == pytest.approx(sent, abs=1e-9)
    assert checked >= 8


def test_decompose_flow_rejects_bad_inputs():
    with pytest.raises(ValueError, match="not conserved"):
        decompose_flow(3, [FlowEdge(0, 1, 1.0), FlowEdge(1, 2, 0.5)], 0, 2)
    # a circulation never reaches the target and must not vanish silently
    loop = [FlowEdge(1, 2, 1.0), FlowEdge(2, 1, 1.0)]
    with pytest.raises(ValueError, match="undecomposed|cycle"):
        decompose_flow(3, loop, 0, 0)


def fabricated_path(sink, box, reflector, mass, cost, color=None):
    return RelayPath(
        sink=sink,
        box_index=box,
        reflector=reflector,
        stream="s0",
        mass=mass,
        cost=cost,
        color=color,
    )


def test_filter_and_scale_drops_expensive_paths():
    paths = [
        fabricated_path("d0", 0, "r0", 0.125, 1.0),
        fabricated_path("d0", 0, "r1", 0.125, 1.0),
        fabricated_path("d0", 0, "r2", 0.125, 1.0),
        fabricated_path("d0", 0, "r3", 0.125, 100.0),
    ]
    kept, dropped = filter_and_scale(paths, draw_cost=1.0)
    assert [p.reflector for p in dropped] == ["r3"]
    assert all(p.scaled == pytest.approx(0.5) for p in kept)

    # boundary: cost exactly 4x the draw stays in
    paths2 = [fabricated_path("d0", 0, "r0", 0.5, 4.0)]
    kept2, dropped2 = filter_and_scale(paths2, draw_cost=1.0)
    assert kept2 and not dropped2 and kept2[0].scaled == 1.0


def test_filter_and_scale_quarter_floor_and_zero_cost_guard():
    paths = [
        fabricated_path("d0", 0, "r0", 0.4, 50.0),
        fabricated_path("d0", 0, "r1", 0.1, 1.0),
    ]
    with pytest.raises(ColorStageError, match="retained mass"):
        filter_and_scale(paths, draw_cost=1.0)
    # zero realized cost disables filtering entirely
    kept, dropped = filter_and_scale(paths, draw_cost=0.0)
    assert len(kept) == 2 and not dropped


def test_rounding_system_validation_catches_tampering():
    sol = accepted_draw(colored_doc(), seed=3)
    plan = build_boxes(sol)
    kept, _dropped = filter_and_scale(enumerate_paths(sol, plan), sol.realized_cost)
    system = build_rounding_system(sol, kept)
    system.validate()

    system.a[:, 0] = system.a[:, 0] + 20.0
    with pytest.raises(ColorStageError, match="column-sum"):
        system.validate()


def test_enumerate_paths_covers_boxes_exactly():
    sol = accepted_draw(colored_doc(), seed=3)
    plan = build_boxes(sol)
    paths = enumerate_paths(sol, plan)
    per_box = {}
    for p in paths:
        per_box[(p.sink, p.box_index)] = per_box.get((p.sink, p.box_index), 0.0) + p.mass
    for j, boxes in plan.boxes.items():
        for box in boxes:
            assert per_box[(j, box.index)] == pytest.approx(0.5, abs=1e-7)
    n_frags = sum(len(b.fragments) for bs in plan.boxes.values() for b in bs)
    assert len(paths) <= n_frags


def test_color_stage_end_to_end_guarantees():
    for seed in (3, 11, 29):
        sol = accepted_draw(colored_doc(), seed=seed)
        result = run_color_stage(sol)
        assert result.certificate.ok
        assert result.certificate.max_increase < 9.0 - 1e-9

        covered = {(p.sink, p.box_index) for p in result.selected}
        for j, boxes in result.plan.boxes.items():
            for box in boxes:
                assert (j, box.index) in covered
        counts = {}
        for p in result.selected:
            if p.color is not None:
                counts[(p.sink, p.color)] = counts.get((p.sink, p.color), 0) + 1
        assert all(n <= 13 for n in counts.values())
        assert result.path_cost_total <= 13.0 * result.draw_cost + 1e-6
        assert set(result.x_tilde) <= set(sol.model.x_index)

        again = run_color_stage(sol)
        assert again.x_tilde == result.x_tilde


def test_color_stage_feeds_the_color_audit_profile():
    sol = accepted_draw(colored_doc(), seed=3)
    result = run_color_stage(sol)
    ps = PathSet(
        instance=sol.model.inst,
        x_tilde=result.x_tilde,
        provenance="approx-color",
        meta={
            "draw_cost": result.draw_cost,
            "path_cost_total": result.path_cost_total,
        },
    )
    report = audit(ps, "color")
    assert report.ok, report.failures


def test_color_stage_skips_when_no_sink_demands_weight():
    doc = colored_doc(phi=1.0)
    sol = accepted_draw(doc, seed=3)
    result = run_color_stage(sol)
    assert result.x_tilde == {} and result.selected == []
    assert result.certificate.ok
