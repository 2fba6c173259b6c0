"""Delivered overlay networks: routes, cost breakdown, JSON round trip.

A PathSet is the common output shape of every solver in the suite: the set of
(stream, reflector, sink) routes actually wired up, each with a mass of one
(exact solvers) or one half / one (the rounding pipeline, whose analysis
charges half-served boxes half a route). Reflector and feed activations are
implied: the minimal closure of the routes. Costs are always recomputed from
that closure, never trusted from solver bookkeeping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .model import Instance

_DOC_KIND = "overlay-routes-v1"


@dataclass
class PathSet:
    instance: Instance
    x_tilde: dict[tuple[str, str, str], float]
    provenance: str  # "exact-ip" | "approx" | "approxhack" | "approx-color"
    mode: str = "full"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for (k, i, j), mass in self.x_tilde.items():
            if mass <= 0.0:
                raise ValueError(f"route {(k, i, j)} carries non-positive mass")

    @property
    def routes(self) -> list[tuple[str, str, str]]:
        return sorted(self.x_tilde)

    def sink_routes(self, j: str) -> list[tuple[str, str, str]]:
        return [key for key in self.routes if key[2] == j]

    @property
    def reflectors_used(self) -> list[str]:
        return sorted({i for (_k, i, _j) in self.x_tilde})

    @property
    def feeds(self) -> list[tuple[str, str]]:
        return sorted({(k, i) for (k, i, _j) in self.x_tilde})

    def cost_breakdown(self) -> dict[str, float]:
        inst = self.instance
        if self.mode == "transmission":
            relays = sum(
                inst.src_edges[(k, i)].cost + inst.refl_edges[(i, j)].cost
                for (k, i, j) in self.x_tilde
            )
            return {"reflectors": 0.0, "feeds": 0.0, "relays": relays, "total": relays}
        reflectors = sum(inst.reflector_by_id[i].cost for i in self.reflectors_used)
        feeds = sum(inst.src_edges[(k, i)].cost for (k, i) in self.feeds)
        relays = sum(inst.refl_edges[(i, j)].cost for (_k, i, j) in self.x_tilde)
        return {
            "reflectors": reflectors,
            "feeds": feeds,
            "relays": relays,
            "total": reflectors + feeds + relays,
        }

    @property
    def cost(self) -> float:
        return self.cost_breakdown()["total"]

    def weight_mass(self, j: str) -> float:
        """Clamped route weight kept at sink j, mass-weighted."""
        inst = self.instance
        return sum(
            inst.path_weight(k, i, j) * mass
            for (k, i, jj), mass in self.x_tilde.items()
            if jj == j
        )

    def analytic_loss(self, j: str) -> float:
        sink = self.instance.sink_by_id[j]
        reflectors = [i for (_k, i, jj) in self.x_tilde if jj == j]
        return self.instance.analytic_loss(reflectors, sink.stream, j)

    def to_doc(self) -> dict:
        return {
            "kind": _DOC_KIND,
            "provenance": self.provenance,
            "mode": self.mode,
            "cost": self.cost,
            "routes": [
                {"stream": k, "reflector": i, "sink": j, "mass": self.x_tilde[(k, i, j)]}
                for (k, i, j) in self.routes
            ],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2, sort_keys=True)

    @staticmethod
    def from_doc(inst: Instance, doc: dict) -> "PathSet":
        if doc.get("kind") != _DOC_KIND:
            raise ValueError(f"not a routes document: kind={doc.get('kind')!r}")
        x_tilde = {}
        for rec in doc["routes"]:
            key = (rec["stream"], rec["reflector"], rec["sink"])
            if key in x_tilde:
                raise ValueError(f"duplicate route {key}")
            x_tilde[key] = float(rec["mass"])
        return PathSet(
            instance=inst,
            x_tilde=x_tilde,
            provenance=doc["provenance"],
            mode=doc.get("mode", "full"),
            meta=doc.get("meta", {}),
        )


def from_integral(result, extra_meta: dict | None = None) -> PathSet:
    """Wrap an exact/fixed solver result; unused activations are stripped.

    An optimal assignment never pays for an unused reflector or feed, so the
    minimal closure costs exactly the solver objective; for timeout
    incumbents produced under branching fixings the closure can only be
    cheaper, and it stays row-feasible.
    """
    model = result.model
    x_tilde = {key: 1.0 for key in result.chosen_triples()}
    meta = {
        "status": result.status,
        "solver_objective": result.objective,
        "lp_bound": result.bound,
        "nodes": result.nodes,
    }
    if extra_meta:
        meta.update(extra_meta)
    return PathSet(
        instance=model.inst,
        x_tilde=x_tilde,
        provenance=result.provenance,
        mode=model.opts.mode,
        meta=meta,
    )


def load_pathset(inst: Instance, path) -> PathSet:
    with open(path, "r", encoding="utf-8") as fh:
        return PathSet.from_doc(inst, json.load(fh))


def save_pathset(ps: PathSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ps.to_json())
        fh.write("\n")
