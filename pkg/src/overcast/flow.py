"""Minimum-cost maximum-flow on small dense-ish digraphs.

Successive shortest augmenting paths with Johnson potentials. Capacities are
integers (so optimal flows are integral), costs are non-negative floats.
Sized for the assignment graphs the second rounding stage builds, a few
thousand edges at most.
"""

from __future__ import annotations

import heapq
import math

_EPS = 1e-12


class MinCostFlow:
    def __init__(self, n: int):
        self.n = n
        self.adj: list[list[list]] = [[] for _ in range(n)]  # [to, cap, cost, rev]
        self._handles: list[tuple[int, int, int]] = []  # (tail, slot, original cap)

    def add_edge(self, u: int, v: int, cap: int, cost: float) -> int:
        if cap < 0 or cap != int(cap):
            raise ValueError(f"capacity must be a non-negative integer, got {cap}")
        if cost < 0:
            raise ValueError("negative edge costs are not supported")
        handle = len(self._handles)
        self.adj[u].append([v, int(cap), float(cost), len(self.adj[v])])
        self.adj[v].append([u, 0, -float(cost), len(self.adj[u]) - 1])
        self._handles.append((u, len(self.adj[u]) - 1, int(cap)))
        return handle

    def flow_on(self, handle: int) -> int:
        u, slot, cap0 = self._handles[handle]
        return cap0 - self.adj[u][slot][1]

    def run(self, s: int, t: int, limit: int | None = None) -> tuple[int, float]:
        """Push up to `limit` units (all, if None); returns (flow, cost)."""
        pot = [0.0] * self.n
        total_flow = 0
        total_cost = 0.0
        while limit is None or total_flow < limit:
            dist = [math.inf] * self.n
            prev: list[tuple[int, int]] = [(-1, -1)] * self.n
            dist[s] = 0.0
            heap: list[tuple[float, int]] = [(0.0, s)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist[u] + _EPS:
                    continue
                for slot, edge in enumerate(self.adj[u]):
                    v, cap, cost, _rev = edge
                    if cap <= 0:
                        continue
                    nd = d + cost + pot[u] - pot[v]
                    if nd < dist[v] - _EPS:
                        dist[v] = nd
                        prev[v] = (u, slot)
                        heapq.heappush(heap, (nd, v))
            if math.isinf(dist[t]):
                break
            dt = dist[t]
            for v in range(self.n):
                if not math.isinf(dist[v]):
                    pot[v] += min(dist[v], dt)
                else:
                    pot[v] += dt
            push = math.inf if limit is None else limit - total_flow
            v = t
            while v != s:
                u, slot = prev[v]
                push = min(push, self.adj[u][slot][1])
                v = u
            push = int(push)
            v = t
            while v != s:
                u, slot = prev[v]
                edge = self.adj[u][slot]
                edge[1] -= push
                self.adj[edge[0]][edge[3]][1] += push
                total_cost += push * edge[2]
                v = u
            total_flow += push
        return total_flow, total_cost
