"""End-to-end solver entry points.

`run_approx` is the rounding pipeline: LP relaxation, retried randomized
draw, then either the assignment-flow stage or (with colors on) the path
rounding stage, assembled into a PathSet with its audit-relevant metadata.
`run_exact` and `run_hack` wrap the branch-and-bound baseline and the
LP-fixing shortcut behind the same output type.
"""

from __future__ import annotations

import math

from .color import ColorStageError, run_color_stage
from .gapflow import GapStageError, run_gap_stage
from .lp import ModeOptions, TimeBudget, approx_hack, build_model, solve_ip, solve_lp
from .model import Instance
from .rounding import RoundingConfig, randomized_round, round_with_retries
from .solution import PathSet, from_integral

PIPELINE_TRIALS = 3
MULTIPLIER_SCALE = 64.0  # default M = 64 * log2(max(2, number of sinks))


class ApproxPipelineError(RuntimeError):
    """Every pipeline trial lost its stage-two guarantees."""


def default_multiplier(inst: Instance) -> float:
    return MULTIPLIER_SCALE * math.log2(max(2, len(inst.sinks)))


def run_approx(
    inst: Instance,
    opts: ModeOptions | None = None,
    multiplier: float | None = None,
    seed: int = 0,
    max_retries: int = 20,
    delta: float = 0.25,
    pipeline_trials: int = PIPELINE_TRIALS,
) -> PathSet:
    """LP, accepted random draw, stage-two rounding, assembled routes.

    A draw that passes the acceptance predicates can still lose a stage-two
    guarantee check (the colored walk's certificate in particular), in which
    case the pipeline redraws from the next attempt index, up to
    `pipeline_trials` times. All randomness derives from (seed, attempt), so
    identical arguments give identical output.
    """
    model = build_model(inst, opts)
    frac = solve_lp(model)
    m = multiplier if multiplier is not None else default_multiplier(inst)
    config = RoundingConfig(
        multiplier=m, delta=delta, max_retries=max_retries, seed=seed
    )
    violations_first = len(randomized_round(frac, config, attempt=0).violations())

    start = 0
    failures: list[str] = []
    for trial in range(pipeline_trials):
        sol = round_with_retries(frac, config, start_attempt=start)
        try:
            if model.opts.colors:
                stage = run_color_stage(sol)
                x_tilde = stage.x_tilde
                provenance = "approx-color"
                stage_meta = {
                    "path_cost_total": stage.path_cost_total,
                    "boxes": stage.plan.total_boxes,
                    "paths_selected": len(stage.selected),
                    "paths_dropped": stage.dropped_paths,
                    "karp_max_increase": stage.certificate.max_increase,
                    "karp_bound": stage.certificate.t,
                }
            else:
                gap = run_gap_stage(sol)
                x_tilde = gap.x_tilde
                provenance = "approx"
                stage_meta = {
                    "mass_cost": gap.mass_cost,
                    "boxes": gap.plan.total_boxes,
                }
        except (GapStageError, ColorStageError) as exc:
            failures.append(f"trial {trial} (attempt {sol.attempt}): {exc}")
            start = sol.attempt + 1
            continue
        meta = {
            "multiplier": m,
            "seed": seed,
            "delta": delta,
            "attempt": sol.attempt,
            "attempts": sol.attempts,
            "trial": trial,
            "draw_cost": sol.realized_cost,
            "lp_bound": frac.objective,
            "violations_first_draw": violations_first,
        }
        meta.update(stage_meta)
        return PathSet(
            instance=inst,
            x_tilde=x_tilde,
            provenance=provenance,
            mode=model.opts.mode,
            meta=meta,
        )
    raise ApproxPipelineError("; ".join(failures))


def run_exact(
    inst: Instance,
    opts: ModeOptions | None = None,
    budget: TimeBudget | None = None,
) -> PathSet:
    """Branch-and-bound optimum (or best incumbent under a budget)."""
    model = build_model(inst, opts)
    return from_integral(solve_ip(model, budget=budget))


def run_hack(
    inst: Instance,
    opts: ModeOptions | None = None,
    budget: TimeBudget | None = None,
) -> PathSet:
    """Fix the LP-integral coordinates, then solve the residual exactly."""
    model = build_model(inst, opts)
    frac = solve_lp(model)
    return from_integral(approx_hack(model, frac, budget=budget))
