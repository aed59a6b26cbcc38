"""Independent brute-force dependence oracle used by the tests.

Interprets a complete schedule by enumerating concrete loop iterations
point by point: every per-invocation region, invocation count and
recompute factor is recomputed here from explicit coordinate sets, with
no interval arithmetic, and compared against the closed-form bounds
inference in `tensched.cost_oracle`.
"""

import itertools
import math
from fractions import Fraction

from tensched.cost_oracle import infer_bounds
from tensched.schedule_space import ScheduleState


def _decision(state: ScheduleState, name: str):
    return next(d for d in state.decisions if d.stage == name)


def _cell_box(points: set, ndims: int):
    """(los, extents) of a point set, asserting it is a contiguous box."""
    assert points
    los, his = [], []
    for k in range(ndims):
        vals = [pt[k] for pt in points]
        los.append(min(vals))
        his.append(max(vals))
    extents = tuple(hi - lo + 1 for lo, hi in zip(los, his))
    assert math.prod(extents) == len(points), "point set is not a box"
    return tuple(los), extents


def invocation_cells(state: ScheduleState, name: str, memo=None):
    """Per invocation of `name`: the set of pure-domain points it computes.

    A Root stage runs once and computes its full domain.  An anchored
    stage runs once per assignment of its consumer's loops down to the
    anchor level (per consumer invocation), and computes exactly the
    union of producer points that the consumer's remaining iterations
    access through the connecting edges.
    """
    if memo is None:
        memo = {}
    if name in memo:
        return memo[name]
    p = state.pipeline
    d = _decision(state, name)
    stage = p.stage(name)
    if d.compute_at is None:
        full = set(itertools.product(*[range(e) for e in stage.pure_extents]))
        memo[name] = [full]
        return memo[name]

    cname, lvl = d.compute_at
    cstage = p.stage(cname)
    cdec = _decision(state, cname)
    out = []
    for ccell in invocation_cells(state, cname, memo):
        los, exts = _cell_box(ccell, len(cstage.dims))
        split = dict(cdec.splits)
        # loop name -> (base dim, extent, digit weight)
        info = {}
        for (dim, _), ext in zip(cstage.dims, exts):
            if dim in split:
                f = split[dim]
                assert ext % f == 0
                info[dim + "o"] = (dim, ext // f, f)
                info[dim + "i"] = (dim, f, 1)
            else:
                info[dim] = (dim, ext, 1)
        for dim, ext in cstage.reduction_dims:
            info[dim] = (dim, ext, 1)
        loops = [info[n] for n in cdec.order]
        dim_lo = {dim: lo for (dim, _), lo in zip(cstage.dims, los)}
        for dim, _ in cstage.reduction_dims:
            dim_lo[dim] = 0
        outer, inner = loops[: lvl + 1], loops[lvl + 1 :]
        for outer_vals in itertools.product(*[range(e) for _, e, _ in outer]):
            req = set()
            for inner_vals in itertools.product(*[range(e) for _, e, _ in inner]):
                coord = dict(dim_lo)
                for (dim, _, wgt), v in zip(loops, outer_vals + inner_vals):
                    coord[dim] += v * wgt
                cidx = [coord[dim] for dim, _ in cstage.all_dims]
                for edge in cstage.inputs:
                    if edge.producer != name:
                        continue
                    ranges = []
                    for am in edge.access:
                        if am.consumer_dim is None:
                            ranges.append(range(am.window))
                        else:
                            base = am.stride * cidx[am.consumer_dim]
                            ranges.append(range(base, base + am.window))
                    req |= set(itertools.product(*ranges))
            out.append(req)
    memo[name] = out
    return out


def check_bounds_against_brute_force(state: ScheduleState):
    """Assert infer_bounds matches the per-point enumeration exactly."""
    table = infer_bounds(state)
    p = state.pipeline
    memo = {}
    for d in state.decisions:
        stage = p.stage(d.stage)
        cells = invocation_cells(state, d.stage, memo)
        entry = table[d.stage]
        assert entry.invocations == len(cells), d.stage
        red = math.prod(stage.reduction_extents)
        total_pure = 0
        for cell in cells:
            _, extents = _cell_box(cell, len(stage.dims))
            assert extents == entry.region.extents, d.stage
            total_pure += len(cell)
        assert entry.points_per_invocation == len(cells[0]) * red, d.stage
        assert entry.recompute_factor == Fraction(
            total_pure * red, stage.domain_points
        ), d.stage
