"""Per-stage feature sequences for the value model.

Each stage contributes one 16-wide row: eight intrinsic features that never
change with scheduling decisions, and eight acquired features filled in
once the stage is scheduled.  Rows are ordered by topological order so
every state of a pipeline produces a matrix of the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pipeline_ir import Pipeline, PipelineError, intrinsic_stats, topological_order
from .schedule_space import ScheduleState, loop_nest
from . import cost_oracle

FEATURE_WIDTH = 16

INTRINSIC_NAMES = (
    "log_points",
    "log_flops",
    "log_input_bytes",
    "log_output_bytes",
    "arithmetic_intensity",
    "num_inputs",
    "num_reduction_dims",
    "max_overlap_ratio",
)
ACQUIRED_NAMES = (
    "scheduled",
    "log_vec_width",
    "log_parallel_tasks",
    "log_innermost_extent",
    "compute_depth",
    "log_recompute",
    "fits_cache",
    "log_invocations",
)


def _intrinsic_rows(p: Pipeline) -> np.ndarray:
    rows = []
    for name in topological_order(p):
        st = intrinsic_stats(p, name)
        stage = p.stage(name)
        overlap = 0.0
        for edge in stage.inputs:
            for am in edge.access:
                overlap = max(overlap, am.window / max(1, am.stride))
        rows.append(
            [
                math.log2(1 + st.points),
                math.log2(1 + st.flops),
                math.log2(1 + st.input_bytes),
                math.log2(1 + st.output_bytes),
                st.flops / (1 + st.input_bytes + st.output_bytes),
                float(len(stage.inputs)),
                float(len(stage.reduction_dims)),
                overlap,
            ]
        )
    return np.array(rows, dtype=np.float64)


def featurize_state(
    s: ScheduleState, cache_size: int | None = None
) -> np.ndarray:
    """[n_stages x 16] feature matrix; acquired columns zero until scheduled."""
    if "features" in s._cache:
        return s._cache["features"]
    p = s.pipeline
    if cache_size is None:
        cache_size = cost_oracle.MachineModel().cache_size
    if "intrinsic" in s._cache:
        intrinsic = s._cache["intrinsic"]
    else:
        intrinsic = _intrinsic_rows(p)
    topo = topological_order(p)
    mat = np.zeros((len(topo), FEATURE_WIDTH), dtype=np.float64)
    mat[:, :8] = intrinsic
    nests = loop_nest(s)
    bounds = cost_oracle._bounds_for_prefix(s) if s.decisions else None
    for i, name in enumerate(topo):
        if name not in nests:
            continue
        nest = nests[name]
        b = bounds[name]
        d = next(dec for dec in s.decisions if dec.stage == name)
        par_tasks = nest.loops[0].extent if d.parallel else 0
        ws = cost_oracle._working_set_bytes(p, nest)
        mat[i, 8:] = [
            1.0,
            math.log2(d.vectorize_width),
            math.log2(par_tasks) if par_tasks else 0.0,
            math.log2(nest.loops[-1].extent),
            float(nest.depth),
            math.log2(float(b.recompute_factor)),
            1.0 if ws <= cache_size else 0.0,
            math.log2(1 + b.invocations),
        ]
    mat.setflags(write=False)
    s._cache["features"] = mat
    s._cache["intrinsic"] = intrinsic
    return mat


SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, Normalizer)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )


def fit_normalizer(dataset: list[np.ndarray]) -> Normalizer:
    """Column-wise mean/std over all rows of all matrices (sigma floored)."""
    if not dataset:
        raise PipelineError("cannot fit a normalizer on an empty dataset")
    stacked = np.concatenate([m.reshape(-1, FEATURE_WIDTH) for m in dataset], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), SIGMA_FLOOR)
    return Normalizer(mean, std)


def normalize(nz: Normalizer, mat: np.ndarray) -> np.ndarray:
    return (mat - nz.mean) / nz.std


def denormalize(nz: Normalizer, mat: np.ndarray) -> np.ndarray:
    return mat * nz.std + nz.mean
