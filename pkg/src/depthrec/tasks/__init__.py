"""Task generators with per-task oracles."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import family, graph, logic
from .sampling import balanced_labels


def generate(task: str, complexities: Sequence[int], rng: np.random.Generator, **kw) -> list:
    """One instance per entry of ``complexities``; binary tasks get exactly balanced labels."""
    if task == "graph":
        return graph.gen_graph_batch(complexities, rng, n=kw.get("n"), id_pool=kw.get("id_pool", graph.DEFAULT_ID_POOL))
    if task == "logic":
        return logic.gen_expr_batch(complexities, rng)
    if task == "family":
        return family.gen_family_batch(complexities, rng)
    raise ValueError(f"unknown task {task!r}")


def verify(task: str, inst) -> bool:
    """Re-derive label and complexity with the task's oracle."""
    if task == "graph":
        reach, dist = graph.bfs_oracle(inst)
        return int(reach) == inst.label and (not reach or dist == inst.hops)
    if task == "logic":
        ast = logic.parse(inst.src)
        return int(logic.eval_oracle(ast)) == inst.label and logic.depth_oracle(ast) == inst.depth
    if task == "family":
        return family.offset_oracle(inst) == inst.label
    raise ValueError(f"unknown task {task!r}")


def from_record(task: str, rec: dict):
    cls = {"graph": graph.GraphInstance, "logic": logic.BoolExprInstance, "family": family.FamilyInstance}[task]
    return cls.from_dict(rec)


__all__ = ["generate", "verify", "from_record", "balanced_labels", "family", "graph", "logic"]
