"""YAML run configuration with per-task defaults and line-numbered validation errors.

Schema (every key optional except ``task``)::

    task: graph | logic | family
    seed: 0
    model:     d, n_heads, d_ff, t_max, rope, layerscale, layerscale_init, gate_bias, id_pool, embed_init,
               final_norm
    train:     t_lo, t_hi, complexity_lo, complexity_hi, batch_size, lr, weight_decay,
               grad_clip, warmup, lr_schedule, total_steps, mode, log_every,
               checkpoint_every, graph_nodes
    eval:      steps, complexities, n_per_cell, threshold, image_format
    gen:       complexities, count
    ablate:    deep_complexities, ood_complexities, sufficient_steps, n_per_cell
    gradcheck: d, n_heads, d_ff, steps, max_len, batch, n_samples, h, tol, precision
    paths:     data, checkpoints, reports

Ranges such as ``steps`` accept a list or a string like ``"1-20"`` / ``"1-5,8,12"``.
Paths may be overridden by DEPTHREC_DATA, DEPTHREC_CHECKPOINTS and DEPTHREC_REPORTS.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .gradcheck import GradCheckConfig
from .model import TASKS, ModelConfig, default_model_config
from .train import TrainConfig, default_train_config

ENV_PATHS = {"data": "DEPTHREC_DATA", "checkpoints": "DEPTHREC_CHECKPOINTS", "reports": "DEPTHREC_REPORTS"}

# deep OOD, moderate OOD, largest step count tried for the latter
DEFAULT_ABLATION = {
    "graph": ([12], [6, 7, 8], 12),
    "logic": ([12, 13, 14], [9, 10], 20),
    "family": ([8, 9], [6, 7], 16),
}

DEFAULT_EVAL_AXES = {
    "graph": (list(range(1, 21)), list(range(1, 13))),
    "logic": (list(range(1, 29)), list(range(1, 15))),
    "family": (list(range(1, 21)), list(range(2, 10))),
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass
class EvalConfig:
    steps: list[int] = field(default_factory=list)
    complexities: list[int] = field(default_factory=list)
    n_per_cell: int = 500
    threshold: float = 0.9
    image_format: str = "png"


@dataclass
class GenConfig:
    complexities: list[int] = field(default_factory=list)
    count: int = 1000


@dataclass
class AblateConfig:
    deep_complexities: list[int] = field(default_factory=list)
    ood_complexities: list[int] = field(default_factory=list)
    sufficient_steps: int = 12
    n_per_cell: int = 500


@dataclass
class PathsConfig:
    data: str = "data"
    checkpoints: str = "runs"
    reports: str = "reports"


@dataclass
class RunConfig:
    task: str
    seed: int
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig
    gen: GenConfig
    ablate: AblateConfig
    gradcheck: GradCheckConfig
    paths: PathsConfig

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"].pop("task")
        d["train"].pop("task")
        d["train"].pop("seed")
        d["gradcheck"].pop("seed")
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)


def parse_range(value: Any) -> list[int]:
    if isinstance(value, int):
        return [value]
    if isinstance(value, list):
        return [int(v) for v in value]
    out: list[int] = []
    for part in str(value).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def default_config(task: str, seed: int = 0) -> RunConfig:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    steps, cx = DEFAULT_EVAL_AXES[task]
    train = default_train_config(task, seed=seed)
    model = default_model_config(task)
    gen_cx = list(range(train.complexity_lo, train.complexity_hi + 1))
    deep, ood, suff = DEFAULT_ABLATION[task]
    ablate = AblateConfig(list(deep), list(ood), suff)
    return RunConfig(task, seed, model, train, EvalConfig(list(steps), list(cx)), GenConfig(gen_cx),
                     ablate, GradCheckConfig(seed=seed), PathsConfig())


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "eval": EvalConfig, "gen": GenConfig,
             "ablate": AblateConfig, "gradcheck": GradCheckConfig, "paths": PathsConfig}
_LIST_FIELDS = {"eval.steps", "eval.complexities", "gen.complexities", "ablate.deep_complexities",
                "ablate.ood_complexities"}
_HIDDEN = {"model": {"task"}, "train": {"task", "seed"}, "gradcheck": {"seed"}}


def _coerce(value: Any, current: Any, key: str, line: int, source: str) -> Any:
    if key in _LIST_FIELDS:
        try:
            out = parse_range(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of integers or a range string", line, source) from None
        if not out:
            raise ConfigError(f"{key}: empty range", line, source)
        return out
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}", line, source)
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", line, source)
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}", line, source)
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}", line, source)
        return value
    return value


def _mapping(node, loader, source: str, what: str) -> list[tuple[str, Any, Any, int]]:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{what} must be a mapping", node.start_mark.line + 1, source)
    out = []
    for k, v in node.value:
        out.append((loader.construct_object(k, deep=True), loader.construct_object(v, deep=True), v,
                    k.start_mark.line + 1))
    return out


def loads(text: str, source: str = "<config>", seed: Optional[int] = None) -> RunConfig:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    finally:
        loader.dispose()
    if root is None:
        raise ConfigError("empty configuration", None, source)
    entries = _mapping(root, loader, source, "top level")
    top = {k: (v, node, line) for k, v, node, line in entries}
    if "task" not in top:
        raise ConfigError("missing required key 'task'", 1, source)
    task, _, task_line = top["task"]
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}", task_line, source)
    root_seed = top["seed"][0] if "seed" in top else 0
    if "seed" in top and (isinstance(root_seed, bool) or not isinstance(root_seed, int)):
        raise ConfigError("seed must be an integer", top["seed"][2], source)
    if seed is not None:
        root_seed = seed
    cfg = default_config(task, root_seed)

    for key, (value, node, line) in top.items():
        if key in ("task", "seed"):
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown key {key!r}", line, source)
        section = getattr(cfg, key)
        allowed = {f.name for f in dataclasses.fields(section)} - _HIDDEN.get(key, set())
        for sub, subval, _, subline in _mapping(node, loader, source, key):
            if sub not in allowed:
                raise ConfigError(f"unknown key {key}.{sub}", subline, source)
            setattr(section, sub, _coerce(subval, getattr(section, sub), f"{key}.{sub}", subline, source))
    _finalize(cfg, top, source)
    return cfg


def _finalize(cfg: RunConfig, top: dict, source: str) -> None:
    def line_of(section: str) -> Optional[int]:
        return top[section][2] if section in top else None

    try:
        cfg.model = ModelConfig(**{**dataclasses.asdict(cfg.model), "task": cfg.task})
    except ValueError as exc:
        raise ConfigError(str(exc), line_of("model"), source) from None
    cfg.train.task = cfg.task
    cfg.train.seed = cfg.seed
    cfg.gradcheck.seed = cfg.seed
    try:
        cfg.train.validate(cfg.model.t_max)
    except ValueError as exc:
        raise ConfigError(str(exc), line_of("train"), source) from None
    if max(cfg.eval.steps) > cfg.model.t_max or min(cfg.eval.steps) < 1:
        raise ConfigError(f"eval.steps must lie in 1..t_max={cfg.model.t_max}", line_of("eval"), source)
    if not 1 <= cfg.ablate.sufficient_steps <= cfg.model.t_max:
        raise ConfigError(f"ablate.sufficient_steps must lie in 1..t_max={cfg.model.t_max}", line_of("ablate"), source)
    if cfg.eval.n_per_cell < 1 or cfg.gen.count < 1 or cfg.ablate.n_per_cell < 1:
        raise ConfigError("sample counts must be positive", line_of("eval") or line_of("gen"), source)
    for name, var in ENV_PATHS.items():
        if os.environ.get(var):
            setattr(cfg.paths, name, os.environ[var])


def load(path: str | os.PathLike, seed: Optional[int] = None) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read(), source=str(path), seed=seed)
