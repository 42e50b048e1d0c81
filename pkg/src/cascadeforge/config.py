"""Flat ``key = value`` run configuration.

Grammar, one entry per line::

    # comment
    section.key = value   # trailing comments are allowed

Blank lines are ignored. Later files and ``--set`` overrides win over
earlier ones. Unknown keys and badly typed values are rejected, and every
section is validated by building the object it configures.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .adversary import AllAtOnce, AttackConfig, Geometric, Uniform
from .agent import TrainConfig
from .rewards import MetricGoal, RewardScheme, make_scheme, two_region_curve
from .scores import ConstantCost, DetectorSpec, LogNormalCost, SynthSpec

SEED_ENV = "CASCADEFORGE_SEED"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.lower() in ("none", "") else float(text)


def _opt_str(text: str) -> str | None:
    return None if text.lower() in ("none", "") else text


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    # data
    "data.table": (_opt_str, None),
    "data.detectors": (str, "A:0.97:30:0.3, B:0.85:1:0.3, C:0.75:0.2:0.3, D:0.65:0.05:0.3"),
    "data.n_samples": (int, 6000),
    "data.class_balance": (float, 0.5),
    "data.seed": (int, 0),
    "data.split": (_floats, (0.75, 0.10, 0.15)),
    "data.split_seed": (int, 0),
    "data.out": (str, "table.csv"),
    # reward
    "reward.scheme": (int, 3),
    "reward.d": (float, 1.0),
    "reward.t_cap": (float, 34.0),
    # metric goal
    "goal.metric": (_opt_str, None),
    "goal.lower": (float, 0.95),
    "goal.upper": (float, 0.97),
    "goal.bonus": (float, 2.0),
    "goal.batch": (int, 256),
    "goal.sign_mode": (str, "literal"),
    "goal.credit": (str, "scale"),
    # training
    "train.lr": (float, 1e-3),
    "train.decay": (float, 0.99),
    "train.eps": (float, 1e-8),
    "train.gamma": (float, 1.0),
    "train.epochs": (int, 40),
    "train.seed": (int, 0),
    "train.entropy_coef": (float, 0.01),
    "train.entropy_start": (_opt_float, 1.0),
    "train.value_coef": (float, 0.5),
    "train.hidden": (int, 32),
    "train.episodes_per_batch": (int, 64),
    "train.updates_per_batch": (int, 4),
    "train.minibatch": (int, 128),
    "train.buffer_capacity": (int, 5000),
    "train.warmup_episodes": (int, 100),
    "train.normalize_advantages": (_bool, True),
    "train.target": (str, "return"),
    "train.checkpoint": (str, "agent.json"),
    "train.init": (_opt_str, None),
    # transfer
    "transfer.target_start": (float, 0.0),
    "transfer.target_end": (_opt_float, None),
    "transfer.target_table": (_opt_str, None),
    "transfer.percentile": (float, 95.0),
    "transfer.epsilon": (float, 1e-8),
    "transfer.tolerance": (float, 1e-4),
    "transfer.residual_tol": (float, 1e-9),
    "transfer.seed": (int, 0),
    "transfer.out": (str, "curve.conf"),
    # attack
    "attack.kind": (str, "white"),
    "attack.target": (str, "agent"),
    "attack.epsilon": (float, 0.5),
    "attack.schedule": (str, "uniform"),
    "attack.k": (int, 1),
    "attack.q": (float, 0.5),
    "attack.method": (str, "pgd"),
    "attack.pgd_steps": (int, 10),
    "attack.pgd_step_frac": (float, 0.25),
    "attack.goal": (str, "evade"),
    "attack.defense": (str, "deterministic"),
    "attack.runs": (int, 10),
    "attack.rounds": (int, 3),
    "attack.n_samples": (int, 1000),
    "attack.seed": (int, 0),
    "attack.out": (str, "attack.json"),
    # evaluation
    "eval.checkpoint": (_opt_str, None),
    "eval.quality": (str, "f1"),
    "eval.baselines": (_bool, True),
    "eval.out": (str, "eval"),
    # report
    "report.out": (str, "report"),
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    explicit: set[str] = field(default_factory=set)

    def __getitem__(self, key: str) -> Any:
        if key not in SCHEMA:
            raise KeyError(key)
        return self.values.get(key, SCHEMA[key][1])

    def is_set(self, key: str) -> bool:
        return key in self.explicit

    def section(self, prefix: str) -> dict[str, Any]:
        p = prefix + "."
        return {k[len(p):]: self[k] for k in SCHEMA if k.startswith(p)}

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if self[k] is None]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")

    # -- builders -----------------------------------------------------------

    def scheme(self) -> RewardScheme:
        s = self["reward.scheme"]
        if not 1 <= s <= 5:
            raise ConfigError("scheme out of 1..5")
        return make_scheme(s, two_region_curve(self["reward.d"], self["reward.t_cap"]))

    def goal(self) -> MetricGoal | None:
        if self["goal.metric"] is None:
            return None
        g = self.section("goal")
        return MetricGoal(g["metric"], g["lower"], g["upper"], g["bonus"], g["batch"],
                          g["sign_mode"], g["credit"])

    def train_config(self) -> TrainConfig:
        t = self.section("train")
        for k in ("checkpoint", "init"):
            t.pop(k)
        return TrainConfig(**t)

    def synth_spec(self) -> SynthSpec:
        dets = parse_detectors(self["data.detectors"])
        return SynthSpec(dets, self["data.n_samples"], self["data.class_balance"], self["data.seed"])

    def attack_config(self) -> AttackConfig:
        a = self.section("attack")
        kind = a["schedule"]
        if kind == "uniform":
            schedule = Uniform()
        elif kind == "all_at_once":
            schedule = AllAtOnce(a["k"])
        elif kind == "geometric":
            schedule = Geometric(a["q"])
        else:
            raise ConfigError(f"unknown attack schedule {kind!r}")
        if a["kind"] not in ("white", "black"):
            raise ConfigError(f"unknown attack kind {a['kind']!r}")
        return AttackConfig(a["epsilon"], schedule, a["method"], a["pgd_steps"], a["pgd_step_frac"],
                            a["goal"], a["defense"], a["runs"], a["rounds"], a["seed"])

    def validate(self) -> None:
        self.scheme()
        self.goal()
        self.train_config()
        self.synth_spec()
        self.attack_config()
        fr = self["data.split"]
        if len(fr) != 3 or any(not (x > 0) for x in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ConfigError("data.split needs three positive fractions summing to 1")
        if self["eval.quality"] not in ("f1", "auc"):
            raise ConfigError("eval.quality must be f1 or auc")
        if not 0 < self["transfer.percentile"] <= 100:
            raise ConfigError("transfer.percentile must lie in (0, 100]")


def parse_detectors(text: str) -> tuple[DetectorSpec, ...]:
    """``id:accuracy:cost[:sigma[:noise]]`` entries separated by commas.

    ``sigma`` > 0 draws lognormal costs with median ``cost``; otherwise the
    cost is constant.
    """
    out = []
    for item in text.split(","):
        parts = [p.strip() for p in item.strip().split(":")]
        if not 3 <= len(parts) <= 5 or not parts[0]:
            raise ConfigError(f"bad detector entry {item.strip()!r}")
        try:
            acc, cost = float(parts[1]), float(parts[2])
            sigma = float(parts[3]) if len(parts) > 3 else 0.0
            noise = float(parts[4]) if len(parts) > 4 else 0.0
        except ValueError as exc:
            raise ConfigError(f"bad detector entry {item.strip()!r}: {exc}") from None
        if sigma > 0:
            if not cost > 0:
                raise ConfigError("lognormal cost needs a positive median")
            law = LogNormalCost(float(np.log(cost)), sigma)
        else:
            law = ConstantCost(cost)
        out.append(DetectorSpec(acc, law, noise, parts[0]))
    return tuple(out)


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(lines, 1):
        body = _strip_comment(line).strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def _coerce(key: str, text: str) -> Any:
    parser = SCHEMA[key][0]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


def parse_config(paths: str | Path | Sequence[str | Path] | None = None,
                 overrides: Sequence[str] = (), env: dict[str, str] | None = None) -> RunConfig:
    """Merge config files (in order), then ``key=value`` overrides, then the
    seed environment variable, and validate the result."""
    if paths is None:
        paths = []
    elif isinstance(paths, (str, Path)):
        paths = [paths]
    raw: dict[str, str] = {}
    for p in paths:
        path = Path(p)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        raw.update(parse_lines(text.splitlines(), str(path)))
    raw.update(parse_lines(overrides, "--set"))
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        raw["train.seed"] = env[SEED_ENV]
    cfg = RunConfig({k: _coerce(k, v) for k, v in raw.items()}, set(raw))
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def format_config(values: dict[str, Any]) -> str:
    """Render values in the same dialect, e.g. a transferred curve."""
    lines = []
    for k, v in values.items():
        if isinstance(v, float):
            v = np.format_float_positional(v, unique=True, trim="-")
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
