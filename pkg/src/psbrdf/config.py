"""Flat key=value pipeline configuration.

Every option has a default; `dump` prints the full effective set.  Unknown
keys, unparseable values, and missing referenced files are configuration
errors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

# Per-pixel sparsity weight. Chosen by a grid search over synthetic
# validation scenes at unit light intensity (see demos/reflectance_lowrank.py
# for the sweep machinery); solvers never hard-code this.
DEFAULT_LAMBDA = 3e-4


@dataclass
class PipelineConfig:
    dict_source: str = "desk"  # "desk", a .bdct path, or a directory of MERL binaries
    n_atoms: int = 20
    grid_divisor: int = 6
    pyramid: tuple[float, ...] = (10.0, 5.0, 3.0, 1.0, 0.5)
    lights: int = 253
    refine: bool = True
    lam: float = DEFAULT_LAMBDA
    lowrank: bool = False
    target_rank: int = 0  # 0: use an explicit beta instead of a rank sweep
    beta: float = 0.0
    solver_max_iters: int = 500
    solver_rel_tol: float = 1e-7
    scene: str = "sphere"
    scene_size: int = 48
    scene_atoms: int = 3
    noise_sigma: float = 0.0
    seed: int = 0
    threads: int = 1

    def validate(self) -> "PipelineConfig":
        if self.dict_source != "desk":
            p = Path(self.dict_source)
            if not p.exists():
                raise ConfigError(f"dictionary source {p} does not exist")
        if self.n_atoms < 1:
            raise ConfigError("n_atoms must be >= 1")
        if self.grid_divisor < 1 or 90 % self.grid_divisor != 0:
            raise ConfigError("grid_divisor must divide 90")
        if not self.pyramid or any(b >= a for a, b in zip(self.pyramid, self.pyramid[1:])):
            raise ConfigError("pyramid spacings must strictly decrease")
        if any(not (0 < s <= 90) for s in self.pyramid):
            raise ConfigError("pyramid spacings must be in (0, 90]")
        if self.lights < 3:
            raise ConfigError("need at least 3 lights")
        if self.lam < 0 or self.beta < 0 or self.noise_sigma < 0:
            raise ConfigError("lam, beta, and noise_sigma must be >= 0")
        if self.target_rank < 0:
            raise ConfigError("target_rank must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.scene not in ("sphere", "flat"):
            raise ConfigError("scene must be 'sphere' or 'flat'")
        if self.scene_size < 4:
            raise ConfigError("scene_size must be >= 4")
        return self


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(name: str, text: str, kind):
    if kind is bool:
        try:
            return _BOOL_WORDS[text.lower()]
        except KeyError:
            raise ConfigError(f"{name}: expected a boolean, got {text!r}") from None
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {text!r}") from None
    if kind is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {text!r}") from None
    if kind is str:
        return text
    # tuple of floats
    try:
        return tuple(float(p) for p in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{name}: expected numbers, got {text!r}") from None


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    kinds = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        for lineno, line in enumerate(p.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{p}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in kinds:
                raise ConfigError(f"{p}:{lineno}: unknown key {key!r}")
            setattr(cfg, key, _parse_value(key, val, kinds[key]))
    for key, val in (overrides or {}).items():
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, val)
    return cfg.validate()


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = " ".join(f"{x:g}" for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
