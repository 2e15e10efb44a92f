"""Run configuration: TOML parsing, validation, and the cache key."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field

from .dgform import StokesProblem
from .errors import ConfigError
from .expressions import vector_field
from .geometry import PerforationSet, preset_perforations

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SNAPSHOT_MODES = ("standard", "oversampled", "oversampled_restricted",
                  "randomized")


@dataclass
class RunConfig:
    """Validated configuration of one pipeline run."""

    preset: str = "small_inclusions"      # or "custom" with circles
    circles: list = field(default_factory=list)
    block_shape: str = "triangular"
    H: float = 0.1
    refinement: int = 0                   # 0: preset default
    example: str = "example1"             # example1 | example2 | custom
    f: list = field(default_factory=lambda: ["0", "0"])
    g_d: list = field(default_factory=lambda: ["0", "0"])
    g_n: list = field(default_factory=lambda: ["0", "0"])
    bc: str = "dirichlet"                 # outer boundary kind for custom
    gamma: float = 4.0
    snapshot_mode: str = "standard"
    layers: int = 4
    pod_tol: float = 1e-10
    m_off: list = field(default_factory=lambda: [4, 8, 16, 32])
    randomized_count: int = 0             # 0: max(m_off) + 4
    seed: int = 0
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.preset not in ("small_inclusions", "multi_size", "custom"):
            raise ConfigError(f"preset: unknown value '{self.preset}'")
        if self.preset == "custom" and self.block_shape not in ("triangular",
                                                               "rectangular"):
            raise ConfigError(f"block_shape: unknown value '{self.block_shape}'")
        if not (0 < self.H <= 0.5):
            raise ConfigError(f"H: {self.H} outside (0, 0.5]")
        if abs(round(1.0 / self.H) * self.H - 1.0) > 1e-12:
            raise ConfigError(f"H: {self.H} does not divide the unit square evenly")
        if self.refinement and self.refinement < 2:
            raise ConfigError(f"refinement: {self.refinement} must be >= 2")
        if self.example not in ("example1", "example2", "custom"):
            raise ConfigError(f"example: unknown value '{self.example}'")
        if self.example == "custom" and self.bc not in ("dirichlet", "neumann"):
            raise ConfigError(f"bc: unknown value '{self.bc}'")
        if self.gamma <= 0:
            raise ConfigError(f"gamma: {self.gamma} must be positive")
        if self.snapshot_mode not in SNAPSHOT_MODES:
            raise ConfigError(f"snapshot_mode: unknown value '{self.snapshot_mode}'")
        if self.layers < 0:
            raise ConfigError(f"layers: {self.layers} must be >= 0")
        if self.snapshot_mode != "standard" and self.layers < 1:
            raise ConfigError("layers: oversampled/randomized modes need >= 1")
        if not (0 < self.pod_tol < 1):
            raise ConfigError(f"pod_tol: {self.pod_tol} outside (0, 1)")
        if not self.m_off or any(int(m) < 1 for m in self.m_off):
            raise ConfigError(f"m_off: {self.m_off} must be positive integers")
        self.m_off = [int(m) for m in self.m_off]
        if self.randomized_count < 0:
            raise ConfigError("randomized_count: must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        for name in ("f", "g_d", "g_n"):
            v = getattr(self, name)
            if len(v) != 2:
                raise ConfigError(f"{name}: needs two component expressions")

    @classmethod
    def from_toml(cls, path, overrides=None):
        with open(path, "rb") as f:
            data = tomllib.load(f)
        known = {f_.name for f_ in cls.__dataclass_fields__.values()}
        bad = set(data) - known
        if bad:
            raise ConfigError(f"unknown config fields: {sorted(bad)}")
        if overrides:
            data.update(overrides)
        return cls(**data)

    def geometry(self):
        """(PerforationSet, block_shape, refinement) of this configuration."""
        if self.preset == "custom":
            ps = PerforationSet(tuple(tuple(c) for c in self.circles))
            shape = self.block_shape
            refinement = self.refinement or 8
        else:
            ps, shape, default_ref = preset_perforations(self.preset)
            refinement = self.refinement or default_ref
        return ps, shape, refinement

    def problem(self):
        if self.example == "example1":
            return StokesProblem.example1()
        if self.example == "example2":
            return StokesProblem.example2()
        return StokesProblem(vector_field(self.f), vector_field(self.g_d),
                             vector_field(self.g_n), self.bc, "custom")

    def echo(self):
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return d

    def config_hash(self):
        """Hash of every semantically relevant field (excludes out/workers)."""
        blob = json.dumps(self.echo(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
