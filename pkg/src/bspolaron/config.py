"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment.  Lists are comma separated.
Energies are in units of kappa^2 unless a key says otherwise; radii and
K_cap values are in units of kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Tuple

from .lattice import CUTOFF_KINDS, ModelParams


class ConfigError(ValueError):
    """Malformed configuration; the message names the line or field."""


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    box_length: float = 2.0 * math.pi
    impurity_mass: float = 1.0
    binding_energy: float = -1.0
    fermi_energy: float = 0.5
    cutoff_kind: str = "sharp"
    cutoff_radius: float = 8.0          # kappa
    basis_radius: Optional[float] = None    # kappa; defaults to the cutoff support
    k_cap: float = 16.0                 # kappa
    k_cap_ladder: Tuple[float, ...] = (4.0, 8.0, 16.0)
    e_b_grid: Tuple[float, ...] = (-0.25, -1.0, -4.0, -16.0)
    twobody_radii: Tuple[float, ...] = (4.0, 8.0, 16.0)
    twobody_kinds: Tuple[str, ...] = ("sharp", "gaussian")
    ladder_sharp: Tuple[float, ...] = (16.0, 20.0, 24.0, 28.0, 32.0, 40.0, 48.0, 56.0, 64.0)
    ladder_gaussian: Tuple[float, ...] = (8.0, 10.0, 12.0, 14.0, 16.0)
    delta_radii: Tuple[float, ...] = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0)
    bs_models: int = 100
    bs_energies: int = 20
    bs_max_dim: int = 64
    energy_tol: float = 1e-10
    seed: int = 20240101
    threads: int = 1

    def params(self) -> ModelParams:
        return ModelParams(box_length=self.box_length, impurity_mass=self.impurity_mass,
                           binding_energy=self.binding_energy, fermi_energy=self.fermi_energy)

    def validate(self) -> "RunConfig":
        if self.cutoff_kind not in CUTOFF_KINDS:
            raise ConfigError(f"field cutoff_kind: unknown kind {self.cutoff_kind!r}")
        for k in self.twobody_kinds:
            if k not in CUTOFF_KINDS:
                raise ConfigError(f"field twobody_kinds: unknown kind {k!r}")
        if self.energy_tol <= 0:
            raise ConfigError("field energy_tol: tolerances must be positive")
        if self.threads < 1:
            raise ConfigError("field threads: must be at least 1")
        if self.basis_radius is not None and self.basis_radius < self.cutoff_radius:
            raise ConfigError("field basis_radius: must be at least cutoff_radius")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(f"model parameters: {exc}") from exc
        return self

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_TYPES = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw: str):
    default = getattr(RunConfig(), name)
    if name in ("twobody_kinds",):
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if isinstance(default, tuple):
        return _floats(raw)
    if name == "basis_radius":
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw!r}") from exc
    return replace(base or RunConfig(), **values).validate()


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from exc
