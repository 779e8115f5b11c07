"""Discretization of momentum space, the form factor, and the scalar integrals.

The electron lives on a periodic lattice of ``L**d`` sites on a torus of side
``ell``; phonon modes are the dual lattice ``(2 pi / ell) Z^d`` restricted to
the Brillouin box, with the zero mode removed.  Of the aliased pair
``+-pi L / ell`` only the positive representative is kept, so the mode count
is ``L**d - 1``.  Every continuum integral over ``dk`` becomes a Riemann sum
with weight ``w = (2 pi / ell)**d``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

__all__ = [
    "ConfigError",
    "FormFactorSpec",
    "ModelConfig",
    "ModeGrid",
    "RegularityVerdict",
    "build_grid",
    "parse_config",
    "load_config",
    "scalar_D",
    "scalar_C_KL",
    "kB_norm_sq",
    "v3_supremum",
    "regularity_threshold",
    "regularity_criterion",
]


class ConfigError(ValueError):
    """Invalid model configuration."""


_KINDS = ("power_law", "polaron", "smooth_power", "table")


@dataclass(frozen=True)
class FormFactorSpec:
    """Radial form factor ``v(|k|)``.

    ``power_law``: ``|k|**-gamma``; ``polaron``: ``|k|**(-(d-1)/2)``;
    ``smooth_power``: ``(1 + k**2)**-beta``; ``table``: linear interpolation of
    ``(|k|, v)`` pairs, flat beyond the last point.
    """

    kind: str
    gamma: float | None = None
    beta: float | None = None
    values: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown form factor kind {self.kind!r}")
        if self.kind == "power_law" and not (self.gamma and self.gamma > 0):
            raise ConfigError("power_law form factor needs gamma > 0")
        if self.kind == "smooth_power" and not (self.beta and self.beta > 0):
            raise ConfigError("smooth_power form factor needs beta > 0")
        if self.kind == "table" and not self.values:
            raise ConfigError("table form factor needs values")

    def __call__(self, kabs, dimension):
        kabs = np.asarray(kabs, dtype=float)
        if self.kind == "power_law":
            return kabs ** (-self.gamma)
        if self.kind == "polaron":
            return kabs ** (-(dimension - 1) / 2)
        if self.kind == "smooth_power":
            return (1.0 + kabs**2) ** (-self.beta)
        pts = np.array(sorted(self.values), dtype=float)
        return np.interp(kabs, pts[:, 0], pts[:, 1])

    def decay_exponent(self, dimension):
        """``a`` such that ``|v(k)|**2 ~ |k|**(-2a)`` as ``|k| -> infinity``."""
        if self.kind == "power_law":
            return self.gamma
        if self.kind == "polaron":
            return (dimension - 1) / 2
        if self.kind == "smooth_power":
            return 2 * self.beta
        pts = np.array(sorted(self.values), dtype=float)
        (r1, v1), (r2, v2) = pts[-2], pts[-1]
        if v1 <= 0 or v2 <= 0:
            return math.inf
        return -math.log(v2 / v1) / math.log(r2 / r1)


@dataclass(frozen=True)
class ModelConfig:
    dimension: int
    torus_length: float
    sites_per_dim: int
    nmax: int
    form_factor: FormFactorSpec
    K: float
    lambda_list: tuple[float, ...]
    coupling: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lambda_list", tuple(float(x) for x in self.lambda_list))
        if self.dimension not in (1, 2, 3):
            raise ConfigError("dimension must be 1, 2 or 3")
        if self.torus_length <= 0:
            raise ConfigError("torus_length must be positive")
        if self.sites_per_dim <= 0 or self.sites_per_dim % 2:
            raise ConfigError("sites_per_dim must be a positive even integer")
        if self.nmax < 0:
            raise ConfigError("nmax must be non-negative")
        if self.coupling < 0:
            raise ConfigError("coupling must be non-negative")
        if self.K < 0:
            raise ConfigError("K must be non-negative")
        lams = self.lambda_list
        if not lams:
            raise ConfigError("lambda_list is empty")
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ConfigError("lambda_list must be strictly ascending")
        if self.K >= lams[0]:
            raise ConfigError("K must be below every cutoff")
        if lams[-1] > self.lambda_grid + 1e-12:
            raise ConfigError(
                f"cutoff not representable: {lams[-1]} > {self.lambda_grid:.6g}"
            )

    @property
    def lambda_grid(self):
        """Largest representable momentum component, ``pi L / ell``."""
        return math.pi * self.sites_per_dim / self.torus_length

    @property
    def lambda_ref(self):
        return self.lambda_list[-1]

    def replace(self, **changes):
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return ModelConfig(**data)

    def to_dict(self):
        ff = self.form_factor
        out = {
            "dimension": self.dimension,
            "torus_length": self.torus_length,
            "sites_per_dim": self.sites_per_dim,
            "nmax": self.nmax,
            "form_factor": ff.kind,
            "coupling": self.coupling,
            "K": self.K,
            "lambda_list": list(self.lambda_list),
            "seed": self.seed,
        }
        if ff.gamma is not None:
            out["gamma"] = ff.gamma
        if ff.beta is not None:
            out["beta"] = ff.beta
        if ff.values is not None:
            out["values"] = [list(p) for p in ff.values]
        return out


_KEYS = {
    "dimension", "torus_length", "sites_per_dim", "nmax", "form_factor",
    "gamma", "beta", "coupling", "K", "lambda_list", "seed",
}
_REQUIRED = {"dimension", "torus_length", "sites_per_dim", "nmax", "form_factor", "K", "lambda_list"}


def parse_config(text):
    """Parse ``key = value`` lines into a :class:`ModelConfig`.

    Blank lines and ``#`` comments are ignored; unknown or repeated keys are
    errors.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    missing = _REQUIRED - raw.keys()
    if missing:
        raise ConfigError(f"missing keys: {', '.join(sorted(missing))}")
    try:
        kind = raw["form_factor"]
        if kind == "table":
            raise ConfigError("table form factors are only available through the API")
        ff = FormFactorSpec(
            kind,
            gamma=float(raw["gamma"]) if "gamma" in raw else None,
            beta=float(raw["beta"]) if "beta" in raw else None,
        )
        return ModelConfig(
            dimension=int(raw["dimension"]),
            torus_length=float(raw["torus_length"]),
            sites_per_dim=int(raw["sites_per_dim"]),
            nmax=int(raw["nmax"]),
            form_factor=ff,
            K=float(raw["K"]),
            lambda_list=tuple(float(x) for x in raw["lambda_list"].split(",") if x.strip()),
            coupling=float(raw.get("coupling", 1.0)),
            seed=int(raw.get("seed", 0)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path):
    return parse_config(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class ModeGrid:
    """Dual-lattice modes with the zero mode and the negative alias removed.

    ``labels`` are integer coordinates in ``(-L/2, L/2]``; ``modes`` the
    momenta ``(2 pi / ell) * labels``; ``vsamples`` the coupled form factor
    ``coupling * v(|k|)``; ``masks[lam]`` the cutoff indicator ``|k| <= lam``.
    """

    dimension: int
    torus_length: float
    sites_per_dim: int
    labels: np.ndarray
    modes: np.ndarray
    kabs: np.ndarray
    weight: float
    vsamples: np.ndarray
    masks: dict = field(default_factory=dict)

    @property
    def count(self):
        return len(self.kabs)

    @property
    def spacing(self):
        return 2 * math.pi / self.torus_length

    @property
    def lambda_grid(self):
        return math.pi * self.sites_per_dim / self.torus_length

    def mask(self, lam):
        if lam in self.masks:
            return self.masks[lam]
        return self.kabs <= lam + 1e-12

    def negation(self):
        """Index permutation implementing ``k -> -k`` modulo the lattice."""
        L = self.sites_per_dim
        neg = -self.labels
        neg[neg == -L // 2] = L // 2
        lookup = {tuple(row): i for i, row in enumerate(self.labels)}
        return np.array([lookup[tuple(row)] for row in neg])

    def weighted_sq(self):
        """``w |v(k)|**2`` per mode, the common factor of every quadrature."""
        return self.weight * np.abs(self.vsamples) ** 2


def _lattice_labels(d, L):
    axis = np.arange(-L // 2 + 1, L // 2 + 1)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    labels = np.stack([g.ravel() for g in grids], axis=1)
    return labels[np.any(labels != 0, axis=1)]


def build_grid(config):
    """Build the mode grid for ``config``; every cutoff gets a mask."""
    L, d, ell = config.sites_per_dim, config.dimension, config.torus_length
    for lam in config.lambda_list:
        if lam > config.lambda_grid + 1e-12:
            raise ConfigError(f"cutoff not representable: {lam}")
    labels = _lattice_labels(d, L)
    spacing = 2 * math.pi / ell
    modes = labels * spacing
    kabs = np.sqrt(np.sum(modes**2, axis=1))
    vs = config.coupling * config.form_factor(kabs, d)
    masks = {lam: kabs <= lam + 1e-12 for lam in config.lambda_list}
    return ModeGrid(d, ell, L, labels, modes, kabs, spacing**d, vs, masks)


def scalar_D(cut, grid):
    """``sum_{|k| >= cut} w |v|**2 / k**2`` (empty tail gives 0)."""
    if cut < 0:
        raise ValueError("cutoff must be non-negative")
    sel = grid.kabs >= cut - 1e-12
    return float(np.sum(grid.weighted_sq()[sel] / grid.kabs[sel] ** 2))


def _annulus(K, lam, grid):
    if K > lam:
        raise ValueError(f"K={K} exceeds Lambda={lam}")
    return (grid.kabs > K + 1e-12) & (grid.kabs <= lam + 1e-12)


def scalar_C_KL(K, lam, grid):
    """Constant of the dressed interaction, ``||B||**2 + 2 <G, B>``.

    Summed over ``K < |k| <= lam``, the support of the dressing field.
    """
    sel = _annulus(K, lam, grid)
    t = 1.0 / (1.0 + grid.kabs[sel] ** 2)
    return float(np.sum(grid.weighted_sq()[sel] * (t**2 - 2 * t)))


def kB_norm_sq(K, lam, grid):
    """``||k B||**2 = sum_{K < |k| <= lam} w k**2 |v|**2 / (1 + k**2)**2``."""
    sel = _annulus(K, lam, grid)
    k2 = grid.kabs[sel] ** 2
    return float(np.sum(grid.weighted_sq()[sel] * k2 / (1 + k2) ** 2))


def v3_supremum(K, grid, refine=4, chunk=4096):
    """``max_q sum_{|k| >= K} w |v|**2 / (1 + (q - k)**2)`` over a refined q-grid.

    The q-grid has spacing ``(2 pi / ell) / refine`` and covers the mode box.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    sel = grid.kabs >= K - 1e-12
    if not np.any(sel):
        return 0.0
    ks = grid.modes[sel]
    wv = grid.weighted_sq()[sel]
    h = grid.spacing / refine
    n = int(round(grid.lambda_grid / h))
    axis = np.arange(-n, n + 1) * h
    qs = np.stack([g.ravel() for g in np.meshgrid(*([axis] * grid.dimension), indexing="ij")], axis=1)
    best = 0.0
    for start in range(0, len(qs), chunk):
        q = qs[start:start + chunk]
        dist2 = np.sum((q[:, None, :] - ks[None, :, :]) ** 2, axis=2)
        best = max(best, float(np.max((wv[None, :] / (1 + dist2)).sum(axis=1))))
    return best


def _sphere_area(d):
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def regularity_threshold(form_factor, dimension):
    """Exponent ``s_c`` where ``int |v|**2 (1+k**2)**(s-2) dk`` starts to diverge."""
    return 2 + form_factor.decay_exponent(dimension) - dimension / 2


@dataclass(frozen=True)
class RegularityVerdict:
    s: float
    grid_sum: float
    tail: float
    threshold: float
    divergent: bool

    @property
    def classification(self):
        return "divergent" if self.divergent else "convergent"


def regularity_criterion(s, grid, form_factor, coupling=1.0):
    """Grid quadrature of ``|v|**2 (1+k**2)**(s-2)`` plus the continuum tail.

    The tail ``|S^{d-1}| int_{R}^inf r^{d-1} |v(r)|**2 (1+r**2)**(s-2) dr``
    starts at ``R = pi L / ell`` and is ``inf`` when the integral diverges.
    """
    if not 1 <= s <= 2:
        raise ValueError("s must lie in [1, 2]")
    d = grid.dimension
    k2 = grid.kabs**2
    grid_sum = float(np.sum(grid.weighted_sq() * (1 + k2) ** (s - 2)))
    s_c = regularity_threshold(form_factor, d)
    divergent = coupling > 0 and s >= s_c - 1e-12
    if coupling == 0:
        tail = 0.0
    elif divergent:
        tail = math.inf
    else:
        area = _sphere_area(d)

        def integrand(r):
            v = coupling * float(form_factor(r, d))
            return area * r ** (d - 1) * v * v * (1 + r * r) ** (s - 2)

        tail = integrate.quad(integrand, grid.lambda_grid, np.inf, limit=200)[0]
    return RegularityVerdict(float(s), grid_sum, tail, s_c, bool(divergent))
