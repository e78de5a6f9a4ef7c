"""Potential families, their derivatives, and scalar analysis quantities.

Three analytic term families are supported and nothing else: Gaussian bumps,
compactly supported C^2 polynomial bumps, and attracting power-law
singularities ``-Z / ||q - s||**alpha`` with ``alpha in (0, 2)``.  Restricting
to these families guarantees the long-range force decay by construction, so
every model admits a virial radius at every positive energy.

All evaluation routines broadcast over leading axes: ``q`` may be a single
point of shape ``(d,)`` or a grid of shape ``(..., d)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import ConfigError, EvaluationAtSingularity, NoVirialRadius
from .geom import sphere_directions

__all__ = [
    "GaussianBump",
    "PolyBump",
    "SingularPower",
    "PotentialModel",
    "VirialData",
    "evaluate",
    "vmax",
    "virial_radius",
    "force_tail_profile",
    "star_shaped_margin",
    "model_from_dict",
    "model_from_json",
    "model_to_dict",
    "load_model",
]


def _as_center(center: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(c) for c in center)


@dataclass(frozen=True)
class GaussianBump:
    """V(q) = A * exp(-||q - s||^2 / sigma^2)."""

    A: float
    sigma: float
    center: tuple[float, ...]

    kind = "gaussian_bump"
    singular = False

    def __post_init__(self):
        object.__setattr__(self, "center", _as_center(self.center))
        if self.sigma <= 0.0:
            raise ConfigError("gaussian_bump requires sigma > 0")

    def value(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        r2 = np.sum(dq * dq, axis=-1)
        return self.A * np.exp(-r2 / self.sigma**2)

    def grad(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        r2 = np.sum(dq * dq, axis=-1)
        g = self.A * np.exp(-r2 / self.sigma**2) * (-2.0 / self.sigma**2)
        return g[..., None] * dq

    def hessian(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        r2 = float(np.dot(dq, dq))
        e = self.A * math.exp(-r2 / self.sigma**2)
        d = len(self.center)
        outer = np.outer(dq, dq)
        return e * (-2.0 / self.sigma**2 * np.eye(d) + 4.0 / self.sigma**4 * outer)

    def radial_extent(self, tol: float) -> float:
        """Radius beyond which |V| and the force are below tol (about s)."""
        if self.A == 0.0:
            return 0.0
        return self.sigma * math.sqrt(max(math.log(abs(self.A) / tol), 0.0) + 1.0)

    def force_norm_bound(self, dist) -> np.ndarray:
        """Upper bound for ||grad V|| at distance >= dist from the center."""
        dist = np.asarray(dist, dtype=float)
        peak = self.sigma / math.sqrt(2.0)  # argmax of r*exp(-r^2/sigma^2)
        r = np.maximum(dist, peak)
        return 2.0 * abs(self.A) * r / self.sigma**2 * np.exp(-(r / self.sigma) ** 2)

    def tail_direction_bound(self, dist: float, energy: float) -> float:
        # integral of the force bound beyond dist, over 2E
        d = max(dist, self.sigma / math.sqrt(2.0))
        return abs(self.A) * math.exp(-(d / self.sigma) ** 2) / (2.0 * energy)


@dataclass(frozen=True)
class PolyBump:
    """V(q) = A * (1 - (r/rho)^2)^3 for r < rho, identically zero beyond.

    The cubic power makes the cutoff C^2 at r = rho.
    """

    A: float
    rho: float
    center: tuple[float, ...]

    kind = "poly_bump"
    singular = False

    def __post_init__(self):
        object.__setattr__(self, "center", _as_center(self.center))
        if self.rho <= 0.0:
            raise ConfigError("poly_bump requires rho > 0")

    def value(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        u = np.sum(dq * dq, axis=-1) / self.rho**2
        inside = u < 1.0
        return np.where(inside, self.A * (1.0 - np.minimum(u, 1.0)) ** 3, 0.0)

    def grad(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        u = np.sum(dq * dq, axis=-1) / self.rho**2
        w = np.where(u < 1.0, (1.0 - np.minimum(u, 1.0)) ** 2, 0.0)
        g = -6.0 * self.A / self.rho**2 * w
        return g[..., None] * dq

    def hessian(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        u = float(np.dot(dq, dq)) / self.rho**2
        d = len(self.center)
        if u >= 1.0:
            return np.zeros((d, d))
        outer = np.outer(dq, dq)
        return (-6.0 * self.A / self.rho**2) * (
            (1.0 - u) ** 2 * np.eye(d) - 4.0 / self.rho**2 * (1.0 - u) * outer
        )

    def radial_extent(self, tol: float) -> float:
        return self.rho

    def force_norm_bound(self, dist) -> np.ndarray:
        dist = np.asarray(dist, dtype=float)
        peak = 6.0 * abs(self.A) / self.rho * (2.0 / 3.0) ** 2 / math.sqrt(5.0)
        bound = np.where(dist < self.rho, 6.0 * abs(self.A) / self.rho, 0.0)
        return np.maximum(bound, np.where(dist < self.rho, peak, 0.0))

    def tail_direction_bound(self, dist: float, energy: float) -> float:
        if dist >= self.rho:
            return 0.0
        return 6.0 * abs(self.A) * (self.rho - dist) / (self.rho * 2.0 * energy)


@dataclass(frozen=True)
class SingularPower:
    """V(q) = -Z / ||q - s||^alpha with Z > 0 and alpha in (0, 2)."""

    Z: float
    alpha: float
    center: tuple[float, ...]

    kind = "singular_power"
    singular = True

    def __post_init__(self):
        object.__setattr__(self, "center", _as_center(self.center))
        if self.Z <= 0.0:
            raise ConfigError("singular_power requires Z > 0")
        if not 0.0 < self.alpha < 2.0:
            raise ConfigError("singular_power requires alpha in (0, 2)")

    def value(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        r = np.sqrt(np.sum(dq * dq, axis=-1))
        with np.errstate(divide="ignore"):
            return -self.Z * r ** (-self.alpha)

    def grad(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        r2 = np.sum(dq * dq, axis=-1)
        with np.errstate(divide="ignore"):
            g = self.alpha * self.Z * r2 ** (-(self.alpha + 2.0) / 2.0)
        return g[..., None] * dq

    def hessian(self, q):
        dq = np.asarray(q, dtype=float) - self.center
        r = float(np.linalg.norm(dq))
        if r == 0.0:
            raise EvaluationAtSingularity("Hessian at singular center")
        d = len(self.center)
        outer = np.outer(dq, dq)
        a = self.alpha
        return a * self.Z * (
            r ** (-(a + 2.0)) * np.eye(d) - (a + 2.0) * r ** (-(a + 4.0)) * outer
        )

    def radial_extent(self, tol: float) -> float:
        return (self.Z / tol) ** (1.0 / self.alpha)

    def force_norm_bound(self, dist) -> np.ndarray:
        dist = np.asarray(dist, dtype=float)
        with np.errstate(divide="ignore"):
            return self.alpha * self.Z * dist ** (-(self.alpha + 1.0))

    def tail_direction_bound(self, dist: float, energy: float) -> float:
        return self.Z / (2.0 * energy * dist**self.alpha)


PotentialTerm = GaussianBump | PolyBump | SingularPower


@dataclass(frozen=True)
class PotentialModel:
    """Immutable sum of analytic potential terms on R^d, d in {2, 3}.

    At most one singular term is accepted unless ``allow_multi_singular`` is
    set; multi-singular models are only meaningful for itinerary searches
    where collisions are treated as integration failures.
    """

    dimension: int
    terms: tuple[PotentialTerm, ...]
    allow_multi_singular: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.dimension not in (2, 3):
            raise ConfigError("dimension must be 2 or 3")
        for t in self.terms:
            if len(t.center) != self.dimension:
                raise ConfigError(
                    f"term center {t.center} does not match dimension {self.dimension}"
                )
        n_singular = sum(1 for t in self.terms if t.singular)
        if n_singular > 1 and not self.allow_multi_singular:
            raise ConfigError(
                "at most one singular term per model (set allow_multi_singular "
                "for itinerary-only multi-center models)"
            )

    # -- evaluation ---------------------------------------------------------

    def value(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1])
        for t in self.terms:
            out = out + t.value(q)
        return out if out.shape else float(out)

    def grad(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        for t in self.terms:
            out = out + t.grad(q)
        return out

    def value_and_grad(self, q):
        return self.value(q), self.grad(q)

    def hessian(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros((self.dimension, self.dimension))
        for t in self.terms:
            out = out + t.hessian(q)
        return out

    # -- structure ----------------------------------------------------------

    @property
    def singular_term(self) -> SingularPower | None:
        for t in self.terms:
            if t.singular:
                return t
        return None

    @property
    def singular_terms(self) -> tuple[SingularPower, ...]:
        return tuple(t for t in self.terms if t.singular)

    @property
    def is_central(self) -> bool:
        """True when all terms share a single center (or the model is empty)."""
        centers = {t.center for t in self.terms}
        return len(centers) <= 1

    @property
    def central_center(self) -> np.ndarray:
        if not self.is_central:
            raise ValueError("model is not centrally symmetric")
        if not self.terms:
            return np.zeros(self.dimension)
        return np.asarray(self.terms[0].center, dtype=float)

    def central_profile(self) -> Callable[[float], float]:
        """Radial profile V~(r) of a centrally symmetric model."""
        c = self.central_center
        e1 = np.zeros(self.dimension)
        e1[0] = 1.0

        def profile(r: float) -> float:
            return float(self.value(c + r * e1))

        return profile

    def radial_extent(self, tol: float = 1e-10) -> float:
        """Radius about the origin beyond which every term is below tol."""
        out = 1.0
        for t in self.terms:
            out = max(out, np.linalg.norm(t.center) + t.radial_extent(tol))
        return out

    def feature_scale(self) -> float | None:
        """Smallest support scale of the compact terms, or None if the model
        has none.  Adaptive steps must stay below this scale so stage points
        cannot straddle a compactly supported force region."""
        scales = []
        for t in self.terms:
            if isinstance(t, GaussianBump):
                scales.append(3.0 * t.sigma)
            elif isinstance(t, PolyBump):
                scales.append(t.rho)
        return min(scales) if scales else None

    def force_norm_bound(self, r) -> np.ndarray:
        """Upper bound for sup_{||q|| >= r} ||grad V|| (about the origin)."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for t in self.terms:
            dist = np.maximum(r - np.linalg.norm(t.center), 0.0)
            out = out + t.force_norm_bound(dist)
        return out

    def tail_direction_bound(self, r: float, energy: float) -> float:
        """Bound on the direction change of a straight escaping ray beyond r."""
        out = 0.0
        for t in self.terms:
            dist = max(r - float(np.linalg.norm(t.center)), 1e-12)
            out += t.tail_direction_bound(dist, energy)
        return out

    def tail_radius(self, energy: float, tol: float) -> float:
        """Radius with tail_direction_bound below tol (geometric search)."""
        r = self.radial_extent(tol=min(tol, 1e-6))
        for _ in range(400):
            if self.tail_direction_bound(r, energy) < tol:
                return r
            r *= 1.3
        return r


# -- operations --------------------------------------------------------------


def evaluate(model: PotentialModel, q) -> tuple[float, np.ndarray]:
    """Value and analytic gradient of the term sum at a single point.

    Raises EvaluationAtSingularity when q coincides with a singular center.
    """
    q = np.asarray(q, dtype=float)
    for t in model.singular_terms:
        if np.linalg.norm(q - np.asarray(t.center)) == 0.0:
            raise EvaluationAtSingularity(f"evaluation at singular center {t.center}")
    return model.value(q), model.grad(q)


def vmax(model: PotentialModel) -> float:
    """Supremum of V over R^d.

    Multistart local ascent seeded from term centers plus a coarse grid; the
    value 0 approached at spatial infinity is always included.  Attracting
    singular terms never carry the supremum, so their centers are skipped.
    """
    if "vmax" in model._cache:
        return model._cache["vmax"]
    best = 0.0
    seeds = []
    for t in model.terms:
        if not t.singular:
            seeds.append(np.asarray(t.center, dtype=float))
    if seeds:
        lo = np.min(np.array([s for s in seeds]), axis=0) - 3.0
        hi = np.max(np.array([s for s in seeds]), axis=0) + 3.0
        n = 7 if model.dimension == 2 else 5
        axes = [np.linspace(lo[i], hi[i], n) for i in range(model.dimension)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.dimension)
        vals = model.value(grid)
        order = np.argsort(vals)[::-1][:6]
        seeds.extend(grid[i] for i in order)
    centers = [np.asarray(t.center) for t in model.singular_terms]

    def neg_v(x):
        if any(np.linalg.norm(x - c) < 1e-9 for c in centers):
            return np.inf
        return -model.value(x)

    for s in seeds:
        res = optimize.minimize(neg_v, s, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12})
        if np.isfinite(res.fun):
            best = max(best, -float(res.fun))
    model._cache["vmax"] = best
    return best


@dataclass(frozen=True)
class VirialData:
    """Certified virial radius for one energy.

    ``radius`` already includes the safety factor; ``candidate_radius`` is the
    raw certified grid value.  Outside ``radius``, |V| < E/2 and
    |<q, grad V>| < E/2 on every sampled sphere.
    """

    energy: float
    radius: float
    safety_factor: float
    candidate_radius: float


def _virial_quantity(model: PotentialModel, radii: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """max(|V|, |<q, grad V>|) maximized over the sphere, per radius."""
    out = np.empty(len(radii))
    for i, r in enumerate(radii):
        pts = r * dirs
        v = np.abs(model.value(pts))
        g = model.grad(pts)
        qg = np.abs(np.sum(pts * g, axis=-1))
        out[i] = max(float(np.max(v)), float(np.max(qg))) if len(pts) else 0.0
    return out


def virial_radius(
    model: PotentialModel,
    energy: float,
    *,
    r_floor: float = 1.0,
    safety_factor: float = 1.25,
    grid_factor: float = 1.1,
    n_dirs: int | None = None,
    ceiling: float = 1e8,
) -> VirialData:
    """Smallest certified radius outside which the virial inequalities hold.

    The certificate samples spheres of geometrically spaced radii up to a
    decay-validated cutoff; the returned radius is conservative (candidate
    times safety factor) and never below the sampled certificate.
    """
    if energy <= 0.0:
        raise ValueError("virial radius requires E > 0")
    if n_dirs is None:
        n_dirs = 256 if model.dimension == 2 else 1024
    dirs = sphere_directions(model.dimension, n_dirs)

    if not model.terms:
        return VirialData(energy, r_floor * safety_factor, safety_factor, r_floor)

    # sampled radii: geometric grid from the floor to past the decay cutoff
    radii = [r_floor]
    while radii[-1] < ceiling:
        radii.append(radii[-1] * grid_factor)
    radii = np.array(radii)
    quantity = _virial_quantity(model, radii, dirs)
    bound = energy / 2.0

    # decay-validated cutoff: the analytic force/value tail of every family is
    # monotone beyond its extent, so once the sampled quantity has dropped to
    # a small fraction of E/2 past the terms' extent the tail is certified.
    extent = model.radial_extent(tol=bound * 1e-3)
    ok_tail = (radii >= extent) & (quantity < 0.05 * bound)
    if not np.any(ok_tail):
        raise NoVirialRadius(
            f"virial inequalities not certified below ceiling {ceiling:g} at E={energy:g}"
        )
    cutoff_idx = int(np.argmax(ok_tail))

    good = quantity[: cutoff_idx + 1] < bound
    # candidate: smallest grid radius from which every sampled sphere up to
    # the cutoff satisfies the inequalities
    idx = cutoff_idx
    while idx > 0 and good[idx - 1]:
        idx -= 1
    if not good[idx]:
        raise NoVirialRadius(f"no certified virial radius at E={energy:g}")
    candidate = float(radii[idx])

    if idx > 0:
        # refine the last grid interval so the candidate is within ~1% of the
        # true boundary rather than the 10% grid granularity
        lo, hi = radii[idx - 1], radii[idx]
        for _ in range(8):
            mid = math.sqrt(lo * hi)
            q = _virial_quantity(model, np.array([mid]), dirs)[0]
            if q < bound:
                hi = mid
            else:
                lo = mid
        candidate = float(hi)

    candidate = max(candidate, r_floor)
    return VirialData(energy, candidate * safety_factor, safety_factor, candidate)


def force_tail_profile(model: PotentialModel, radii, n_dirs: int = 128) -> np.ndarray:
    """r * sup_{||q||=r} ||grad V|| sampled on the given radii.

    Numeric proxy for the long-range decay of the force field; for the
    shipped families it decreases monotonically once past the term extents.
    """
    dirs = sphere_directions(model.dimension, n_dirs)
    out = np.empty(len(radii))
    for i, r in enumerate(radii):
        g = model.grad(r * dirs)
        out[i] = r * float(np.max(np.linalg.norm(g, axis=-1)))
    return out


def star_shaped_margin(model: PotentialModel, n_samples: int = 2000, rng=None,
                       r_max: float | None = None) -> float:
    """max over samples of <q, grad V(q)>; <= 0 means the star-shaped
    inequality holds on the sample (sufficient for non-trapping at regular E)."""
    rng = np.random.default_rng(0) if rng is None else rng
    if r_max is None:
        r_max = model.radial_extent(1e-8)
    pts = rng.uniform(-r_max, r_max, size=(n_samples, model.dimension))
    keep = np.ones(len(pts), dtype=bool)
    for t in model.singular_terms:
        keep &= np.linalg.norm(pts - np.asarray(t.center), axis=-1) > 1e-3
    pts = pts[keep]
    g = model.grad(pts)
    return float(np.max(np.sum(pts * g, axis=-1), initial=-np.inf))


# -- JSON configuration ------------------------------------------------------

_TERM_FIELDS = {
    "gaussian_bump": {"kind", "A", "sigma", "center"},
    "poly_bump": {"kind", "A", "rho", "center"},
    "singular_power": {"kind", "Z", "alpha", "center"},
}


def _term_from_dict(d: dict) -> PotentialTerm:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"term must be an object with a 'kind' field: {d!r}")
    kind = d["kind"]
    if kind not in _TERM_FIELDS:
        raise ConfigError(f"unknown term kind {kind!r}")
    extra = set(d) - _TERM_FIELDS[kind]
    missing = _TERM_FIELDS[kind] - set(d)
    if extra:
        raise ConfigError(f"unknown fields {sorted(extra)} for term kind {kind!r}")
    if missing:
        raise ConfigError(f"missing fields {sorted(missing)} for term kind {kind!r}")
    center = d["center"]
    if kind == "gaussian_bump":
        return GaussianBump(A=float(d["A"]), sigma=float(d["sigma"]), center=center)
    if kind == "poly_bump":
        return PolyBump(A=float(d["A"]), rho=float(d["rho"]), center=center)
    return SingularPower(Z=float(d["Z"]), alpha=float(d["alpha"]), center=center)


def model_from_dict(d: dict, *, allow_multi_singular: bool = False) -> PotentialModel:
    if not isinstance(d, dict):
        raise ConfigError("potential config must be a JSON object")
    extra = set(d) - {"dimension", "terms"}
    if extra:
        raise ConfigError(f"unknown fields {sorted(extra)} in potential config")
    if "dimension" not in d or "terms" not in d:
        raise ConfigError("potential config requires 'dimension' and 'terms'")
    dim = d["dimension"]
    if not isinstance(dim, int):
        raise ConfigError("'dimension' must be an integer")
    terms = tuple(_term_from_dict(t) for t in d["terms"])
    return PotentialModel(dimension=dim, terms=terms,
                          allow_multi_singular=allow_multi_singular)


def model_from_json(text: str, *, allow_multi_singular: bool = False) -> PotentialModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return model_from_dict(d, allow_multi_singular=allow_multi_singular)


def model_to_dict(model: PotentialModel) -> dict:
    terms = []
    for t in model.terms:
        if isinstance(t, GaussianBump):
            terms.append({"kind": t.kind, "A": t.A, "sigma": t.sigma, "center": list(t.center)})
        elif isinstance(t, PolyBump):
            terms.append({"kind": t.kind, "A": t.A, "rho": t.rho, "center": list(t.center)})
        else:
            terms.append({"kind": t.kind, "Z": t.Z, "alpha": t.alpha, "center": list(t.center)})
    return {"dimension": model.dimension, "terms": terms}


def load_model(path, *, allow_multi_singular: bool = False) -> PotentialModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(fh.read(), allow_multi_singular=allow_multi_singular)
