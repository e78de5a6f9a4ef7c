"""Finite itineraries of multi-center scattering by nested bisection.

For a sum of non-trapping building blocks with non-zero degree and
non-shadowing supports (no straight line meets three of them), every finite
word over the centers with no repeated adjacent symbol is realized by some
incoming parameter.  This module searches for such witnesses: the impact
parameter line is swept, the interval whose visit logs match a growing prefix
of the word is refined, and bisection localizes a parameter whose visit log
equals the whole word.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dynamics import StopCondition, Trajectory, integrate
from .errors import (
    BracketNotFound,
    ConfigError,
    EnergyDriftExceeded,
    PrecisionExhausted,
    StepSizeUnderflow,
)
from .geom import rot90, unit
from .potential import GaussianBump, PolyBump, PotentialModel, virial_radius
from .scattering import DEFAULT_SCATTER, ScatterConfig, launch_state

__all__ = [
    "Itinerary",
    "ItineraryWitness",
    "effective_radii",
    "check_nonshadowing",
    "visit_log",
    "realize_itinerary",
]


@dataclass(frozen=True)
class Itinerary:
    """Finite word over the centers 1..k with no repeated adjacent symbol."""

    sequence: tuple[int, ...]
    centers: tuple[tuple[float, ...], ...]
    radii: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "sequence", tuple(int(a) for a in self.sequence))
        k = len(self.centers)
        if k < 2:
            raise ConfigError("itineraries need at least two centers")
        if len(self.radii) != k:
            raise ConfigError("one effective radius per center required")
        if not self.sequence:
            raise ConfigError("empty itinerary")
        for a in self.sequence:
            if not 1 <= a <= k:
                raise ConfigError(f"symbol {a} outside 1..{k}")
        for a, b in zip(self.sequence, self.sequence[1:]):
            if a == b:
                raise ConfigError("adjacent symbols must differ")

    def __len__(self) -> int:
        return len(self.sequence)


@dataclass
class ItineraryWitness:
    """A realized itinerary: the impact parameter and its certificate."""

    E: float
    theta: np.ndarray
    b: float
    visit_log: list[int]
    bracket: tuple[float, float]
    bracket_width: float
    prefix_intervals: list[tuple[float, float]] = field(default_factory=list)


def effective_radii(model: PotentialModel, sigma_factor: float = 3.0) -> tuple[float, ...]:
    """Effective support radius per term: 3 sigma for Gaussians (their support
    is not compact; the threshold is recorded here), rho for polynomial bumps."""
    out = []
    for t in model.terms:
        if isinstance(t, GaussianBump):
            out.append(sigma_factor * t.sigma)
        elif isinstance(t, PolyBump):
            out.append(t.rho)
        else:
            # singular term: radius where the term reaches a tenth of unit energy
            out.append((10.0 * t.Z) ** (1.0 / t.alpha))
    return tuple(out)


def check_nonshadowing(centers, radii, n_samples: int = 41):
    """Certificate that no straight line meets three of the support disks.

    For every ordered disk pair the two-parameter family of lines meeting
    both disks is sampled (offsets across each disk); a line whose distance
    to a third center is below that disk's radius is a violation.  Returns
    (True, None) or (False, (i, j, k)) with 1-based indices.
    """
    centers = [np.asarray(c, dtype=float) for c in centers]
    radii = [float(r) for r in radii]
    k = len(centers)
    if k < 2:
        raise ConfigError("need at least two centers")
    if k == 2:
        return True, None
    offs = np.linspace(-1.0, 1.0, n_samples)
    for i in range(k):
        for j in range(i + 1, k):
            axis = centers[j] - centers[i]
            dist = np.linalg.norm(axis)
            if dist <= radii[i] + radii[j]:
                # overlapping supports shadow trivially
                return False, (i + 1, j + 1, j + 1)
            n_hat = rot90(axis / dist)
            for ui in offs:
                a = centers[i] + ui * radii[i] * n_hat
                for uj in offs:
                    bpt = centers[j] + uj * radii[j] * n_hat
                    direction = bpt - a
                    norm = np.linalg.norm(direction)
                    if norm == 0.0:
                        continue
                    direction = direction / norm
                    for m in range(k):
                        if m in (i, j):
                            continue
                        rel = centers[m] - a
                        d_line = abs(rel[0] * direction[1] - rel[1] * direction[0])
                        if d_line <= radii[m]:
                            return False, (i + 1, j + 1, m + 1)
    return True, None


def visit_log(traj: Trajectory, centers, radii) -> list[int]:
    """Ordered 1-based indices of the support disks the trajectory enters.

    Entry times are refined by root finding on the dense output; consecutive
    duplicates are merged.
    """
    centers = [np.asarray(c, dtype=float) for c in centers]
    radii = [float(r) for r in radii]
    crossings = []
    for idx, (c, rad) in enumerate(zip(centers, radii)):
        dist = np.linalg.norm(traj.q - c, axis=1) - rad
        for i in range(len(dist) - 1):
            if dist[i] > 0.0 >= dist[i + 1]:
                t_lo, t_hi = float(traj.t[i]), float(traj.t[i + 1])
                if t_hi <= t_lo:
                    t_star = t_lo
                else:
                    t_star = brentq(
                        lambda t: float(np.linalg.norm(traj.state_at(t).q - c)) - rad,
                        t_lo, t_hi, xtol=1e-10)
                crossings.append((t_star, idx + 1))
    crossings.sort()
    log: list[int] = []
    for _, idx in crossings:
        if not log or log[-1] != idx:
            log.append(idx)
    return log


def _integrate_for_log(model, E, theta, b, virial, cfg, rtol, t_max) -> Trajectory:
    from dataclasses import replace

    icfg = replace(cfg.integrator, rtol=rtol, atol=rtol * 1e-2)
    scfg = ScatterConfig(r_launch_factor=cfg.r_launch_factor,
                         r_extract_factor=cfg.r_extract_factor,
                         tail_tol=cfg.tail_tol, t_max_factor=cfg.t_max_factor,
                         asym_skip_tol=cfg.asym_skip_tol, integrator=icfg,
                         threads=cfg.threads)
    x0 = launch_state(model, E, theta, b, virial, scfg)
    r_out = 1.3 * virial.radius
    stop = StopCondition(t_max=t_max, virial=virial,
                         r_extract=max(r_out, 1.05 * float(np.linalg.norm(x0.q))))
    return integrate(model, x0, stop, icfg)


def realize_itinerary(model: PotentialModel, E: float, itinerary: Itinerary,
                      theta=None,
                      cfg: ScatterConfig = DEFAULT_SCATTER,
                      n_sweep: int = 96,
                      depth_refines: int = 2,
                      max_components: int = 6,
                      budget: int = 20000,
                      width_tol: float = 1e-14,
                      rtol: float = 1e-9,
                      log_cache: dict | None = None) -> ItineraryWitness:
    """Find an impact parameter whose visit log equals the itinerary.

    The set of parameters whose logs start with a given prefix is a union of
    intervals that contracts geometrically with the prefix length, so the
    search proceeds level by level: sweep the current interval, split the
    matching samples into maximal runs, tighten each run by bisection on its
    endpoints (whose logs diverge from the word on opposite sides), and
    recurse into the runs in a fixed deterministic order (widest first).
    The witness must match the whole word exactly and then escape.

    Because the exploration order at level j depends only on the first j
    symbols, extensions of a word are searched inside the same interval
    chain, which is what makes witness brackets nest.

    When no incoming direction is given, the launch approaches the first
    support perpendicular to the axis toward the second one, from the side
    away from the centroid of the centers: the incoming line then stays clear
    of the other supports while the first core bounce can still reach the
    second support.  An approach along the axis cannot work for repulsive
    blocks (the bounce never continues forward through the core).
    """
    if model.dimension != 2:
        raise ValueError("itinerary realization is a d=2 technique")
    if theta is None:
        c1 = np.asarray(itinerary.centers[itinerary.sequence[0] - 1], dtype=float)
        centroid = np.mean(np.asarray(itinerary.centers, dtype=float), axis=0)
        if len(itinerary.sequence) == 1:
            theta = unit(centroid - c1)
        else:
            c2 = np.asarray(itinerary.centers[itinerary.sequence[1] - 1], dtype=float)
            n_hat = rot90(unit(c2 - c1))
            side = math.copysign(1.0, float(np.dot(centroid - c1, n_hat)) or 1.0)
            theta = side * n_hat
    else:
        theta = unit(np.asarray(theta, dtype=float))
    centers = itinerary.centers
    radii = itinerary.radii
    virial = virial_radius(model, E)
    word = list(itinerary.sequence)
    m = len(word)

    span = max(float(np.linalg.norm(np.asarray(c))) + r
               for c, r in zip(centers, radii)) + 1.0
    speed = math.sqrt(2.0 * E)
    # a witness escapes after m visits; anything still bouncing after ~3
    # crossings per symbol is not going to match the word exactly
    t_max = (3 * m + 12) * (2.0 * span + virial.radius) / speed

    # words sharing a prefix sweep identical parameters (the exploration is
    # deterministic), so a caller-supplied cache is reused across words
    logs_cache = {} if log_cache is None else log_cache
    theta_key = (round(float(theta[0]), 12), round(float(theta[1]), 12))
    spent = [0]

    def log_of(b: float) -> tuple[list[int], bool]:
        """(visit log, escaped flag) at parameter b."""
        key = (theta_key, b)
        if key not in logs_cache:
            if spent[0] >= budget:
                raise PrecisionExhausted(f"integration budget {budget} exhausted")
            spent[0] += 1
            try:
                traj = _integrate_for_log(model, E, theta, b, virial, cfg, rtol, t_max)
                logs_cache[key] = (visit_log(traj, centers, radii),
                                   traj.status == "escaped")
            except (StepSizeUnderflow, EnergyDriftExceeded):
                # collisions of multi-singular models count as failures and
                # never match a prefix
                logs_cache[key] = ([], False)
        return logs_cache[key]

    def matches_prefix(b: float, j: int) -> bool:
        lg, _ = log_of(b)
        return lg[:j] == word[:j] and len(lg) >= j

    def is_witness(b: float) -> bool:
        lg, escaped = log_of(b)
        return lg == word and escaped

    def bisect_edge(b_out: float, b_in: float, j: int, steps: int = 14) -> float:
        """Tighten the bracket between a non-matching and a matching
        parameter; the branch side is read off empirically from which
        endpoint's log diverges.  Returns the outer endpoint."""
        for _ in range(steps):
            mid = 0.5 * (b_out + b_in)
            if matches_prefix(mid, j):
                b_in = mid
            else:
                b_out = mid
            if abs(b_in - b_out) < width_tol:
                break
        return b_out

    def runs_within(lo: float, hi: float, j: int) -> list[tuple[float, float]]:
        """Maximal prefix-j runs inside [lo, hi], edge-tightened, widest first."""
        n = n_sweep
        for _ in range(depth_refines + 1):
            bs = np.linspace(lo, hi, n)
            flags = [matches_prefix(float(b), j) for b in bs]
            if any(flags):
                break
            n *= 4
        else:
            return []
        runs = []
        i = 0
        while i < len(flags):
            if flags[i]:
                i0 = i
                while i < len(flags) and flags[i]:
                    i += 1
                lo_r = lo if i0 == 0 else bisect_edge(float(bs[i0 - 1]), float(bs[i0]), j)
                hi_r = hi if i - 1 == n - 1 else bisect_edge(float(bs[i]), float(bs[i - 1]), j)
                runs.append((lo_r, hi_r))
            else:
                i += 1
        runs.sort(key=lambda r: (-(r[1] - r[0]), r[0]))
        return runs[:max_components]

    chain: list[tuple[float, float]] = []

    def search(j: int, lo: float, hi: float):
        """Witness for word[:m] inside the prefix-j interval [lo, hi]."""
        if hi - lo < width_tol:
            return None
        if j == m:
            n = n_sweep
            for _ in range(depth_refines + 1):
                for b in np.linspace(lo, hi, n):
                    if is_witness(float(b)):
                        return float(b)
                n *= 4
            return None
        for lo_r, hi_r in runs_within(lo, hi, j + 1):
            res = search(j + 1, lo_r, hi_r)
            if res is not None:
                chain.append((lo_r, hi_r))
                return res
        return None

    witness_b = search(0, -span, span)
    if witness_b is None:
        raise BracketNotFound(
            f"no parameter realizing {word} in [-{span:.6g}, {span:.6g}]",
            sweep={"n_integrations": spent[0]})
    chain.reverse()
    lo, hi = chain[-1]
    return ItineraryWitness(E=E, theta=theta, b=witness_b,
                            visit_log=list(word), bracket=(lo, hi),
                            bracket_width=hi - lo,
                            prefix_intervals=chain)
