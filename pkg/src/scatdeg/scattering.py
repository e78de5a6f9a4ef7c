"""Asymptotic parametrization of scattering experiments.

A scattering experiment is labeled by energy E, incoming direction theta and
impact parameter b (a vector perpendicular to theta; in the plane a scalar b
means ``b * rot90(theta)``).  Launches start on the incoming asymptote at
radius ``r_launch_factor * R_vir`` and are corrected by one backward-forward
free-flight matching pass so the numerical incoming impact parameter
reproduces b; the corrected state sits exactly on the energy shell.

Outgoing data is read off at an extraction radius where the per-family
analytic tail bound on the remaining direction change drops below
``tail_tol``; the impact parameter is back-propagated along the outgoing
free-flight line, which is exact for straight motion.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    DEFAULT_INTEGRATOR,
    IntegratorConfig,
    PhaseState,
    StopCondition,
    Trajectory,
    integrate,
    integrate_regularized,
    regularizable_order,
)
from .errors import (
    LaunchInsideInteractionZone,
    RefinementBudgetExceeded,
    ScatDegError,
)
from .geom import angle_of, rot90, rotation_between, unit
from .hill import hill_analysis
from .potential import PotentialModel, VirialData, star_shaped_margin, virial_radius

__all__ = [
    "ScatterConfig",
    "ScatterRecord",
    "SamplePlan",
    "EnergyScanEntry",
    "EnergyScanReport",
    "launch_state",
    "scatter_one",
    "final_direction_map",
    "trapping_scan",
    "scattering_jacobian_det",
    "records_to_csv",
    "parallel_map",
]

SWEEP_CSV_HEADER = ["E", "theta_angle", "b", "u", "theta_out_angle", "b_out",
                    "status", "min_radius", "flight_time"]


@dataclass(frozen=True)
class ScatterConfig:
    r_launch_factor: float = 10.0     # launch radius in units of R_vir
    r_extract_factor: float = 10.0    # minimum extraction radius in units of R_vir
    tail_tol: float = 1e-5            # direction-change bound beyond extraction
    tol_asym: float = 1e-4            # incoming-asymptote matching tolerance
    max_match_passes: int = 4         # backward-forward matching iterations
    t_max_factor: float = 1e3         # timeout in units of R_vir / sqrt(2E)
    asym_skip_tol: float = 1e-12      # skip the matching pass below this bending
    integrator: IntegratorConfig = DEFAULT_INTEGRATOR
    threads: int = 1


DEFAULT_SCATTER = ScatterConfig()


@dataclass
class ScatterRecord:
    """One scattering experiment (theta_in, b_in) -> (theta_out, b_out)."""

    E: float
    theta_in: np.ndarray
    b_in: np.ndarray
    theta_out: np.ndarray | None
    b_out: np.ndarray | None
    status: str  # scattered | trapped_timeout | collision_regularized | failed
    min_radius: float = math.nan
    pericentre_count: int = 0
    flight_time: float = math.nan
    trajectory: Trajectory | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status in ("scattered", "collision_regularized")

    def b_scalar(self) -> float:
        """Signed transverse offset along rot90(theta_in) (d=2 only)."""
        return float(np.dot(self.b_in, rot90(self.theta_in)))

    def b_out_scalar(self) -> float:
        if self.theta_out is None:
            return math.nan
        return float(np.dot(self.b_out, rot90(self.theta_out)))

    def deflection(self) -> float:
        """Angle between incoming and outgoing directions, in [0, pi]."""
        if self.theta_out is None:
            return math.nan
        c = float(np.clip(np.dot(self.theta_in, self.theta_out), -1.0, 1.0))
        return math.acos(c)


def _b_vector(theta: np.ndarray, b) -> np.ndarray:
    theta = unit(np.asarray(theta, dtype=float))
    if np.isscalar(b) or np.ndim(b) == 0:
        if theta.shape[0] != 2:
            raise ValueError("scalar impact parameter requires d=2")
        return float(b) * rot90(theta)
    b = np.asarray(b, dtype=float)
    # enforce exact orthogonality by projection
    return b - np.dot(b, theta) * theta


def _incoming_asymptote(model, state: PhaseState, r_far: float,
                        cfg: ScatterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Incoming direction and impact parameter of the orbit through state,
    measured by reversed integration out to r_far."""
    rev = PhaseState(p=-state.p, q=state.q, t=0.0)
    speed = float(np.linalg.norm(state.p))
    t_cap = 20.0 * r_far / max(speed, 1e-12)
    stop = StopCondition(t_max=t_cap, virial=None, r_extract=r_far)
    traj = integrate(model, rev, stop, cfg.integrator)
    fin = traj.final_state()
    p_hat = unit(fin.p)
    theta_in = -p_hat
    b_in = fin.q - np.dot(fin.q, p_hat) * p_hat
    return theta_in, b_in


def launch_state(model: PotentialModel, E: float, theta, b,
                 virial: VirialData | None = None,
                 cfg: ScatterConfig = DEFAULT_SCATTER) -> PhaseState:
    """State on the incoming asymptote labeled (theta, b) at the launch radius.

    The naive straight-line guess q = -R theta + b, p ~ sqrt(2E) theta is
    corrected by one backward-forward free-flight matching pass; the momentum
    magnitude is set to sqrt(2(E - V(q))) so H equals E exactly.
    """
    if E <= 0.0:
        raise ValueError("scattering requires E > 0")
    theta = unit(np.asarray(theta, dtype=float))
    b_vec = _b_vector(theta, b)
    if virial is None:
        virial = virial_radius(model, E)
    r_launch = cfg.r_launch_factor * virial.radius
    r_launch = max(r_launch, 1.2 * float(np.linalg.norm(b_vec)) + virial.radius)

    def shell_state(q):
        v = float(model.value(q))
        if v >= E:
            raise LaunchInsideInteractionZone(
                f"V(q)={v:.3g} >= E={E:.3g} at the launch point")
        return math.sqrt(2.0 * (E - v))

    def line_state(theta_l, b_l):
        # exact free-flight line with asymptotic data (theta_l, b_l)
        b_l = b_l - np.dot(b_l, theta_l) * theta_l
        q = -r_launch * theta_l + b_l
        if np.linalg.norm(q) < virial.radius:
            raise LaunchInsideInteractionZone(
                f"launch point inside the interaction zone (r={np.linalg.norm(q):.3g})")
        return PhaseState(p=shell_state(q) * theta_l, q=q, t=0.0)

    state = line_state(theta, b_vec)
    bend = model.tail_direction_bound(0.8 * float(np.linalg.norm(state.q)), E)
    if bend < cfg.asym_skip_tol:
        return state

    # backward-forward matching: Newton-style update of the launch-line data
    # so the measured incoming asymptote lands on (theta, b)
    r_far = max(model.tail_radius(E, cfg.tail_tol), 2.0 * r_launch)
    theta_l, b_l = theta, b_vec
    for _ in range(cfg.max_match_passes):
        theta_m, b_m = _incoming_asymptote(model, state, r_far, cfg)
        err = math.acos(float(np.clip(np.dot(theta_m, theta), -1.0, 1.0))) \
            + float(np.linalg.norm(rotation_between(theta_m, theta) @ b_m - b_vec))
        if err < 0.3 * cfg.tol_asym:
            break
        rot = rotation_between(theta_m, theta)
        theta_l = unit(rot @ theta_l)
        b_l = rot @ (b_l + (b_vec - rot @ b_m))
        state = line_state(theta_l, b_l)
    return state


def _extraction_radius(model, E, virial, cfg, r_launch) -> float:
    r = max(cfg.r_extract_factor * virial.radius,
            model.tail_radius(E, cfg.tail_tol))
    return max(r, 1.05 * r_launch)


def scatter_one(model: PotentialModel, E: float, theta, b,
                virial: VirialData | None = None,
                cfg: ScatterConfig = DEFAULT_SCATTER,
                keep_trajectory: bool = False) -> ScatterRecord:
    """Run one scattering experiment and extract the outgoing asymptote.

    Uses regularized integration automatically when the model carries a
    singular term with a regularizable exponent.
    """
    theta = unit(np.asarray(theta, dtype=float))
    b_vec = _b_vector(theta, b)
    if virial is None:
        virial = virial_radius(model, E)

    sing = model.singular_term
    regularized = sing is not None and regularizable_order(sing.alpha) is not None
    stepper = integrate_regularized if regularized else integrate

    try:
        x0 = launch_state(model, E, theta, b_vec, virial, cfg)
        r_launch = float(np.linalg.norm(x0.q))
        r_extract = _extraction_radius(model, E, virial, cfg, r_launch)
        speed = math.sqrt(2.0 * E)
        t_max = max(cfg.t_max_factor * virial.radius / speed,
                    6.0 * r_extract / speed)
        stop = StopCondition(t_max=t_max, virial=virial, r_extract=r_extract)
        traj = stepper(model, x0, stop, cfg.integrator)
    except ScatDegError:
        return ScatterRecord(E=E, theta_in=theta, b_in=b_vec, theta_out=None,
                             b_out=None, status="failed")

    peri_count = len(traj.events_of("pericentre"))
    min_r = traj.min_radius()
    if traj.status != "escaped":
        return ScatterRecord(E=E, theta_in=theta, b_in=b_vec, theta_out=None,
                             b_out=None, status="trapped_timeout",
                             min_radius=min_r, pericentre_count=peri_count,
                             flight_time=float(traj.t[-1]),
                             trajectory=traj if keep_trajectory else None)

    fin = traj.final_state()
    theta_out = unit(fin.p)
    b_out = fin.q - np.dot(fin.q, theta_out) * theta_out
    status = "collision_regularized" if traj.events_of("collision") else "scattered"
    return ScatterRecord(E=E, theta_in=theta, b_in=b_vec,
                         theta_out=theta_out, b_out=b_out, status=status,
                         min_radius=min_r, pericentre_count=peri_count,
                         flight_time=fin.t,
                         trajectory=traj if keep_trajectory else None)


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map, threaded when threads > 1.

    Work items must be independent; results are merged in input order so the
    output is deterministic regardless of scheduling.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _angular_gap(rec_a: ScatterRecord, rec_b: ScatterRecord) -> float:
    if not (rec_a.ok and rec_b.ok):
        return math.inf
    c = float(np.clip(np.dot(rec_a.theta_out, rec_b.theta_out), -1.0, 1.0))
    return math.acos(c)


def final_direction_map(model: PotentialModel, E: float, theta, b_grid,
                        virial: VirialData | None = None,
                        cfg: ScatterConfig = DEFAULT_SCATTER,
                        delta_max: float = math.pi / 8.0,
                        budget: int = 4000,
                        min_width: float = 1e-12,
                        adaptive: bool = True) -> list[ScatterRecord]:
    """Sample the final-direction map over a grid of impact parameters.

    For a 1-D scalar grid (d=2), midpoints are inserted adaptively wherever
    the angular gap between neighbours exceeds ``delta_max``; this is what
    makes winding counts correct across fast near-collision swings.  Raises
    RefinementBudgetExceeded with partial data when the budget runs out.
    """
    theta = unit(np.asarray(theta, dtype=float))
    if virial is None:
        virial = virial_radius(model, E)

    b_list = list(b_grid)
    scalar_grid = all(np.ndim(b) == 0 for b in b_list)

    def run(b):
        return scatter_one(model, E, theta, b, virial, cfg)

    records = parallel_map(run, b_list, cfg.threads)
    if not (adaptive and scalar_grid and model.dimension == 2):
        return records

    bs = [float(b) for b in b_list]
    order = np.argsort(bs)
    bs = [bs[i] for i in order]
    records = [records[i] for i in order]

    spent = 0
    while True:
        inserts = []
        for i in range(len(bs) - 1):
            width = bs[i + 1] - bs[i]
            if width <= min_width:
                continue
            if _angular_gap(records[i], records[i + 1]) > delta_max:
                inserts.append(i)
        if not inserts:
            break
        if spent + len(inserts) > budget:
            raise RefinementBudgetExceeded(
                f"refinement budget {budget} exhausted", partial=records)
        mids = [0.5 * (bs[i] + bs[i + 1]) for i in inserts]
        new_records = parallel_map(run, mids, cfg.threads)
        for i in sorted(inserts, reverse=True):
            j = inserts.index(i)
            bs.insert(i + 1, mids[j])
            records.insert(i + 1, new_records[j])
        spent += len(inserts)
    return records


@dataclass(frozen=True)
class SamplePlan:
    """Launch plan for a trapping scan."""

    n_grid: int = 25
    n_random: int = 24
    n_theta: int = 2
    seed: int = 0
    hill_resolution: int = 384


@dataclass
class EnergyScanEntry:
    E: float
    classification: str  # nontrapping_evidence | trapping_detected | inconclusive
    confidence: str      # theorem | timeout | sampled
    fraction_timeout: float
    max_flight_time: float
    hill_classification: str | None
    star_shaped: bool
    timeout_as_trapped: bool
    n_launches: int


@dataclass
class EnergyScanReport:
    energies: list[float]
    entries: list[EnergyScanEntry]

    def to_dict(self) -> dict:
        return {
            "energies": self.energies,
            "entries": [
                {
                    "E": e.E,
                    "classification": e.classification,
                    "confidence": e.confidence,
                    "fraction_timeout": e.fraction_timeout,
                    "max_flight_time": e.max_flight_time,
                    "hill_classification": e.hill_classification,
                    "star_shaped": e.star_shaped,
                    "timeout_as_trapped": e.timeout_as_trapped,
                    "n_launches": e.n_launches,
                }
                for e in self.entries
            ],
        }


def trapping_scan(model: PotentialModel, energies,
                  plan: SamplePlan = SamplePlan(),
                  cfg: ScatterConfig = DEFAULT_SCATTER) -> EnergyScanReport:
    """Scan energies for trapping evidence.

    Hill multi_component is a theorem-level obstruction and overrides; a
    timeout alone is only numerical evidence and is flagged as such.
    Trapping is evidenced, never proven.
    """
    energies = [float(E) for E in energies]
    entries = []
    star = star_shaped_margin(model) <= 1e-9
    for E in energies:
        hill_cls = None
        if model.dimension == 2 and model.singular_term is None:
            hill_cls = hill_analysis(model, E, resolution=plan.hill_resolution).classification
        if hill_cls == "multi_component":
            entries.append(EnergyScanEntry(
                E=E, classification="trapping_detected", confidence="theorem",
                fraction_timeout=0.0, max_flight_time=0.0,
                hill_classification=hill_cls, star_shaped=star,
                timeout_as_trapped=False, n_launches=0))
            continue

        virial = virial_radius(model, E)
        rng = np.random.default_rng(plan.seed)
        span = virial.candidate_radius
        b_values = list(np.linspace(-span, span, plan.n_grid))
        b_values += list(rng.uniform(-span, span, plan.n_random))
        thetas = [np.array([math.cos(a), math.sin(a)])
                  if model.dimension == 2 else None
                  for a in np.linspace(0.0, math.pi, plan.n_theta, endpoint=False)]
        if model.dimension == 3:
            thetas = [np.array([1.0, 0.0, 0.0])]

        n_timeout = 0
        n_failed = 0
        max_flight = 0.0
        n_launch = 0
        for th in thetas:
            for b in b_values:
                bv = b * rot90(th) if model.dimension == 2 else \
                    b * np.array([0.0, 1.0, 0.0])
                rec = scatter_one(model, E, th, bv, virial, cfg)
                n_launch += 1
                if rec.status == "trapped_timeout":
                    n_timeout += 1
                elif rec.status == "failed":
                    n_failed += 1
                if np.isfinite(rec.flight_time):
                    max_flight = max(max_flight, rec.flight_time)

        if n_timeout > 0:
            cls, conf = "trapping_detected", "timeout"
        elif n_failed > 0:
            cls, conf = "inconclusive", "sampled"
        else:
            cls, conf = "nontrapping_evidence", "sampled"
        entries.append(EnergyScanEntry(
            E=E, classification=cls, confidence=conf,
            fraction_timeout=n_timeout / max(n_launch, 1),
            max_flight_time=max_flight, hill_classification=hill_cls,
            star_shaped=star, timeout_as_trapped=n_timeout > 0,
            n_launches=n_launch))
    return EnergyScanReport(energies=energies, entries=entries)


def scattering_jacobian_det(model: PotentialModel, E: float, theta_angle: float,
                            b: float, virial: VirialData | None = None,
                            cfg: ScatterConfig = DEFAULT_SCATTER,
                            h: float = 1e-5) -> float:
    """Finite-difference determinant of the planar scattering map.

    In canonical coordinates (base angle of the direction, conjugate
    transverse offset) the scattering map is symplectic, so the determinant
    is 1 at regular points.
    """
    if virial is None:
        virial = virial_radius(model, E)

    def out_coords(phi_in, ell_in):
        th = np.array([math.cos(phi_in), math.sin(phi_in)])
        rec = scatter_one(model, E, th, ell_in, virial, cfg)
        if not rec.ok:
            raise ScatDegError(f"scatter failed at phi={phi_in}, b={ell_in}")
        return angle_of(rec.theta_out), rec.b_out_scalar()

    def wrapped_diff(a, b_):
        return (a - b_ + math.pi) % (2.0 * math.pi) - math.pi

    phi0 = theta_angle
    f_pp, l_pp = out_coords(phi0 + h, b)
    f_pm, l_pm = out_coords(phi0 - h, b)
    f_bp, l_bp = out_coords(phi0, b + h)
    f_bm, l_bm = out_coords(phi0, b - h)
    dphi_dphi = wrapped_diff(f_pp, f_pm) / (2.0 * h)
    dl_dphi = (l_pp - l_pm) / (2.0 * h)
    dphi_db = wrapped_diff(f_bp, f_bm) / (2.0 * h)
    dl_db = (l_bp - l_bm) / (2.0 * h)
    return dphi_dphi * dl_db - dphi_db * dl_dphi


def records_to_csv(records: list[ScatterRecord], path) -> None:
    """Sweep CSV with the fixed schema (d=2 scalar rows)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_CSV_HEADER)
        for r in records:
            b = r.b_scalar()
            u = 2.0 / math.pi * math.atan(b)
            theta_out_angle = angle_of(r.theta_out) if r.theta_out is not None else math.nan
            row = [r.E, angle_of(r.theta_in), b, u, theta_out_angle,
                   r.b_out_scalar(), r.status, r.min_radius, r.flight_time]
            w.writerow([x if isinstance(x, str) else f"{x:.17g}" for x in row])
