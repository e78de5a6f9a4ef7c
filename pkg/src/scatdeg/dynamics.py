"""Hamiltonian flow integration with event detection and collision
regularization.

The flow of H = ||p||^2/2 + V(q) is integrated with an adaptive embedded
Runge-Kutta scheme (DOP853 by default) and dense output.  Escape, pericentre
and collision events are located by root finding on the dense solution.

Near an attracting power-law center with exponent alpha = 2n/(n+1) the
integration switches to Sundman-rescaled time dtau = dt / r^(alpha/2), which
keeps the step size finite through deep pericentre passages.  Exact collision
orbits (pericentral angular momentum below ``l_coll``) are continued by the
parity rule

    (p, q)(t0 + dt) = ((-1)^n p(t0 - dt), (-1)^(n+1) q(t0 - dt)),

recorded as a collision event at t0.  With a nonzero smooth remainder W the
rule is applied inside the zone where the singular term dominates; the error
incurred is O(r_reflect) in the reflected state.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from .errors import (
    EnergyDriftExceeded,
    NoPericentre,
    NotRegularizable,
    StepSizeUnderflow,
)
from .geom import angular_momentum, unit
from .potential import PotentialModel, VirialData

__all__ = [
    "PhaseState",
    "TrajectoryEvent",
    "Trajectory",
    "StopCondition",
    "IntegratorConfig",
    "PericentreData",
    "regularizable_order",
    "integrate",
    "integrate_regularized",
    "pericentre",
    "escape_time",
    "energy_drift",
    "swept_angle",
    "dump_trajectory",
]


@dataclass(frozen=True)
class PhaseState:
    """A single phase-space sample (mass 1, so p is the velocity)."""

    p: np.ndarray
    q: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))


@dataclass(frozen=True)
class TrajectoryEvent:
    t: float
    kind: str  # pericentre | collision | escape | timeout
    data: dict = field(default_factory=dict)


@dataclass
class _Segment:
    """Dense solution piece, either in physical time or Sundman time."""

    sol: object           # scipy OdeSolution
    t0: float
    t1: float
    sundman: bool         # if True the dense variable is tau and y[-1] is t
    dim: int

    def state_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        d = self.dim
        if not self.sundman:
            y = self.sol(t)
            return y[:d].copy(), y[d:2 * d].copy()
        tau = brentq(lambda s: self.sol(s)[2 * d] - t,
                     self.sol.t_min, self.sol.t_max, xtol=1e-14, rtol=8.9e-16)
        y = self.sol(tau)
        return y[:d].copy(), y[d:2 * d].copy()


@dataclass
class _LinearSegment:
    """Free-flight piece where the force is below working precision."""

    q0: np.ndarray
    p0: np.ndarray
    t0: float
    t1: float

    def state_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.q0 + (t - self.t0) * self.p0, self.p0.copy()


@dataclass
class Trajectory:
    """Time-ordered samples of one flow line with event annotations.

    ``energy`` is the value of H at launch.  Samples are the solver's natural
    steps; points deep inside a near-collision zone (|V| beyond a cancellation
    cap) are not stored since double precision cannot represent H there, but
    the dense segments still cover them.
    """

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: float
    events: list[TrajectoryEvent]
    model: PotentialModel
    status: str = "done"  # done | escaped | timeout
    zone_radius: float = 0.0
    segments: list[_Segment] = field(default_factory=list, repr=False)

    @property
    def dimension(self) -> int:
        return self.q.shape[1]

    def hamiltonian(self) -> np.ndarray:
        v = self.model.value(self.q)
        return 0.5 * np.sum(self.p * self.p, axis=1) + v

    def state_at(self, t: float) -> PhaseState:
        """Dense-output state at time t (within covered segments)."""
        for seg in self.segments:
            if seg.t0 - 1e-12 <= t <= seg.t1 + 1e-12:
                q, p = seg.state_at(min(max(t, seg.t0), seg.t1))
                return PhaseState(p=p, q=q, t=t)
        raise ValueError(f"time {t} not covered by trajectory segments")

    def initial_state(self) -> PhaseState:
        return PhaseState(p=self.p[0], q=self.q[0], t=float(self.t[0]))

    def final_state(self) -> PhaseState:
        return PhaseState(p=self.p[-1], q=self.q[-1], t=float(self.t[-1]))

    def events_of(self, kind: str) -> list[TrajectoryEvent]:
        return [e for e in self.events if e.kind == kind]

    def min_radius(self, center=None) -> float:
        """Closest approach to ``center`` (default: the singular center when
        present, else the origin)."""
        if center is None:
            sing = self.model.singular_term
            center = np.zeros(self.dimension) if sing is None else np.asarray(sing.center)
            use_events = True
        else:
            sing = self.model.singular_term
            use_events = sing is not None and np.allclose(center, sing.center)
        r = np.linalg.norm(self.q - np.asarray(center), axis=1)
        out = float(np.min(r)) if len(r) else math.inf
        if use_events:
            for e in self.events:
                if e.kind == "collision":
                    return 0.0
                if e.kind == "pericentre" and "radius" in e.data:
                    out = min(out, e.data["radius"])
        return out


@dataclass(frozen=True)
class StopCondition:
    """Until when to integrate.

    ``r_extract`` stops the run at the extraction sphere (outgoing crossing);
    ``t_max`` is the timeout; ``virial`` enables escape-event annotation.
    """

    t_max: float
    virial: VirialData | None = None
    r_extract: float | None = None


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "DOP853"
    rtol: float = 1e-10
    atol: float = 1e-12
    energy_tol: float = 1e-8          # relative drift bound, scaled by 1 + |E|
    max_energy_retries: int = 2
    r_switch_factor: float = 0.05     # near-collision zone radius factor
    l_coll: float = 1e-9              # collision threshold for |l| at pericentre
    r_deep_factor: float = 1e-3       # quadrature handoff radius, fraction of r_switch
    collision_guard_factor: float = 1e-6  # abort radius for unregularized runs
    v_store_cap: float = 1e4          # skip storing samples with |V| above cap*(1+|E|)

    def tightened(self, k: int) -> "IntegratorConfig":
        return replace(self, rtol=self.rtol * 0.01**k, atol=self.atol * 0.01**k)


DEFAULT_INTEGRATOR = IntegratorConfig()


def regularizable_order(alpha: float) -> int | None:
    """n with alpha = 2n/(n+1), or None when no integer n >= 1 fits."""
    if not 0.0 < alpha < 2.0:
        return None
    n = alpha / (2.0 - alpha)
    n_round = round(n)
    if n_round >= 1 and abs(n - n_round) < 1e-9:
        return int(n_round)
    return None


def _event(fn, terminal=True, direction=0):
    fn.terminal = terminal
    fn.direction = direction
    return fn


def _deep_crossing(sing, n, q1, p1, l_coll):
    """Cross the deep region r < r_deep of the singular term analytically.

    Inside the handoff radius the singular term dominates every smooth
    remainder, so the passage is the exact pericentre map of the pure
    power-law field: the position swings by the quadrature angle and the
    radial velocity flips.  Orbits with |l| below ``l_coll`` are collision
    orbits and continue by the parity rule.

    Returns (q2, p2, dt, event_kind, event_data); dt is the elapsed time and
    the event sits at the midpoint.  |p2| = |p1| and |q2 - s| = |q1 - s|, so
    the pure-field energy is conserved exactly.
    """
    center = np.asarray(sing.center)
    q_rel = q1 - center
    r_d = float(np.linalg.norm(q_rel))
    alpha = sing.alpha
    z = sing.Z
    e_loc = 0.5 * float(np.dot(p1, p1)) - z / r_d**alpha
    l_mag = angular_momentum(q_rel, p1)
    if q_rel.shape[0] == 2:
        l_signed = l_mag
        l_mag = abs(l_mag)
    else:
        l_signed = l_mag

    if l_mag < l_coll:
        # collision: residual fall time by quadrature, then the parity rule
        def fall_speed(r):
            return math.sqrt(max(2.0 * e_loc + 2.0 * z / r**alpha, 1e-300))

        delta, _ = quad(lambda r: 1.0 / fall_speed(r), 0.0, r_d, limit=200)
        parity_q = (-1.0) ** (n + 1)
        parity_p = (-1.0) ** n
        q2 = center + parity_q * q_rel
        p2 = parity_p * p1
        data = {"n": n, "l": l_signed, "parity_p": parity_p,
                "parity_q": parity_q, "min_radius": 0.0}
        return q2, p2, 2.0 * delta, "collision", data

    def veff(r):
        return -z / r**alpha + l_mag * l_mag / (2.0 * r * r)

    # inner turning point below r_d (exists for l != 0 since alpha < 2)
    hi = r_d
    lo = r_d
    guard = 0
    while veff(lo) < e_loc:
        hi = lo
        lo *= 0.7
        guard += 1
        if guard > 2000:
            raise StepSizeUnderflow("no inner turning point found in deep region")
    r_min = brentq(lambda r: veff(r) - e_loc, lo, hi, xtol=1e-300, rtol=8.9e-16)

    h = 1e-9 * r_min
    slope = max(-(veff(r_min + h) - veff(r_min)) / h, 1e-300)

    def g(u):
        # u-substitution r = r_min + u^2 removes the turning-point singularity
        r = r_min + u * u
        d = e_loc - veff(r)
        if d <= 0.0:
            d = slope * u * u
        return 2.0 * u / math.sqrt(2.0 * d), r

    def ang_integrand(u):
        w, r = g(u)
        return w * l_mag / (r * r)

    def time_integrand(u):
        w, _ = g(u)
        return w

    u_max = math.sqrt(r_d - r_min)
    theta_half, _ = quad(ang_integrand, 0.0, u_max, epsabs=1e-13, epsrel=1e-12,
                         limit=400)
    t_half, _ = quad(time_integrand, 0.0, u_max, epsabs=1e-13, epsrel=1e-12,
                     limit=400)

    r_hat = q_rel / r_d
    rdot = abs(float(np.dot(r_hat, p1)))
    v_t = l_mag / r_d
    swing = 2.0 * theta_half
    if q_rel.shape[0] == 2:
        # clockwise-positive l means the position angle decreases
        phi = -math.copysign(swing, l_signed)
        c, s = math.cos(phi), math.sin(phi)
        r_hat2 = np.array([c * r_hat[0] - s * r_hat[1],
                           s * r_hat[0] + c * r_hat[1]])
        perp2 = np.array([-r_hat2[1], r_hat2[0]])
        p2 = rdot * r_hat2 + (-l_signed / r_d) * perp2
    else:
        t_hat = p1 - float(np.dot(p1, r_hat)) * r_hat
        t_hat = t_hat / np.linalg.norm(t_hat)
        c, s = math.cos(swing), math.sin(swing)
        r_hat2 = c * r_hat + s * t_hat
        t_hat2 = -s * r_hat + c * t_hat
        p2 = rdot * r_hat2 + v_t * t_hat2
    q2 = center + r_d * r_hat2
    data = {"radius": r_min, "l": l_signed, "swing": swing, "deep": True}
    return q2, p2, 2.0 * t_half, "pericentre", data


def _drive(model: PotentialModel, x0: PhaseState, stop: StopCondition,
           cfg: IntegratorConfig, regularized: bool) -> Trajectory:
    d = model.dimension
    energy = 0.5 * float(np.dot(x0.p, x0.p)) + float(model.value(x0.q))
    sing = model.singular_term
    order = None
    r_switch = 0.0
    if regularized:
        if sing is None:
            raise NotRegularizable("model has no singular term")
        order = regularizable_order(sing.alpha)
        if order is None:
            raise NotRegularizable(
                f"alpha={sing.alpha} is not of the form 2n/(n+1)"
            )
        scale = min(1.0, (sing.Z / max(energy, 1e-12)) ** (1.0 / sing.alpha)) \
            if energy > 0 else 1.0
        r_switch = cfg.r_switch_factor * scale
    centers = [np.asarray(t.center) for t in model.singular_terms]
    guard_r = None
    if centers and not regularized:
        ref = model.singular_terms[0]
        scale = min(1.0, (ref.Z / max(energy, 1e-12)) ** (1.0 / ref.alpha)) \
            if energy > 0 else 1.0
        guard_r = cfg.collision_guard_factor * scale

    def rhs(t, y):
        q = y[:d]
        g = model.grad(q)
        return np.concatenate([y[d:], -g])

    def rhs_tau(tau, y):
        q = y[:d]
        r = np.linalg.norm(q - sing.center)
        w = r ** (sing.alpha / 2.0)
        g = model.grad(q)
        out = np.empty(2 * d + 1)
        out[:d] = w * y[d:2 * d]
        out[d:2 * d] = -w * g
        out[2 * d] = w
        return out

    ts: list[np.ndarray] = []
    qs: list[np.ndarray] = []
    ps: list[np.ndarray] = []
    events: list[TrajectoryEvent] = []
    segments: list[_Segment] = []
    v_cap = cfg.v_store_cap * (1.0 + abs(energy))

    def store(t_arr, y_arr, sundman):
        if sundman:
            t_vals = y_arr[2 * d]
            q_vals = y_arr[:d].T
            p_vals = y_arr[d:2 * d].T
        else:
            t_vals = t_arr
            q_vals = y_arr[:d].T
            p_vals = y_arr[d:2 * d].T
        keep = np.abs(model.value(q_vals)) <= v_cap
        ts.append(np.asarray(t_vals)[keep])
        qs.append(q_vals[keep])
        ps.append(p_vals[keep])

    q_cur = x0.q.copy()
    p_cur = x0.p.copy()
    t_cur = float(x0.t)
    status = "timeout"
    in_zone = False
    if regularized and np.linalg.norm(q_cur - sing.center) < r_switch:
        in_zone = True
    zone_entries = 0

    def note_escape(t, q, p):
        if any(e.kind == "escape" for e in events):
            return
        if stop.virial is None:
            return
        r_here = float(np.linalg.norm(q))
        if r_here >= stop.virial.radius and float(np.dot(q, p)) >= 0.0:
            events.append(TrajectoryEvent(float(t), "escape", {"radius": r_here}))

    note_escape(t_cur, q_cur, p_cur)

    # compact-support models: cap the step so RK stage points cannot straddle
    # a bump, and replace the force-free far field by exact free flight
    feature = model.feature_scale()
    speed_ref = max(float(np.linalg.norm(x0.p)),
                    math.sqrt(2.0 * max(energy, 0.0)), 1e-9)
    max_step = feature / (2.0 * speed_ref) if feature is not None else np.inf
    jumps_enabled = not model.singular_terms and model.terms
    r_active = model.radial_extent(1e-13) if jumps_enabled else np.inf

    def free_jump():
        """Advance along the exact free-flight line while outside the active
        sphere.  Returns True when the run is finished by the jump."""
        nonlocal t_cur, q_cur, p_cur, status
        r_now = float(np.linalg.norm(q_cur))
        if r_now < r_active:
            return False
        p2 = float(np.dot(p_cur, p_cur))
        if p2 == 0.0:
            return False
        qp = float(np.dot(q_cur, p_cur))
        disc = qp * qp - p2 * (r_now * r_now - r_active * r_active)

        finished = True
        if qp < 0.0 and disc > 0.0:
            # the line meets the active sphere: advance to the entry point
            t_hit = (-qp - math.sqrt(disc)) / p2
            if t_cur + t_hit < stop.t_max:
                target_t = t_cur + t_hit
                finished = False
            else:
                target_t = stop.t_max
        elif stop.r_extract is not None:
            # future outgoing crossing of the extraction sphere
            disc_e = qp * qp - p2 * (r_now**2 - stop.r_extract**2)
            t_ext = (-qp + math.sqrt(max(disc_e, 0.0))) / p2
            target_t = min(t_cur + max(t_ext, 0.0), stop.t_max)
        else:
            target_t = stop.t_max

        if stop.virial is not None and not any(e.kind == "escape" for e in events):
            # annotate the escape crossing along the line
            rv = stop.virial.radius
            if r_now >= rv and qp >= 0.0:
                note_escape(t_cur, q_cur, p_cur)
            else:
                disc_v = qp * qp - p2 * (r_now * r_now - rv * rv)
                if disc_v > 0.0:
                    t_v = (-qp + math.sqrt(disc_v)) / p2
                    if 0.0 < t_v <= target_t - t_cur:
                        events.append(TrajectoryEvent(
                            t_cur + t_v, "escape", {"radius": rv}))

        dt = target_t - t_cur
        if dt <= 0.0:
            return False
        segments.append(_LinearSegment(q_cur.copy(), p_cur.copy(), t_cur, target_t))
        q_new = q_cur + dt * p_cur
        ts.append(np.array([t_cur, target_t]))
        qs.append(np.vstack([q_cur, q_new]))
        ps.append(np.vstack([p_cur, p_cur]))
        q_cur = q_new
        t_cur = target_t
        if finished:
            if (stop.r_extract is not None
                    and float(np.linalg.norm(q_cur)) >= stop.r_extract - 1e-9):
                status = "escaped"
            else:
                status = "timeout"
                events.append(TrajectoryEvent(stop.t_max, "timeout", {}))
        return finished

    while t_cur < stop.t_max - 1e-15:
        if not in_zone:
            if jumps_enabled and free_jump():
                break
            evs = []
            idx_extract = idx_zone = idx_guard = idx_leave = None
            if stop.r_extract is not None:
                evs.append(_event(
                    lambda t, y: np.linalg.norm(y[:d]) - stop.r_extract,
                    terminal=True, direction=1))
                idx_extract = len(evs) - 1
            if jumps_enabled and np.isfinite(r_active):
                evs.append(_event(
                    lambda t, y: np.linalg.norm(y[:d]) - 1.0001 * r_active,
                    terminal=True, direction=1))
                idx_leave = len(evs) - 1
            if regularized:
                evs.append(_event(
                    lambda t, y: np.linalg.norm(y[:d] - sing.center) - r_switch,
                    terminal=True, direction=-1))
                idx_zone = len(evs) - 1
            elif guard_r is not None:
                def guard(t, y):
                    return min(np.linalg.norm(y[:d] - c) for c in centers) - guard_r
                evs.append(_event(guard, terminal=True, direction=-1))
                idx_guard = len(evs) - 1
            idx_escape = idx_vir = None
            if stop.virial is not None:
                evs.append(_event(lambda t, y: float(np.dot(y[:d], y[d:])),
                                  terminal=False, direction=1))
                idx_escape = len(evs) - 1
                evs.append(_event(
                    lambda t, y: float(np.linalg.norm(y[:d])) - stop.virial.radius,
                    terminal=False, direction=1))
                idx_vir = len(evs) - 1
            idx_peri = None
            if sing is not None:
                evs.append(_event(
                    lambda t, y: float(np.dot(y[:d] - sing.center, y[d:])),
                    terminal=False, direction=1))
                idx_peri = len(evs) - 1

            sol = solve_ivp(rhs, (t_cur, stop.t_max),
                            np.concatenate([q_cur, p_cur]),
                            method=cfg.method, rtol=cfg.rtol, atol=cfg.atol,
                            max_step=max_step, dense_output=True, events=evs)
            if sol.status == -1:
                raise StepSizeUnderflow(sol.message)
            store(sol.t, sol.y, sundman=False)
            segments.append(_Segment(sol.sol, sol.t[0], sol.t[-1], False, d))

            if idx_escape is not None:
                # first moment with r >= R_vir and <q, p> >= 0: either an
                # outgoing virial-quantity upcrossing outside the ball or an
                # outward radius crossing with the virial quantity positive
                candidates = []
                for te, ye in zip(sol.t_events[idx_escape], sol.y_events[idx_escape]):
                    if float(np.linalg.norm(ye[:d])) >= stop.virial.radius:
                        candidates.append((float(te), ye))
                for te, ye in zip(sol.t_events[idx_vir], sol.y_events[idx_vir]):
                    if float(np.dot(ye[:d], ye[d:])) >= 0.0:
                        candidates.append((float(te), ye))
                if candidates and not any(e.kind == "escape" for e in events):
                    te, ye = min(candidates, key=lambda c: c[0])
                    events.append(TrajectoryEvent(te, "escape",
                                                  {"radius": float(np.linalg.norm(ye[:d]))}))
            if idx_peri is not None:
                for te, ye in zip(sol.t_events[idx_peri], sol.y_events[idx_peri]):
                    events.append(TrajectoryEvent(
                        float(te), "pericentre",
                        {"radius": float(np.linalg.norm(ye[:d] - sing.center)),
                         "l": angular_momentum(ye[:d], ye[d:], sing.center)}))

            t_cur = float(sol.t[-1])
            q_cur = sol.y[:d, -1].copy()
            p_cur = sol.y[d:, -1].copy()
            if sol.status == 1:
                if idx_extract is not None and len(sol.t_events[idx_extract]):
                    status = "escaped"
                    break
                if idx_guard is not None and len(sol.t_events[idx_guard]):
                    raise StepSizeUnderflow(
                        "near-singular approach with unregularized integration")
                if idx_zone is not None and len(sol.t_events[idx_zone]):
                    # verify the zone speed condition ||p||^2 > c_alpha Z / r^alpha
                    c_alpha = (2.0 + sing.alpha) / 2.0
                    r_here = np.linalg.norm(q_cur - sing.center)
                    if np.dot(p_cur, p_cur) <= c_alpha * sing.Z / r_here**sing.alpha:
                        r_switch *= 0.5
                        zone_entries += 1
                        if zone_entries > 8:
                            raise StepSizeUnderflow("cannot enter Sundman zone")
                        continue
                    in_zone = True
                    continue
            else:
                status = "timeout"
                events.append(TrajectoryEvent(stop.t_max, "timeout", {}))
                break
        else:
            # Sundman-rescaled zone passage
            r_deep = cfg.r_deep_factor * r_switch
            tau_max = 1e6 * (r_switch / math.sqrt(2.0 * sing.Z) + 1e-2)

            evs = []
            evs.append(_event(
                lambda tau, y: np.linalg.norm(y[:d] - sing.center) - r_switch,
                terminal=True, direction=1))
            idx_exit = 0
            evs.append(_event(
                lambda tau, y: np.linalg.norm(y[:d] - sing.center) - r_deep,
                terminal=True, direction=-1))
            idx_deep = 1
            evs.append(_event(
                lambda tau, y: float(np.dot(y[:d] - sing.center, y[d:2 * d])),
                terminal=False, direction=1))
            idx_peri = 2
            evs.append(_event(lambda tau, y: y[2 * d] - stop.t_max,
                              terminal=True, direction=1))
            idx_tmax = 3

            y0 = np.concatenate([q_cur, p_cur, [t_cur]])
            sol = solve_ivp(rhs_tau, (0.0, tau_max), y0,
                            method=cfg.method, rtol=cfg.rtol, atol=cfg.atol,
                            dense_output=True, events=evs)
            if sol.status == -1:
                raise StepSizeUnderflow(sol.message)
            store(sol.t, sol.y, sundman=True)
            segments.append(_Segment(sol.sol, float(sol.y[2 * d, 0]),
                                     float(sol.y[2 * d, -1]), True, d))
            for te, ye in zip(sol.t_events[idx_peri], sol.y_events[idx_peri]):
                events.append(TrajectoryEvent(
                    float(ye[2 * d]), "pericentre",
                    {"radius": float(np.linalg.norm(ye[:d] - sing.center)),
                     "l": angular_momentum(ye[:d], ye[d:2 * d], sing.center)}))

            q_cur = sol.y[:d, -1].copy()
            p_cur = sol.y[d:2 * d, -1].copy()
            t_cur = float(sol.y[2 * d, -1])

            if sol.status == 1 and len(sol.t_events[idx_deep]):
                # hand the sub-r_deep passage to the exact pure-field map
                h_in = 0.5 * float(np.dot(p_cur, p_cur)) + float(model.value(q_cur))
                q2, p2, dt, kind, data = _deep_crossing(
                    sing, order, q_cur, p_cur, cfg.l_coll)
                # restore the full Hamiltonian exactly (the smooth remainder
                # differs between entry and exit points of the deep region)
                v2 = float(model.value(q2))
                p2 = p2 * math.sqrt(max(2.0 * (h_in - v2), 0.0) /
                                    max(float(np.dot(p2, p2)), 1e-300))
                events.append(TrajectoryEvent(t_cur + 0.5 * dt, kind, data))
                q_cur = q2
                p_cur = p2
                t_cur = t_cur + dt
                continue
            if sol.status == 1 and len(sol.t_events[idx_exit]):
                in_zone = False
                continue
            if sol.status == 1 and len(sol.t_events[idx_tmax]):
                status = "timeout"
                events.append(TrajectoryEvent(stop.t_max, "timeout", {}))
                break
            raise StepSizeUnderflow("Sundman zone passage did not terminate")

    else:
        status = "timeout"
        if not any(e.kind == "timeout" for e in events):
            events.append(TrajectoryEvent(stop.t_max, "timeout", {}))

    if not ts or sum(len(a) for a in ts) == 0:
        raise StepSizeUnderflow("no samples produced")
    events.sort(key=lambda e: e.t)
    return Trajectory(
        t=np.concatenate(ts), q=np.vstack(qs), p=np.vstack(ps),
        energy=energy, events=events, model=model, status=status,
        zone_radius=r_switch, segments=segments,
    )


def _integrate_impl(model, x0, stop, cfg, regularized) -> Trajectory:
    last_drift = None
    for k in range(cfg.max_energy_retries + 1):
        traj = _drive(model, x0, stop, cfg.tightened(k), regularized)
        drift = energy_drift(traj)
        if drift <= cfg.energy_tol * (1.0 + abs(traj.energy)):
            return traj
        last_drift = drift
    raise EnergyDriftExceeded(
        f"energy drift {last_drift:.3e} exceeds tolerance after retries")


def integrate(model: PotentialModel, x0: PhaseState, stop: StopCondition,
              config: IntegratorConfig = DEFAULT_INTEGRATOR) -> Trajectory:
    """Integrate the Hamiltonian flow until escape, collision abort or timeout.

    Near-singular approaches abort with StepSizeUnderflow: plain integration
    never crosses a collision, use :func:`integrate_regularized` for the
    regularizable exponents.
    """
    return _integrate_impl(model, x0, stop, config, regularized=False)


def integrate_regularized(model: PotentialModel, x0: PhaseState,
                          stop: StopCondition,
                          config: IntegratorConfig = DEFAULT_INTEGRATOR) -> Trajectory:
    """Integrate through near-collisions of an alpha = 2n/(n+1) singular term.

    Raises NotRegularizable for any other exponent.
    """
    return _integrate_impl(model, x0, stop, config, regularized=True)


@dataclass(frozen=True)
class PericentreData:
    """Pericentre passage: time, pericentral direction, angular momentum."""

    time: float
    direction: np.ndarray
    l: float
    radius: float


def pericentre(traj: Trajectory, center=None) -> PericentreData:
    """First pericentre of the trajectory with respect to ``center``.

    Located as the <q - s, p> = 0 crossing with positive derivative on the
    dense output.  For collision orbits the pericentral direction follows the
    parity rule: (-1)^((n+1)/2) q-hat for odd n, (-1)^(n/2) p-hat for even n.
    """
    d = traj.dimension
    if center is None:
        sing = traj.model.singular_term
        center = np.zeros(d) if sing is None else np.asarray(sing.center)
    center = np.asarray(center, dtype=float)

    colls = traj.events_of("collision")
    if colls:
        ev = colls[0]
        n = ev.data["n"]
        st = traj.state_at(ev.t - 1e-6) if ev.t - 1e-6 > traj.t[0] else traj.initial_state()
        if n % 2 == 1:
            f = (-1.0) ** ((n + 1) // 2) * unit(st.q - center)
        else:
            f = (-1.0) ** (n // 2) * unit(st.p)
        return PericentreData(time=ev.t, direction=f, l=ev.data.get("l", 0.0),
                              radius=0.0)

    for ev in traj.events_of("pericentre"):
        st = traj.state_at(ev.t)
        return PericentreData(time=ev.t, direction=unit(st.q - center),
                              l=angular_momentum(st.q, st.p, center),
                              radius=float(np.linalg.norm(st.q - center)))

    # no recorded event: root-find <q-s, p> on the sample sequence
    g = np.sum((traj.q - center) * traj.p, axis=1)
    idx = np.where((g[:-1] < 0.0) & (g[1:] >= 0.0))[0]
    if len(idx) == 0:
        raise NoPericentre("trajectory has no radial minimum w.r.t. the center")
    i = int(idx[0])

    def gfun(t):
        st = traj.state_at(t)
        return float(np.dot(st.q - center, st.p))

    t_star = brentq(gfun, traj.t[i], traj.t[i + 1], xtol=1e-12)
    st = traj.state_at(t_star)
    return PericentreData(time=t_star, direction=unit(st.q - center),
                          l=angular_momentum(st.q, st.p, center),
                          radius=float(np.linalg.norm(st.q - center)))


def escape_time(traj: Trajectory):
    """Time of the first escape event (r >= R_vir with outgoing virial), or
    None when the trajectory timed out without escaping."""
    ev = traj.events_of("escape")
    return ev[0].t if ev else None


def energy_drift(traj: Trajectory, include_zone: bool = False) -> float:
    """max over stored samples of |H - E|.

    Samples inside the near-collision zone are excluded by default: the huge
    cancellation between kinetic and potential parts makes a pointwise H
    check meaningless there in double precision.  Angular momentum, by
    contrast, is checked everywhere.
    """
    if len(traj.t) == 0:
        return 0.0
    drift = np.abs(traj.hamiltonian() - traj.energy)
    if not include_zone and traj.zone_radius > 0.0:
        sing = traj.model.singular_term
        center = np.zeros(traj.dimension) if sing is None else np.asarray(sing.center)
        outside = np.linalg.norm(traj.q - center, axis=1) >= traj.zone_radius
        if not np.any(outside):
            return 0.0
        drift = drift[outside]
    return float(np.max(drift))


def swept_angle(traj: Trajectory, center=None) -> float:
    """Total swept angle of q(t) - s from the incoming to the outgoing
    asymptote, positive for clockwise sweeps (the angular-momentum sign
    convention of :mod:`scatdeg.geom`).

    Asymptotic arcs beyond the stored span are completed analytically from
    the first and last momentum directions.  Only meaningful in d=2 for
    scattering (escaped) trajectories without collision events.
    """
    if traj.dimension != 2:
        raise ValueError("swept angle is a planar quantity")
    if traj.events_of("collision"):
        raise ValueError("swept angle through a collision is undefined")
    center = np.zeros(2) if center is None else np.asarray(center, dtype=float)

    # refine samples until consecutive position-angle steps are small
    t_list = list(map(float, traj.t))
    pts = [traj.q[i] - center for i in range(len(traj.t))]
    i = 0
    guard = 0
    while i < len(pts) - 1 and guard < 200000:
        a0 = math.atan2(pts[i][1], pts[i][0])
        a1 = math.atan2(pts[i + 1][1], pts[i + 1][0])
        dd = abs((a1 - a0 + math.pi) % (2.0 * math.pi) - math.pi)
        if dd > 0.4 and t_list[i + 1] - t_list[i] > 1e-13:
            tm = 0.5 * (t_list[i] + t_list[i + 1])
            st = traj.state_at(tm)
            t_list.insert(i + 1, tm)
            pts.insert(i + 1, st.q - center)
            guard += 1
        else:
            i += 1
    ang = np.unwrap([math.atan2(p[1], p[0]) for p in pts])

    # incoming arc: position angle tends to angle(-p_in) as t -> -infinity
    p_in = traj.p[0]
    a_in = math.atan2(-p_in[1], -p_in[0])
    delta_in = (ang[0] - a_in + math.pi) % (2.0 * math.pi) - math.pi
    # outgoing arc: position angle tends to angle(p_out)
    p_out = traj.p[-1]
    a_out = math.atan2(p_out[1], p_out[0])
    delta_out = (a_out - ang[-1] + math.pi) % (2.0 * math.pi) - math.pi

    total_ccw = (ang[-1] - ang[0]) + delta_in + delta_out
    return -float(total_ccw)


def dump_trajectory(traj: Trajectory, csv_path, events_path=None) -> None:
    """Write samples as CSV (t, q1..qd, p1..pd, H) plus a JSON event sidecar."""
    d = traj.dimension
    h = traj.hamiltonian()
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"q{i+1}" for i in range(d)]
                   + [f"p{i+1}" for i in range(d)] + ["H"])
        for i in range(len(traj.t)):
            row = [traj.t[i], *traj.q[i], *traj.p[i], h[i]]
            w.writerow([f"{x:.17g}" for x in row])
    if events_path is not None:
        payload = {"events": [
            {"t": e.t, "kind": e.kind,
             **{k: (v if not isinstance(v, np.generic) else float(v))
                for k, v in e.data.items()}}
            for e in traj.events]}
        with open(events_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
