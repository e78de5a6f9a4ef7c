import json
import math

import numpy as np
import pytest

from scatdeg.errors import ConfigError, EvaluationAtSingularity, NoVirialRadius
from scatdeg.potential import (
    GaussianBump,
    PolyBump,
    PotentialModel,
    SingularPower,
    evaluate,
    force_tail_profile,
    model_from_dict,
    model_from_json,
    model_to_dict,
    star_shaped_margin,
    virial_radius,
    vmax,
)


def test_eval_singular_power_direct_formula(kepler2):
    v, g = evaluate(kepler2, [2.0, 0.0])
    assert v == pytest.approx(-0.5, abs=1e-15)


def test_eval_empty_model(free2):
    v, g = evaluate(free2, [3.0, -1.0])
    assert v == 0.0
    assert np.all(g == 0.0)


def test_eval_gaussian_center(bump2):
    v, g = evaluate(bump2, [0.0, 0.0])
    assert v == pytest.approx(2.0, abs=1e-15)
    assert np.allclose(g, 0.0)


def test_eval_at_singularity_raises(kepler2):
    with pytest.raises(EvaluationAtSingularity):
        evaluate(kepler2, [0.0, 0.0])


def test_gradient_matches_finite_differences(kepler2, bump2, poly2):
    rng = np.random.default_rng(0)
    h = 1e-5
    for model in (kepler2, bump2, poly2):
        count = 0
        while count < 100:
            q = rng.uniform(-4.0, 4.0, size=2)
            if any(np.linalg.norm(q - np.asarray(t.center)) < 0.1
                   for t in model.singular_terms):
                continue
            count += 1
            _, g = evaluate(model, q)
            fd = np.empty(2)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd[i] = (model.value(q + e) - model.value(q - e)) / (2.0 * h)
            scale = max(np.linalg.norm(g), 1e-10)
            assert np.linalg.norm(fd - g) / scale < 1e-6


def test_hessian_matches_finite_differences(bump2, kepler2):
    rng = np.random.default_rng(1)
    for model in (bump2, kepler2):
        for _ in range(20):
            q = rng.uniform(0.5, 3.0, size=2) * rng.choice([-1.0, 1.0], size=2)
            h = 1e-5
            hess = model.hessian(q)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd = (model.grad(q + e) - model.grad(q - e)) / (2.0 * h)
                assert np.allclose(fd, hess[:, i], rtol=1e-4, atol=1e-6)


def test_poly_bump_compact_support(poly2):
    term = poly2.terms[0]
    assert poly2.value([2.0, 0.0]) == 0.0
    assert poly2.value([5.0, 1.0]) == 0.0
    assert np.all(poly2.grad([2.5, 0.5]) == 0.0)
    # C^2 cutoff: value, gradient and hessian vanish continuously at rho
    eps = 1e-6
    assert abs(poly2.value([term.rho - eps, 0.0])) < 1e-16
    assert np.linalg.norm(poly2.grad([term.rho - eps, 0.0])) < 1e-10
    assert np.abs(poly2.hessian(np.array([term.rho - eps, 0.0]))).max() < 1e-4


def test_vmax_trivials(free2, bump2, kepler2):
    assert vmax(free2) == 0.0
    assert vmax(bump2) == pytest.approx(2.0, abs=1e-9)
    assert vmax(kepler2) == 0.0


def test_vmax_two_gaussians_grid_oracle():
    model = PotentialModel(2, (GaussianBump(A=1.5, sigma=1.0, center=(-1.0, 0.0)),
                               GaussianBump(A=1.5, sigma=1.0, center=(1.0, 0.0))))
    # by symmetry the maxima lie on the x axis: dense 1-d grid oracle,
    # cross-checked against a coarse 2-d grid
    xs = np.linspace(-2.5, 2.5, 500001)
    pts = np.column_stack([xs, np.zeros_like(xs)])
    axis_max = float(np.max(model.value(pts)))
    grid = np.stack(np.meshgrid(np.linspace(-2.5, 2.5, 501),
                                np.linspace(-1.5, 1.5, 301), indexing="ij"), axis=-1)
    assert float(np.max(model.value(grid))) <= axis_max + 1e-9
    assert vmax(model) == pytest.approx(axis_max, abs=1e-7)


def test_virial_radius_empty_model(free2):
    vd = virial_radius(free2, 1.0)
    assert vd.candidate_radius == 1.0
    assert vd.radius == pytest.approx(1.25)


def test_virial_radius_kepler_closed_form(kepler2):
    # both conditions reduce to Z/r < E/2, so the certified radius is 2Z/E
    vd = virial_radius(kepler2, 1.0)
    assert vd.candidate_radius == pytest.approx(2.0, rel=0.02)
    assert vd.radius == pytest.approx(2.0 * vd.safety_factor, rel=0.02)


def test_virial_radius_gaussian_bisection_oracle(bump2):
    # 1-d oracle on the radial profile: largest root of
    # max(|V|, r |V'|) = E/2 located by bisection; V = 2 exp(-r^2) gives
    # r|V'| = 4 r^2 exp(-r^2)
    E = 1.0

    def quantity(r):
        v = 2.0 * math.exp(-r * r)
        return max(v, 4.0 * r * r * math.exp(-r * r))

    lo, hi = 1.0, 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if quantity(mid) > E / 2.0:
            lo = mid
        else:
            hi = mid
    oracle = 0.5 * (lo + hi)
    vd = virial_radius(bump2, E)
    assert vd.candidate_radius == pytest.approx(oracle, rel=0.05)


def test_virial_certificate_resampled_at_4x_density(kepler2, bump2):
    from scatdeg.geom import sphere_directions

    for model in (kepler2, bump2):
        E = 1.0
        vd = virial_radius(model, E)
        dirs = sphere_directions(2, 4 * 256)
        for r in np.geomspace(vd.radius, 50.0 * vd.radius, 40):
            pts = r * dirs
            v = np.abs(model.value(pts))
            qg = np.abs(np.sum(pts * model.grad(pts), axis=-1))
            assert np.max(v) < E / 2.0
            assert np.max(qg) < E / 2.0


def test_no_virial_radius_for_tiny_energy(kepler2):
    with pytest.raises(NoVirialRadius):
        virial_radius(kepler2, 1e-12, ceiling=1e4)


def test_long_range_force_tail_decays_monotonically(kepler2, bump2, m43):
    for model in (kepler2, bump2, m43):
        vd = virial_radius(model, 1.0)
        radii = np.geomspace(vd.radius, 1e3 * vd.radius, 25)
        profile = force_tail_profile(model, radii)
        assert np.all(np.diff(profile) <= 1e-12)
        assert profile[-1] < 1e-2 * profile[0] + 1e-12


def test_star_shaped_margin_of_centered_bump(bump2):
    assert star_shaped_margin(bump2) <= 1e-12


def test_json_round_trip_and_unknown_field_rejection():
    cfg = {"dimension": 2,
           "terms": [{"kind": "gaussian_bump", "A": 2.0, "sigma": 1.0, "center": [0, 0]},
                     {"kind": "singular_power", "Z": 1.0, "alpha": 1.0, "center": [0, 0]}]}
    model = model_from_dict(cfg)
    assert model.dimension == 2
    assert len(model.terms) == 2
    back = model_to_dict(model)
    assert model_from_dict(back) == model_from_dict(back)

    bad = dict(cfg)
    bad["extra"] = 1
    with pytest.raises(ConfigError):
        model_from_dict(bad)
    bad_term = {"dimension": 2,
                "terms": [{"kind": "gaussian_bump", "A": 1.0, "sigma": 1.0,
                           "center": [0, 0], "width": 3}]}
    with pytest.raises(ConfigError):
        model_from_dict(bad_term)
    with pytest.raises(ConfigError):
        model_from_json("not json")


def test_constructor_guards():
    with pytest.raises(ConfigError):
        SingularPower(Z=-1.0, alpha=1.0, center=(0.0, 0.0))
    with pytest.raises(ConfigError):
        SingularPower(Z=1.0, alpha=2.0, center=(0.0, 0.0))
    with pytest.raises(ConfigError):
        GaussianBump(A=1.0, sigma=0.0, center=(0.0, 0.0))
    with pytest.raises(ConfigError):
        PotentialModel(2, (SingularPower(Z=1.0, alpha=1.0, center=(0.0, 0.0)),
                           SingularPower(Z=1.0, alpha=1.0, center=(1.0, 0.0))))
    # multi-singular allowed only explicitly (itinerary experiments)
    PotentialModel(2, (SingularPower(Z=1.0, alpha=1.0, center=(0.0, 0.0)),
                       SingularPower(Z=1.0, alpha=1.0, center=(1.0, 0.0))),
                   allow_multi_singular=True)
    with pytest.raises(ConfigError):
        PotentialModel(4, ())
