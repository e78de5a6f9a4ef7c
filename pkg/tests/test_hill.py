import math

import numpy as np
import pytest

from scatdeg.errors import ResolutionTooCoarse
from scatdeg.hill import hill_analysis


def test_empty_above_peak(bump2):
    h = hill_analysis(bump2, 3.0)
    assert h.classification == "empty"
    assert not h.boundary_loops


def test_single_loop_radius(bump2):
    # 2 exp(-r^2) = 1 puts the loop at r = sqrt(ln 2)
    h = hill_analysis(bump2, 1.0)
    assert h.classification == "single_loop"
    loop = h.contours[h.boundary_loops[0]]
    radii = np.linalg.norm(loop, axis=1)
    assert np.mean(radii) == pytest.approx(math.sqrt(math.log(2.0)), abs=2e-3)
    assert np.std(radii) < 1e-3


def test_two_bumps_multi_component(two_bump):
    # each bump contributes one loop; two loops bound the unbounded component
    h = hill_analysis(two_bump, 1.0)
    assert h.classification == "multi_component"
    assert len(h.boundary_loops) == 2


def test_classification_stable_under_resolution_doubling(bump2, two_bump):
    for model, E in ((bump2, 1.0), (bump2, 3.0), (bump2, 1.9), (two_bump, 1.0)):
        a = hill_analysis(model, E, resolution=256)
        b = hill_analysis(model, E, resolution=512)
        assert a.classification == b.classification


def test_small_bbox_raises(bump2):
    with pytest.raises(ResolutionTooCoarse):
        hill_analysis(bump2, 1.0, bbox=(-0.5, 0.5, -0.5, 0.5))


def test_bounded_components_flagged():
    from scatdeg.potential import GaussianBump, PotentialModel

    # a pit ringed by a barrier: well at the center of a positive ring
    ring = PotentialModel(2, (GaussianBump(A=3.0, sigma=2.0, center=(0.0, 0.0)),
                              GaussianBump(A=-4.0, sigma=0.5, center=(0.0, 0.0))))
    h = hill_analysis(ring, 1.0)
    assert any(c.bounded for c in h.components)
    assert any(not c.bounded for c in h.components)
