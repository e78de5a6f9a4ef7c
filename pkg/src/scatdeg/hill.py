"""Hill's-region geometry in the plane: contours of V = E and the topology of
the boundary of the unbounded component.

A non-trapping energy forces that boundary to be empty or a single circle, so
the classification implemented here serves as a planar trapping diagnostic:
``multi_component`` certifies trapping (a brake orbit runs between the
components), while ``single_loop`` / ``empty`` are consistent with
non-trapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ResolutionTooCoarse
from .potential import PotentialModel

__all__ = ["HillComponent", "HillAnalysis", "hill_analysis"]

CLASSIFICATIONS = ("empty", "single_loop", "multi_component", "non_spherical")


@dataclass(frozen=True)
class HillComponent:
    """One connected component of {V <= E} on the sampling grid."""

    bounded: bool
    n_cells: int


@dataclass(frozen=True)
class HillAnalysis:
    energy: float
    resolution: int
    bbox: tuple[float, float, float, float]  # (xmin, xmax, ymin, ymax)
    contours: tuple[np.ndarray, ...]          # closed polylines in xy coordinates
    boundary_loops: tuple[int, ...]           # indices of contours bounding the unbounded component
    components: tuple[HillComponent, ...]
    classification: str


def _auto_bbox(model: PotentialModel, energy: float) -> tuple[float, float, float, float]:
    r = 1.5 * model.radial_extent(tol=min(energy, 1.0) * 1e-3) + 1.0
    return (-r, r, -r, r)


def hill_analysis(
    model: PotentialModel,
    energy: float,
    resolution: int = 512,
    bbox: tuple[float, float, float, float] | None = None,
    closure_tol_cells: float = 1.5,
) -> HillAnalysis:
    """Marching-squares contour of V = E with component classification (d=2).

    The unbounded component of {V <= E} is found by flood fill from the
    bounding-box frame; the classification reports how many closed contour
    loops bound it.
    """
    if model.dimension != 2:
        raise ValueError("hill_analysis is a d=2 diagnostic")
    if energy <= 0.0:
        raise ValueError("hill_analysis requires E > 0")
    from skimage import measure  # deferred: slow import

    if bbox is None:
        bbox = _auto_bbox(model, energy)
    xmin, xmax, ymin, ymax = bbox
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    dx = xs[1] - xs[0]
    dy = ys[1] - ys[0]
    grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)

    # nudge nodes landing exactly on a singular center
    for t in model.singular_terms:
        c = np.asarray(t.center)
        d2 = np.sum((grid - c) ** 2, axis=-1)
        hit = d2 == 0.0
        if np.any(hit):
            grid[hit] += 0.5 * min(dx, dy)

    v = model.value(grid)

    # connected components of {V <= E}; the frame is in the unbounded one
    mask = v <= energy
    labels, n_labels = ndimage.label(mask)
    frame_labels = set(labels[0, :]) | set(labels[-1, :]) | set(labels[:, 0]) | set(labels[:, -1])
    frame_labels.discard(0)
    if len(frame_labels) != 1:
        raise ResolutionTooCoarse(
            "bounding box frame intersects the forbidden region; enlarge bbox"
        )
    unbounded_label = frame_labels.pop()
    components = tuple(
        HillComponent(bounded=(lab != unbounded_label),
                      n_cells=int(np.sum(labels == lab)))
        for lab in range(1, n_labels + 1)
    )

    raw_contours = measure.find_contours(v, level=energy)
    contours = []
    boundary_loops = []
    tol = closure_tol_cells * max(dx, dy)
    for rc in raw_contours:
        xy = np.column_stack([xs[0] + rc[:, 0] * dx, ys[0] + rc[:, 1] * dy])
        gap = float(np.linalg.norm(xy[0] - xy[-1]))
        if gap > tol:
            raise ResolutionTooCoarse(
                f"contour polyline fails to close (gap {gap:.3g}); refine the grid"
            )
        contours.append(xy)

    # a loop bounds the unbounded component when the allowed grid node next to
    # one of its vertices carries the unbounded label
    for ci, (rc, xy) in enumerate(zip(raw_contours, contours)):
        votes = 0
        checks = 0
        step = max(1, len(rc) // 32)
        for k in range(0, len(rc), step):
            i0, j0 = int(round(rc[k, 0])), int(round(rc[k, 1]))
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    i, j = i0 + di, j0 + dj
                    if 0 <= i < resolution and 0 <= j < resolution and mask[i, j]:
                        checks += 1
                        if labels[i, j] == unbounded_label:
                            votes += 1
        if checks and votes > 0:
            boundary_loops.append(ci)

    n_loops = len(boundary_loops)
    if n_loops == 0:
        classification = "empty"
    elif n_loops == 1:
        classification = "single_loop"
    else:
        classification = "multi_component"
    # in the plane every closed regular level component is a circle, so
    # "non_spherical" is reserved for degenerate inputs and never produced here

    return HillAnalysis(
        energy=energy,
        resolution=resolution,
        bbox=bbox,
        contours=tuple(contours),
        boundary_loops=tuple(boundary_loops),
        components=components,
        classification=classification,
    )
