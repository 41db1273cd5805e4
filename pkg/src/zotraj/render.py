"""Deterministic SVG renders of benchmark artifacts.

SVG is assembled by string formatting with fixed-precision coordinates, so
identical inputs give byte-identical files with no plotting library in the
loop. World coordinates are written directly with the y axis negated.
"""

from __future__ import annotations

import numpy as np

from .pointmass import PointMassEnv
from .problems import himmelblau_penalized

_FMT = "{:.4f}"


def _c(v: float) -> str:
    s = _FMT.format(v)
    return "0.0000" if s == "-0.0000" else s


def _pt(x: float, y: float) -> str:
    return f"{_c(x)},{_c(-y)}"


def _svg(viewbox: tuple[float, float, float, float], body: list[str]) -> str:
    vb = " ".join(_c(v) for v in viewbox)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vb}">',
        *body,
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def tunnel_scene_svg(env: PointMassEnv, trajectory: np.ndarray) -> str:
    """Walls, tunnel, obstacles, goal, and one trajectory polyline.

    ``trajectory`` is the (T, 2) position sequence; the start point is
    prepended so the polyline shows the full path.
    """
    t = env.tunnel
    body: list[str] = []
    body.append(
        f'<rect class="tunnel" x="{_c(t.xmin)}" y="{_c(-t.ymax)}" '
        f'width="{_c(t.xmax - t.xmin)}" height="{_c(t.ymax - t.ymin)}" '
        'fill="#d4edc9" stroke="none"/>'
    )
    for wall in env.walls:
        (ax, ay), (bx, by) = wall
        body.append(
            f'<line class="wall" x1="{_c(ax)}" y1="{_c(-ay)}" '
            f'x2="{_c(bx)}" y2="{_c(-by)}" stroke="#222222" stroke-width="0.12"/>'
        )
    for cx, cy, r in env.obstacles:
        body.append(
            f'<circle class="obstacle" cx="{_c(cx)}" cy="{_c(-cy)}" r="{_c(r)}" '
            'fill="#2e6b34"/>'
        )
    body.append(
        f'<circle class="goal" cx="{_c(env.goal[0])}" cy="{_c(-env.goal[1])}" '
        'r="0.15" fill="#d62728"/>'
    )
    pts = np.vstack([env.start[None, :], np.asarray(trajectory, float)])
    points = " ".join(_pt(x, y) for x, y in pts)
    body.append(
        f'<polyline class="trajectory" points="{points}" fill="none" '
        'stroke="#1f77b4" stroke-width="0.06"/>'
    )
    margin = 0.5
    vb = (
        -5.0 - margin,
        -5.0 - margin,
        10.0 + 2 * margin,
        10.0 + 2 * margin,
    )
    return _svg(vb, body)


def _contour_segments(
    F: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float
) -> list[tuple[float, float, float, float]]:
    """Marching-squares line segments of one iso-level, row-major order."""

    def interp(xa, ya, fa, xb, yb, fb):
        t = (level - fa) / (fb - fa)
        return xa + t * (xb - xa), ya + t * (yb - ya)

    segments = []
    ny, nx = F.shape
    for j in range(ny - 1):
        for i in range(nx - 1):
            corners = (
                (xs[i], ys[j], F[j, i]),
                (xs[i + 1], ys[j], F[j, i + 1]),
                (xs[i + 1], ys[j + 1], F[j + 1, i + 1]),
                (xs[i], ys[j + 1], F[j + 1, i]),
            )
            crossings = []
            for k in range(4):
                xa, ya, fa = corners[k]
                xb, yb, fb = corners[(k + 1) % 4]
                if (fa < level) != (fb < level):
                    crossings.append(interp(xa, ya, fa, xb, yb, fb))
            if len(crossings) == 2:
                (x1, y1), (x2, y2) = crossings
                segments.append((x1, y1, x2, y2))
            elif len(crossings) == 4:
                # Saddle cell: pair edge crossings in fixed order.
                segments.append((*crossings[0], *crossings[1]))
                segments.append((*crossings[2], *crossings[3]))
    return segments


def himmelblau_scene_svg(
    alpha: float,
    population: np.ndarray,
    bounds: tuple[float, float] = (-6.0, 6.0),
    levels: tuple[float, ...] = (1.0, 5.0, 20.0, 60.0, 150.0, 350.0, 800.0),
    grid: int = 121,
) -> str:
    """Cost contour lines with the final population scattered on top."""
    lo, hi = bounds
    xs = np.linspace(lo, hi, grid)
    ys = np.linspace(lo, hi, grid)
    X, Y = np.meshgrid(xs, ys)
    F = himmelblau_penalized(X, Y, alpha)
    body: list[str] = []
    for level in levels:
        segs = _contour_segments(F, xs, ys, level)
        if not segs:
            continue
        d = " ".join(
            f"M {_c(x1)} {_c(-y1)} L {_c(x2)} {_c(-y2)}" for x1, y1, x2, y2 in segs
        )
        body.append(
            f'<path class="contour" d="{d}" fill="none" stroke="#999999" '
            'stroke-width="0.02"/>'
        )
    for x, y in np.asarray(population, float).reshape(-1, 2):
        body.append(
            f'<circle class="particle" cx="{_c(x)}" cy="{_c(-y)}" r="0.06" '
            'fill="#1f77b4" fill-opacity="0.7"/>'
        )
    margin = 0.5
    vb = (lo - margin, -hi - margin, hi - lo + 2 * margin, hi - lo + 2 * margin)
    return _svg(vb, body)


def write_svg(svg: str, path) -> None:
    with open(path, "w") as fh:
        fh.write(svg)
