"""Coordinate-file ingestion: Selig/Lednicer parsing and resampling onto
the canonical cosine grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import AmbiguousFormat, DegenerateChord, MalformedFile, NonFunctionSurface
from .geometry import AirfoilSection, cosine_grid

MIN_PARSE_POINTS = 4


@dataclass(frozen=True)
class RawAirfoil:
    """Coordinates as read from file, in Selig order (TE-upper-LE-lower-TE)."""

    name: str
    points: np.ndarray  # (n, 2)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def _tokenize(text: str):
    """Yield (name_line, rows, blank_breaks): numeric rows plus block breaks."""
    name = ""
    rows: list[tuple[float, float]] = []
    breaks: list[int] = []
    started = False
    pending_break = False
    for lineno, line in enumerate(text.splitlines()):
        stripped = line.strip()
        if not stripped:
            if started:
                pending_break = True
            continue
        parts = stripped.replace(",", " ").split()
        try:
            vals = [float(p) for p in parts]
            ok = len(vals) >= 2
        except ValueError:
            ok = False
        if not ok:
            if not started and not name:
                name = stripped
                continue
            raise MalformedFile(f"non-numeric row at line {lineno + 1}: {stripped!r}")
        if pending_break:
            breaks.append(len(rows))
            pending_break = False
        rows.append((vals[0], vals[1]))
        started = True
    return name, rows, breaks


def parse_coordinate_file(data: bytes | str, name_hint: str = "") -> RawAirfoil:
    """Parse a Selig- or Lednicer-layout coordinate file.

    Lednicer files (two LE-to-TE surface blocks preceded by a point-count
    row) are detected by a first numeric value > 1 and converted to Selig
    order with the shared leading-edge point kept once.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8", errors="replace")
    else:
        text = data
    name, rows, breaks = _tokenize(text)
    if not name:
        name = name_hint
    if not rows:
        raise MalformedFile("no coordinate rows found")

    first_x, first_y = rows[0]
    if first_x > 1.0 + 1e-3 and first_y > 1.0 + 1e-3:
        # Lednicer: first row holds the two surface point counts.  A Selig
        # row never has both values above 1 (y stays well below the chord).
        n_up, n_lo = rows[0]
        if abs(n_up - round(n_up)) > 1e-6 or abs(n_lo - round(n_lo)) > 1e-6:
            raise AmbiguousFormat("count row is not integer-valued")
        n_up, n_lo = int(round(n_up)), int(round(n_lo))
        body = rows[1:]
        if len(body) != n_up + n_lo:
            raise AmbiguousFormat(
                f"expected {n_up}+{n_lo} coordinate rows, found {len(body)}")
        upper = np.array(body[:n_up])
        lower = np.array(body[n_up:])
        # both blocks run LE -> TE; flip the upper one and share the LE point
        pts = np.vstack([upper[::-1], lower[1:]])
    else:
        pts = np.array(rows)

    if pts.shape[0] < MIN_PARSE_POINTS:
        raise MalformedFile(f"only {pts.shape[0]} points; need at least {MIN_PARSE_POINTS}")
    if not np.all(np.isfinite(pts)):
        raise MalformedFile("non-finite coordinates")
    return RawAirfoil(name=name, points=pts)


def _align_to_chord(points: np.ndarray) -> tuple[np.ndarray, int]:
    """Rotate/translate/scale so LE = (0,0) and TE = (1,0)."""
    te = 0.5 * (points[0] + points[-1])
    dist = np.linalg.norm(points - te, axis=1)
    i_le = int(np.argmax(dist))
    le = points[i_le]
    chord = np.linalg.norm(te - le)
    if chord < 1e-6:
        raise DegenerateChord("leading and trailing edges coincide")
    direction = (te - le) / chord
    rot = np.array([[direction[0], direction[1]], [-direction[1], direction[0]]])
    aligned = (points - le) @ rot.T / chord
    return aligned, i_le


def _surface_interpolator(surface: np.ndarray) -> PchipInterpolator:
    """Monotone cubic in x for one surface; rejects folded surfaces.

    Decreases beyond rotation round-off mean the surface is not a function
    of x; coincident stations are collapsed."""
    x, y = surface[:, 0].copy(), surface[:, 1]
    if np.any(np.diff(x) < -1e-9):
        raise NonFunctionSurface("surface x-coordinates fold back")
    x = np.maximum.accumulate(x)
    keep = np.concatenate([[True], np.diff(x) > 1e-12])
    x, y = x[keep], y[keep]
    if x.size < 3:
        raise NonFunctionSurface("too few distinct x stations on a surface")
    return PchipInterpolator(x, y, extrapolate=True)


def resample_to_section(raw: RawAirfoil, n: int = 101) -> AirfoilSection:
    """Align, split into surfaces, and resample onto the cosine grid.

    Open trailing edges are closed by removing a linear ramp, so
    y(0) = y(1) = 0 exactly on both surfaces.
    """
    aligned, i_le = _align_to_chord(raw.points)
    first = aligned[: i_le + 1][::-1]  # LE -> endpoint of the first block
    second = aligned[i_le:]
    if np.mean(first[:, 1]) >= np.mean(second[:, 1]):
        upper, lower = first, second
    else:
        upper, lower = second, first

    grid = cosine_grid(n)
    out = {}
    for label, surf in (("upper", upper), ("lower", lower)):
        interp = _surface_interpolator(surf)
        vals = interp(grid)
        vals = vals - vals[-1] * grid  # close the TE
        vals[0] = 0.0
        vals[-1] = 0.0
        out[label] = vals
    return AirfoilSection(x=grid, y_upper=out["upper"], y_lower=out["lower"])


def interpolation_residual(raw: RawAirfoil, section: AirfoilSection) -> float:
    """Largest gap between the resampled surfaces and the aligned raw points."""
    aligned, i_le = _align_to_chord(raw.points)
    up = PchipInterpolator(section.x, section.y_upper)
    lo = PchipInterpolator(section.x, section.y_lower)
    first = aligned[: i_le + 1][::-1]
    second = aligned[i_le:]
    if np.mean(first[:, 1]) < np.mean(second[:, 1]):
        first, second = second, first
    worst = 0.0
    for surf, interp in ((first, up), (second, lo)):
        x = np.clip(surf[:, 0], 0.0, 1.0)
        worst = max(worst, float(np.max(np.abs(interp(x) - surf[:, 1]))))
    return worst


def to_selig_text(section: AirfoilSection, name: str) -> str:
    """Serialize a section in Selig order (TE over the top back to TE)."""
    xs = np.concatenate([section.x[::-1], section.x[1:]])
    ys = np.concatenate([section.y_upper[::-1], section.y_lower[1:]])
    lines = [name]
    lines += [f" {x:.6f}  {y: .6f}" for x, y in zip(xs, ys)]
    return "\n".join(lines) + "\n"
