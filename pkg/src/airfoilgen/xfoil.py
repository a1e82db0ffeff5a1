"""Subprocess driver for the external viscous panel-method solver (XFOIL):
coordinate export, scripted command session, polar parsing, timeouts."""

from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .baselines import feasibility_of_section
from .errors import SolverNotFound
from .geometry import AirfoilSection
from .uiuc import to_selig_text

ENV_BINARY = "AIRFOILGEN_XFOIL"


@dataclass(frozen=True)
class XfoilCase:
    reynolds: float = 1.8e6
    mach: float = 0.01
    alpha_deg: float = 0.0
    n_panels: int = 160
    n_iter: int = 200
    timeout: float = 20.0


@dataclass(frozen=True)
class XfoilResult:
    cl: float | None
    cd: float | None
    cm: float | None
    converged: bool

    @property
    def lift_to_drag(self) -> float:
        if not self.converged or not self.cd:
            return float("-inf")
        return self.cl / self.cd


NOT_CONVERGED = XfoilResult(cl=None, cd=None, cm=None, converged=False)


def find_solver(explicit: str | None = None) -> str | None:
    """Resolve the solver binary: explicit path, environment, then PATH."""
    for candidate in (explicit, os.environ.get(ENV_BINARY)):
        if candidate and Path(candidate).is_file() and os.access(candidate, os.X_OK):
            return str(candidate)
        if candidate:
            return None  # explicitly named but unusable
    return shutil.which("xfoil")


def _command_script(coords_name: str, polar_name: str, case: XfoilCase) -> str:
    lines = [
        "PLOP", "G", "",                 # disable graphics
        f"LOAD {coords_name}",
        "PPAR", f"N {case.n_panels}", "", "",
        "OPER",
        f"VISC {case.reynolds:.6g}",
        f"MACH {case.mach:.6g}",
        f"ITER {case.n_iter}",
        "PACC", polar_name, "",
        f"ALFA {case.alpha_deg:.6g}",
        "PACC",
        "", "QUIT", "",
    ]
    return "\n".join(lines)


def parse_polar(text: str) -> XfoilResult:
    """Parse the accumulated polar table; absent data means non-convergence."""
    rows = []
    seen_rule = False
    for line in text.splitlines():
        if set(line.strip()) <= {"-", " "} and "-" in line:
            seen_rule = True
            continue
        if not seen_rule:
            continue
        parts = line.split()
        if len(parts) >= 5:
            try:
                rows.append([float(p) for p in parts[:5]])
            except ValueError:
                continue
    if not rows:
        return NOT_CONVERGED
    alpha, cl, cd, cdp, cm = rows[-1]
    return XfoilResult(cl=cl, cd=cd, cm=cm, converged=True)


def xfoil_evaluate(section: AirfoilSection, case: XfoilCase,
                   binary: str | None = None) -> XfoilResult:
    """Run one viscous point; returns a non-converged result rather than
    raising when the solver fails to settle."""
    solver = find_solver(binary)
    if solver is None:
        raise SolverNotFound(
            f"no solver binary (checked explicit path, ${ENV_BINARY}, PATH)")
    if not feasibility_of_section(section):
        raise ValueError("refusing to analyze a self-intersecting section")

    with tempfile.TemporaryDirectory(prefix="agxfoil_") as tmp:
        tmp = Path(tmp)
        coords = tmp / "section.dat"
        polar = tmp / "polar.txt"
        coords.write_text(to_selig_text(section, "section"))
        script = _command_script(coords.name, polar.name, case)
        proc = subprocess.Popen(
            [solver], cwd=tmp,
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT, text=True,
        )
        try:
            stdout, _ = proc.communicate(script, timeout=case.timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            if proc.poll() is None:  # pragma: no cover - kill always lands
                proc.wait(timeout=5.0)
            raise TimeoutError(
                f"solver exceeded {case.timeout:.0f} s and was killed") from None
        if not polar.exists():
            return NOT_CONVERGED
        result = parse_polar(polar.read_text())
        if result.converged and "Convergence failed" in stdout:
            return NOT_CONVERGED
        return result
