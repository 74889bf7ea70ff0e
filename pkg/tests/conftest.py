import numpy as np
import pytest

from labelfuse import synthetic
from labelfuse.geometry import CameraView, DepthMap, intrinsics


def simple_view(view_id=0, width=8, height=6, f=100.0, cx=None, cy=None, pose=None):
    cx = width / 2 if cx is None else cx
    cy = height / 2 if cy is None else cy
    return CameraView(view_id, width, height, intrinsics(f, f, cx, cy),
                      np.eye(4) if pose is None else pose)


def translated(t):
    T = np.eye(4)
    T[:3, 3] = t
    return T


def plane_depth(width, height, z):
    return DepthMap(np.full((height, width), float(z)))


@pytest.fixture(scope="session")
def orbit_small():
    """Noiseless 6-view 80x60 orbit scene: (spec, views, depths, sems, insts)."""
    spec = synthetic.orbit_scene(seed=0, n_views=6, width=80, height=60)
    return (spec, *synthetic.render_all(spec))


@pytest.fixture(scope="session")
def orbit_default():
    spec = synthetic.orbit_scene(seed=0)
    return (spec, *synthetic.render_all(spec))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, collected from user properties."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when == "call":
                lines.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL", props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict, detail in sorted(lines, key=lambda t: int(t[0].split()[0])):
            terminalreporter.write_line(f"{verdict} criterion {name}" + (f": {detail}" if detail else ""))
