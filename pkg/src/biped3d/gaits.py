"""Reference gaits shipped with the package.

Three gait files live in ``biped3d/data``:

``torque``          torque-optimal walking at about 0.45 m/s (unstable under the
                    plain HZD controller)
``stability``       a faster gait optimized for the spectral radius of A^z
``torque-frontal``  the torque gait with the swing-hip frontal output replaced by
                    the lateral CoM-to-swing-foot distance

They are regenerated by :func:`build_reference` from the rounded final
states below, after a minimum-norm correction that closes the orbit (the
rounded values leave a periodicity residual of a few 1e-4).
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from . import hzd
from .constraints import GaitDesign
from .optimizer import decode, encode, make_periodic, step_metrics
from .params import RobotParams

REFERENCE_FINAL_STATES = {
    "torque": (
        [-0.0174, -0.34038, 0.3820, -0.2940, 0.0602, 0.0487, -0.5077, 0.1688],
        [-0.4759, -1.1825, 0.0997, 0.2785, -0.1000, 0.1000, 1.398, 0.0],
    ),
    "stability": (
        [-0.0306, -0.3304, 0.3892, -0.2853, 0.0703, 0.0265, -0.4948, 0.2827],
        [-0.2719, -1.6158, -0.0710, -0.1553, -0.1998, 0.2312, 1.1816, -0.0450],
    ),
}
FILES = {"torque": "torque.json", "stability": "stability.json", "torque-frontal": "torque_frontal.json"}


def bundled_path(name: str) -> Path:
    if name not in FILES:
        raise KeyError(f"unknown bundled gait {name!r}; choose from {sorted(FILES)}")
    return Path(str(resources.files("biped3d") / "data" / FILES[name]))


def load_bundled(name: str) -> GaitDesign:
    return GaitDesign.load(bundled_path(name))


def resolve_gait(spec: str | Path) -> GaitDesign:
    """A gait file path, or the name of a bundled gait."""
    if str(spec) in FILES:
        return load_bundled(str(spec))
    return GaitDesign.load(spec)


def build_reference(name: str, params: RobotParams = RobotParams()) -> GaitDesign:
    """Rebuild a bundled gait from its rounded final state."""
    if name == "torque-frontal":
        base = build_reference("torque", params)
        return hzd.reselect_frontal_com(base, params, name="torque-frontal")
    qf, dqf = REFERENCE_FINAL_STATES[name]
    x0 = encode(qf, dqf)
    x = make_periodic(x0, params, hint=qf[1])
    d = decode(x, params, hint=qf[1], name=name).design
    L, width = step_metrics(d, params)
    traj = hzd.nominal_orbit(d, params)
    d.meta.update({"source": "rounded final state, orbit closed by minimum-norm correction",
                   "correction_norm": float(np.linalg.norm(x - x0)), "T": traj.T, "L": L, "width": width,
                   "speed": L / traj.T})
    return d


def write_bundled(out_dir: Path | None = None, params: RobotParams = RobotParams()) -> dict[str, Path]:
    out_dir = Path(out_dir) if out_dir else Path(__file__).parent / "data"
    paths = {}
    for name in FILES:
        paths[name] = build_reference(name, params).save(out_dir / FILES[name])
    return paths
