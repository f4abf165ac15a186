"""Physical and geometric constants of the wheel-leg robot.

Values that the robot's datasheet gives (mass, tire diameter) are used as-is.
Everything else is an engineering estimate and can be overridden from a
parameter file (flat ``key = value`` TOML, see ``data/robot_default.toml``).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

DEFAULT_PARAM_FILE = "data/robot_default.toml"

# Layout of the packed parameter vector handed to the compiled kernels.
P_M, P_I, P_L, P_D0, P_DMAX, P_R, P_JW = 0, 1, 2, 3, 4, 5, 6
P_K = 7  # four motor gains, 7..10
P_TC, P_BV, P_C1, P_C2, P_C3, P_G = 11, 12, 13, 14, 15, 16
N_PACKED = 17


@dataclass(frozen=True)
class RobotParams:
    m: float = 278.0
    I: float | None = None
    l: float = 1.2
    d0: float = 1.2
    delta_max_stretch: float = 0.5
    r: float = 0.1
    J_w: float = 0.5
    k_motor: tuple[float, float, float, float] = (2.0, 2.0, 2.0, 2.0)
    t_coulomb: float = 0.1
    b_visc: float = 0.005
    c1: float = 1.2801
    c2: float = 23.99
    c3: float = 0.52
    g: float = 9.81

    def __post_init__(self):
        if self.I is None:
            # solid-box approximation over the wheelbase x track footprint
            object.__setattr__(self, "I", self.m * (self.l**2 + self.d0**2) / 12.0)
        k = tuple(float(v) for v in np.broadcast_to(self.k_motor, (4,)))
        object.__setattr__(self, "k_motor", k)
        for name in ("m", "I", "l", "d0", "r", "J_w", "c1", "c2", "c3", "g"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"RobotParams.{name} must be > 0, got {v}")
        for name in ("t_coulomb", "b_visc", "delta_max_stretch"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"RobotParams.{name} must be >= 0, got {v}")
        if any(not np.isfinite(v) or v <= 0 for v in k):
            raise ValueError(f"RobotParams.k_motor entries must be > 0, got {k}")

    @property
    def d_max(self) -> float:
        return self.d0 + self.delta_max_stretch

    @property
    def wheel_load(self) -> float:
        """Static vertical load per wheel (no load transfer)."""
        return self.m * self.g / 4.0

    def packed(self) -> np.ndarray:
        p = np.empty(N_PACKED)
        p[P_M], p[P_I], p[P_L], p[P_D0] = self.m, self.I, self.l, self.d0
        p[P_DMAX], p[P_R], p[P_JW] = self.delta_max_stretch, self.r, self.J_w
        p[P_K:P_K + 4] = self.k_motor
        p[P_TC], p[P_BV] = self.t_coulomb, self.b_visc
        p[P_C1], p[P_C2], p[P_C3], p[P_G] = self.c1, self.c2, self.c3, self.g
        return p

    def replace(self, **changes) -> "RobotParams":
        if ("m" in changes or "l" in changes or "d0" in changes) and "I" not in changes:
            # keep a derived inertia derived
            if self.I == self.m * (self.l**2 + self.d0**2) / 12.0:
                changes["I"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["k_motor"] = list(self.k_motor)
        return out


PARAM_KEYS = tuple(f.name for f in dataclasses.fields(RobotParams))


def params_from_dict(values: dict, base: RobotParams | None = None) -> RobotParams:
    unknown = set(values) - set(PARAM_KEYS)
    if unknown:
        raise KeyError(f"unknown robot parameter(s): {', '.join(sorted(unknown))}")
    values = dict(values)
    if "k_motor" in values:
        values["k_motor"] = tuple(np.broadcast_to(values["k_motor"], (4,)).tolist())
    if base is None:
        return RobotParams(**values)
    return base.replace(**values)


def load_params(path: str | Path | None = None) -> RobotParams:
    """Read a flat ``key = value`` parameter file; omitted keys keep defaults."""
    if path is None:
        text = resources.files("wheelleg").joinpath(DEFAULT_PARAM_FILE).read_text()
    else:
        text = Path(path).read_text()
    return params_from_dict(tomli.loads(text))


def dump_params(params: RobotParams) -> str:
    return tomli_w.dumps(params.to_dict())
