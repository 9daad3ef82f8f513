"""Scene description: sheets, pins, colliders, solver settings and built-in benchmark scenes.

A scene is a JSON-compatible dict. :class:`SceneConfig` parses and validates
it; ``to_dict`` gives the canonical form that snapshots embed.

Sheet fields::

    resolution       [n, m] control points
    size             [a, b] material rectangle (m)
    origin, axis_u, axis_v   placement of the material rectangle in world space
    stretch          [su, sv] initial world scaling along axis_u / axis_v
    velocity         initial velocity of every control point (m/s)
    perturbation     {"amplitude", "modes": [ku, kv], "direction"}; adds
                     amplitude * sin(ku pi s) * sin(kv pi t) along direction
    material         {"density", "thickness", "E_stretch", "E_shear", "E_bend",
                      "poisson"} or explicit {"mu_st1", "mu_st2", "mu_sh", "mu_bd"}
    membrane, bending    enable the energy terms
    quadrature       "reduced" (default) or "full" (2x2 per span)
    mesh_resolution  embedded contact/render mesh, default 2n x 2m

Pins select control points by ``sheet`` and ``select``: one of ``"all"``,
``"boundary"``, ``"corners"``, ``"edge:<side>[:rows]"`` with side in
u0/u1/v0/v1, or a list of ``[i, j]`` pairs (negative indices wrap). Each pin
group and collider may carry a ``script``: a list of
``{"t0", "t1", "velocity"}`` segments of constant velocity.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .contact import ContactParams
from .elasticity import MaterialParams
from .solver import SolverParams


class ConfigError(ValueError):
    pass


@dataclass
class MotionScript:
    """Piecewise-constant velocity over ordered, non-overlapping time segments."""

    segments: list = field(default_factory=list)  # (t0, t1, velocity)

    def __post_init__(self):
        segs = []
        for s in self.segments:
            if isinstance(s, dict):
                s = (s["t0"], s["t1"], s["velocity"])
            t0, t1, vel = float(s[0]), float(s[1]), np.asarray(s[2], float)
            if t1 < t0 or vel.shape != (3,):
                raise ConfigError(f"bad script segment {s!r}")
            segs.append((t0, t1, vel))
        for a, b in zip(segs, segs[1:]):
            if b[0] < a[1]:
                raise ConfigError("script segments overlap or are out of order")
        self.segments = segs

    @property
    def fixed(self) -> bool:
        return not self.segments

    def velocity(self, t: float) -> np.ndarray:
        for t0, t1, vel in self.segments:
            if t0 <= t < t1:
                return vel.copy()
        return np.zeros(3)

    def displacement(self, ta: float, tb: float) -> np.ndarray:
        """Exact integral of the velocity over ``[ta, tb]``."""
        out = np.zeros(3)
        for t0, t1, vel in self.segments:
            overlap = min(tb, t1) - max(ta, t0)
            if overlap > 0:
                out += overlap * vel
        return out

    def to_list(self) -> list:
        return [{"t0": t0, "t1": t1, "velocity": vel.tolist()} for t0, t1, vel in self.segments]


@dataclass
class SheetConfig:
    resolution: list = field(default_factory=lambda: [16, 16])
    size: list = field(default_factory=lambda: [1.0, 1.0])
    origin: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    axis_u: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    axis_v: list = field(default_factory=lambda: [0.0, 1.0, 0.0])
    stretch: list = field(default_factory=lambda: [1.0, 1.0])
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    perturbation: dict | None = None
    material: dict = field(default_factory=dict)
    membrane: bool = True
    bending: bool = True
    quadrature: str = "reduced"
    mesh_resolution: list | None = None

    def material_params(self) -> MaterialParams:
        m = dict(self.material)
        if "mu_st1" in m:
            p = MaterialParams(float(m["mu_st1"]), float(m.get("mu_st2", m["mu_st1"])),
                               float(m.get("mu_sh", m["mu_st1"])), float(m.get("mu_bd", 0.0)),
                               float(m.get("poisson", 0.0)))
        else:
            p = MaterialParams.from_moduli(
                float(m.get("thickness", 1e-3)), float(m.get("E_stretch", 1e5)),
                E_shear=m.get("E_shear"), E_bend=m.get("E_bend"),
                poisson=float(m.get("poisson", 0.0)), shear_ratio=m.get("shear_ratio"))
        if not self.membrane:
            p = MaterialParams(0.0, 0.0, 0.0, p.mu_bd, p.poisson)
        if not self.bending:
            p = MaterialParams(p.mu_st1, p.mu_st2, p.mu_sh, 0.0, p.poisson)
        return p

    @property
    def areal_density(self) -> float:
        return float(self.material.get("density", 200.0)) * float(self.material.get("thickness", 1e-3))


@dataclass
class PinConfig:
    sheet: int = 0
    select: object = "corners"
    script: list = field(default_factory=list)


@dataclass
class ColliderConfig:
    type: str = "plane"
    point: list | None = None
    normal: list | None = None
    center: list | None = None
    radius: float | None = None
    angular_velocity: list | None = None
    script: list = field(default_factory=list)


@dataclass
class OutputConfig:
    dir: str = "out"
    cadence: int = 1


@dataclass
class SceneConfig:
    name: str = "scene"
    sheets: list = field(default_factory=list)
    pins: list = field(default_factory=list)
    colliders: list = field(default_factory=list)
    contact: dict | None = None  # None disables contact
    gravity: list = field(default_factory=lambda: [0.0, 0.0, -9.81])
    solver: dict = field(default_factory=dict)
    frames: int = 100
    quasi_static: bool = False
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- parsing --------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        data = copy.deepcopy(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scene fields: {sorted(unknown)}")
        try:
            cfg = cls(**{k: v for k, v in data.items() if k not in ("sheets", "pins", "colliders", "output")})
            cfg.sheets = [_build(SheetConfig, s, "sheet") for s in data.get("sheets", [])]
            cfg.pins = [_build(PinConfig, p, "pin") for p in data.get("pins", [])]
            cfg.colliders = [_build(ColliderConfig, c, "collider") for c in data.get("colliders", [])]
            cfg.output = _build(OutputConfig, data.get("output", {}), "output")
        except TypeError as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "SceneConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid scene JSON: {e}") from e

    @classmethod
    def load(cls, path) -> "SceneConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read scene {path}: {e}") from e
        return cls.from_json(text)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, overrides: list[str]) -> "SceneConfig":
        d = self.to_dict()
        for item in overrides:
            apply_override(d, item)
        return SceneConfig.from_dict(d)

    # -- typed views ----------------------------------------------------------

    def solver_params(self, **extra) -> SolverParams:
        try:
            return SolverParams(**{**self.solver, **extra})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"solver: {e}") from e

    def contact_params(self) -> ContactParams | None:
        if self.contact is None or not self.contact.get("enabled", True):
            return None
        kw = {k: v for k, v in self.contact.items() if k != "enabled"}
        try:
            return ContactParams(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"contact: {e}") from e

    def validate(self) -> None:
        if not self.sheets:
            raise ConfigError("scene has no sheets")
        if self.frames < 0:
            raise ConfigError("frames must be non-negative")
        if len(self.gravity) != 3:
            raise ConfigError("gravity must be a 3-vector")
        for k, s in enumerate(self.sheets):
            n, m = (int(r) for r in s.resolution)
            if n < 3 or m < 3:
                raise ConfigError(f"sheet {k}: resolution {s.resolution} below 3x3")
            if s.quadrature not in ("reduced", "full"):
                raise ConfigError(f"sheet {k}: unknown quadrature {s.quadrature!r}")
            if s.quadrature == "reduced" and (n < 4 or m < 4):
                raise ConfigError(f"sheet {k}: reduced integration needs at least 4x4 control points")
            if min(s.size) <= 0:
                raise ConfigError(f"sheet {k}: size must be positive")
            try:
                s.material_params()
            except ValueError as e:
                raise ConfigError(f"sheet {k}: material: {e}") from e
        for k, p in enumerate(self.pins):
            if not 0 <= p.sheet < len(self.sheets):
                raise ConfigError(f"pin {k}: sheet {p.sheet} out of range")
            select_controls(self.sheets[p.sheet].resolution, p.select)
            MotionScript(p.script)
        for k, c in enumerate(self.colliders):
            if c.type not in ("plane", "sphere"):
                raise ConfigError(f"collider {k}: unknown type {c.type!r}")
            MotionScript(c.script)
        self.solver_params()
        self.contact_params()


def _build(cls, data, what: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {what} fields: {sorted(unknown)}")
    return cls(**data)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(d: dict, item: str) -> None:
    """Set ``a.b.0.c=value`` in a nested dict/list; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    path, raw = item.split("=", 1)
    keys = path.strip().split(".")
    node = d
    for key in keys[:-1]:
        node = _child(node, key, path)
    last = keys[-1]
    if isinstance(node, list):
        node[_list_index(node, last, path)] = _parse_value(raw)
    elif isinstance(node, dict):
        node[last] = _parse_value(raw)
    else:
        raise ConfigError(f"override path {path!r} does not name a field")


def _list_index(node: list, key: str, path: str) -> int:
    try:
        i = int(key)
        node[i]
    except (ValueError, IndexError) as e:
        raise ConfigError(f"override path {path!r}: bad index {key!r}") from e
    return i


def _child(node, key: str, path: str):
    if isinstance(node, list):
        return node[_list_index(node, key, path)]
    if isinstance(node, dict):
        if key not in node or node[key] is None:
            node[key] = {}
        return node[key]
    raise ConfigError(f"override path {path!r} does not name a field")


def select_controls(resolution, select) -> np.ndarray:
    """Flat control indices (``i * m + j``) named by a pin selector."""
    n, m = int(resolution[0]), int(resolution[1])
    I, J = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    if isinstance(select, str):
        if select == "all":
            mask = np.ones((n, m), bool)
        elif select == "boundary":
            mask = (I == 0) | (I == n - 1) | (J == 0) | (J == m - 1)
        elif select == "corners":
            mask = ((I == 0) | (I == n - 1)) & ((J == 0) | (J == m - 1))
        elif select.startswith("edge:"):
            parts = select.split(":")
            side = parts[1]
            rows = int(parts[2]) if len(parts) > 2 else 1
            if side not in ("u0", "u1", "v0", "v1") or rows < 1:
                raise ConfigError(f"bad pin selector {select!r}")
            mask = {"u0": I < rows, "u1": I >= n - rows, "v0": J < rows, "v1": J >= m - rows}[side]
        else:
            raise ConfigError(f"unknown pin selector {select!r}")
        return np.flatnonzero(mask.ravel())
    out = []
    for ij in select:
        try:
            i, j = int(ij[0]), int(ij[1])
        except (TypeError, ValueError, IndexError) as e:
            raise ConfigError(f"bad pin index {ij!r}") from e
        if not (-n <= i < n and -m <= j < m):
            raise ConfigError(f"pin index {ij!r} outside {n}x{m}")
        out.append((i % n) * m + (j % m))
    return np.unique(np.array(out, np.int64))


# -- built-in scenes ----------------------------------------------------------------

PLATE_E, PLATE_NU, PLATE_H, PLATE_LOAD = 2e6, 0.03, 0.01, 9.81


def plate_target(a: float = 1.0) -> float:
    """Analytic centre deflection of a simply supported square plate under uniform load."""
    return 0.048744 * PLATE_LOAD * a**4 * (1 - PLATE_NU**2) / (PLATE_E * PLATE_H**3)


def plate(n: int = 16, a: float = 1.0) -> dict:
    """Simply supported square plate, bending only, unit areal mass under gravity."""
    return {
        "name": "plate",
        "sheets": [{
            "resolution": [n, n], "size": [a, a], "membrane": False,
            "material": {"density": 1.0 / PLATE_H, "thickness": PLATE_H, "E_stretch": PLATE_E,
                         "poisson": PLATE_NU},
        }],
        "pins": [{"sheet": 0, "select": "boundary"}],
        "gravity": [0.0, 0.0, -PLATE_LOAD],
        "solver": {"dt": 1.0, "tol": 1e-6, "neumann": False},
        "frames": 6,
        "quasi_static": True,
    }


CLOTH = {"density": 200.0, "thickness": 1e-3, "E_stretch": 1e5, "E_bend": 1e5}


def hanging(n: int = 32, quadrature: str = "reduced", contact: bool = True, amplitude: float = 2e-3) -> dict:
    """Upright sheet; top corners pinned and moving toward each other for 0.1 s.

    A small out-of-plane bulge picks the buckling side so the sag is
    reproducible across quadrature rules.
    """
    return {
        "name": "hanging",
        "sheets": [{
            "resolution": [n, n], "origin": [0.0, 0.0, 1.0], "axis_u": [1.0, 0.0, 0.0],
            "axis_v": [0.0, 0.0, -1.0], "material": dict(CLOTH), "quadrature": quadrature,
            "perturbation": {"amplitude": amplitude, "modes": [1, 1], "direction": [0.0, 1.0, 0.0]},
        }],
        "pins": [
            {"sheet": 0, "select": [[0, 0]], "script": [{"t0": 0.0, "t1": 0.1, "velocity": [0.5, 0.0, 0.0]}]},
            {"sheet": 0, "select": [[-1, 0]], "script": [{"t0": 0.0, "t1": 0.1, "velocity": [-0.5, 0.0, 0.0]}]},
        ],
        "contact": {"dhat": 1e-3, "kappa": 1e2} if contact else None,
        "solver": {"dt": 1e-2},
        "frames": 100,
    }


def drape(n: int = 24) -> dict:
    """Horizontal sheet hanging from two adjacent edges."""
    return {
        "name": "drape",
        "sheets": [{"resolution": [n, n], "material": dict(CLOTH)}],
        "pins": [{"sheet": 0, "select": "edge:u0"}, {"sheet": 0, "select": "edge:v0"}],
        "contact": {"dhat": 1e-3, "kappa": 1e2},
        "solver": {"dt": 1e-2},
        "frames": 100,
    }


def shear(n: int = 24) -> dict:
    """Flat sheet, opposite edges pulled in opposite shear directions for 0.1 s."""
    mat = dict(CLOTH, E_shear=CLOTH["E_stretch"])
    return {
        "name": "shear",
        "sheets": [{"resolution": [n, n], "material": mat}],
        "pins": [
            {"sheet": 0, "select": "edge:u0", "script": [{"t0": 0.0, "t1": 0.1, "velocity": [0.0, 0.5, 0.0]}]},
            {"sheet": 0, "select": "edge:u1", "script": [{"t0": 0.0, "t1": 0.1, "velocity": [0.0, -0.5, 0.0]}]},
        ],
        "contact": {"dhat": 1e-3, "kappa": 1e2},
        "solver": {"dt": 1e-2},
        "frames": 60,
    }


def momentum(n: int = 12, gap: float = 0.5) -> dict:
    """Two sheets on orthogonal planes approaching each other along x at 0.5 m/s."""
    mat = {"density": 200.0, "thickness": 1e-3, "E_stretch": 1e4, "E_bend": 1e5}
    return {
        "name": "momentum",
        "sheets": [
            {"resolution": [n, n], "origin": [0.0, 0.0, 0.0], "axis_u": [0.0, 1.0, 0.0],
             "axis_v": [0.0, 0.0, 1.0], "velocity": [0.5, 0.0, 0.0], "material": dict(mat)},
            {"resolution": [n, n], "origin": [gap, 0.5, 0.1], "axis_u": [1.0, 0.0, 0.0],
             "axis_v": [0.0, 0.0, 1.0], "velocity": [-0.5, 0.0, 0.0], "material": dict(mat)},
        ],
        "contact": {"dhat": 2e-3, "kappa": 1e1},
        "gravity": [0.0, 0.0, 0.0],
        "solver": {"dt": 1e-2, "tol": 1e-4},
        "frames": 100,
    }


def wrinkling(n: int = 80, stretch: float = 1.1, amplitude: float = 0.02) -> dict:
    """Sheet of aspect ratio 2.5, short edges clamped and pulled apart by ``stretch``."""
    return {
        "name": "wrinkling",
        "sheets": [{
            "resolution": [n, n], "size": [1.0, 2.5], "stretch": [1.0, stretch],
            "perturbation": {"amplitude": amplitude, "modes": [1, 1], "direction": [0.0, 0.0, 1.0]},
            "material": {"density": 1000.0, "thickness": 1e-3, "E_stretch": 1e6, "poisson": 0.5},
            "mesh_resolution": [n, n],
        }],
        "pins": [{"sheet": 0, "select": "edge:v0:2"}, {"sheet": 0, "select": "edge:v1:2"}],
        "gravity": [0.0, 0.0, 0.0],
        "solver": {"dt": 1.0, "tol": 1e-5, "max_newton": 100},
        "frames": 30,
        "quasi_static": True,
    }


def cloth_on_sphere(n: int = 24) -> dict:
    """Square sheet falling onto a sphere resting on the ground."""
    return {
        "name": "cloth_on_sphere",
        "sheets": [{"resolution": [n, n], "origin": [-0.5, -0.5, 0.4], "material": dict(CLOTH)}],
        "colliders": [
            {"type": "sphere", "center": [0.0, 0.0, 0.15], "radius": 0.15},
            {"type": "plane", "point": [0.0, 0.0, -0.001], "normal": [0.0, 0.0, 1.0]},
        ],
        "contact": {"dhat": 1e-3, "kappa": 1e2, "self_contact": True},
        "solver": {"dt": 1e-2},
        "frames": 100,
    }


BUILTIN = {
    "plate": plate,
    "hanging": hanging,
    "drape": drape,
    "shear": shear,
    "momentum": momentum,
    "wrinkling": wrinkling,
    "cloth_on_sphere": cloth_on_sphere,
}


def builtin_scene(name: str, **kw) -> SceneConfig:
    try:
        fn = BUILTIN[name]
    except KeyError:
        raise ConfigError(f"unknown built-in scene {name!r}; choose from {sorted(BUILTIN)}") from None
    return SceneConfig.from_dict(fn(**kw))
