"""OBJ export, versioned state snapshots and the per-frame metrics CSV."""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

MAGIC = b"BSCLOTH1"
SNAPSHOT_VERSION = 1

METRICS_COLUMNS = ["frame", "iters", "t_assembly_ms", "t_factor_ms", "t_solve_ms", "t_ccd_ms",
                   "t_ls_ms", "pf_triggers", "residual"]


class SnapshotError(ValueError):
    pass


def write_obj(path, parts) -> None:
    """Write ``[(name, vertices, triangles), ...]`` as one OBJ with 1-based faces."""
    lines = []
    base = 1
    for name, X, tris in parts:
        lines.append(f"o {name}")
        lines.extend(f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in np.asarray(X, float))
        lines.extend(f"f {a + base} {b + base} {c + base}" for a, b, c in np.asarray(tris))
        base += len(X)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    return np.array(verts, float).reshape(-1, 3), np.array(faces, np.int64).reshape(-1, 3)


def world_obj_parts(world) -> list:
    return [(f"sheet{k}", world.mesh_positions(k), world.meshes[k].triangles)
            for k in range(len(world.sheets))]


def save_snapshot(path, world) -> None:
    """Binary layout: magic, version (u32), header length (u64), JSON header, raw float64 arrays."""
    arrays = {"C": world.C, "V": world.V, "colliders": world.collider_state()}
    header = {
        "config": world.config.to_dict(),
        "time": world.time,
        "frame": world.frame,
        "arrays": {k: list(np.shape(a)) for k, a in arrays.items()},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", SNAPSHOT_VERSION, len(hb)))
        fh.write(hb)
        for k in header["arrays"]:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise SnapshotError(f"{path}: not a snapshot (bad magic)")
    if len(data) < 8 + struct.calcsize("<IQ"):
        raise SnapshotError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {version}")
    pos = 8 + struct.calcsize("<IQ")
    try:
        header = json.loads(data[pos:pos + hlen])
    except ValueError as e:
        raise SnapshotError(f"{path}: corrupt header") from e
    pos += hlen
    arrays = {}
    for k, shape in header["arrays"].items():
        n = int(np.prod(shape)) * 8
        if pos + n > len(data):
            raise SnapshotError(f"{path}: truncated array {k!r}")
        arrays[k] = np.frombuffer(data[pos:pos + n], dtype="<f8").reshape(shape).copy()
        pos += n
    if pos != len(data):
        raise SnapshotError(f"{path}: trailing or missing bytes")
    return header, arrays


def load_snapshot(path, workers: int = 1, deterministic: bool = False):
    """Rebuild the world stored in a snapshot."""
    from .runtime import World
    from .scene import SceneConfig

    header, arrays = read_snapshot(path)
    world = World(SceneConfig.from_dict(header["config"]), workers=workers, deterministic=deterministic)
    if arrays["C"].shape != world.C.shape:
        raise SnapshotError(f"{path}: state shape does not match its scene")
    world.C = arrays["C"]
    world.V = arrays["V"]
    world.set_collider_state(arrays["colliders"])
    world.time = float(header["time"])
    world.frame = int(header["frame"])
    return world


def metrics_row(frame: int, report, deterministic: bool = False) -> list:
    """One CSV row; timing columns are written as 0 in deterministic mode."""
    ms = lambda name: 0.0 if deterministic else 1e3 * report.total(name)  # noqa: E731
    return [frame, report.iterations, f"{ms('assembly'):.3f}", f"{ms('factor'):.3f}",
            f"{ms('solve'):.3f}", f"{ms('ccd'):.3f}", f"{ms('line_search'):.3f}",
            report.pf_triggers, f"{report.residual:.9e}"]


class MetricsWriter:
    def __init__(self, path, deterministic: bool = False):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(METRICS_COLUMNS)
        self.deterministic = deterministic

    def write(self, frame: int, report) -> None:
        self.writer.writerow(metrics_row(frame, report, self.deterministic))
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
