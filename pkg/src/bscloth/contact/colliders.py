"""Analytic colliders: planes and spheres."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray
    kind: str = field(default="plane", init=False)

    def __post_init__(self):
        self.point = np.asarray(self.point, float)
        n = np.asarray(self.normal, float)
        self.normal = n / np.linalg.norm(n)

    def distance(self, x):
        return (np.asarray(x) - self.point) @ self.normal

    def distance_derivs(self, x):
        x = np.asarray(x, float)
        d = self.distance(x)
        g = np.broadcast_to(self.normal, x.shape).copy()
        return d, g, np.zeros(x.shape[:-1] + (3, 3))

    def translate(self, dx):
        self.point = self.point + dx

    def max_step(self, x, p, floor):
        """Largest ``t`` in (0, 1] keeping each vertex at least ``floor`` above the plane."""
        d0 = self.distance(x)
        vn = p @ self.normal
        t = np.ones_like(d0)
        m = vn < 0
        t[m] = np.minimum(1.0, (d0[m] - floor[m]) / -vn[m])
        return t


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kind: str = field(default="sphere", init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.angular_velocity = np.asarray(self.angular_velocity, float)

    def distance(self, x):
        return np.linalg.norm(np.asarray(x) - self.center, axis=-1) - self.radius

    def distance_derivs(self, x):
        r = np.asarray(x, float) - self.center
        n = np.linalg.norm(r, axis=-1)
        u = r / n[..., None]
        H = (np.eye(3) - u[..., :, None] * u[..., None, :]) / n[..., None, None]
        return n - self.radius, u, H

    def translate(self, dx):
        self.center = self.center + dx

    def max_step(self, x, p, floor):
        # smallest root of |x + t p - c| = R + floor
        r = x - self.center
        a = np.einsum("ki,ki->k", p, p)
        b = 2 * np.einsum("ki,ki->k", p, r)
        c = np.einsum("ki,ki->k", r, r) - (self.radius + floor) ** 2
        disc = b * b - 4 * a * c
        t = np.ones(x.shape[0])
        m = (a > 0) & (b < 0) & (disc > 0)
        t[m] = np.minimum(1.0, (-b[m] - np.sqrt(disc[m])) / (2 * a[m]))
        return t


def collider_from_dict(spec: dict):
    kind = spec.get("type")
    if kind == "plane":
        return Plane(spec["point"], spec["normal"])
    if kind == "sphere":
        return Sphere(spec["center"], float(spec["radius"]), spec.get("angular_velocity", [0, 0, 0]))
    raise ValueError(f"unknown collider type {kind!r}")
