"""Core spherical-view geometry.

Coordinate conventions (right-handed):
    x forward, y left, z up.
    theta: azimuth about z measured from +x, in (-pi, pi].
    phi:   elevation above the xy-plane, in [-pi/2, pi/2].

All panoramas live on the unit sphere (the radius cancels out of every
direction mapping, so it is fixed at 1). Euler order for camera
orientation is yaw (about z), then pitch (about y, positive looks down),
then roll (about the forward axis).

Every function here is pure; the renderer calls the *_grid variants,
which are the same math vectorized over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Direction3:
    """Unit vector in the world/camera frame."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def dot(self, other: "Direction3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


def normalize(x: float, y: float, z: float) -> Direction3:
    n = math.sqrt(x * x + y * y + z * z)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return Direction3(x / n, y / n, z / n)


@dataclass(frozen=True)
class SphereAngles:
    """Azimuth/elevation pair; theta in (-pi, pi], phi in [-pi/2, pi/2]."""

    theta: float
    phi: float


@dataclass(frozen=True)
class TexCoord:
    """Continuous pixel coordinates into an equirectangular panorama.

    u_t wraps modulo the panorama width; v_t clamps to [0, H-1].
    """

    u_t: float
    v_t: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera model: resolution plus horizontal/vertical FOV (radians).

    vfov defaults to the value matching square pixels:
    2*atan(tan(hfov/2) * height/width).
    """

    width: int
    height: int
    hfov: float
    vfov: float = 0.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"resolution must be >= 1, got {self.width}x{self.height}")
        if not 0.0 < self.hfov < math.pi:
            raise ValueError(f"hfov must be in (0, pi), got {self.hfov}")
        if self.vfov == 0.0:
            object.__setattr__(
                self,
                "vfov",
                2.0 * math.atan(math.tan(self.hfov / 2.0) * self.height / self.width),
            )
        if not 0.0 < self.vfov < math.pi:
            raise ValueError(f"vfov must be in (0, pi), got {self.vfov}")

    @property
    def px_per_deg(self) -> float:
        """Angular resolution of the camera across its horizontal FOV."""
        return self.width / math.degrees(self.hfov)


@dataclass(frozen=True)
class Orientation:
    """Euler angles in radians, applied yaw -> pitch -> roll.

    Positive yaw turns left (counterclockwise seen from above), positive
    pitch tilts the view down, roll spins about the forward axis.
    """

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def matrix(self) -> np.ndarray:
        return _rotation_matrix(self.yaw, self.pitch, self.roll)


@lru_cache(maxsize=256)
def _rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    m = rz @ ry @ rx
    m.setflags(write=False)
    return m


def pixel_ray(u: float, v: float, intr: CameraIntrinsics) -> Direction3:
    """Ray through the center of pixel (u, v), in the camera frame.

    Pixel centers sit at +0.5 so the FOV covers the image symmetrically.
    """
    a = (2.0 * (u + 0.5) / intr.width - 1.0) * math.tan(intr.hfov / 2.0)
    b = (1.0 - 2.0 * (v + 0.5) / intr.height) * math.tan(intr.vfov / 2.0)
    # forward + a*right + b*up with right = (0,-1,0), up = (0,0,1)
    return normalize(1.0, -a, b)


def dir_to_angles(d: Direction3) -> SphereAngles:
    """Invert the sphere parameterization; atan2(0,0) pins the poles to theta=0."""
    theta = math.atan2(d.y, d.x)
    phi = math.asin(max(-1.0, min(1.0, d.z)))
    return SphereAngles(theta, phi)


def angles_to_dir(a: SphereAngles) -> Direction3:
    cp = math.cos(a.phi)
    return Direction3(cp * math.cos(a.theta), cp * math.sin(a.theta), math.sin(a.phi))


def angles_to_tex(
    a: SphereAngles, pano_w: int, pano_h: int, yaw_offset: float = 0.0
) -> TexCoord:
    """Map sphere angles onto equirectangular pixel coordinates.

    theta = -pi and theta = +pi land on u_t = 0 (the wrap seam); the top
    row of the image is phi = +pi/2.
    """
    u_t = ((a.theta - yaw_offset + math.pi) / (2.0 * math.pi)) % 1.0 * pano_w
    if u_t >= pano_w:  # % 1.0 can round up to 1.0 for tiny negatives
        u_t -= pano_w
    v_t = (math.pi / 2.0 - a.phi) / math.pi * (pano_h - 1)
    return TexCoord(u_t, min(max(v_t, 0.0), float(pano_h - 1)))


def rotate(d: Direction3, o: Orientation) -> Direction3:
    r = o.matrix()
    v = r @ d.as_array()
    return Direction3(float(v[0]), float(v[1]), float(v[2]))


def ray_sphere_exit(origin: tuple[float, float, float], d: Direction3) -> tuple[float, Direction3]:
    """Distance and exit point where the ray origin + t*d leaves the unit sphere.

    The origin must be strictly inside the sphere, which guarantees a
    single positive root.
    """
    ox, oy, oz = origin
    o2 = ox * ox + oy * oy + oz * oz
    if o2 >= 1.0:
        raise ValueError(f"ray origin must be inside the unit sphere, |origin|={math.sqrt(o2):.6f}")
    od = ox * d.x + oy * d.y + oz * d.z
    t = -od + math.sqrt(od * od - o2 + 1.0)
    q = Direction3(ox + t * d.x, oy + t * d.y, oz + t * d.z)
    return t, q


def bilinear_sample(pano, t: TexCoord) -> tuple[int, int, int]:
    """Bilinear color lookup; columns wrap around the seam, rows clamp.

    `pano` is anything with integer width/height and a (H, W, 3) uint8
    `pixels` array (see dataset.EquirectPanorama).
    """
    w, h = pano.width, pano.height
    px = pano.pixels
    u = t.u_t % w
    v = min(max(t.v_t, 0.0), float(h - 1))
    u0 = int(math.floor(u))
    v0 = int(math.floor(v))
    u1 = (u0 + 1) % w
    v1 = min(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    out = []
    for c in range(3):
        top = (1.0 - fu) * px[v0, u0, c] + fu * px[v0, u1, c]
        bot = (1.0 - fu) * px[v1, u0, c] + fu * px[v1, u1, c]
        out.append(int(math.floor((1.0 - fv) * top + fv * bot + 0.5)))
    return out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# Vectorized grid variants used by the renderer: the same math as the
# scalar functions, applied to (N, 3) / (N,) arrays. This path runs in
# float32 for speed; with 8-bit output and ~0.1 px of bilinear footprint
# the precision loss is orders of magnitude below one color step.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def pixel_ray_grid(intr: CameraIntrinsics) -> np.ndarray:
    """(3, H*W) float32 unit rays through every pixel center, row-major.

    Component-per-row layout keeps each coordinate contiguous, which is
    what the trigonometry kernels want.
    """
    ta = math.tan(intr.hfov / 2.0)
    tb = math.tan(intr.vfov / 2.0)
    u = (2.0 * (np.arange(intr.width, dtype=np.float64) + 0.5) / intr.width - 1.0) * ta
    v = (1.0 - 2.0 * (np.arange(intr.height, dtype=np.float64) + 0.5) / intr.height) * tb
    a, b = np.meshgrid(u, v)
    rays = np.stack([np.ones_like(a), -a, b], axis=0).reshape(3, -1)
    rays /= np.linalg.norm(rays, axis=0, keepdims=True)
    rays = np.ascontiguousarray(rays.astype(np.float32))
    rays.setflags(write=False)
    return rays


def ray_sphere_exit_grid(
    origin: np.ndarray, dx: np.ndarray, dy: np.ndarray, dz: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit-sphere exit points for a common interior origin and unit rays."""
    o2 = float(origin @ origin)
    if o2 >= 1.0:
        raise ValueError("ray origin must be inside the unit sphere")
    f = dx.dtype.type
    ox, oy, oz = (f(c) for c in origin)
    od = ox * dx
    od += oy * dy
    od += oz * dz
    t = od * od
    t += f(1.0 - o2)
    np.sqrt(t, out=t)
    t -= od
    return ox + t * dx, oy + t * dy, oz + t * dz


def dirs_to_tex_grid(
    dx: np.ndarray,
    dy: np.ndarray,
    dz: np.ndarray,
    pano_w: int,
    pano_h: int,
    yaw_offset: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Panorama (u, v) coordinates for direction components."""
    theta = np.arctan2(dy, dx)
    f = theta.dtype.type
    u = theta
    u -= f(yaw_offset - math.pi)
    u /= f(2.0 * math.pi)
    u %= 1.0
    u *= pano_w
    u[u >= pano_w] -= pano_w
    phi = np.arcsin(np.clip(dz, -1.0, 1.0))
    v = phi
    v -= f(math.pi / 2.0)
    v *= f(-(pano_h - 1) / math.pi)
    np.clip(v, 0.0, pano_h - 1, out=v)
    return u, v


def bilinear_sample_grid(pixels: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized bilinear lookup; returns (N, 3) uint8 (round half up)."""
    h, w = pixels.shape[:2]
    u0f = np.floor(u)
    v0f = np.floor(v)
    fu = (u - u0f).astype(np.float32)[:, None]
    fv = (v - v0f).astype(np.float32)[:, None]
    u0 = u0f.astype(np.int32)
    v0 = v0f.astype(np.int32)
    u0 %= w
    u1 = u0 + 1
    u1[u1 == w] = 0  # wrap the seam column
    np.clip(v0, 0, h - 1, out=v0)
    v1 = np.minimum(v0 + 1, h - 1)
    # flat row gathers via take: much faster than 2-d fancy indexing
    flat = pixels.reshape(-1, pixels.shape[2])
    row0 = v0 * np.int32(w)
    row1 = v1 * np.int32(w)
    p00 = flat.take(row0 + u0, axis=0).astype(np.float32)
    p01 = flat.take(row0 + u1, axis=0).astype(np.float32)
    p10 = flat.take(row1 + u0, axis=0).astype(np.float32)
    p11 = flat.take(row1 + u1, axis=0).astype(np.float32)
    gu = np.float32(1.0) - fu
    gv = np.float32(1.0) - fv
    out = (gu * gv) * p00
    out += (fu * gv) * p01
    out += (gu * fv) * p10
    out += (fu * fv) * p11
    out += np.float32(0.5)
    np.floor(out, out=out)
    return out.astype(np.uint8)
