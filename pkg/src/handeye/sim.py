"""Seeded 2.5D bin-grasping simulator.

A parallel-jaw gripper moves kinematically above a flat bin of convex objects.
An overhead orthographic camera with per-robot miscalibration renders
grayscale images; a separate heightmap sensor feeds the geometric baseline.
Grasp outcomes follow a closed-form geometric rule.
"""

import copy
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo

TABLE_INTENSITY = 0.25
WALL_INTENSITY = 0.08
GRIPPER_INTENSITY = 1.0

SHAPES = ("disc", "box", "stick", "polygon", "flat")


class PlacementError(RuntimeError):
    """Objects could not be placed without overlap."""


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    theta: float

    def as_array(self):
        return np.array([self.x, self.y, self.z, self.theta])


@dataclass(frozen=True)
class MotorCommand:
    """Task-space displacement with the yaw change encoded as (sin, cos)."""

    dx: float
    dy: float
    dz: float
    sin_dtheta: float = 0.0
    cos_dtheta: float = 1.0

    def __post_init__(self):
        norm = self.sin_dtheta ** 2 + self.cos_dtheta ** 2
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"sin^2 + cos^2 = {norm!r}, expected 1")

    @classmethod
    def null(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_angle(cls, dx, dy, dz, dtheta):
        return cls(float(dx), float(dy), float(dz), math.sin(dtheta), math.cos(dtheta))

    @property
    def dtheta(self):
        return math.atan2(self.sin_dtheta, self.cos_dtheta)

    def as_array(self):
        return np.array([self.dx, self.dy, self.dz, self.sin_dtheta, self.cos_dtheta])

    def compose(self, other):
        """Translations add; rotations compose by angle addition."""
        s = self.sin_dtheta * other.cos_dtheta + self.cos_dtheta * other.sin_dtheta
        c = self.cos_dtheta * other.cos_dtheta - self.sin_dtheta * other.sin_dtheta
        n = math.hypot(s, c)
        return MotorCommand(self.dx + other.dx, self.dy + other.dy, self.dz + other.dz, s / n, c / n)


NULL_COMMAND = MotorCommand.null()


@dataclass(frozen=True)
class SimObject:
    id: int
    shape: str
    position: tuple
    orientation: float
    softness: float
    albedo: float
    height: float
    longest_axis: float
    radius: float = 0.0
    vertices: tuple = ()  # local frame, CCW, centroid at origin

    @property
    def is_disc(self):
        return self.shape == "disc"

    @property
    def center(self):
        return np.asarray(self.position, dtype=float)

    @property
    def bounding_radius(self):
        if self.is_disc:
            return self.radius
        return float(np.max(np.linalg.norm(np.asarray(self.vertices), axis=1)))

    def polygon(self):
        """World-frame polygon (discs have none)."""
        return np.asarray(self.vertices) @ geo.rot(self.orientation).T + self.center

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.is_disc:
            d = pts - self.center
            return d[..., 0] ** 2 + d[..., 1] ** 2 <= self.radius ** 2
        return geo.points_in_polygon(self.polygon(), pts)

    def signed_distance(self, p):
        if self.is_disc:
            return float(np.linalg.norm(np.asarray(p) - self.center)) - self.radius
        return geo.polygon_signed_distance(self.polygon(), p)

    def area(self):
        if self.is_disc:
            return math.pi * self.radius ** 2
        return geo.polygon_area(np.asarray(self.vertices))


@dataclass(frozen=True)
class RobotVariation:
    camera_offset: tuple = (0.0, 0.0)
    camera_rotation: float = 0.0
    camera_scale: float = 1.0
    finger_length_wear: float = 0.0
    finger_width_wear: float = 0.0
    actuation_noise_sigma: float = 0.0


@dataclass(frozen=True)
class GraspOutcome:
    grasped_object: int | None
    final_aperture: float

    @property
    def success(self):
        return self.grasped_object is not None


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 6
    shape_weights: tuple = (("disc", 0.25), ("box", 0.3), ("stick", 0.15), ("polygon", 0.2), ("flat", 0.1))
    min_len: float = 0.04
    max_len: float = 0.10
    soft_fraction: float = 0.3
    # "train" and "eval" draw softness/albedo from disjoint bands; "any" from both
    split: str = "train"
    albedo_range: tuple = (0.4, 0.9)
    bin_half: float = 0.18
    wall: float = 0.015
    table_height: float = 0.0
    image_size: int = 64
    supersample: int = 3  # point samples per pixel side when rendering
    channels: int = 1
    view_half: float = 0.2
    camera_visibility_height: float = 0.25
    home_z: float = 0.3
    max_aperture: float = 0.085
    finger_length: float = 0.02
    finger_width: float = 0.01
    min_width: float = 0.004
    pinch_compression: float = 0.7
    slip_gain: float = 0.05
    push_gain: float = 1.0
    clearance: float = 0.005
    max_placement_attempts: int = 200

    def __post_init__(self):
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if not 0 < self.min_len <= self.max_len:
            raise ValueError("need 0 < min_len <= max_len")
        if self.split not in ("train", "eval", "any"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")
        for name, w in self.shape_weights:
            if name not in SHAPES or w < 0:
                raise ValueError(f"bad shape weight {name}={w}")

    @property
    def pixels_per_meter(self):
        return self.image_size / (2.0 * self.view_half)

    @property
    def workspace(self):
        """(xmin, xmax, ymin, ymax) reachable by the gripper."""
        b = self.bin_half
        return (-b, b, -b, b)


@dataclass
class WorldState:
    objects: list
    gripper: Pose
    aperture: float
    config: SceneConfig
    variation: RobotVariation
    rng: np.random.Generator
    rng_seed: int
    held: SimObject | None = None
    next_id: int = 0

    @property
    def holding(self):
        return None if self.held is None else self.held.id

    def copy(self):
        return WorldState(list(self.objects), self.gripper, self.aperture, self.config, self.variation,
                          copy.deepcopy(self.rng), self.rng_seed, self.held, self.next_id)

    def finger_geometry(self):
        cfg, var = self.config, self.variation
        length = max(cfg.finger_length - var.finger_length_wear, 1e-3)
        width = cfg.finger_width + var.finger_width_wear
        return self.aperture, width, length

    def fingers(self, pose=None):
        """World-frame finger centers and footprints for a gripper pose."""
        pose = pose or self.gripper
        a, w, l = self.finger_geometry()
        u = np.array([math.cos(pose.theta), math.sin(pose.theta)])
        c = np.array([pose.x, pose.y])
        centers = [c + 0.5 * a * u, c - 0.5 * a * u]
        return centers, [geo.rectangle(p, pose.theta, 0.5 * w, 0.5 * l) for p in centers]


def _band(rng, lo, hi, split, nbands=10):
    """Draw from [lo, hi] restricted to even (train) or odd (eval) sub-bands."""
    if split == "any":
        return float(rng.uniform(lo, hi))
    k = int(rng.integers(0, nbands // 2)) * 2 + (0 if split == "train" else 1)
    width = (hi - lo) / nbands
    return float(rng.uniform(lo + k * width, lo + (k + 1) * width))


def _draw_softness(rng, cfg):
    soft = rng.random() < cfg.soft_fraction
    if cfg.split == "any":
        return float(rng.uniform(0.5, 0.95) if soft else rng.uniform(0.0, 0.3))
    if soft:
        return float(rng.uniform(0.55, 0.8) if cfg.split == "train" else rng.uniform(0.8, 0.95))
    return float(rng.uniform(0.0, 0.15) if cfg.split == "train" else rng.uniform(0.15, 0.3))


def _draw_shape(rng, cfg):
    names = [n for n, _ in cfg.shape_weights]
    w = np.array([w for _, w in cfg.shape_weights], dtype=float)
    shape = names[int(rng.choice(len(names), p=w / w.sum()))]
    lo, hi = cfg.min_len, cfg.max_len
    if shape == "disc":
        d = rng.uniform(lo, min(hi, 0.07))
        return shape, {"radius": d / 2}, d, rng.uniform(0.02, 0.05)
    # rectangles: draw the diagonal (the longest axis) first, then the short side
    if shape == "box":
        span = rng.uniform(lo, hi)
        width = rng.uniform(min(0.02, 0.5 * span), min(0.06, 0.7 * span))
        verts = geo.rectangle((0, 0), 0.0, math.sqrt(span ** 2 - width ** 2) / 2, width / 2)
        return shape, {"vertices": verts}, None, rng.uniform(0.015, 0.04)
    if shape == "stick":
        span = rng.uniform(min(max(lo, 0.07), hi), hi)
        width = rng.uniform(0.008, 0.012)
        verts = geo.rectangle((0, 0), 0.0, math.sqrt(span ** 2 - width ** 2) / 2, width / 2)
        return shape, {"vertices": verts}, None, rng.uniform(0.008, 0.015)
    if shape == "flat":
        span = rng.uniform(min(max(lo, 0.05), hi), min(hi, 0.09) if hi >= 0.05 else hi)
        width = rng.uniform(min(0.03, 0.5 * span), 0.7 * span)
        verts = geo.rectangle((0, 0), 0.0, math.sqrt(span ** 2 - width ** 2) / 2, width / 2)
        return shape, {"vertices": verts}, None, rng.uniform(0.003, 0.008)
    target = rng.uniform(lo, hi)
    k = int(rng.integers(5, 8))
    ang = np.sort(rng.uniform(0, 2 * math.pi, k))
    aspect = rng.uniform(0.5, 0.85)
    pts = np.stack([np.cos(ang), aspect * np.sin(ang)], axis=1)
    hull = geo.convex_hull(pts)
    if len(hull) < 3 or geo.polygon_area(hull) < 1e-6:
        hull = geo.rectangle((0, 0), 0.0, 1.0, aspect)
    span = max(np.linalg.norm(p - q) for p in hull for q in hull)
    return shape, {"vertices": hull * (target / span)}, None, rng.uniform(0.015, 0.04)


def draw_object(rng, cfg, obj_id):
    shape, geom, longest, height = _draw_shape(rng, cfg)
    softness = _draw_softness(rng, cfg)
    albedo = _band(rng, cfg.albedo_range[0], cfg.albedo_range[1], cfg.split)
    if "radius" in geom:
        return SimObject(obj_id, shape, (0.0, 0.0), 0.0, softness, albedo, float(height), float(longest),
                         radius=float(geom["radius"]))
    verts = geo.ensure_ccw(np.asarray(geom["vertices"], dtype=float))
    verts = verts - geo.polygon_centroid(verts)
    span = max(float(np.linalg.norm(p - q)) for p in verts for q in verts)
    return SimObject(obj_id, shape, (0.0, 0.0), 0.0, softness, albedo, float(height), span,
                     vertices=tuple(map(tuple, verts)))


def separation(a, b):
    """Positive iff the two objects are disjoint."""
    if a.is_disc and b.is_disc:
        return float(np.linalg.norm(a.center - b.center)) - a.radius - b.radius
    if a.is_disc:
        return b.signed_distance(a.center) - a.radius
    if b.is_disc:
        return a.signed_distance(b.center) - b.radius
    return geo.polygons_separation(a.polygon(), b.polygon())


def _inside_limit(cfg, obj):
    return max(cfg.bin_half - obj.bounding_radius, 0.0)


def place_object(obj, existing, cfg, rng, require_clear=True):
    lim = _inside_limit(cfg, obj)
    for _ in range(cfg.max_placement_attempts):
        pos = tuple(float(v) for v in rng.uniform(-lim, lim, 2))
        cand = replace(obj, position=pos, orientation=float(rng.uniform(-math.pi, math.pi)))
        if all(separation(cand, o) > cfg.clearance for o in existing):
            return cand
    if require_clear:
        raise PlacementError(f"could not place object {obj.id} after {cfg.max_placement_attempts} attempts")
    return cand


def home_pose(cfg):
    return Pose(0.0, 0.0, cfg.home_z, 0.0)


def spawn_scene(config, seed, variation=None):
    """Fresh world with `config.n_objects` non-overlapping objects and the gripper at home."""
    rng = np.random.default_rng(seed)
    objects = []
    for i in range(config.n_objects):
        objects.append(place_object(draw_object(rng, config, i), objects, config, rng))
    return WorldState(objects, home_pose(config), config.max_aperture, config,
                      variation or RobotVariation(), rng, int(seed), None, config.n_objects)


def add_objects(world, n):
    """Add `n` freshly drawn objects (used to restock a bin)."""
    w = world.copy()
    for _ in range(n):
        w.objects.append(place_object(draw_object(w.rng, w.config, w.next_id), w.objects, w.config, w.rng))
        w.next_id += 1
    return w


def clamp_pose(cfg, x, y, z, theta):
    xmin, xmax, ymin, ymax = cfg.workspace
    return Pose(min(max(x, xmin), xmax), min(max(y, ymin), ymax),
                min(max(z, cfg.table_height), cfg.home_z), geo.wrap_angle(theta))


def _recenter(cfg, obj):
    lim = _inside_limit(cfg, obj)
    x, y = obj.position
    cx, cy = min(max(x, -lim), lim), min(max(y, -lim), lim)
    return obj if (cx, cy) == (x, y) else replace(obj, position=(cx, cy))


def _path_interval_below(z0, z1, h):
    """Sub-interval of s in [0, 1] where z0 + s (z1 - z0) < h, or None."""
    if z0 < h and z1 < h:
        return 0.0, 1.0
    if z0 >= h and z1 >= h:
        return None
    s = (h - z0) / (z1 - z0)
    return (0.0, s) if z0 < h else (s, 1.0)


def push_depth(obj, a, b, finger_radius):
    """Deepest finger penetration into `obj` along the segment a -> b."""
    ab = b - a
    if obj.is_disc:
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else min(1.0, max(0.0, float((obj.center - a) @ ab) / denom))
        sd = float(np.linalg.norm(a + t * ab - obj.center)) - obj.radius
    else:
        poly = obj.polygon()
        sd = geo.min_along_segment(lambda s: geo.polygon_signed_distances(poly, a + s[:, None] * ab))
    return finger_radius - sd


def _push_objects(world, start, end):
    cfg = world.config
    motion = np.array([end.x - start.x, end.y - start.y])
    dist = float(np.linalg.norm(motion))
    if dist < 1e-12 or not world.objects:
        return world.objects
    direction = motion / dist
    _, fw, fl = world.finger_geometry()
    r_f = 0.5 * max(fw, fl)
    f0, _ = world.fingers(start)
    f1, _ = world.fingers(end)
    out = []
    for obj in world.objects:
        iv = _path_interval_below(start.z, end.z, obj.height)
        depth = 0.0
        if iv is not None:
            for a, b in zip(f0, f1):
                pa, pb = a + iv[0] * (b - a), a + iv[1] * (b - a)
                # cheap reject on the bounding circle
                seg = pb - pa
                denom = float(seg @ seg)
                t = 0.0 if denom == 0 else min(1.0, max(0.0, float((obj.center - pa) @ seg) / denom))
                if np.linalg.norm(pa + t * seg - obj.center) > obj.bounding_radius + r_f:
                    continue
                depth = max(depth, push_depth(obj, pa, pb, r_f))
        if depth > 0.0:
            pos = obj.center + cfg.push_gain * depth * direction
            obj = _recenter(cfg, replace(obj, position=(float(pos[0]), float(pos[1]))))
        out.append(obj)
    return out


def step(world, cmd):
    """Apply a motor command with actuation noise, clamping, and pushing."""
    w = world.copy()
    sigma = w.variation.actuation_noise_sigma
    noise = w.rng.normal(0.0, 1.0, 2) * sigma
    g = w.gripper
    new = clamp_pose(w.config, g.x + cmd.dx + noise[0], g.y + cmd.dy + noise[1], g.z + cmd.dz,
                     g.theta + cmd.dtheta)
    if w.held is None:
        w.objects = _push_objects(w, g, new)
    w.gripper = new
    return w


def set_gripper(world, pose):
    """Teleport the gripper (no contact); pose is clamped to the workspace."""
    w = world.copy()
    w.gripper = clamp_pose(w.config, pose.x, pose.y, pose.z, pose.theta)
    return w


def raise_out_of_view(world):
    g = world.gripper
    return set_gripper(world, Pose(g.x, g.y, world.config.home_z, g.theta))


def descend_to_table(world):
    """Vertical move onto the table surface (the arm stops on contact)."""
    g = world.gripper
    w = step(world, MotorCommand(0.0, 0.0, world.config.table_height - g.z))
    w.gripper = replace(w.gripper, z=world.config.table_height)
    return w


# --- camera -------------------------------------------------------------------------------------

def _pixel_offsets(cfg, sub=1):
    n = cfg.image_size * sub
    ppm = cfg.pixels_per_meter * sub
    c = (np.arange(n) + 0.5 - n / 2) / ppm
    cols, rows = np.meshgrid(c, -c)
    return np.stack([cols, rows], axis=-1)


def pixel_points(cfg, variation, sub=1):
    """Robot-frame (x, y) of each pixel center seen through the robot's camera.

    With ``sub > 1`` the grid is the centers of a sub x sub split of every
    pixel, shape (H * sub, W * sub, 2).
    """
    q = _pixel_offsets(cfg, sub) / variation.camera_scale
    return q @ geo.rot(-variation.camera_rotation).T + np.asarray(variation.camera_offset)


def project(cfg, variation, xy):
    """Robot-frame point -> (row, col) continuous pixel coordinates."""
    q = geo.rot(variation.camera_rotation) @ (np.asarray(xy, dtype=float) - np.asarray(variation.camera_offset))
    q = q * variation.camera_scale * cfg.pixels_per_meter
    n = cfg.image_size
    return n / 2 - q[1] - 0.5, q[0] + n / 2 - 0.5


def unproject(cfg, variation, row, col):
    n = cfg.image_size
    q = np.array([col + 0.5 - n / 2, n / 2 - (row + 0.5)]) / (cfg.pixels_per_meter * variation.camera_scale)
    return geo.rot(-variation.camera_rotation) @ q + np.asarray(variation.camera_offset)


def _gripper_visible(world):
    return world.gripper.z < world.config.camera_visibility_height


@functools.lru_cache(maxsize=64)
def _sample_grid(cfg, variation):
    """Cached sample points and the empty-bin image (table and walls) for one camera."""
    pts = pixel_points(cfg, variation, cfg.supersample)
    img = np.full(pts.shape[:2], TABLE_INTENSITY)
    ax, ay = np.abs(pts[..., 0]), np.abs(pts[..., 1])
    outer = (ax <= cfg.bin_half + cfg.wall) & (ay <= cfg.bin_half + cfg.wall)
    inner = (ax <= cfg.bin_half) & (ay <= cfg.bin_half)
    img[outer & ~inner] = WALL_INTENSITY
    pts.setflags(write=False)
    img.setflags(write=False)
    return pts, img


def _window(cfg, variation, sub, center, radius):
    """Slice of the sample grid that covers a disc of `radius` around `center` (robot frame)."""
    row, col = project(cfg, variation, center)
    r = radius * cfg.pixels_per_meter * variation.camera_scale * sub + 2
    n = cfg.image_size * sub
    rc, cc = (row + 0.5) * sub - 0.5, (col + 0.5) * sub - 0.5
    rows = slice(int(np.clip(np.floor(rc - r), 0, n)), int(np.clip(np.ceil(rc + r) + 1, 0, n)))
    cols = slice(int(np.clip(np.floor(cc - r), 0, n)), int(np.clip(np.ceil(cc + r) + 1, 0, n)))
    return rows, cols


def render(world):
    """Top-down grayscale image (H, W, C) in [0, 1] through the robot's camera.

    Each pixel averages a supersample x supersample grid of point samples, so
    objects narrower than a pixel still change every pixel they cross.
    """
    cfg = world.config
    sub = cfg.supersample
    pts, background = _sample_grid(cfg, world.variation)
    img = background.copy()
    for obj in world.objects:
        win = _window(cfg, world.variation, sub, obj.center, obj.bounding_radius)
        img[win][obj.contains(pts[win])] = obj.albedo
    if _gripper_visible(world):
        _, feet = world.fingers()
        for f in feet:
            f = np.asarray(f)
            c = f.mean(axis=0)
            win = _window(cfg, world.variation, sub, c, float(np.max(np.linalg.norm(f - c, axis=1))))
            img[win][geo.points_in_polygon(f, pts[win])] = GRIPPER_INTENSITY
    if sub > 1:
        n = cfg.image_size
        img = img.reshape(n, sub, n, sub).mean(axis=(1, 3))
    return np.repeat(img[..., None], cfg.channels, axis=2)


def render_heightmap(world):
    """Per-pixel object height above the table, on the camera's pixel grid."""
    pts = pixel_points(world.config, world.variation)
    hm = np.zeros(pts.shape[:2])
    for obj in world.objects:
        m = obj.contains(pts)
        hm[m] = np.maximum(hm[m], obj.height)
    return hm[..., None]


# --- grasping -----------------------------------------------------------------------------------

def _closing_interval(obj, pose, half_len):
    """Range of the closing-axis coordinate over obj ∩ finger band, or None."""
    u = np.array([math.cos(pose.theta), math.sin(pose.theta)])
    n = np.array([-u[1], u[0]])
    c = np.array([pose.x, pose.y])
    if obj.is_disc:
        d = obj.center - c
        rc, sc = float(d @ u), float(d @ n)
        gap = max(abs(sc) - half_len, 0.0)
        if gap >= obj.radius:
            return None
        h = math.sqrt(obj.radius ** 2 - gap ** 2)
        return rc - h, rc + h
    local = (obj.polygon() - c) @ np.stack([u, n], axis=1)
    clipped = geo.clip_to_slab(local, np.array([0.0, 1.0]), -half_len, half_len)
    if len(clipped) == 0:
        return None
    return float(clipped[:, 0].min()), float(clipped[:, 0].max())


def close_gripper(world):
    """Close the fingers at the current pose; returns (world, GraspOutcome)."""
    cfg = world.config
    g = world.gripper
    if g.z > cfg.table_height + 1e-9:
        raise ValueError(f"gripper must be at table height to close (z={g.z})")
    a, fw, fl = world.finger_geometry()
    inner, outer = 0.5 * a - 0.5 * fw, 0.5 * a + 0.5 * fw
    _, feet = world.fingers()
    blocked = False
    candidates = []  # (object, width)
    for obj in world.objects:
        iv = _closing_interval(obj, g, 0.5 * fl)
        if iv is None or iv[1] <= -outer or iv[0] >= outer:
            continue
        r0, r1 = iv
        if r0 > -inner and r1 < inner:
            candidates.append((obj, r1 - r0))
            continue
        # touches a finger footprint; soft objects may be pinched
        touch_pos, touch_neg = r1 > inner, r0 < -inner
        if obj.softness >= 0.5 and touch_pos != touch_neg:
            foot = feet[0] if touch_pos else feet[1]
            if bool(np.all(obj.contains(foot))):
                width = 0.5 * a - r0 if touch_pos else r1 + 0.5 * a
                candidates.append((obj, width))
                continue
        blocked = True
    w = world.copy()
    w.aperture = cfg.max_aperture
    if blocked or len(candidates) != 1:
        return w, GraspOutcome(None, 0.0)
    obj, width = candidates[0]
    if width < cfg.min_width:
        return w, GraspOutcome(None, 0.0)
    if cfg.slip_gain > 0 and w.rng.random() < cfg.slip_gain * (width / a):
        return w, GraspOutcome(None, 0.0)
    final = min(max(width * (1.0 - obj.softness * cfg.pinch_compression), 0.0), cfg.max_aperture)
    w.objects = [o for o in w.objects if o.id != obj.id]
    w.held = obj
    return w, GraspOutcome(obj.id, float(final))


def release_over_bin(world):
    """Lift out of view and drop whatever is held at a fresh random pose in the bin."""
    w = raise_out_of_view(world)
    if w.held is not None:
        obj = place_object(w.held, w.objects, w.config, w.rng, require_clear=False)
        w.objects = w.objects + [obj]
        w.held = None
    return w


def discard_held(world):
    """Lift out of view and take the held object out of the bin entirely."""
    w = raise_out_of_view(world)
    w.held = None
    return w


def changed_pixels(a, b, eps=0.05):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(np.abs(a - b).max(axis=-1) > eps))


def detect_success(world_before_drop, world_after_drop, outcome, aperture_threshold=0.01,
                   pixel_diff_threshold=10, eps=0.05):
    """Self-supervised label: gripper aperture test OR drop test by image subtraction."""
    if outcome.final_aperture > aperture_threshold:
        return 1
    diff = changed_pixels(render(world_before_drop), render(world_after_drop), eps)
    return int(diff > pixel_diff_threshold)


@dataclass(frozen=True)
class FleetConfig:
    n_robots: int = 4
    camera_offset_max: float = 0.015
    camera_rotation_max: float = 0.08
    camera_scale_range: tuple = (0.93, 1.07)
    finger_length_wear_max: float = 0.004
    finger_width_wear_max: float = 0.003
    # 2% of the default 0.36 m workspace width
    actuation_noise_sigma: float = 0.0072

    def __post_init__(self):
        if self.n_robots < 1:
            raise ValueError("n_robots must be >= 1")


def draw_variation(rng, fleet):
    return RobotVariation(
        camera_offset=tuple(float(v) for v in rng.uniform(-fleet.camera_offset_max, fleet.camera_offset_max, 2)),
        camera_rotation=float(rng.uniform(-fleet.camera_rotation_max, fleet.camera_rotation_max)),
        camera_scale=float(rng.uniform(*fleet.camera_scale_range)),
        finger_length_wear=float(rng.uniform(0, fleet.finger_length_wear_max)),
        finger_width_wear=float(rng.uniform(0, fleet.finger_width_wear_max)),
        actuation_noise_sigma=fleet.actuation_noise_sigma,
    )


def make_fleet(fleet, seed):
    rng = np.random.default_rng(seed)
    return [draw_variation(rng, fleet) for _ in range(fleet.n_robots)]
