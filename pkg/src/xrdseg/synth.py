"""Synthetic powder-diffraction detector images with ground-truth spot masks.

A scene is a flat detector with Debye-Scherrer rings (Gaussian radial
profile, optional ``1 + a*cos^2(phi - phi0)`` preferred-orientation
modulation), optional texture arcs, single-crystal spots sitting on ring
loci, a constant background and optional counting noise.  The truth mask
marks pixels where the spot field exceeds ``mask_threshold`` times the
local non-spot signal (rings + arcs + background), evaluated noiselessly.

Azimuth convention: ``phi = atan2(row - cy, col - cx)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigError, DataError

ARCHETYPES = ("nickel", "battery", "perfect")
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class DetectorGeometry:
    size: tuple[int, int] = (512, 512)
    beam_center: tuple[float, float] | None = None  # (row, col); None -> image center
    pixel_pitch: float = 0.15  # mm
    distance: float = 1000.0  # mm
    wavelength: float = 0.1173  # angstrom

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))
        if self.beam_center is None:
            h, w = self.size
            object.__setattr__(self, "beam_center", ((h - 1) / 2.0, (w - 1) / 2.0))
        else:
            object.__setattr__(self, "beam_center", tuple(float(c) for c in self.beam_center))
        if min(self.size) < 1 or self.pixel_pitch <= 0 or self.distance <= 0 or self.wavelength <= 0:
            raise ConfigError(f"invalid detector geometry {self}")

    def radius_map(self) -> np.ndarray:
        """Euclidean distance of every pixel center to the beam center, in pixels."""
        h, w = self.size
        cy, cx = self.beam_center
        rows = np.arange(h, dtype=np.float64)[:, None] - cy
        cols = np.arange(w, dtype=np.float64)[None, :] - cx
        return np.hypot(rows, cols)

    def azimuth_map(self) -> np.ndarray:
        h, w = self.size
        cy, cx = self.beam_center
        rows = np.arange(h, dtype=np.float64)[:, None] - cy
        cols = np.arange(w, dtype=np.float64)[None, :] - cx
        return np.arctan2(rows, cols)

    def two_theta_of_radius(self, rho):
        return np.degrees(np.arctan(np.asarray(rho, dtype=np.float64) * self.pixel_pitch / self.distance))

    def radius_of_two_theta(self, two_theta_deg):
        return np.tan(np.radians(two_theta_deg)) * self.distance / self.pixel_pitch

    def max_two_theta(self) -> float:
        return float(self.two_theta_of_radius(self.radius_map().max()))

    def fingerprint(self) -> str:
        cy, cx = self.beam_center
        h, w = self.size
        return (f"{h}x{w};center={cy:.6g},{cx:.6g};pitch={self.pixel_pitch:.6g};"
                f"distance={self.distance:.6g};wavelength={self.wavelength:.6g}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        d["beam_center"] = list(self.beam_center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorGeometry":
        d = dict(d)
        d["size"] = tuple(d["size"])
        if d.get("beam_center") is not None:
            d["beam_center"] = tuple(d["beam_center"])
        return cls(**d)


def two_theta_map(geometry: DetectorGeometry) -> np.ndarray:
    """Scattering angle 2-theta (degrees) at every pixel center."""
    return geometry.two_theta_of_radius(geometry.radius_map())


@dataclass
class Ring:
    two_theta: float  # degrees
    amplitude: float
    radial_sigma: float  # pixels
    po_strength: float = 0.0
    po_phase: float = 0.0  # radians


@dataclass
class Spot:
    ring: int
    azimuth: float  # radians
    amplitude: float
    sigma: float  # pixels


@dataclass
class TextureArc:
    ring: int
    azimuth: float  # radians, arc center
    span: float  # radians, FWHM of the azimuthal envelope
    amplitude: float


@dataclass
class SceneSpec:
    geometry: DetectorGeometry = field(default_factory=DetectorGeometry)
    rings: list[Ring] = field(default_factory=list)
    spots: list[Spot] = field(default_factory=list)
    texture_arcs: list[TextureArc] = field(default_factory=list)
    background: float = 0.0
    noise: Literal["none", "poisson", "gaussian"] = "none"
    noise_level: float = 0.0  # poisson: counts per intensity unit; gaussian: sigma
    mask_threshold: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "rings": [asdict(r) for r in self.rings],
            "spots": [asdict(s) for s in self.spots],
            "texture_arcs": [asdict(a) for a in self.texture_arcs],
            "background": self.background,
            "noise": self.noise,
            "noise_level": self.noise_level,
            "mask_threshold": self.mask_threshold,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            geometry=DetectorGeometry.from_dict(d["geometry"]),
            rings=[Ring(**r) for r in d.get("rings", [])],
            spots=[Spot(**s) for s in d.get("spots", [])],
            texture_arcs=[TextureArc(**a) for a in d.get("texture_arcs", [])],
            background=d.get("background", 0.0),
            noise=d.get("noise", "none"),
            noise_level=d.get("noise_level", 0.0),
            mask_threshold=d.get("mask_threshold", 0.5),
            seed=d.get("seed", 0),
        )


def _wrap(angle: np.ndarray) -> np.ndarray:
    return (angle + np.pi) % (2 * np.pi) - np.pi


def _validate(spec: SceneSpec) -> None:
    if not 0 < spec.mask_threshold < 1:
        raise ConfigError(f"mask_threshold must lie in (0, 1), got {spec.mask_threshold}")
    if spec.background < 0:
        raise ConfigError("background must be >= 0")
    if spec.noise not in ("none", "poisson", "gaussian"):
        raise ConfigError(f"unknown noise model {spec.noise!r}")
    limit = spec.geometry.max_two_theta()
    for i, r in enumerate(spec.rings):
        if not 0 < r.two_theta <= limit:
            raise ConfigError(f"ring {i} at 2theta={r.two_theta} deg is outside the detector (max {limit:.4g})")
        if r.amplitude < 0 or r.po_strength < 0 or r.radial_sigma <= 0:
            raise ConfigError(f"ring {i} has invalid amplitude/po_strength/radial_sigma")
    for kind, items in (("spot", spec.spots), ("texture arc", spec.texture_arcs)):
        for i, s in enumerate(items):
            if not 0 <= s.ring < len(spec.rings):
                raise DataError(f"{kind} {i} references ring {s.ring}, but only {len(spec.rings)} rings exist")


def render_components(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless ``(non_spot, spot)`` fields; ``non_spot`` includes the background."""
    _validate(spec)
    geo = spec.geometry
    rho = geo.radius_map()
    phi = geo.azimuth_map()
    base = np.full(geo.size, float(spec.background))
    ring_rho = [float(geo.radius_of_two_theta(r.two_theta)) for r in spec.rings]
    for r, r0 in zip(spec.rings, ring_rho):
        profile = np.exp(-0.5 * ((rho - r0) / r.radial_sigma) ** 2)
        base += r.amplitude * (1.0 + r.po_strength * np.cos(phi - r.po_phase) ** 2) * profile
    for a in spec.texture_arcs:
        ring = spec.rings[a.ring]
        s = a.span / FWHM_PER_SIGMA
        profile = np.exp(-0.5 * ((rho - ring_rho[a.ring]) / ring.radial_sigma) ** 2)
        base += a.amplitude * np.exp(-0.5 * (_wrap(phi - a.azimuth) / s) ** 2) * profile

    spots = np.zeros(geo.size)
    h, w = geo.size
    cy, cx = geo.beam_center
    for s in spec.spots:
        r0 = ring_rho[s.ring]
        sy, sx = cy + r0 * math.sin(s.azimuth), cx + r0 * math.cos(s.azimuth)
        half = int(math.ceil(6 * s.sigma))
        r_lo, r_hi = max(0, int(sy) - half), min(h, int(sy) + half + 2)
        c_lo, c_hi = max(0, int(sx) - half), min(w, int(sx) + half + 2)
        if r_lo >= r_hi or c_lo >= c_hi:
            continue
        yy = np.arange(r_lo, r_hi)[:, None] - sy
        xx = np.arange(c_lo, c_hi)[None, :] - sx
        spots[r_lo:r_hi, c_lo:c_hi] += s.amplitude * np.exp(-0.5 * (yy ** 2 + xx ** 2) / s.sigma ** 2)
    return base, spots


def truth_mask(non_spot: np.ndarray, spot: np.ndarray, threshold: float) -> np.ndarray:
    return (spot > threshold * non_spot) & (spot > 0)


def render(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(image, truth_mask)``; image is float64 and non-negative, mask is uint8."""
    non_spot, spot = render_components(spec)
    mask = truth_mask(non_spot, spot, spec.mask_threshold).astype(np.uint8)
    image = non_spot + spot
    if spec.noise != "none" and spec.noise_level > 0:
        rng = np.random.default_rng(spec.seed)
        if spec.noise == "poisson":
            image = rng.poisson(image * spec.noise_level).astype(np.float64) / spec.noise_level
        else:
            image = np.clip(image + rng.normal(0.0, spec.noise_level, image.shape), 0.0, None)
    return image, mask


# -- randomized archetype scenes --------------------------------------------------


def _pick_radii(rng: np.random.Generator, n: int, lo: float, hi: float, gap: float) -> list[float]:
    radii: list[float] = []
    for _ in range(200 * n):
        if len(radii) == n:
            break
        r = rng.uniform(lo, hi)
        if all(abs(r - q) >= gap for q in radii):
            radii.append(r)
    return sorted(radii)


def random_scene(archetype: str, size: int | tuple[int, int] = 512, seed: int = 0) -> SceneSpec:
    """One randomized scene of the given archetype.

    ``nickel``: rings + spots.  ``battery``: rings with preferred orientation,
    a symmetric pair of texture arcs, and spots.  ``perfect``: rings only.
    All amplitudes are multiplied by a random overall intensity scale.
    """
    if archetype not in ARCHETYPES:
        raise ConfigError(f"unknown archetype {archetype!r}; choose from {ARCHETYPES}")
    if isinstance(size, int):
        size = (size, size)
    rng = np.random.default_rng(seed)
    h, w = size
    center = ((h - 1) / 2 + rng.uniform(-0.04, 0.04) * h, (w - 1) / 2 + rng.uniform(-0.04, 0.04) * w)
    geo = DetectorGeometry(size=size, beam_center=center, distance=float(rng.uniform(900.0, 1100.0)))
    scale = 10.0 ** rng.uniform(1.0, 3.0)

    reach = min(center[0], center[1], h - 1 - center[0], w - 1 - center[1])
    radii = _pick_radii(rng, int(rng.integers(5, 9)), 0.08 * min(h, w), reach - 6.0, 9.0)
    rings = [
        Ring(two_theta=float(geo.two_theta_of_radius(r)),
             amplitude=scale * float(rng.uniform(0.3, 1.0)),
             radial_sigma=float(rng.uniform(1.0, 2.5)))
        for r in radii
    ]
    background = scale * float(rng.uniform(0.05, 0.15))
    arcs: list[TextureArc] = []
    spots: list[Spot] = []

    if archetype == "battery":
        for i in rng.choice(len(rings), size=int(rng.integers(1, 3)), replace=False):
            rings[i].po_strength = float(rng.uniform(1.5, 4.0))
            rings[i].po_phase = float(rng.uniform(0, np.pi))
        i = int(rng.integers(len(rings)))
        az = float(rng.uniform(-np.pi, np.pi))
        span = float(rng.uniform(0.15, 0.5))
        amp = rings[i].amplitude * float(rng.uniform(0.8, 2.0))
        arcs = [TextureArc(i, az, span, amp), TextureArc(i, float(_wrap(np.array(az + np.pi))), span, amp)]

    spec = SceneSpec(geometry=geo, rings=rings, texture_arcs=arcs, background=background,
                     noise="poisson", noise_level=2000.0 / scale, mask_threshold=0.5, seed=seed)
    if archetype != "perfect":
        non_spot, _ = render_components(spec)
        rho_of = [float(geo.radius_of_two_theta(r.two_theta)) for r in rings]
        cy, cx = geo.beam_center
        for _ in range(int(rng.integers(4, 11))):
            k = int(rng.integers(len(rings)))
            az = float(rng.uniform(-np.pi, np.pi))
            py = int(round(cy + rho_of[k] * math.sin(az)))
            px = int(round(cx + rho_of[k] * math.cos(az)))
            local = non_spot[min(max(py, 0), h - 1), min(max(px, 0), w - 1)]
            spots.append(Spot(ring=k, azimuth=az, amplitude=float(local * rng.uniform(3.0, 12.0)),
                              sigma=float(rng.uniform(1.5, 3.0))))
        spec.spots = spots
    return spec


def make_scenes(n_images: int, archetype: str, size: int | tuple[int, int] = 512, seed: int = 0) -> list[SceneSpec]:
    if n_images < 1:
        raise ConfigError("n_images must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(n_images)
    return [random_scene(archetype, size, int(s)) for s in seeds]


def make_dataset(n_images: int, archetype: str, size: int | tuple[int, int] = 512,
                 seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Render ``n_images`` randomized scenes as ``(image, mask)`` pairs."""
    return [render(s) for s in make_scenes(n_images, archetype, size, seed)]
