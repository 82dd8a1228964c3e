"""Perturbation catalog: pure functions (image, parameters, stream) -> image.

Every transform kind carries a schema: named parameter dimensions, their
default search domain, an identity point if the domain contains one, and
whether applying it consumes random draws. The `apply` dispatcher is the
only entry point the search layer uses.

Numeric conventions shared by all kinds: arithmetic in float64, final
cast to float32, clip to [0,1] wherever a stage can leave the range.
Stochastic kinds draw in row-major, channel-interleaved order so results
are reproducible from the stream seed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .imaging import (
    RandomStream,
    affine_warp,
    check_image,
    flip_horizontal,
    hsv_to_rgb,
    resize_bilinear,
    rgb_to_hsv,
)

LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

STICKER_PALETTE = {
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
    "yellow": (1.0, 1.0, 0.2),
}

KINDS = (
    "gaussian_noise",
    "uniform_noise",
    "impulse_noise",
    "pixel_l0",
    "pixel_linf",
    "rotate",
    "translate",
    "scale",
    "shear",
    "blur",
    "sharpen",
    "flip",
    "brightness",
    "contrast",
    "saturation",
    "hue",
    "grayscale",
    "color_depth",
    "adaptive_brightness",
    "sticker",
)

STOCHASTIC_KINDS = frozenset(
    {"gaussian_noise", "uniform_noise", "impulse_noise", "pixel_l0", "pixel_linf"}
)


# ---------------------------------------------------------------------------
# Domain schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dim:
    """One parameter dimension of a transform's search domain."""

    name: str
    kind: str  # continuous | integer | categorical | binary
    low: float | None = None
    high: float | None = None
    choices: tuple[str, ...] | None = None

    def contains(self, value) -> bool:
        if self.kind == "continuous":
            return isinstance(value, (int, float)) and self.low <= float(value) <= self.high
        if self.kind == "integer":
            if not isinstance(value, int) or isinstance(value, bool):
                return False
            hi = self.high
            return self.low <= value and (hi is None or value <= hi)
        if self.kind == "categorical":
            return value in self.choices
        if self.kind == "binary":
            return value in (0, 1)
        raise ConfigError(f"unknown dim kind {self.kind!r}")


@dataclass(frozen=True)
class ParamDomain:
    dims: tuple[Dim, ...]
    includes_identity: bool


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    domain: ParamDomain
    stochastic: bool

    @property
    def dim_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.domain.dims)


def _adaptive_dims(grid_size: int) -> tuple[Dim, ...]:
    return tuple(
        Dim(f"g{r}_{c}", "continuous", 0.5, 1.5)
        for r in range(grid_size)
        for c in range(grid_size)
    )


# kind -> (dims builder, identity theta or None, stochastic)
_CATALOG: dict = {
    "gaussian_noise": ((Dim("sigma", "continuous", 0.0, 0.1),), {"sigma": 0.0}),
    "uniform_noise": ((Dim("amp", "continuous", 0.0, 0.1),), {"amp": 0.0}),
    "impulse_noise": ((Dim("p", "continuous", 0.0, 0.05),), {"p": 0.0}),
    # pixel_l0 upper bound of None means "1% of the pixel count", resolved
    # against a concrete image size by resolve_domain
    "pixel_l0": ((Dim("k", "integer", 0, None),), {"k": 0}),
    "pixel_linf": (
        (
            Dim("eps", "continuous", 0.0, 8.0 / 255.0),
            Dim("mode", "categorical", choices=("corner", "uniform")),
        ),
        {"eps": 0.0, "mode": "corner"},
    ),
    "rotate": ((Dim("angle", "continuous", -15.0, 15.0),), {"angle": 0.0}),
    "translate": (
        (Dim("dx", "continuous", -0.1, 0.1), Dim("dy", "continuous", -0.1, 0.1)),
        {"dx": 0.0, "dy": 0.0},
    ),
    "scale": ((Dim("factor", "continuous", 0.6, 1.4),), {"factor": 1.0}),
    "shear": ((Dim("amount", "continuous", -0.2, 0.2),), {"amount": 0.0}),
    "blur": ((Dim("sigma", "continuous", 0.0, 2.0),), {"sigma": 0.0}),
    "sharpen": ((Dim("alpha", "continuous", 0.0, 2.0),), {"alpha": 0.0}),
    "flip": ((Dim("apply", "binary"),), {"apply": 0}),
    "brightness": ((Dim("factor", "continuous", 0.5, 1.5),), {"factor": 1.0}),
    "contrast": ((Dim("factor", "continuous", 0.5, 1.5),), {"factor": 1.0}),
    "saturation": ((Dim("factor", "continuous", 0.5, 1.5),), {"factor": 1.0}),
    "hue": ((Dim("dh", "continuous", -0.1, 0.1),), {"dh": 0.0}),
    "grayscale": ((Dim("apply", "binary"),), {"apply": 0}),
    "color_depth": ((Dim("bits", "integer", 4, 8),), None),
    "adaptive_brightness": (
        _adaptive_dims(4),
        {f"g{r}_{c}": 1.0 for r in range(4) for c in range(4)},
    ),
    "sticker": (
        (
            Dim("cx", "continuous", 0.0, 1.0),
            Dim("cy", "continuous", 0.0, 1.0),
            Dim("w", "continuous", 0.05, 0.3),
            Dim("h", "continuous", 0.05, 0.3),
            Dim("phi", "continuous", -45.0, 45.0),
            Dim("color", "categorical", choices=("white", "black", "yellow")),
        ),
        None,
    ),
}


def default_spec(kind: str, grid_size: int = 4) -> TransformSpec:
    """Spec for a kind with its default search domain."""
    if kind not in _CATALOG:
        raise ConfigError(f"unknown transform kind {kind!r}")
    if kind == "adaptive_brightness":
        if grid_size < 1:
            raise ConfigError(f"adaptive_brightness grid size must be >= 1, got {grid_size}")
        dims = _adaptive_dims(grid_size)
    else:
        dims, _ = _CATALOG[kind]
    _, identity = _CATALOG[kind]
    return TransformSpec(
        kind=kind,
        domain=ParamDomain(dims=dims, includes_identity=identity is not None),
        stochastic=kind in STOCHASTIC_KINDS,
    )


def identity_theta(spec: TransformSpec) -> dict | None:
    """The identity parameter point, or None if the domain excludes one."""
    if not spec.domain.includes_identity:
        return None
    if spec.kind == "adaptive_brightness":
        return {d.name: 1.0 for d in spec.domain.dims}
    _, identity = _CATALOG[spec.kind]
    return dict(identity)


def override_domain(spec: TransformSpec, overrides: dict) -> TransformSpec:
    """New spec with per-dim bounds/choices replaced from a config mapping."""
    by_name = {d.name: d for d in spec.domain.dims}
    for name in overrides:
        if name not in by_name:
            raise ConfigError(f"{spec.kind}: unknown domain dim {name!r}")
    dims = []
    for d in spec.domain.dims:
        ov = overrides.get(d.name)
        if ov is None:
            dims.append(d)
            continue
        if d.kind == "categorical":
            choices = tuple(ov.get("choices", d.choices))
            if not choices:
                raise ConfigError(f"{spec.kind}.{d.name}: empty choice list")
            dims.append(Dim(d.name, d.kind, choices=choices))
        else:
            low = ov.get("low", d.low)
            high = ov.get("high", d.high)
            if high is not None and low is not None and low > high:
                raise ConfigError(f"{spec.kind}.{d.name}: low {low} > high {high}")
            dims.append(Dim(d.name, d.kind, low, high, d.choices))
    out = TransformSpec(
        kind=spec.kind,
        domain=ParamDomain(dims=tuple(dims), includes_identity=spec.domain.includes_identity),
        stochastic=spec.stochastic,
    )
    ident = identity_theta(out)
    if ident is not None:
        for d in out.domain.dims:
            if not d.contains(ident[d.name]):
                return TransformSpec(
                    kind=out.kind,
                    domain=ParamDomain(dims=out.domain.dims, includes_identity=False),
                    stochastic=out.stochastic,
                )
    return out


def resolve_domain(spec: TransformSpec, width: int, height: int) -> TransformSpec:
    """Fill size-dependent bounds (pixel_l0's default k cap) for one image."""
    if spec.kind != "pixel_l0":
        return spec
    (kdim,) = spec.domain.dims
    if kdim.high is not None:
        return spec
    cap = math.ceil(0.01 * width * height)
    return TransformSpec(
        kind=spec.kind,
        domain=ParamDomain(
            dims=(Dim("k", "integer", kdim.low, cap),),
            includes_identity=spec.domain.includes_identity,
        ),
        stochastic=spec.stochastic,
    )


def validate_theta(spec: TransformSpec, theta: dict) -> None:
    """Schema mismatch -> ConfigError; out-of-domain value -> DomainError."""
    names = spec.dim_names
    if set(theta) != set(names):
        raise ConfigError(
            f"{spec.kind}: theta keys {sorted(theta)} != schema {sorted(names)}"
        )
    for d in spec.domain.dims:
        if not d.contains(theta[d.name]):
            raise DomainError(f"{spec.kind}.{d.name}: value {theta[d.name]!r} outside domain")


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def gaussian_noise(img: np.ndarray, sigma: float, stream: RandomStream) -> np.ndarray:
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    h, w = img.shape[:2]
    noise = stream.normals(h * w * 3, sigma).reshape(h, w, 3)
    return np.clip(img.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)


def uniform_noise(img: np.ndarray, amp: float, stream: RandomStream) -> np.ndarray:
    if amp < 0:
        raise DomainError(f"amp must be >= 0, got {amp}")
    h, w = img.shape[:2]
    u = stream.uniforms(h * w * 3).reshape(h, w, 3)
    noise = amp * (2.0 * u - 1.0)
    return np.clip(img.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)


def impulse_noise(img: np.ndarray, p: float, stream: RandomStream) -> np.ndarray:
    """Salt/pepper: whole pixels forced to 0 or 1.

    One selection uniform per pixel in row-major order; a second polarity
    uniform is drawn only for selected pixels, immediately after its
    selection draw. This ordering is part of the reproducibility contract.
    """
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must be in [0,1], got {p}")
    out = img.copy()
    h, w = img.shape[:2]
    draw = stream.next_uniform
    for y in range(h):
        for x in range(w):
            if draw() < p:
                out[y, x] = np.float32(0.0 if draw() < 0.5 else 1.0)
    return out


# ---------------------------------------------------------------------------
# Pixel-budget perturbations
# ---------------------------------------------------------------------------


def pixel_linf_candidate(
    img: np.ndarray, eps: float, stream: RandomStream, mode: str = "corner"
) -> np.ndarray:
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    h, w = img.shape[:2]
    u = stream.uniforms(h * w * 3).reshape(h, w, 3)
    if mode == "corner":
        delta = np.where(u < 0.5, -eps, eps)
    elif mode == "uniform":
        delta = eps * (2.0 * u - 1.0)
    else:
        raise DomainError(f"unknown pixel_linf mode {mode!r}")
    return np.clip(img.astype(np.float64) + delta, 0.0, 1.0).astype(np.float32)


def pixel_l0_candidate(img: np.ndarray, k: int, stream: RandomStream) -> np.ndarray:
    """Set k distinct pixels to independent extreme channel values."""
    h, w = img.shape[:2]
    npix = h * w
    if not 0 <= k <= npix:
        raise DomainError(f"k must be in [0, {npix}], got {k}")
    # partial Fisher-Yates: first k slots of the index permutation
    idx = np.arange(npix)
    draw = stream.next_uniform
    for i in range(k):
        j = i + int(draw() * (npix - i))
        idx[i], idx[j] = idx[j], idx[i]
    out = img.copy()
    for i in range(k):
        y, x = divmod(int(idx[i]), w)
        for c in range(3):
            out[y, x, c] = np.float32(0.0 if draw() < 0.5 else 1.0)
    return out


# ---------------------------------------------------------------------------
# Blur / sharpen
# ---------------------------------------------------------------------------


def _blur64(img64: np.ndarray, sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(t * t) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    h, w = img64.shape[:2]
    padded = np.pad(img64, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    acc = np.zeros_like(img64)
    for i, kv in enumerate(kernel):
        acc += kv * padded[:, i : i + w]
    padded = np.pad(acc, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    acc = np.zeros_like(img64)
    for i, kv in enumerate(kernel):
        acc += kv * padded[i : i + h, :]
    return acc


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    out = _blur64(img.astype(np.float64), sigma)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def sharpen(img: np.ndarray, alpha: float) -> np.ndarray:
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return img
    x = img.astype(np.float64)
    return np.clip(x + alpha * (x - _blur64(x, 1.0)), 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Color
# ---------------------------------------------------------------------------


def _luminance(x64: np.ndarray) -> np.ndarray:
    return LUMA_R * x64[..., 0] + LUMA_G * x64[..., 1] + LUMA_B * x64[..., 2]


def color_adjust(
    img: np.ndarray,
    brightness_f: float = 1.0,
    contrast_f: float = 1.0,
    saturation_f: float = 1.0,
) -> np.ndarray:
    for name, f in (("brightness", brightness_f), ("contrast", contrast_f), ("saturation", saturation_f)):
        if f < 0:
            raise DomainError(f"{name} factor must be >= 0, got {f}")
    out = img
    if brightness_f != 1.0:
        out = np.clip(out.astype(np.float64) * brightness_f, 0.0, 1.0).astype(np.float32)
    if contrast_f != 1.0:
        x = out.astype(np.float64)
        m = float(_luminance(x).mean())
        out = np.clip(m + contrast_f * (x - m), 0.0, 1.0).astype(np.float32)
    if saturation_f != 1.0:
        x = out.astype(np.float64)
        g = _luminance(x)[..., None]
        out = np.clip(g + saturation_f * (x - g), 0.0, 1.0).astype(np.float32)
    return out


def hue_shift(img: np.ndarray, dh: float) -> np.ndarray:
    if not -0.5 <= dh <= 0.5:
        raise DomainError(f"dh must be in [-0.5, 0.5], got {dh}")
    if dh == 0.0:
        return img
    hsv = rgb_to_hsv(img.astype(np.float64))
    hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0).astype(np.float32)


def grayscale(img: np.ndarray) -> np.ndarray:
    g = _luminance(img.astype(np.float64))[..., None]
    return np.clip(np.broadcast_to(g, img.shape), 0.0, 1.0).astype(np.float32)


def color_depth(img: np.ndarray, bits: int) -> np.ndarray:
    if not (isinstance(bits, int) and 1 <= bits <= 8):
        raise DomainError(f"bits must be an integer in [1,8], got {bits!r}")
    levels = float(2**bits - 1)
    x = img.astype(np.float64)
    return (np.floor(x * levels + 0.5) / levels).astype(np.float32)


def adaptive_brightness(img: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Spatially varying gain: m x m factor grid upsampled to a field."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1] or grid.shape[0] < 1:
        raise DomainError(f"gain grid must be square m x m with m >= 1, got {grid.shape}")
    if (grid < 0).any():
        raise DomainError("gain factors must be >= 0")
    if (grid == 1.0).all():
        return img
    h, w = img.shape[:2]
    field = resize_bilinear(grid[..., None], w, h)  # stays float64
    return np.clip(field * img.astype(np.float64), 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Sticker occlusion
# ---------------------------------------------------------------------------


def sticker(
    img: np.ndarray,
    cx: float,
    cy: float,
    w: float,
    h: float,
    phi: float,
    color,
) -> np.ndarray:
    if w < 0 or h < 0:
        raise DomainError(f"sticker size must be >= 0, got w={w}, h={h}")
    rgb = np.asarray(color, dtype=np.float32)
    if rgb.shape != (3,) or (rgb < 0).any() or (rgb > 1).any():
        raise DomainError(f"sticker color must be an RGB triple in [0,1], got {color!r}")
    if w == 0 or h == 0:
        return img
    ih, iw = img.shape[:2]
    ccx, ccy = cx * iw, cy * ih
    half_w, half_h = w * iw / 2.0, h * ih / 2.0
    px, py = np.meshgrid(
        np.arange(iw, dtype=np.float64) + 0.5, np.arange(ih, dtype=np.float64) + 0.5
    )
    # rotate pixel centers into the sticker frame (inverse rotation)
    th = math.radians(phi)
    ct, st = math.cos(th), math.sin(th)
    ux = ct * (px - ccx) + st * (py - ccy)
    uy = -st * (px - ccx) + ct * (py - ccy)
    inside = (np.abs(ux) <= half_w) & (np.abs(uy) <= half_h)
    out = img.copy()
    out[inside] = rgb
    return out


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------


def _adaptive_grid_from_theta(spec: TransformSpec, theta: dict) -> np.ndarray:
    m = int(round(math.sqrt(len(spec.domain.dims))))
    return np.array(
        [[theta[f"g{r}_{c}"] for c in range(m)] for r in range(m)], dtype=np.float64
    )


def apply(
    spec: TransformSpec, img: np.ndarray, theta: dict, stream: RandomStream | None = None
) -> np.ndarray:
    """Apply one transform at a parameter point. Pure given the stream state."""
    check_image(img)
    validate_theta(spec, theta)
    if spec.stochastic and stream is None:
        raise ConfigError(f"{spec.kind} needs a random stream")
    kind = spec.kind
    if kind == "gaussian_noise":
        return gaussian_noise(img, theta["sigma"], stream)
    if kind == "uniform_noise":
        return uniform_noise(img, theta["amp"], stream)
    if kind == "impulse_noise":
        return impulse_noise(img, theta["p"], stream)
    if kind == "pixel_l0":
        return pixel_l0_candidate(img, theta["k"], stream)
    if kind == "pixel_linf":
        return pixel_linf_candidate(img, theta["eps"], stream, theta["mode"])
    if kind == "rotate":
        return affine_warp(img, rotation_deg=theta["angle"])
    if kind == "translate":
        return affine_warp(img, translate=(theta["dx"], theta["dy"]))
    if kind == "scale":
        return affine_warp(img, scale=theta["factor"])
    if kind == "shear":
        return affine_warp(img, shear_x=theta["amount"])
    if kind == "blur":
        return blur(img, theta["sigma"])
    if kind == "sharpen":
        return sharpen(img, theta["alpha"])
    if kind == "flip":
        return flip_horizontal(img) if theta["apply"] else img
    if kind == "brightness":
        return color_adjust(img, brightness_f=theta["factor"])
    if kind == "contrast":
        return color_adjust(img, contrast_f=theta["factor"])
    if kind == "saturation":
        return color_adjust(img, saturation_f=theta["factor"])
    if kind == "hue":
        return hue_shift(img, theta["dh"])
    if kind == "grayscale":
        return grayscale(img) if theta["apply"] else img
    if kind == "color_depth":
        return color_depth(img, theta["bits"])
    if kind == "adaptive_brightness":
        return adaptive_brightness(img, _adaptive_grid_from_theta(spec, theta))
    if kind == "sticker":
        return sticker(
            img,
            theta["cx"],
            theta["cy"],
            theta["w"],
            theta["h"],
            theta["phi"],
            STICKER_PALETTE[theta["color"]],
        )
    raise ConfigError(f"unknown transform kind {kind!r}")
