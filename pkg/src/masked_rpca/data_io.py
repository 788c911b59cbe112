"""Frame-sequence I/O and the synthetic overlay-scene generator.

File formats
------------
PGM
    Binary P5 frames, 8-bit (maxval 255). Values are divided by 255 on load.
raw volume
    Header of three little-endian int64 values ``m, n, k`` followed by
    ``m*n*k`` little-endian float64 values in column-major order, i.e. the
    ``(m*n, k)`` matrix view flattened column by column.
manifest / sidecar
    Plain text, one ``key=value`` per line.
"""

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    InfeasibleSpecError,
    InvalidInputError,
    SpecParseError,
    UnreadableFileError,
    UnsupportedPixelDepthError,
)
from .prox import to_matrix, to_volume

_RAW_HEADER = np.dtype("<i8")
_RAW_DATA = np.dtype("<f8")


# --------------------------------------------------------------------------
# PGM

def _pgm_tokens(data):
    """Yield (token, end_offset) for the header fields, skipping comments."""
    pos = 0
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UnreadableFileError("truncated PGM header")
        yield data[start:pos], pos


def read_pgm(path):
    """Read an 8-bit binary PGM into a float array in [0, 1]."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    tokens = _pgm_tokens(data)
    try:
        magic, _ = next(tokens)
        if magic != b"P5":
            raise UnreadableFileError(f"{path}: not a binary PGM (magic {magic!r})")
        width = int(next(tokens)[0])
        height = int(next(tokens)[0])
        maxval_tok, end = next(tokens)
        maxval = int(maxval_tok)
    except (StopIteration, ValueError) as exc:
        raise UnreadableFileError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise UnsupportedPixelDepthError(f"{path}: maxval {maxval} (only 8-bit supported)")
    pixels = data[end + 1 : end + 1 + width * height]
    if len(pixels) != width * height:
        raise UnreadableFileError(f"{path}: truncated pixel data")
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
    return img.astype(float) / 255.0


def write_pgm(path, frame):
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise DimensionMismatchError(f"PGM frame must be 2D, got shape {frame.shape}")
    pix = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


# --------------------------------------------------------------------------
# raw volumes and key=value files

def write_raw(path, volume):
    volume = np.asarray(volume, dtype=float)
    if volume.ndim != 3:
        raise DimensionMismatchError(f"raw volume must be 3D, got shape {volume.shape}")
    with open(path, "wb") as fh:
        fh.write(np.asarray(volume.shape, dtype=_RAW_HEADER).tobytes())
        fh.write(np.asarray(to_matrix(volume), dtype=_RAW_DATA).tobytes(order="F"))


def read_raw(path):
    """Read a raw volume, returning an ``(m, n, k)`` float array."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    if len(data) < 24:
        raise UnreadableFileError(f"{path}: truncated raw header")
    dims = tuple(int(d) for d in np.frombuffer(data[:24], dtype=_RAW_HEADER))
    if min(dims) < 1:
        raise UnreadableFileError(f"{path}: invalid dims {dims}")
    count = dims[0] * dims[1] * dims[2]
    if len(data) != 24 + 8 * count:
        raise DimensionMismatchError(
            f"{path}: header dims {dims} imply {count} values, file holds {(len(data) - 24) // 8}"
        )
    flat = np.frombuffer(data[24:], dtype=_RAW_DATA).astype(float)
    return to_volume(flat.reshape((dims[0] * dims[1], dims[2]), order="F"), dims)


def write_keyvalue(path, items):
    with open(path, "w") as fh:
        for key, value in items.items():
            fh.write(f"{key}={value}\n")


def read_keyvalue(path):
    """Parse a ``key=value`` file; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise SpecParseError("expected key=value", lineno, line)
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# --------------------------------------------------------------------------
# sequences

@dataclass(frozen=True)
class FrameSequenceSpec:
    """Where to find a clip: a directory of PGM frames or one raw volume file."""

    source: str
    dims: tuple = None
    pattern: str = "*.pgm"


def load_volume(path, pattern="*.pgm"):
    """Load a directory of PGM frames (sorted by name) or a raw volume file."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob(pattern))
        if not files:
            raise UnreadableFileError(f"no frames matching {pattern!r} in {path}")
        frames = [read_pgm(f) for f in files]
        shape = frames[0].shape
        for f, fr in zip(files, frames):
            if fr.shape != shape:
                raise DimensionMismatchError(
                    f"{f.name} has shape {fr.shape}, expected {shape}"
                )
        return np.stack(frames, axis=2)
    if not path.exists():
        raise UnreadableFileError(f"{path} does not exist")
    return read_raw(path)


def load_sequence(spec):
    """Return ``(X, dims)`` with ``X`` the ``(m*n, k)`` matrix of the clip."""
    if isinstance(spec, (str, os.PathLike)):
        spec = FrameSequenceSpec(str(spec))
    vol = load_volume(spec.source, spec.pattern)
    if spec.dims is not None and tuple(spec.dims) != vol.shape:
        raise DimensionMismatchError(f"expected dims {tuple(spec.dims)}, got {vol.shape}")
    if vol.shape[2] < 2:
        raise DimensionMismatchError("a sequence needs at least two frames")
    return to_matrix(vol), vol.shape


def save_volume(out_dir, name, data, dims=None):
    """Write ``name.raw``, PGM frames under ``name/`` and a ``name.txt`` sidecar.

    ``data`` is either an ``(m, n, k)`` volume or an ``(m*n, k)`` matrix with
    ``dims`` given.
    """
    data = np.asarray(data, dtype=float)
    vol = data if data.ndim == 3 else to_volume(data, dims)
    out_dir = Path(out_dir)
    frame_dir = out_dir / name
    frame_dir.mkdir(parents=True, exist_ok=True)
    write_raw(out_dir / f"{name}.raw", vol)
    for j in range(vol.shape[2]):
        write_pgm(frame_dir / f"frame_{j:04d}.pgm", vol[:, :, j])
    m, n, k = vol.shape
    write_keyvalue(
        out_dir / f"{name}.txt",
        {
            "name": name,
            "dims": f"{m},{n},{k}",
            "min": repr(float(vol.min())),
            "max": repr(float(vol.max())),
            "pgm_scaling": "clip(v,0,1)*255",
        },
    )
    return out_dir / f"{name}.raw"


# --------------------------------------------------------------------------
# synthetic scenes

@dataclass(frozen=True)
class Shape:
    """A moving foreground object.

    ``size`` is ``(height, width)`` for rectangles and ``(radius,)`` for disks;
    ``start`` is the top-left corner (rect) or centre (disk) in pixels and
    ``velocity`` the per-frame displacement. Objects bounce off frame borders.
    """

    kind: str = "rect"
    size: tuple = (6, 6)
    start: tuple = (0.0, 0.0)
    velocity: tuple = (0.5, 0.5)
    intensity: float = 0.95


@dataclass(frozen=True)
class SyntheticSceneSpec:
    dims: tuple = (32, 32, 40)
    rank: int = 2
    factor_magnitudes: tuple = (0.5, 0.2)
    background_offset: float = 0.0
    shapes: tuple = field(default_factory=tuple)
    salt_pepper_density: float = 0.0
    salt_pepper_magnitude: float = 0.5
    snr_db: float = None
    seed: int = 0


def _bounce(p, lo, hi):
    # reflect p into [lo, hi]
    span = hi - lo
    if span <= 0:
        return lo
    q = (p - lo) % (2 * span)
    return lo + (q if q <= span else 2 * span - q)


def _shape_mask(shape, t, m, n):
    rows, cols = np.mgrid[0:m, 0:n]
    if shape.kind == "rect":
        h, w = shape.size
        r0 = int(round(_bounce(shape.start[0] + shape.velocity[0] * t, 0, m - h)))
        c0 = int(round(_bounce(shape.start[1] + shape.velocity[1] * t, 0, n - w)))
        return (rows >= r0) & (rows < r0 + h) & (cols >= c0) & (cols < c0 + w)
    (radius,) = shape.size
    rc = _bounce(shape.start[0] + shape.velocity[0] * t, radius, m - 1 - radius)
    cc = _bounce(shape.start[1] + shape.velocity[1] * t, radius, n - 1 - radius)
    return (rows - rc) ** 2 + (cols - cc) ** 2 <= radius**2


def _validate_scene(spec):
    m, n, k = spec.dims
    if min(m, n) < 1 or k < 2:
        raise InfeasibleSpecError(f"invalid dims {spec.dims}")
    if not 1 <= spec.rank <= min(m * n, k):
        raise InfeasibleSpecError(f"rank {spec.rank} incompatible with dims {spec.dims}")
    if len(spec.factor_magnitudes) != spec.rank:
        raise InfeasibleSpecError("need one factor magnitude per background rank")
    if any(a < 0 for a in spec.factor_magnitudes) or spec.background_offset < 0:
        raise InfeasibleSpecError("factor magnitudes and offset must be non-negative")
    if sum(spec.factor_magnitudes) + spec.background_offset > 1:
        raise InfeasibleSpecError("background offset plus factor magnitudes exceeds 1")
    if not 0 <= spec.salt_pepper_density <= 1:
        raise InfeasibleSpecError("salt-and-pepper density must lie in [0, 1]")
    for s in spec.shapes:
        if s.kind == "rect":
            if len(s.size) != 2 or s.size[0] > m or s.size[1] > n or min(s.size) < 1:
                raise InfeasibleSpecError(f"rectangle {s.size} does not fit a {m}x{n} frame")
        elif s.kind == "disk":
            if len(s.size) != 1 or 2 * s.size[0] + 1 > min(m, n) or s.size[0] < 0:
                raise InfeasibleSpecError(f"disk radius {s.size} does not fit a {m}x{n} frame")
        else:
            raise InfeasibleSpecError(f"unknown shape kind {s.kind!r}")
        if not 0 <= s.intensity <= 1:
            raise InfeasibleSpecError("shape intensity must lie in [0, 1]")


def generate_scene(spec):
    """Render an overlay scene.

    Returns ``(X, truth)`` where ``X`` is the ``(m*n, k)`` observation and
    ``truth`` holds matrices ``L``, ``W``, ``S``, ``E`` (effective
    salt-and-pepper perturbation), ``clean`` (noise-free signal) and
    ``noise`` (the injected Gaussian field, before clamping).
    """
    _validate_scene(spec)
    m, n, k = spec.dims
    rng = np.random.default_rng(spec.seed)

    t = np.arange(k)
    # the offset rides on the constant-in-time first factor, so rank is unchanged
    L = np.full((m * n, k), float(spec.background_offset))
    for i, a in enumerate(spec.factor_magnitudes):
        pattern = rng.uniform(0.0, 1.0, size=m * n)
        if i == 0:
            weights = np.ones(k)
        else:
            phase = rng.uniform(0, 2 * np.pi)
            weights = 0.5 + 0.5 * np.sin(2 * np.pi * i * t / k + phase)
        L += a * np.outer(pattern, weights)

    W = np.zeros((m, n, k))
    S = np.zeros((m, n, k))
    for shape in spec.shapes:
        for j in range(k):
            mask = _shape_mask(shape, j, m, n)
            W[:, :, j][mask] = 1.0
            S[:, :, j][mask] = shape.intensity
    W = to_matrix(W)
    S = to_matrix(S)
    fg = W > 0
    clean = np.where(fg, S, L)

    E = np.zeros_like(L)
    if spec.salt_pepper_density > 0:
        hit = (rng.uniform(size=L.shape) < spec.salt_pepper_density) & ~fg
        signs = np.where(rng.uniform(size=L.shape) < 0.5, -1.0, 1.0)
        perturbed = np.clip(clean + spec.salt_pepper_magnitude * signs, 0.0, 1.0)
        E = np.where(hit, perturbed - clean, 0.0)
    signal = clean + E

    noise = np.zeros_like(L)
    if spec.snr_db is not None:
        raw = rng.standard_normal(L.shape)
        target = np.sum(signal**2) / 10 ** (spec.snr_db / 10)
        noise = raw * np.sqrt(target / np.sum(raw**2))
    X = np.clip(signal + noise, 0.0, 1.0)
    truth = {"L": L, "W": W, "S": S, "E": E, "clean": signal, "noise": noise}
    return X, truth


def measure_snr(signal, noise):
    """``10 log10(||signal||^2 / ||noise||^2)`` over the whole volume."""
    signal = np.asarray(signal, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if signal.shape != noise.shape:
        raise DimensionMismatchError("signal and noise shapes differ")
    return 10.0 * np.log10(np.sum(signal**2) / np.sum(noise**2))


# --------------------------------------------------------------------------
# scene spec files

def _floats(text, lineno, line, count=None):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise SpecParseError(f"expected comma-separated numbers, got {text!r}", lineno, line)
    if count is not None and len(vals) != count:
        raise SpecParseError(f"expected {count} values, got {len(vals)}", lineno, line)
    return vals


def _parse_shape(text, lineno, line):
    fields = {}
    for tok in text.split():
        if "=" not in tok:
            raise SpecParseError(f"shape field {tok!r} is not key=value", lineno, line)
        key, value = tok.split("=", 1)
        fields[key] = value
    kind = fields.pop("kind", "rect")
    if kind not in ("rect", "disk"):
        raise SpecParseError(f"unknown shape kind {kind!r}", lineno, line)
    try:
        size = _floats(fields.pop("size"), lineno, line, 2 if kind == "rect" else 1)
        start = _floats(fields.pop("start", "0,0"), lineno, line, 2)
        velocity = _floats(fields.pop("velocity", "0,0"), lineno, line, 2)
        intensity = _floats(fields.pop("intensity", "0.95"), lineno, line, 1)[0]
    except KeyError:
        raise SpecParseError("shape requires size=", lineno, line)
    if fields:
        raise SpecParseError(f"unknown shape fields {sorted(fields)}", lineno, line)
    if kind == "rect":
        size = tuple(int(v) for v in size)
    return Shape(kind, size, start, velocity, intensity)


_SCENE_KEYS = {
    "dims", "rank", "factor_magnitudes", "background_offset", "shape", "salt_pepper_density",
    "salt_pepper_magnitude", "snr_db", "seed",
}


def parse_scene_spec(text):
    """Parse a scene description in ``key = value`` form.

    ``shape`` may repeat; its value is a list of ``field=value`` tokens, e.g.
    ``shape = kind=rect size=6,6 start=4,2 velocity=0.6,0.5 intensity=0.95``.
    """
    kw = {"shapes": []}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        match = re.match(r"^([A-Za-z_]+)\s*=\s*(.*)$", stripped)
        if not match:
            raise SpecParseError("expected key = value", lineno, line)
        key, value = match.groups()
        if key not in _SCENE_KEYS:
            raise SpecParseError(f"unknown key {key!r}", lineno, line)
        try:
            if key == "dims":
                kw["dims"] = tuple(int(v) for v in _floats(value, lineno, line, 3))
            elif key == "rank":
                kw["rank"] = int(value)
            elif key == "factor_magnitudes":
                kw["factor_magnitudes"] = _floats(value, lineno, line)
            elif key == "shape":
                kw["shapes"].append(_parse_shape(value, lineno, line))
            elif key == "snr_db":
                kw["snr_db"] = None if value.lower() == "none" else float(value)
            elif key == "seed":
                kw["seed"] = int(value)
            else:
                kw[key] = float(value)
        except ValueError:
            raise SpecParseError(f"bad value for {key}: {value!r}", lineno, line)
    kw["shapes"] = tuple(kw["shapes"])
    if "rank" in kw and "factor_magnitudes" not in kw:
        raise SpecParseError("factor_magnitudes is required when rank is given")
    return SyntheticSceneSpec(**kw)


def format_scene_spec(spec):
    lines = [
        f"dims = {','.join(str(d) for d in spec.dims)}",
        f"rank = {spec.rank}",
        f"factor_magnitudes = {','.join(repr(a) for a in spec.factor_magnitudes)}",
        f"background_offset = {spec.background_offset!r}",
    ]
    for s in spec.shapes:
        lines.append(
            f"shape = kind={s.kind} size={','.join(str(v) for v in s.size)} "
            f"start={s.start[0]!r},{s.start[1]!r} "
            f"velocity={s.velocity[0]!r},{s.velocity[1]!r} intensity={s.intensity!r}"
        )
    lines += [
        f"salt_pepper_density = {spec.salt_pepper_density!r}",
        f"salt_pepper_magnitude = {spec.salt_pepper_magnitude!r}",
        f"snr_db = {spec.snr_db!r}",
        f"seed = {spec.seed}",
    ]
    return "\n".join(lines) + "\n"


def validate_unit_range(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.size and (X.min() < 0 or X.max() > 1):
        raise InvalidInputError(f"{name} must be normalized to [0, 1]")
    return X
