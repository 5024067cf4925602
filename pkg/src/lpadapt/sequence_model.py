"""Coefficient-space representation of functions in the Gaussian white noise model.

A function on [0, 1] is represented by its wavelet coefficients arranged in a
triangular array: level ``l`` holds ``2**l`` coefficients, level 0 holds the
single father coefficient. Observations ``dY = f dx + dB / sqrt(n)`` are
simulated coefficient-wise as ``a_hat = a + g / sqrt(n)`` with ``g`` i.i.d.
standard normal.

All array helpers accept a flat coefficient vector or a stack of them (leading
batch axes), so Monte Carlo loops can run vectorized over replications.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int], np.random.SeedSequence, None]

MAGIC = b"BCF1"
_HEADER = struct.Struct("<4sIQ")  # magic, L, entry count -> 16 bytes

# relative slack for floating-point ball membership
MEMBERSHIP_RTOL = 1e-12


class InvalidModelError(ValueError):
    """Raised for an observation model that cannot generate data."""


def field_size(L: int) -> int:
    return 2 ** (L + 1) - 1


def level_slice(l: int) -> slice:
    return slice(2**l - 1, 2 ** (l + 1) - 1)


def levels_from_size(size: int) -> int:
    L = int(round(math.log2(size + 1))) - 1
    if L < 0 or field_size(L) != size:
        raise ValueError(f"{size} coefficients do not form a dyadic triangular array")
    return L


@dataclass(frozen=True, eq=False)
class CoeffField:
    """Immutable triangular array of wavelet coefficients, levels ``0..L``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64).reshape(-1)
        levels_from_size(arr.size)
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficients must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def L(self) -> int:
        return levels_from_size(self.data.size)

    @property
    def levels(self) -> list[np.ndarray]:
        return [self.data[level_slice(l)] for l in range(self.L + 1)]

    def level(self, l: int) -> np.ndarray:
        if not 0 <= l <= self.L:
            raise IndexError(f"level {l} outside 0..{self.L}")
        return self.data[level_slice(l)]

    @classmethod
    def zeros(cls, L: int) -> "CoeffField":
        return cls(np.zeros(field_size(L)))

    @classmethod
    def from_levels(cls, levels: Iterable[Sequence[float]]) -> "CoeffField":
        levels = [np.asarray(v, dtype=np.float64).reshape(-1) for v in levels]
        for l, v in enumerate(levels):
            if v.size != 2**l:
                raise ValueError(f"level {l} must hold {2**l} entries, got {v.size}")
        return cls(np.concatenate(levels) if levels else np.zeros(0))

    def padded(self, L: int) -> "CoeffField":
        """Zero-pad up to level ``L`` (no-op when already that deep)."""
        if L < self.L:
            raise ValueError(f"cannot pad a level-{self.L} field down to {L}")
        if L == self.L:
            return self
        out = np.zeros(field_size(L))
        out[: self.data.size] = self.data
        return CoeffField(out)

    def __eq__(self, other):
        if not isinstance(other, CoeffField):
            return NotImplemented
        return self.data.size == other.data.size and np.array_equal(self.data, other.data)

    def __add__(self, other: "CoeffField") -> "CoeffField":
        L = max(self.L, other.L)
        return CoeffField(self.padded(L).data + other.padded(L).data)

    def __sub__(self, other: "CoeffField") -> "CoeffField":
        L = max(self.L, other.L)
        return CoeffField(self.padded(L).data - other.padded(L).data)

    def __mul__(self, lam: float) -> "CoeffField":
        return CoeffField(self.data * float(lam))

    __rmul__ = __mul__

    def __repr__(self):
        return f"CoeffField(L={self.L})"

    # serialization

    def to_json(self) -> str:
        return json.dumps({"L": self.L, "levels": [v.tolist() for v in self.levels]})

    @classmethod
    def from_json(cls, text: str) -> "CoeffField":
        doc = json.loads(text)
        if not isinstance(doc, dict) or "L" not in doc or "levels" not in doc:
            raise ValueError("expected an object with keys 'L' and 'levels'")
        field = cls.from_levels(doc["levels"])
        if field.L != int(doc["L"]):
            raise ValueError(f"declared L={doc['L']} but found {field.L} levels")
        return field

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, self.L, self.data.size)
        return header + self.data.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CoeffField":
        if len(blob) < _HEADER.size:
            raise ValueError("truncated coefficient file")
        magic, L, count = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if count != field_size(L):
            raise ValueError(f"header count {count} inconsistent with L={L}")
        body = blob[_HEADER.size :]
        if len(body) != 8 * count:
            raise ValueError("coefficient payload size does not match header")
        return cls(np.frombuffer(body, dtype="<f8"))

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(self.to_json())
        else:
            path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CoeffField":
        path = Path(path)
        blob = path.read_bytes()
        if blob[:4] == MAGIC:
            return cls.from_bytes(blob)
        return cls.from_json(blob.decode())


@dataclass(frozen=True)
class BesovBall:
    """The ball ``{f : ||f||_{r,p,inf} <= B}``."""

    r: float
    p: float
    B: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"smoothness must be positive, got {self.r}")
        if not (2 <= self.p < math.inf):
            raise ValueError(f"integrability must satisfy 2 <= p < inf, got {self.p}")
        if not self.B > 0:
            raise ValueError(f"radius must be positive, got {self.B}")

    def level_radii(self, L: int) -> np.ndarray:
        """l_p radius allowed at each level ``0..L``."""
        l = np.arange(L + 1)
        return self.B * 2.0 ** (-l * (self.r + 0.5 - 1.0 / self.p))


@dataclass(frozen=True)
class ObservationModel:
    """Seeded white noise channel with noise level ``1/sqrt(n)``, truncated at level ``L``.

    ``sigma`` multiplies the noise; ``sigma=0`` is a diagnostic switch that
    returns the truth unchanged.
    """

    n: float
    seed: SeedLike = None
    L: int = 8
    sigma: float = 1.0

    def __post_init__(self):
        if not self.n > 0:
            raise InvalidModelError(f"sample size must be positive, got {self.n}")
        if self.L < 1:
            raise InvalidModelError(f"simulation cutoff must be >= 1, got {self.L}")
        if self.sigma < 0:
            raise InvalidModelError("sigma must be non-negative")


# ---------------------------------------------------------------------------
# array-level helpers (support leading batch axes)


def level_lp_norms(arr: np.ndarray, p: float, L: int | None = None) -> np.ndarray:
    """Unweighted l_p norm of every level; shape ``(..., L+1)``."""
    arr = np.asarray(arr, dtype=np.float64)
    if L is None:
        L = levels_from_size(arr.shape[-1])
    out = np.empty(arr.shape[:-1] + (L + 1,))
    for l in range(L + 1):
        block = np.abs(arr[..., level_slice(l)])
        if math.isinf(p):
            out[..., l] = block.max(axis=-1)
        else:
            # rescale by the block max so large p does not overflow
            m = block.max(axis=-1)
            safe = np.where(m > 0, m, 1.0)
            out[..., l] = m * np.sum((block / safe[..., None]) ** p, axis=-1) ** (1.0 / p)
    return out


def combine_levels(terms: np.ndarray, h: float) -> np.ndarray:
    """l_h combination over the last axis (h may be ``inf``)."""
    terms = np.asarray(terms, dtype=np.float64)
    if math.isinf(h):
        return terms.max(axis=-1)
    m = terms.max(axis=-1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.sum((terms / safe[..., None]) ** h, axis=-1) ** (1.0 / h)


def weighted_level_norms(arr: np.ndarray, r: float, p: float, L: int | None = None) -> np.ndarray:
    """``2**(l (r + 1/2 - 1/p)) |c_l|_p`` per level; level 0 has weight 1."""
    norms = level_lp_norms(arr, p, L)
    l = np.arange(norms.shape[-1])
    return norms * 2.0 ** (l * (r + 0.5 - 1.0 / p))


def norm_exponent(p: float, norm_mode: str) -> float:
    """Outer exponent ``h`` of the sequence norm selected by ``norm_mode``."""
    if norm_mode == "0pp":
        return p
    if norm_mode == "0p2":
        return 2.0
    raise ValueError(f"unknown norm mode {norm_mode!r}; expected '0pp' or '0p2'")


def seq_norm_array(arr: np.ndarray, p: float, h: float) -> np.ndarray:
    """``||.||_{0,p,h}`` over the last axis."""
    return combine_levels(weighted_level_norms(arr, 0.0, p), h)


def ball_distance_array(arr: np.ndarray, ball: BesovBall, j_cut: int, h: float | None = None) -> np.ndarray:
    """Closed-form distance from the levels ``<= j_cut`` of ``arr`` to ``ball``."""
    h = ball.p if h is None else h
    arr = np.asarray(arr, dtype=np.float64)[..., : field_size(j_cut)]
    norms = level_lp_norms(arr, ball.p, j_cut)
    l = np.arange(j_cut + 1)
    excess = np.maximum(norms - ball.level_radii(j_cut), 0.0) * 2.0 ** (l * (0.5 - 1.0 / ball.p))
    return combine_levels(excess, h)


# ---------------------------------------------------------------------------
# public operations


def simulate_observation(truth: CoeffField, model: ObservationModel) -> CoeffField:
    """Observe ``truth`` through the white noise channel described by ``model``."""
    if truth.L > model.L:
        raise ValueError(f"truth has {truth.L} levels but the model stops at {model.L}")
    base = truth.padded(model.L).data
    if model.sigma == 0:
        return CoeffField(base)
    rng = np.random.default_rng(model.seed)
    noise = rng.standard_normal(base.size)
    return CoeffField(base + noise * (model.sigma / math.sqrt(model.n)))


def simulate_batch(truth: CoeffField, n: float, seeds: Sequence[SeedLike], L: int | None = None) -> np.ndarray:
    """Stack of observations, row ``i`` identical to ``simulate_observation`` with ``seeds[i]``."""
    if not n > 0:
        raise InvalidModelError(f"sample size must be positive, got {n}")
    L = truth.L if L is None else L
    base = truth.padded(L).data
    out = np.empty((len(seeds), base.size))
    scale = 1.0 / math.sqrt(n)
    for i, seed in enumerate(seeds):
        out[i] = base + np.random.default_rng(seed).standard_normal(base.size) * scale
    return out


def besov_seq_norm(c: CoeffField, r: float, p: float, h: float = math.inf) -> float:
    """Besov sequence norm ``||c||_{r,p,h}``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if h < 1:
        raise ValueError(f"h must be >= 1 or inf, got {h}")
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    return float(combine_levels(weighted_level_norms(c.data, r, p), h))


def seq_norm(c: CoeffField, p: float, norm_mode: str = "0pp") -> float:
    """Sequence-space stand-in for the L_p norm (``||.||_{0,p,p}`` or ``||.||_{0,p,2}``)."""
    return besov_seq_norm(c, 0.0, p, norm_exponent(p, norm_mode))


def ball_contains(c: CoeffField, ball: BesovBall) -> bool:
    return besov_seq_norm(c, ball.r, ball.p, math.inf) <= ball.B * (1 + MEMBERSHIP_RTOL)


def ball_distance(c: CoeffField, ball: BesovBall, j_cut: int | None = None, h: float | None = None) -> float:
    """``inf_{g in ball} ||c - g||_{0,p,h}`` over the levels ``<= j_cut``.

    The constraint and (for any ``h``) the objective split over levels, and
    within a level the l_p distance to an l_p ball is attained by radial
    shrinkage, so the infimum is explicit.
    """
    j_cut = c.L if j_cut is None else j_cut
    if not 0 <= j_cut <= c.L:
        raise IndexError(f"cut level {j_cut} outside 0..{c.L}")
    return float(ball_distance_array(c.data, ball, j_cut, h))


def project_levels(c: CoeffField, j: int) -> CoeffField:
    """Zero every level above ``j``."""
    if not 0 <= j <= c.L:
        raise IndexError(f"level {j} outside 0..{c.L}")
    out = np.zeros_like(c.data)
    out[: field_size(j)] = c.data[: field_size(j)]
    return CoeffField(out)


def extract_level(c: CoeffField, l: int) -> np.ndarray:
    return c.level(l).copy()


def make_truth(kind: str, L: int, *, r: float | None = None, B: float | None = None,
               level: int | None = None, seed: SeedLike = None) -> CoeffField:
    """Test-function generators.

    ``zero``
        The null function.
    ``boundary``
        Only ``level`` is active; all entries have magnitude ``B 2^{-l(r+1/2)}``
        so the level sits exactly on the sphere of ``Sigma(r, B)`` for every p.
        Signs are positive unless a seed is given.
    ``random``
        Every level ``0..L`` saturated as above with uniform random signs.
    """
    if kind == "zero":
        return CoeffField.zeros(L)
    if kind not in ("boundary", "random"):
        raise ValueError(f"unknown truth kind {kind!r}")
    if r is None or B is None:
        raise ValueError(f"kind {kind!r} needs r and B")
    if kind == "boundary":
        if level is None or not 0 <= level <= L:
            raise ValueError(f"boundary truth needs a level in 0..{L}")
        data = np.zeros(field_size(L))
        sl = level_slice(level)
        signs = np.ones(2**level) if seed is None else np.random.default_rng(seed).choice([-1.0, 1.0], 2**level)
        data[sl] = signs * B * 2.0 ** (-level * (r + 0.5))
        return CoeffField(data)
    rng = np.random.default_rng(seed)
    mags = np.concatenate([np.full(2**l, B * 2.0 ** (-l * (r + 0.5))) for l in range(L + 1)])
    return CoeffField(mags * rng.choice([-1.0, 1.0], mags.size))
