"""Tensor-train representation of a weight matrix.

A matrix ``W`` of shape ``M x N`` with factorizations ``M = m_1 * ... * m_d``
and ``N = n_1 * ... * n_d`` is stored as ``d`` cores ``G_k`` of shape
``(m_k, n_k, r_{k-1}, r_k)`` with boundary ranks ``r_0 = r_d = 1``. The entry
at 1-based position ``(i, j)`` is the product of the ``(r_{k-1}, r_k)`` core
slices picked out by the row-major multi-indices of ``i`` and ``j``:

    W[i, j] = G_1[i_1, j_1] @ G_2[i_2, j_2] @ ... @ G_d[i_d, j_d]

Storage is ``sum_k m_k n_k r_{k-1} r_k`` floats instead of ``M * N``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, RangeError, ShapeError, SizeError
from .indexing import check_dims, linear_to_multi

# Largest dense materialization to_dense() will perform without force=True.
DENSE_CAP = 1 << 24

_MAGIC = b"TTM1"


@dataclass(frozen=True)
class TTSpec:
    """Shape contract for a TT matrix: mode factorizations plus ranks.

    ``ranks`` is the full rank vector of length ``d + 1`` including the
    boundary ones, so core ``k`` (0-based) has shape
    ``(out_modes[k], in_modes[k], ranks[k], ranks[k + 1])``.
    """

    out_modes: tuple[int, ...]
    in_modes: tuple[int, ...]
    ranks: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "out_modes", check_dims(self.out_modes))
        object.__setattr__(self, "in_modes", check_dims(self.in_modes))
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        if len(self.in_modes) != len(self.out_modes):
            raise ShapeError(
                f"mode lists differ in length: out {self.out_modes}, in {self.in_modes}"
            )
        if len(self.ranks) != self.ndim + 1:
            raise ShapeError(
                f"rank vector must have length d+1={self.ndim + 1}, got {self.ranks}"
            )
        if any(r < 1 for r in self.ranks):
            raise ShapeError(f"ranks must be >= 1, got {self.ranks}")
        if self.ranks[0] != 1 or self.ranks[-1] != 1:
            raise ShapeError(f"boundary ranks must be 1, got {self.ranks}")

    @classmethod
    def with_rank(cls, out_modes, in_modes, rank: int) -> "TTSpec":
        """Spec with every internal rank set to the same value."""
        d = len(tuple(out_modes))
        if d < 1:
            raise ShapeError("mode lists must be non-empty")
        ranks = (1,) + (int(rank),) * (d - 1) + (1,)
        return cls(tuple(out_modes), tuple(in_modes), ranks)

    @property
    def ndim(self) -> int:
        return len(self.out_modes)

    @property
    def out_dim(self) -> int:
        return math.prod(self.out_modes)

    @property
    def in_dim(self) -> int:
        return math.prod(self.in_modes)

    def core_shape(self, k: int) -> tuple[int, int, int, int]:
        return (self.out_modes[k], self.in_modes[k], self.ranks[k], self.ranks[k + 1])

    def param_count(self) -> int:
        """Floats stored by the TT format."""
        return sum(math.prod(self.core_shape(k)) for k in range(self.ndim))

    def dense_param_count(self) -> int:
        """Floats a plain dense matrix of the same shape would store."""
        return self.out_dim * self.in_dim


class TTMatrix:
    """A concrete TT matrix: a :class:`TTSpec` plus its core arrays."""

    def __init__(self, spec: TTSpec, cores):
        cores = [np.ascontiguousarray(g, dtype=np.float64) for g in cores]
        if len(cores) != spec.ndim:
            raise ShapeError(f"expected {spec.ndim} cores, got {len(cores)}")
        for k, g in enumerate(cores):
            if g.shape != spec.core_shape(k):
                raise ShapeError(
                    f"core {k} has shape {g.shape}, spec requires {spec.core_shape(k)}"
                )
        self.spec = spec
        self.cores = cores

    @property
    def shape(self) -> tuple[int, int]:
        return (self.spec.out_dim, self.spec.in_dim)

    def param_count(self) -> int:
        return self.spec.param_count()

    @classmethod
    def glorot(cls, spec: TTSpec, rng: np.random.Generator) -> "TTMatrix":
        """Random init matched to the gain of dense Glorot on the full matrix.

        Core ``k`` is drawn from Normal(0, sigma_k^2) with
        ``sigma_k = sqrt(2 / (n_k r_k + m_k r_{k-1}))``. For d=1 this is
        exactly dense Glorot, so dense layers reuse it.
        """
        cores = []
        for k in range(spec.ndim):
            m, n, r_prev, r_next = spec.core_shape(k)
            sigma = math.sqrt(2.0 / (n * r_next + m * r_prev))
            cores.append(rng.normal(0.0, sigma, size=(m, n, r_prev, r_next)))
        return cls(spec, cores)

    @classmethod
    def zeros(cls, spec: TTSpec) -> "TTMatrix":
        return cls(spec, [np.zeros(spec.core_shape(k)) for k in range(spec.ndim)])

    def element(self, i: int, j: int) -> float:
        """Entry at 1-based ``(i, j)`` via the core slice product."""
        m_dim, n_dim = self.shape
        if not 1 <= i <= m_dim:
            raise RangeError(f"row index {i} outside [1, {m_dim}]")
        if not 1 <= j <= n_dim:
            raise RangeError(f"column index {j} outside [1, {n_dim}]")
        rows = linear_to_multi(i, self.spec.out_modes)
        cols = linear_to_multi(j, self.spec.in_modes)
        acc = np.ones((1, 1))
        for g, ik, jk in zip(self.cores, rows, cols):
            acc = acc @ g[ik - 1, jk - 1]
        return float(acc[0, 0])

    def to_dense(self, force: bool = False) -> np.ndarray:
        """Materialize the full ``M x N`` matrix.

        Refuses when ``M * N`` exceeds ``DENSE_CAP`` unless ``force`` is set,
        because accidental materialization defeats the format.
        """
        m_dim, n_dim = self.shape
        if m_dim * n_dim > DENSE_CAP and not force:
            raise SizeError(
                f"dense materialization of {m_dim}x{n_dim} exceeds cap {DENSE_CAP}"
            )
        # Contract cores left to right; acc is indexed (m_1, n_1, ..., m_k, n_k, r_k).
        acc = self.cores[0][:, :, 0, :]
        for g in self.cores[1:]:
            acc = np.tensordot(acc, g, axes=([acc.ndim - 1], [2]))
        acc = acc[..., 0]
        d = self.spec.ndim
        perm = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
        return np.ascontiguousarray(acc.transpose(perm).reshape(m_dim, n_dim))

    def copy(self) -> "TTMatrix":
        return TTMatrix(self.spec, [g.copy() for g in self.cores])


def write_ttmatrix(fh: io.BufferedIOBase, tt: TTMatrix, bias=None) -> None:
    """Serialize to the TTM1 binary layout.

    Layout: magic ``TTM1``, then little-endian int64 fields ``d``,
    ``out_modes[0..d)``, ``in_modes[0..d)``, ``ranks[0..d]``, ``bias flag``
    (0 or 1), then each core's float64 data in C order (first core first),
    then — when the flag is 1 — the bias vector's ``M`` float64 values.
    """
    spec = tt.spec
    if bias is not None:
        bias = np.ascontiguousarray(bias, dtype=np.float64)
        if bias.shape != (spec.out_dim,):
            raise ShapeError(f"bias must have shape ({spec.out_dim},), got {bias.shape}")
    header = [spec.ndim, *spec.out_modes, *spec.in_modes, *spec.ranks,
              0 if bias is None else 1]
    fh.write(_MAGIC)
    fh.write(struct.pack(f"<{len(header)}q", *header))
    for g in tt.cores:
        fh.write(np.ascontiguousarray(g, dtype="<f8").tobytes())
    if bias is not None:
        fh.write(bias.astype("<f8").tobytes())


def read_ttmatrix(fh: io.BufferedIOBase):
    """Parse the TTM1 layout written by :func:`write_ttmatrix`.

    Returns ``(TTMatrix, bias or None)``.
    """
    magic = fh.read(4)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    raw = fh.read(8)
    if len(raw) != 8:
        raise FormatError("truncated header: missing core count")
    (d,) = struct.unpack("<q", raw)
    if not 1 <= d <= 64:
        raise FormatError(f"implausible core count {d}")
    need = 8 * (3 * d + 2)
    raw = fh.read(need)
    if len(raw) != need:
        raise FormatError("truncated header: missing mode/rank/flag fields")
    fields = struct.unpack(f"<{3 * d + 2}q", raw)
    out_modes = fields[:d]
    in_modes = fields[d : 2 * d]
    ranks = fields[2 * d : 3 * d + 1]
    bias_flag = fields[3 * d + 1]
    if bias_flag not in (0, 1):
        raise FormatError(f"bias flag must be 0 or 1, got {bias_flag}")
    try:
        spec = TTSpec(out_modes, in_modes, ranks)
    except ShapeError as e:
        raise FormatError(f"invalid header: {e}") from e
    cores = []
    for k in range(d):
        shape = spec.core_shape(k)
        count = math.prod(shape)
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise FormatError(f"truncated core {k}: wanted {count} float64s")
        cores.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    bias = None
    if bias_flag:
        raw = fh.read(8 * spec.out_dim)
        if len(raw) != 8 * spec.out_dim:
            raise FormatError(f"truncated bias: wanted {spec.out_dim} float64s")
        bias = np.frombuffer(raw, dtype="<f8").copy()
    extra = fh.read(1)
    if extra:
        raise FormatError("trailing bytes after payload")
    return TTMatrix(spec, cores), bias
