"""HiPPO-normal construction and S5-RF layer initialisation.

Everything here is plain numpy in double precision. The torch modules in
:mod:`s5rf.layers` copy these arrays into parameters.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidConfigError, NumericFailureError


class Discretization(str, enum.Enum):
    ZOH = "zoh"
    DIRAC = "dirac"

    @classmethod
    def parse(cls, value) -> "Discretization":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidConfigError(f"unknown discretization mode {value!r}") from None


@dataclass
class EigenSystem:
    lambdas: np.ndarray  # (H,) complex
    basis: np.ndarray  # (H, H) complex, unitary
    basis_inverse: np.ndarray  # conjugate transpose of basis


@dataclass
class SsmLayerParams:
    """Initial state of one S5-RF layer.

    ``log_neg_real`` stores ``log(-Re(lambda))`` so the decay stays positive
    whatever the optimiser does; ``freq`` is ``Im(lambda)``.
    """

    log_neg_real: np.ndarray
    freq: np.ndarray
    log_eta: np.ndarray
    connection: np.ndarray  # (H, H_in) complex
    threshold: float = 1.0
    mode: Discretization = Discretization.DIRAC
    fixed_basis: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.log_neg_real.shape[0]

    @property
    def input_size(self) -> int:
        return self.connection.shape[1]

    @property
    def lambdas(self) -> np.ndarray:
        return -np.exp(self.log_neg_real) + 1j * self.freq

    @property
    def eta(self) -> np.ndarray:
        return np.exp(self.log_eta)


def build_hippo_normal(size: int) -> np.ndarray:
    """Normal part of the HiPPO-LegS matrix.

    Entry (n, k) is -1/2 on the diagonal and -/+ sqrt((n+1/2)(k+1/2)) below /
    above it, so ``A + A.T == -I``.
    """
    if int(size) != size or size < 1:
        raise InvalidConfigError(f"HiPPO size must be a positive integer, got {size!r}")
    size = int(size)
    q = np.sqrt(np.arange(size, dtype=np.float64) + 0.5)
    outer = np.outer(q, q)
    a = np.tril(-outer, -1) + np.triu(outer, 1)
    np.fill_diagonal(a, -0.5)
    return a


def eig_hippo_normal(a: np.ndarray) -> EigenSystem:
    """Diagonalise a HiPPO-normal matrix via the Hermitian matrix i(A + I/2).

    Eigenvalues are ordered by ascending imaginary part; the sort is stable,
    so the (real) zero-frequency mode of an odd-sized block keeps its place.
    """
    a = np.asarray(a, dtype=np.float64)
    size = a.shape[0]
    herm = 1j * (a + 0.5 * np.eye(size))
    try:
        mu, v = np.linalg.eigh(herm)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"eigensolver failed: {exc}", residual=float("inf")) from exc
    lambdas = -0.5 - 1j * mu
    order = np.argsort(lambdas.imag, kind="stable")
    lambdas = lambdas[order]
    v = v[:, order]
    v_inv = v.conj().T
    recon = (v * lambdas) @ v_inv
    residual = np.linalg.norm(recon - a) / max(np.linalg.norm(a), 1e-300)
    if not np.isfinite(residual) or residual > 1e-8:
        raise NumericFailureError(
            f"eigendecomposition residual {residual:.3e} too large", residual=residual
        )
    return EigenSystem(lambdas=lambdas, basis=v, basis_inverse=v_inv)


def _complex_normal(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * rng.standard_normal(shape) + 1j * scale * rng.standard_normal(shape)


def init_layer(
    input_size: int,
    size: int,
    block_size: int,
    seed: int,
    mode=Discretization.DIRAC,
    *,
    fixed_basis: bool = False,
    threshold: float = 1.0,
) -> SsmLayerParams:
    """HiPPO-normal initialisation with ``size // block_size`` identical blocks.

    The random connection matrix has complex entries of variance
    ``1 / input_size`` and is rotated block-wise into the eigenbasis.
    With ``fixed_basis=True`` the block-diagonal eigenbasis is kept for the
    spike readout of a continuous-input layer.
    """
    if input_size < 1 or size < 1:
        raise InvalidConfigError("layer dimensions must be positive")
    if block_size < 1 or size % block_size:
        raise InvalidConfigError(f"block_size {block_size} does not divide layer size {size}")
    eig = eig_hippo_normal(build_hippo_normal(block_size))
    n_blocks = size // block_size
    lambdas = np.tile(eig.lambdas, n_blocks)

    rng = np.random.default_rng(seed)
    conn = _complex_normal(rng, (size, input_size), 1.0 / input_size)
    for j in range(n_blocks):
        rows = slice(j * block_size, (j + 1) * block_size)
        conn[rows] = eig.basis_inverse @ conn[rows]

    basis = None
    if fixed_basis:
        basis = np.zeros((size, size), dtype=np.complex128)
        for j in range(n_blocks):
            rows = slice(j * block_size, (j + 1) * block_size)
            basis[rows, rows] = eig.basis
    return SsmLayerParams(
        log_neg_real=np.log(-lambdas.real),
        freq=lambdas.imag.copy(),
        log_eta=np.zeros(size),
        connection=conn,
        threshold=float(threshold),
        mode=Discretization.parse(mode),
        fixed_basis=basis,
    )


def init_layer_random(
    input_size: int,
    size: int,
    seed: int,
    mode=Discretization.DIRAC,
    *,
    decay_range=(2.0, 3.0),
    freq_range=(5.0, 10.0),
    threshold: float = 1.0,
) -> SsmLayerParams:
    """Ablation initialisation: decay ~ U(2, 3), frequency ~ U(5, 10), no eigenbasis."""
    if input_size < 1 or size < 1:
        raise InvalidConfigError("layer dimensions must be positive")
    rng = np.random.default_rng(seed)
    decay = rng.uniform(*decay_range, size=size)
    freq = rng.uniform(*freq_range, size=size)
    conn = _complex_normal(rng, (size, input_size), 1.0 / input_size)
    return SsmLayerParams(
        log_neg_real=np.log(decay),
        freq=freq,
        log_eta=np.zeros(size),
        connection=conn,
        threshold=float(threshold),
        mode=Discretization.parse(mode),
    )
