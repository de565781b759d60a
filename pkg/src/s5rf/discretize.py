"""ZOH and Dirac discretisation of a diagonal SSM with a memory scale eta.

Both schemes scale the continuous system by ``eta`` and then step with a
fixed ``dt``. The tensor-level functions are differentiable and are what the
layers call every forward pass; :func:`discretize_zoh` / :func:`discretize_dirac`
wrap them for an :class:`~s5rf.hippo.SsmLayerParams` snapshot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidConfigError, InvalidInputError

# Below this |eta * dt * lambda| the ZOH input gain uses its series expansion.
SERIES_SWITCH = 1e-8


@dataclass
class DiscreteSystem:
    a_bar: np.ndarray  # (H,) complex
    b_bar: np.ndarray  # (H, H_in) complex
    dt: float


def _check_dt(dt):
    if not dt > 0:
        raise InvalidConfigError(f"time step must be positive, got {dt!r}")


def zoh(lam: torch.Tensor, eta: torch.Tensor, b: torch.Tensor, dt: float = 1.0):
    """Return ``(a_bar, b_bar)`` for the eta-scaled zero-order hold."""
    _check_dt(dt)
    z = eta * dt * lam
    a_bar = torch.exp(z)
    small = z.abs() < SERIES_SWITCH
    safe_lam = torch.where(small, torch.ones_like(lam), lam)
    gain = torch.where(small, eta * dt * (1 + z / 2), (a_bar - 1) / safe_lam)
    return a_bar, gain.unsqueeze(-1) * b


def dirac(lam: torch.Tensor, eta: torch.Tensor, b: torch.Tensor, dt: float = 1.0):
    """Return ``(a_bar, b_bar)`` for inputs that are Dirac combs on the step grid."""
    _check_dt(dt)
    a_bar = torch.exp(eta * dt * lam)
    return a_bar, eta.unsqueeze(-1) * b


def _snapshot(params, fn, dt):
    lam = torch.from_numpy(np.asarray(params.lambdas, dtype=np.complex128))
    eta = torch.from_numpy(np.asarray(params.eta, dtype=np.float64))
    b = torch.from_numpy(np.asarray(params.connection, dtype=np.complex128))
    a_bar, b_bar = fn(lam, eta, b, dt)
    return DiscreteSystem(a_bar=a_bar.numpy(), b_bar=b_bar.numpy(), dt=float(dt))


def discretize_zoh(params, dt: float = 1.0) -> DiscreteSystem:
    return _snapshot(params, zoh, dt)


def discretize_dirac(params, dt: float = 1.0) -> DiscreteSystem:
    return _snapshot(params, dirac, dt)


def analytic_state(lam: complex, events, t: float, b: complex = 1.0) -> complex:
    """Exact state at time ``t`` driven by weighted Diracs ``(t_n, u_n)`` from rest."""
    times = [float(tn) for tn, _ in events]
    if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
        raise InvalidInputError("events must be sorted by time")
    total = 0j
    for tn, un in events:
        if tn <= t:
            total += np.exp(lam * (t - tn)) * b * un
    return complex(total)
