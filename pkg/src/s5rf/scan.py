"""Diagonal linear recurrence ``x_k = a * x_{k-1} + b_k``.

Two evaluators are provided: a plain left fold (the reference) and a
work-efficient odd/even prefix scan whose reduction tree depends only on the
sequence length. The scan is exposed to autograd through :class:`LinearScan`,
whose backward pass is itself a reversed scan (:func:`scan_adjoint`).

Layout convention: ``inputs`` has shape ``(..., L, H)``; ``a_bar`` is
time-invariant and broadcasts against a single step ``(..., H)``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch

from .errors import InvalidInputError


def combine(e1, e2):
    """Associative operator on ``(a, b)`` pairs: apply e1 first, then e2."""
    a1, b1 = e1
    a2, b2 = e2
    return a1 * a2, a2 * b1 + b2


def _as_tensor(x):
    return torch.from_numpy(x) if isinstance(x, np.ndarray) else torch.as_tensor(x)


def _prepare(a_bar, inputs, x0):
    was_numpy = isinstance(inputs, np.ndarray)
    b = _as_tensor(inputs)
    a = _as_tensor(a_bar)
    if b.dim() < 2:
        raise InvalidInputError(f"inputs must have shape (..., L, H), got {tuple(b.shape)}")
    if b.shape[-2] < 1:
        raise InvalidInputError("sequence length must be at least 1")
    step_shape = b.shape[:-2] + b.shape[-1:]
    try:
        torch.broadcast_shapes(a.shape, step_shape)
    except RuntimeError:
        raise InvalidInputError(
            f"a_bar shape {tuple(a.shape)} does not broadcast against step shape {tuple(step_shape)}"
        ) from None
    if torch.broadcast_shapes(a.shape, step_shape) != step_shape:
        raise InvalidInputError("a_bar may not enlarge the input shape")
    if x0 is not None:
        x0 = _as_tensor(x0)
        if torch.broadcast_shapes(x0.shape, step_shape) != step_shape:
            raise InvalidInputError(f"x0 shape {tuple(x0.shape)} incompatible with {tuple(step_shape)}")
    dtype = torch.promote_types(a.dtype, b.dtype)
    if x0 is not None:
        dtype = torch.promote_types(dtype, x0.dtype)
    a, b = a.to(dtype), b.to(dtype)
    if x0 is not None:
        x0 = x0.to(dtype)
    return a, b, x0, was_numpy


def _fold_x0(a, b, x0):
    if x0 is None:
        return b
    b = b.clone()
    b[..., 0, :] = b[..., 0, :] + a * x0
    return b


def _sequential(a, b):
    out = torch.empty_like(b)
    x = torch.zeros_like(b[..., 0, :])
    for k in range(b.shape[-2]):
        x = a * x + b[..., k, :]
        out[..., k, :] = x
    return out


def _odd_even(a, b):
    # b: (L, ...) with time leading; a: (...) constant over time at this level.
    n = b.shape[0]
    if n == 1:
        return b.clone()
    half = n // 2
    odd = _odd_even(a * a, torch.addcmul(b[1 : 2 * half : 2], a, b[0 : 2 * half : 2]))
    out = torch.empty_like(b)
    out[0] = b[0]
    out[1 : 2 * half : 2] = odd
    if n > 2:
        m = (n - 1) // 2
        out[2::2] = torch.addcmul(b[2::2], a, odd[:m])
    return out


# Columns per scan block. Blocks are fixed by the data shape alone so the
# arithmetic never depends on how many workers run them.
BLOCK_COLUMNS = 4096


def _parallel(a, b, workers=1):
    step_shape = b.shape[:-2] + b.shape[-1:]
    n = b.shape[-2]
    bt = b.movedim(-2, 0).reshape(n, -1)
    af = a.expand(step_shape).reshape(-1) if a.dim() else a
    width = bt.shape[1]
    blocks = [(lo, min(lo + BLOCK_COLUMNS, width)) for lo in range(0, width, BLOCK_COLUMNS)]
    out = torch.empty_like(bt)

    def run(lohi):
        lo, hi = lohi
        a_part = af[lo:hi].contiguous() if af.dim() else af
        out[:, lo:hi] = _odd_even(a_part, bt[:, lo:hi].contiguous())

    if workers <= 1 or len(blocks) == 1:
        for blk in blocks:
            run(blk)
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
            list(pool.map(run, blocks))
    return out.reshape((n,) + step_shape).movedim(0, -2)


def _finish(x, was_numpy):
    return x.numpy() if was_numpy else x


def scan_sequential(a_bar, inputs, x0=None):
    """Reference left fold of the recurrence, one step at a time."""
    a, b, x0, was_numpy = _prepare(a_bar, inputs, x0)
    return _finish(_sequential(a, _fold_x0(a, b, x0)), was_numpy)


def scan_parallel(a_bar, inputs, x0=None, workers: int = 1):
    """Inclusive prefix scan of ``combine`` over ``(a_bar, inputs[k])``.

    Depth is O(log L) and total work O(L). ``workers`` splits the state axis
    across threads; the arithmetic per element does not change, so results
    are bit-identical for any worker count.
    """
    a, b, x0, was_numpy = _prepare(a_bar, inputs, x0)
    return _finish(_parallel(a, _fold_x0(a, b, x0), workers), was_numpy)


def _run(a, b, mode, workers):
    if mode == "sequential":
        return _sequential(a, b)
    if mode == "parallel":
        return _parallel(a, b, workers)
    raise InvalidInputError(f"unknown scan mode {mode!r}")


def _reduce_to(grad, shape):
    if grad.shape == shape:
        return grad
    return grad.sum_to_size(shape) if len(shape) else grad.sum()


def scan_adjoint(a_bar, inputs, upstream_grads, x0=None, states=None, mode="parallel", workers=1):
    """Reverse-mode pass of the recurrence.

    Gradients follow the real-loss convention ``dL/dRe + i dL/dIm`` used by
    torch. The input adjoint solves ``g_k = conj(a) g_{k+1} + upstream_k``,
    which is the same scan run backwards in time.

    Returns ``(grad_a_bar, grad_inputs, grad_x0)``.
    """
    a, b, x0, was_numpy = _prepare(a_bar, inputs, x0)
    g = _as_tensor(upstream_grads).to(b.dtype)
    if g.shape != b.shape:
        raise InvalidInputError(f"upstream grads {tuple(g.shape)} do not match inputs {tuple(b.shape)}")
    if states is None:
        states = _run(a, _fold_x0(a, b, x0), mode, workers)
    else:
        states = _as_tensor(states).to(b.dtype)
    a_conj = a.conj() if a.is_complex() else a
    grad_inputs = _run(a_conj, g.flip(-2), mode, workers).flip(-2)
    prev = torch.zeros_like(states)
    prev[..., 1:, :] = states[..., :-1, :]
    if x0 is not None:
        prev[..., 0, :] = x0
    prev = prev.conj() if prev.is_complex() else prev
    grad_a = _reduce_to((grad_inputs * prev).sum(-2), a.shape)
    grad_x0 = a_conj * grad_inputs[..., 0, :]
    if x0 is not None:
        grad_x0 = _reduce_to(grad_x0, x0.shape)
    if was_numpy:
        return grad_a.numpy(), grad_inputs.numpy(), grad_x0.numpy()
    return grad_a, grad_inputs, grad_x0


class LinearScan(torch.autograd.Function):
    """Differentiable recurrence with an explicit adjoint scan for backward."""

    @staticmethod
    def forward(ctx, a_bar, inputs, mode="parallel", workers=1):
        a, b, _, _ = _prepare(a_bar, inputs, None)
        states = _run(a, b, mode, workers)
        ctx.save_for_backward(a, states)
        ctx.mode, ctx.workers = mode, workers
        ctx.a_shape, ctx.a_dtype = a_bar.shape, a_bar.dtype
        ctx.b_dtype = inputs.dtype
        return states

    @staticmethod
    def backward(ctx, grad_states):
        a, states = ctx.saved_tensors
        grad_a = grad_b = None
        a_conj = a.conj() if a.is_complex() else a
        grad_b = _run(a_conj, grad_states.to(states.dtype).flip(-2), ctx.mode, ctx.workers).flip(-2)
        if ctx.needs_input_grad[0]:
            prev = torch.zeros_like(states)
            prev[..., 1:, :] = states[..., :-1, :]
            prev = prev.conj() if prev.is_complex() else prev
            grad_a = _reduce_to((grad_b * prev).sum(-2), ctx.a_shape)
            if not ctx.a_dtype.is_complex and grad_a.is_complex():
                grad_a = grad_a.real
        if not ctx.b_dtype.is_complex and grad_b.is_complex():
            grad_b = grad_b.real
        return grad_a, grad_b, None, None


def linear_recurrence(a_bar, inputs, mode="parallel", workers=1):
    """Autograd-aware recurrence with zero initial state."""
    return LinearScan.apply(a_bar, inputs, mode, workers)
