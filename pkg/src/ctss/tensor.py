"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive takes and returns :class:`Tensor` objects. Passing a
:class:`Tape` records a backward closure; backward replays the closures in
exact reverse order of the forward calls and accumulates gradients keyed by
tensor identity. All arithmetic is float64 on CPU, so identical inputs
produce bitwise-identical outputs.

Sequence inputs are channel-major: a single trial is ``[C, L]`` and a batch
is ``[B, C, L]``. The sequence primitives accept either rank and return the
matching rank.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError, NumericError, StateError, ValidationError


class Tensor:
    """A dense n-dimensional float64 array (row-major)."""

    def __init__(self, data, check_finite: bool = True):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if check_finite:
            _ensure_finite(arr, "tensor construction")
        self.data = arr

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64), check_finite=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() requires a single-element tensor, got shape {tuple(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), check_finite=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.shape)})"


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Gradients are accumulated in buffers owned by the tape, keyed by the
    identity of the tensors that took part in the recorded forward pass. A
    tape is single-use: after :meth:`backward` it refuses further recording.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], Iterable[tuple[Tensor, np.ndarray]]]]] = []
        self._grads: dict[int, np.ndarray] = {}
        self._finished = False

    def record(self, out: Tensor, backward_fn) -> None:
        if self._finished:
            raise StateError("tape already consumed by backward; use a fresh tape")
        self._entries.append((out, backward_fn))

    def _accumulate(self, t: Tensor, g: np.ndarray) -> None:
        buf = self._grads.get(id(t))
        if buf is None:
            self._grads[id(t)] = np.array(g, dtype=np.float64, copy=True)
        else:
            buf += g

    def backward(self, output_grad, output: Optional[Tensor] = None) -> None:
        """Replay recorded primitives in reverse, seeding ``output`` with ``output_grad``.

        ``output`` defaults to the most recently recorded result.
        """
        if self._finished:
            raise StateError("backward already ran on this tape")
        if not self._entries:
            raise StateError("backward called on a tape with no recorded forward pass")
        out = self._entries[-1][0] if output is None else output
        seed = np.asarray(output_grad.data if isinstance(output_grad, Tensor) else output_grad, dtype=np.float64)
        if seed.shape != out.data.shape:
            raise DimensionError(
                f"output grad shape {seed.shape} does not match output shape {out.data.shape}"
            )
        self._finished = True
        self._accumulate(out, seed)
        for node, fn in reversed(self._entries):
            g = self._grads.get(id(node))
            if g is None:
                continue  # branch not on the path to the seeded output
            for t, gt in fn(g):
                self._accumulate(t, gt)

    def grad(self, t: Tensor) -> Optional[np.ndarray]:
        """Accumulated gradient for ``t``, or None if it never received one."""
        return self._grads.get(id(t))


def backward(tape: Tape, loss_grad) -> Tape:
    """Run reverse-mode accumulation over ``tape`` seeded at its final output."""
    tape.backward(loss_grad)
    return tape


# ---------------------------------------------------------------------------
# shape helpers


def _as_batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    """Promote [C, L] to [1, C, L]; reject other ranks."""
    if x.ndim == 2:
        return x.data[None, :, :], True
    if x.ndim == 3:
        return x.data, False
    raise DimensionError(f"{op} expects a [C, L] or [B, C, L] input, got shape {tuple(x.shape)}")


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def _sliding_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Read-only view [B, C, L_out, K] of every stride-spaced window."""
    b, c, length = x.shape
    n_out = (length - kernel) // stride + 1
    sb, sc, sl = x.strides
    return as_strided(x, shape=(b, c, n_out, kernel), strides=(sb, sc, sl * stride, sl), writeable=False)


# ---------------------------------------------------------------------------
# primitives


def conv1d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = 0,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Strided cross-correlation along the last axis.

    ``x`` is [C_in, L] or [B, C_in, L]; ``kernels`` is [C_out, C_in, K];
    ``bias`` is [C_out]. Output length is floor((L + 2p - K)/s) + 1.
    """
    xb, squeezed = _as_batched(x, "conv1d")
    if kernels.ndim != 3:
        raise DimensionError(f"conv1d kernels must be [C_out, C_in, K], got shape {tuple(kernels.shape)}")
    c_out, c_in, k = kernels.shape
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d bias must have shape [{c_out}], got {tuple(bias.shape)}")
    if stride < 1 or padding < 0:
        raise ValidationError(f"conv1d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    b, c, length = xb.shape
    if c != c_in:
        raise DimensionError(f"conv1d input has {c} channels but kernels expect {c_in}")
    padded_len = length + 2 * padding
    if k > padded_len:
        raise DimensionError(f"conv1d kernel size {k} exceeds padded input length {padded_len}")
    n_out = conv_output_length(length, k, stride, padding)
    if n_out < 1:
        raise DimensionError(f"conv1d output length {n_out} < 1 for L={length}, K={k}, s={stride}, p={padding}")

    if padding:
        xp = np.zeros((b, c, padded_len), dtype=np.float64)
        xp[:, :, padding:padding + length] = xb
    else:
        xp = xb
    # materialize windows as [B, L_out, C_in, K] so the contraction is one matmul
    sb, sc, sl = xp.strides
    windows = np.ascontiguousarray(
        as_strided(xp, shape=(b, n_out, c, k), strides=(sb, sl * stride, sc, sl), writeable=False)
    ).reshape(b * n_out, c * k)
    kflat = kernels.data.reshape(c_out, c * k)
    out = (windows @ kflat.T).reshape(b, n_out, c_out).transpose(0, 2, 1)
    out = np.ascontiguousarray(out) + bias.data[None, :, None]
    _ensure_finite(out, "conv1d")
    result = Tensor(out[0] if squeezed else out, check_finite=False)

    if tape is not None:

        def back(gout: np.ndarray):
            g = gout[None, :, :] if squeezed else gout
            gbias = g.sum(axis=(0, 2))
            gflat = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b * n_out, c_out)
            gker = (gflat.T @ windows).reshape(c_out, c, k)
            spread = (gflat @ kflat).reshape(b, n_out, c, k)
            # scatter-add windows back in [B, L, C] layout so axes line up per tap
            gxp = np.zeros((b, padded_len, c), dtype=np.float64)
            for j in range(k):
                gxp[:, j:j + stride * n_out:stride, :] += spread[:, :, :, j]
            gx = gxp[:, padding:padding + length, :] if padding else gxp
            gx = np.ascontiguousarray(gx.transpose(0, 2, 1))
            if squeezed:
                gx = gx[0]
            return [(x, gx), (kernels, gker), (bias, gbias)]

        tape.record(result, back)
    return result


def elu(x: Tensor, alpha: float = 1.0, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise x if x > 0 else alpha * (exp(x) - 1)."""
    xd = x.data
    neg = xd <= 0.0
    out = xd.copy()
    np.expm1(xd, out=out, where=neg)
    if alpha != 1.0:
        out[neg] *= alpha
    _ensure_finite(out, "elu")
    result = Tensor(out, check_finite=False)
    if tape is not None:
        deriv = np.where(xd > 0.0, 1.0, out + alpha)

        def back(gout: np.ndarray):
            return [(x, gout * deriv)]

        tape.record(result, back)
    return result


def maxpool1d(x: Tensor, k: int, stride: int, tape: Optional[Tape] = None) -> Tensor:
    """Windowed maximum along the last axis; gradient flows to the first argmax."""
    xb, squeezed = _as_batched(x, "maxpool1d")
    if k < 1 or stride < 1:
        raise ValidationError(f"maxpool1d needs k >= 1 and stride >= 1, got {k}, {stride}")
    b, c, length = xb.shape
    if k > length:
        raise DimensionError(f"maxpool1d window {k} exceeds input length {length}")
    windows = _sliding_windows(xb, k, stride)
    out = windows.max(axis=3)
    _ensure_finite(out, "maxpool1d")
    result = Tensor(out[0] if squeezed else out, check_finite=False)

    if tape is not None:
        argmax = windows.argmax(axis=3)  # first maximal index on ties
        n_out = out.shape[2]

        def back(gout: np.ndarray):
            g = gout[None, :, :] if squeezed else gout
            gx = np.zeros((b, c, length), dtype=np.float64)
            bi = np.arange(b)[:, None, None]
            ci = np.arange(c)[None, :, None]
            pos = np.arange(n_out)[None, None, :] * stride + argmax
            np.add.at(gx, (bi, ci, pos), g)
            return [(x, gx[0] if squeezed else gx)]

        tape.record(result, back)
    return result


def adaptive_avg_pool1d(x: Tensor, out_len: int, tape: Optional[Tape] = None) -> Tensor:
    """Mean over contiguous bins covering the last axis; out_len=1 is the global mean."""
    xb, squeezed = _as_batched(x, "adaptive_avg_pool1d")
    if out_len < 1:
        raise ValidationError(f"adaptive_avg_pool1d needs out_len >= 1, got {out_len}")
    b, c, length = xb.shape
    if out_len > length:
        raise DimensionError(f"adaptive_avg_pool1d out_len {out_len} exceeds input length {length}")
    bounds = [((i * length) // out_len, -((-(i + 1) * length) // out_len)) for i in range(out_len)]
    out = np.empty((b, c, out_len), dtype=np.float64)
    for i, (lo, hi) in enumerate(bounds):
        out[:, :, i] = xb[:, :, lo:hi].mean(axis=2)
    _ensure_finite(out, "adaptive_avg_pool1d")
    result = Tensor(out[0] if squeezed else out, check_finite=False)

    if tape is not None:

        def back(gout: np.ndarray):
            g = gout[None, :, :] if squeezed else gout
            gx = np.zeros((b, c, length), dtype=np.float64)
            for i, (lo, hi) in enumerate(bounds):
                gx[:, :, lo:hi] += g[:, :, i:i + 1] / (hi - lo)
            return [(x, gx[0] if squeezed else gx)]

        tape.record(result, back)
    return result


def linear(x: Tensor, weight: Tensor, bias: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Affine map of row vectors: [B, F] x [O, F]^T + [O]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(
            f"linear expects x [B, F] and weight [O, F], got {tuple(x.shape)} and {tuple(weight.shape)}"
        )
    o, f = weight.shape
    if x.shape[1] != f:
        raise DimensionError(f"linear input has {x.shape[1]} features but weight expects {f}")
    if bias.shape != (o,):
        raise DimensionError(f"linear bias must have shape [{o}], got {tuple(bias.shape)}")
    out = x.data @ weight.data.T + bias.data
    _ensure_finite(out, "linear")
    result = Tensor(out, check_finite=False)

    if tape is not None:
        xd, wd = x.data, weight.data

        def back(gout: np.ndarray):
            return [(x, gout @ wd), (weight, gout.T @ xd), (bias, gout.sum(axis=0))]

        tape.record(result, back)
    return result


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise sum of two same-shape tensors (no broadcasting)."""
    if a.shape != b.shape:
        raise DimensionError(f"add requires matching shapes, got {tuple(a.shape)} and {tuple(b.shape)}")
    out = a.data + b.data
    _ensure_finite(out, "add")
    result = Tensor(out, check_finite=False)
    if tape is not None:

        def back(gout: np.ndarray):
            return [(a, gout), (b, gout)]

        tape.record(result, back)
    return result


def reshape(x: Tensor, shape: tuple[int, ...], tape: Optional[Tape] = None) -> Tensor:
    new_shape = tuple(shape)
    try:
        out = x.data.reshape(new_shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {tuple(x.shape)} to {new_shape}: {exc}") from None
    result = Tensor(out, check_finite=False)
    if tape is not None:
        old_shape = x.data.shape

        def back(gout: np.ndarray):
            return [(x, gout.reshape(old_shape))]

        tape.record(result, back)
    return result


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, Tensor]:
    """Per-sample cross-entropy losses and their logit gradients.

    Returns ``(losses [B], grad [B, C])`` with no reduction; ``grad[i]`` is
    softmax(logits[i]) minus the one-hot label row. Log-sum-exp uses a
    max shift for stability.
    """
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects logits [B, C], got {tuple(logits.shape)}")
    z = logits.data
    n, c = z.shape
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ValidationError(f"labels must be a length-{n} vector, got shape {tuple(lab.shape)}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValidationError(f"labels must be integers, got dtype {lab.dtype}")
    if lab.min(initial=0) < 0 or lab.max(initial=0) >= c:
        raise ValidationError(f"labels must lie in [0, {c}), got range [{lab.min()}, {lab.max()}]")

    shift = z.max(axis=1, keepdims=True)
    ez = np.exp(z - shift)
    denom = ez.sum(axis=1, keepdims=True)
    logp = (z - shift) - np.log(denom)
    rows = np.arange(n)
    losses = -logp[rows, lab]
    grad = ez / denom
    grad[rows, lab] -= 1.0
    _ensure_finite(losses, "softmax_cross_entropy")
    _ensure_finite(grad, "softmax_cross_entropy")
    return Tensor(losses, check_finite=False), Tensor(grad, check_finite=False)
