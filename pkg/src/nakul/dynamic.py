"""Adaptive temporal mixing: statistics-driven mixture of causal kernels.

A bank of M depthwise causal kernels of different lengths filters the
input in parallel. A small meta-network looks at two whole-sequence
statistics, temporal variance and spectral entropy, and produces a
softmax mixture over the bank; short kernels for fast transient content,
long ones for tonal content, learned rather than hand-assigned. The
aggregate is gated elementwise by sigmoid(x W_gate).

Statistics are computed per sample. Averaging them over a batch (as a
literal reading of the pooled-sum formulation would do) was rejected:
a sample's output must not depend on its batch neighbors.

Kernels are stored in causal layout: the last tap multiplies the
current timestep, so [0, ..., 0, 1] is the identity filter. Output at
time t never sees input beyond t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as te
from .ssm import DiscreteSsm, discretize, materialize_kernel, stable_diag_init
from .tensor import Tensor

__all__ = [
    "KernelBank",
    "MetaNetwork",
    "init_kernel_bank",
    "init_meta_network",
    "temporal_variance",
    "spectral_entropy",
    "predict_weights",
    "dynamic_mix",
    "DEFAULT_KERNEL_SIZES",
]

DEFAULT_KERNEL_SIZES = (3, 5, 7, 11)


@dataclass
class KernelBank:
    kernels: list[Tensor]  # each (K_m, D), causal layout (last tap = now)
    w_gate: Tensor  # (D, D)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(k.shape[0] for k in self.kernels)

    def named(self, prefix: str) -> dict:
        out = {f"{prefix}.w_gate": self.w_gate}
        for k in self.kernels:
            out[f"{prefix}.kernel_{k.shape[0]}"] = k
        return out


@dataclass
class MetaNetwork:
    w1: Tensor  # (16, 2)
    w2: Tensor  # (M, 16)

    def named(self, prefix: str) -> dict:
        return {f"{prefix}.w1": self.w1, f"{prefix}.w2": self.w2}


def init_kernel_bank(
    d: int,
    rng: np.random.Generator,
    sizes=DEFAULT_KERNEL_SIZES,
    noise: float = 0.01,
    state_dim: int = 1,
) -> KernelBank:
    """Kernels start at the impulse response of a stable linear system.

    With the default one-state system (transition 0.7, unit input and
    output maps) the taps are (1, 0.7, 0.49, ...), truncated to each
    bank size and written in causal layout, then perturbed so the
    filters are not identical across features. state_dim > 1 swaps in
    a stable diagonal system of that order.
    """
    if state_dim < 1:
        raise ValueError("state_dim must be at least 1")
    if state_dim == 1:
        base = DiscreteSsm(
            a_bar=np.array([[0.7]]),
            b_bar=np.array([[1.0]]),
            c=np.array([[1.0]]),
            d_skip=0.0,
            delta=1.0,
        )
    else:
        params = stable_diag_init(state_dim, d_skip=0.0)
        base = discretize(params, 1.0)
    kernels = []
    for size in sizes:
        taps = materialize_kernel(base, size)[::-1]  # causal layout
        k = np.tile(taps[:, None], (1, d)) + noise * rng.uniform(-1, 1, size=(size, d))
        kernels.append(Tensor(k, requires_grad=True))
    bound = 1.0 / np.sqrt(d)
    w_gate = Tensor(rng.uniform(-bound, bound, size=(d, d)), requires_grad=True)
    return KernelBank(kernels=kernels, w_gate=w_gate)


def init_meta_network(rng: np.random.Generator, m: int = 4, hidden: int = 16) -> MetaNetwork:
    w1 = rng.uniform(-1, 1, size=(hidden, 2)) / np.sqrt(2.0)
    w2 = rng.uniform(-1, 1, size=(m, hidden)) / np.sqrt(hidden)
    return MetaNetwork(w1=Tensor(w1, requires_grad=True), w2=Tensor(w2, requires_grad=True))


def temporal_variance(x: Tensor) -> Tensor:
    """Mean squared deviation from the global mean, per sample.

    x is (..., T, D); the mean pools time and features together.
    Returns shape (...,).
    """
    mu = x.mean(axis=(-1, -2), keepdims=True)
    dev = x - mu
    return (dev * dev).mean(axis=(-1, -2))


def spectral_entropy(x: Tensor) -> Tensor:
    """Shannon entropy of the bin-magnitude distribution, per sample.

    Magnitudes are pooled over features by the Euclidean norm per bin.
    An identically zero spectrum yields 0 by convention rather than NaN;
    that case carries no gradient.
    """
    xt = te.swapaxes(x, -1, -2)  # (..., D, T)
    spec = te.fft_real(xt)
    power = spec.re * spec.re + spec.im * spec.im  # (..., D, F)
    mags = te.sqrt(power.sum(axis=-2))  # (..., F)
    total = mags.sum(axis=-1, keepdims=True)
    zero_rows = (total.data == 0.0).astype(np.float64)
    p = mags / (total + zero_rows)  # zero rows divide by 1, give p = 0
    return -te.xlogx(p).sum(axis=-1)


def predict_weights(meta: MetaNetwork, variance: Tensor, entropy: Tensor) -> Tensor:
    """Mixture weights on the M-simplex from the two sequence statistics.

    variance enters through log1p to keep its unbounded scale O(1);
    entropy is expected already divided by its ln(F) maximum (the caller
    knows the bin count). Accepts scalars or (...,) batches; returns
    (..., M).
    """
    variance = variance if isinstance(variance, Tensor) else Tensor(np.asarray(variance))
    entropy = entropy if isinstance(entropy, Tensor) else Tensor(np.asarray(entropy))
    log_var = te.log(variance + 1.0)
    s = te.stack([log_var, entropy], axis=-1)  # (..., 2)
    flat = s.reshape((-1, 2))
    h = te.gelu(te.matmul(flat, te.swapaxes(meta.w1, 0, 1)))
    logits = te.matmul(h, te.swapaxes(meta.w2, 0, 1))
    alphas = te.softmax(logits)
    return alphas.reshape(variance.shape + (alphas.shape[-1],))


def dynamic_mix(
    bank: KernelBank,
    meta: MetaNetwork,
    x: Tensor,
    alphas: np.ndarray | None = None,
    stats_out: dict | None = None,
):
    """Statistics-weighted causal filtering with sigmoid output gating.

    x is (..., T, D). Returns (output, alphas) with output shaped like
    x and alphas (..., M). Passing `alphas` overrides the meta-network
    (one-hot rows isolate a single kernel). A dict passed as stats_out
    receives the raw variance and the normalized entropy.
    """
    nbins = x.shape[-2] // 2 + 1
    if alphas is None:
        var = temporal_variance(x)
        ent = spectral_entropy(x) / float(np.log(max(nbins, 2)))
        gates = predict_weights(meta, var, ent)
        if stats_out is not None:
            stats_out["variance"] = var
            stats_out["entropy"] = ent
    else:
        gates = Tensor(np.asarray(alphas, dtype=np.float64))

    agg = None
    for m, kernel in enumerate(bank.kernels):
        y_m = te.depthwise_causal_conv(x, kernel[::-1, :])  # flip to lag order
        a_m = gates[..., m : m + 1]
        a_m = a_m.reshape(a_m.shape + (1,))  # (..., 1, 1)
        term = a_m * y_m
        agg = term if agg is None else agg + term

    gate = te.sigmoid(te.matmul(x, bank.w_gate))
    return agg * gate, gates
