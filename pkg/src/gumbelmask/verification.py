"""Independent oracles: finite differences, Monte-Carlo checks, brute-force forwards.

Everything here stays off the tape so the test suite (and the CLI
`verify` subcommand) can cross-check the differentiable path against
plainly computed references.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import Tensor, backward
from .errors import ContractError
from .layers import Flatten, MaskedLayer, MaxPool2, Network
from .masks import (
    MaskParameters,
    sample_gumbel,
    seed_stream,
    stgs_sample,
    stgs_sample_sigmoid_param,
)
from .rescale import dwr_factor

__all__ = [
    "finite_diff_grad",
    "monte_carlo_keep_rate",
    "brute_force_subnetwork_forward",
    "relaxed_mask_loss_reference",
    "CheckResult",
    "run_verification_suite",
]


def finite_diff_grad(f, x, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, in float64."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def monte_carlo_keep_rate(m_hat: float, n_samples: int, rng, temperature: float = 1.0) -> float:
    """Empirical keep frequency of the stochastic sampler at one latent value."""
    m = MaskParameters(np.full(int(n_samples), m_hat, dtype=np.float32), trainable=False)
    topo = stgs_sample(m, temperature, rng)
    return float(topo.hard_masks[0].data.mean())


def brute_force_subnetwork_forward(net: Network, x) -> np.ndarray:
    """Mask-free forward on physically rebuilt pruned weight arrays.

    For each masked layer the surviving weights are extracted at their
    indices and scattered into a fresh dense array (everything else
    stays zero); the forward pass then never touches a mask. Dense
    networks only; must match net.forward(x) with threshold masks
    exactly.
    """
    z = np.asarray(x, dtype=np.float32)
    for item in net.items:
        if isinstance(item, MaxPool2):
            n, c, h, w = z.shape
            s = item.size
            z = (
                z.reshape(n, c, h // s, s, w // s, s)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h // s, w // s, s * s)
                .max(axis=-1)
            )
            continue
        if isinstance(item, Flatten):
            z = z.reshape(z.shape[0], -1)
            continue
        if item.kind != "dense":
            raise ContractError("brute-force forward supports dense networks only")
        w = item.weights.data
        if item.mask is not None:
            kept = np.nonzero(item.mask.m_hat.data > 0.0)
            rebuilt = np.zeros_like(w)
            rebuilt[kept] = w[kept]
            w = rebuilt
        z = z @ w
        if item.mask is not None:
            if item.rescale.strategy == "smart":
                z = z * item.rescale.s.data
            elif item.rescale.strategy == "dynamic":
                mask = (item.mask.m_hat.data > 0.0).astype(np.float32)
                z = z * np.float32(dwr_factor(mask, item.rescale.reading))
        if item.bias is not None:
            z = z + item.bias.data
        if item.activation == "relu":
            z = np.where(z > 0, z, np.float32(0.0))
    return z


def relaxed_mask_loss_reference(net: Network, x, labels, noise, temperature: float,
                                m_hats=None, scales=None) -> float:
    """Float64 reference loss of the relaxed masked forward (dense nets).

    Masks enter as sigmoid((m_hat + g_keep - g_drop) / temperature);
    optional overrides let a finite-difference driver perturb latents
    or scales without touching the network.
    """
    z = np.asarray(x, dtype=np.float64)
    mi = 0
    si = 0
    for item in net.items:
        if isinstance(item, Flatten):
            z = z.reshape(z.shape[0], -1)
            continue
        if not isinstance(item, MaskedLayer) or item.kind != "dense":
            raise ContractError("relaxed reference supports dense stacks only")
        w = item.weights.data.astype(np.float64)
        if item.mask is not None:
            m = (m_hats[mi] if m_hats is not None else item.mask.m_hat.data).astype(np.float64)
            g_keep, g_drop = noise[mi]
            zlog = (m + g_keep.astype(np.float64) - g_drop.astype(np.float64)) / temperature
            soft = 1.0 / (1.0 + np.exp(-zlog))
            w = w * soft
            mi += 1
        z = z @ w
        if item.mask is not None and item.rescale.strategy == "smart":
            s = scales[si] if scales is not None else float(item.rescale.s.data)
            z = z * s
            si += 1
        if item.bias is not None:
            z = z + item.bias.data.astype(np.float64)
        if item.activation == "relu":
            z = np.maximum(z, 0.0)
    m = z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z - m).sum(axis=1, keepdims=True)) + m
    nll = logsum[:, 0] - z[np.arange(len(labels)), labels]
    return float(nll.mean())


# ---------------------------------------------------------------------------
# Self-contained check suite (CLI `verify`)
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel_close(a, b, rtol, atol=1e-6) -> bool:
    return bool(np.allclose(a, b, rtol=rtol, atol=atol))


def _check_op_gradients(seeds) -> CheckResult:
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        a64 = rng.normal(size=(3, 4))
        b64 = rng.normal(size=(4, 2))
        a = Tensor(a64.astype(np.float32), requires_grad=True)
        loss = autodiff.matmul(a, Tensor(b64.astype(np.float32))).sum()
        backward(loss)
        fd = finite_diff_grad(lambda v: float((v @ b64).sum()), a64)
        worst = max(worst, float(np.abs(a.grad - fd).max()))
        if not _rel_close(a.grad, fd, 1e-3):
            return CheckResult("op-gradients", False, f"matmul grad off by {worst:.2e}")

        x64 = rng.normal(size=(2, 2, 5, 5))
        k64 = rng.normal(size=(3, 2, 3, 3))
        x = Tensor(x64.astype(np.float32), requires_grad=True)
        loss = autodiff.conv2d(x, Tensor(k64.astype(np.float32)), 1, 1).sum()
        backward(loss)

        def conv_ref(v):
            out = 0.0
            pad = np.pad(v, [(0, 0), (0, 0), (1, 1), (1, 1)])
            for f in range(3):
                for i in range(5):
                    for j in range(5):
                        out += (pad[:, :, i:i + 3, j:j + 3] * k64[f]).sum()
            return float(out)

        fd = finite_diff_grad(conv_ref, x64)
        if not _rel_close(x.grad, fd, 1e-3, atol=1e-4):
            return CheckResult("op-gradients", False, "conv2d input grad mismatch")

        z64 = rng.normal(size=(4, 3))
        y = rng.integers(0, 3, size=4)
        z = Tensor(z64.astype(np.float32), requires_grad=True)
        backward(autodiff.softmax_cross_entropy(z, y))

        def ce_ref(v):
            m = v.max(axis=1, keepdims=True)
            logsum = np.log(np.exp(v - m).sum(axis=1, keepdims=True)) + m
            return float((logsum[:, 0] - v[np.arange(4), y]).mean())

        fd = finite_diff_grad(ce_ref, z64)
        if not _rel_close(z.grad, fd, 1e-3, atol=1e-5):
            return CheckResult("op-gradients", False, "cross-entropy grad mismatch")
    return CheckResult("op-gradients", True, f"max abs err {worst:.2e} over {len(seeds)} seeds")


def _check_gumbel_moments(n: int) -> CheckResult:
    rng = np.random.default_rng(7)
    g = sample_gumbel((n,), rng).astype(np.float64)
    mean_err = abs(g.mean() - 0.5772156649)
    var_err = abs(g.var() - math.pi ** 2 / 6.0)
    ok = mean_err < 0.01 and var_err < 0.02
    return CheckResult("gumbel-moments", ok, f"mean err {mean_err:.4f}, var err {var_err:.4f}")


def _check_marginals(n: int) -> CheckResult:
    rng = np.random.default_rng(11)
    worst = 0.0
    for m_hat in (-3.0, -1.0, 0.0, 1.0, 3.0):
        freq = monte_carlo_keep_rate(m_hat, n, rng)
        expect = 1.0 / (1.0 + math.exp(-m_hat))
        worst = max(worst, abs(freq - expect))
    return CheckResult("keep-marginals", worst < 0.01, f"max |freq - sigmoid| {worst:.4f}")


def _check_equivalence() -> CheckResult:
    rng = np.random.default_rng(3)
    m_vals = rng.uniform(-5, 5, size=256).astype(np.float32)
    state = rng.bit_generator.state
    a = MaskParameters(m_vals.copy())
    topo_a = stgs_sample(a, 1.0, rng)
    rng.bit_generator.state = state
    b = MaskParameters(m_vals.copy())
    topo_b = stgs_sample_sigmoid_param(b, 1.0, rng)
    if not np.array_equal(topo_a.hard_masks[0].data, topo_b.hard_masks[0].data):
        return CheckResult("parametrization-equivalence", False, "hard masks differ")
    soft_err = float(np.abs(topo_a.soft_surrogates[0].data - topo_b.soft_surrogates[0].data).max())
    down = np.random.default_rng(5).normal(size=m_vals.shape).astype(np.float32)
    backward((topo_a.hard_masks[0] * Tensor(down)).sum())
    backward((topo_b.hard_masks[0] * Tensor(down)).sum())
    grad_err = float(np.abs(a.m_hat.grad - b.m_hat.grad).max())
    ok = soft_err < 1e-5 and grad_err < 1e-5
    return CheckResult(
        "parametrization-equivalence", ok, f"soft err {soft_err:.1e}, grad err {grad_err:.1e}"
    )


def _check_shift_invariance() -> CheckResult:
    rng = np.random.default_rng(13)
    m = MaskParameters(rng.normal(size=128).astype(np.float32))
    state = rng.bit_generator.state
    base = stgs_sample(m, 1.0, rng)
    for c in (-100.0, 0.37, 1e3):
        rng.bit_generator.state = state
        shifted = stgs_sample(m, 1.0, rng, logit_shift=c)
        if not (
            np.array_equal(base.hard_masks[0].data, shifted.hard_masks[0].data)
            and np.array_equal(base.soft_surrogates[0].data, shifted.soft_surrogates[0].data)
        ):
            return CheckResult("shift-invariance", False, f"outputs changed at shift {c}")
    return CheckResult("shift-invariance", True, "bit-identical for shifts -100, 0.37, 1e3")


def _check_dwr_unbiased(draws: int) -> CheckResult:
    rng = np.random.default_rng(17)
    w = rng.normal(size=(64, 64)).astype(np.float32)
    x = rng.normal(size=64).astype(np.float32)
    expect = w.T @ x
    worst = 0.0
    for p in (0.3, 0.5, 0.8):
        acc = np.zeros(64, dtype=np.float64)
        for start in range(0, draws, 1000):
            k = min(1000, draws - start)
            masks = (rng.random((k, 64, 64)) < p).astype(np.float32)
            factors = 1.0 / np.maximum(masks.mean(axis=(1, 2)), 1.0 / w.size)
            acc += np.einsum("kij,i,k->j", masks * w, x, factors, optimize=True)
        err = np.linalg.norm(acc / draws - expect) / np.linalg.norm(expect)
        worst = max(worst, float(err))
    return CheckResult("dwr-unbiasedness", worst < 0.02, f"max rel err {worst:.4f} at {draws} draws")


def _check_subnetwork_forward() -> CheckResult:
    from .models import build_mlp

    net = build_mlp([6, 12, 5], init_seed=23, rescale="smart")
    rng = np.random.default_rng(29)
    for m in net.mask_parameters():
        m.m_hat.data[...] = rng.normal(size=m.shape).astype(np.float32)
    x = rng.normal(size=(7, 6)).astype(np.float32)
    a = net.forward(x).data
    b = brute_force_subnetwork_forward(net, x)
    ok = bool(np.array_equal(a, b))
    return CheckResult("subnetwork-forward", ok, "threshold forward == compacted rebuild")


def run_verification_suite(fast: bool = False) -> list[CheckResult]:
    """Run every oracle-backed check; used by the CLI `verify` subcommand."""
    seeds = range(3) if fast else range(20)
    return [
        _check_op_gradients(seeds),
        _check_gumbel_moments(100_000 if fast else 1_000_000),
        _check_marginals(20_000 if fast else 100_000),
        _check_equivalence(),
        _check_shift_invariance(),
        _check_dwr_unbiased(10_000),
        _check_subnetwork_forward(),
    ]
