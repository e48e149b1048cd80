"""Built-in invariant suites behind the `selftest` CLI subcommand.

Each suite re-derives an expected value through an independent route (finite
differences, exact enumeration, closed-form frequencies, quadrature) and
compares the implementation against it. Suites call into the package through
module namespaces, so a corrupted function (monkeypatched or edited) is
caught and the failing property is named in the output.
"""

from __future__ import annotations

import numpy as np

from . import bernoulli, network, optimizers
from .linalg import Rng
from .network import (
    Activation,
    BatchNorm,
    Dropout,
    FullyConnected,
    NetworkSpec,
    init_bn_state,
)

__all__ = ["run_selftest"]


def _fd_loss_grad(spec, w, x, targets, seed, h=1e-5):
    """Central finite differences of the loss over every weight coordinate."""
    grad = np.empty_like(w)
    base_bn = init_bn_state(spec)
    for j in range(w.size):
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        lp = network.loss_at(spec, wp, x, targets, mode="train",
                             rng=Rng.for_stream(seed, 9), bn=base_bn)
        lm = network.loss_at(spec, wm, x, targets, mode="train",
                             rng=Rng.for_stream(seed, 9), bn=base_bn)
        grad[j] = (lp - lm) / (2.0 * h)
    return grad


def _suite_gradients():
    """Backpropagated gradients vs central finite differences."""
    specs = [
        NetworkSpec((FullyConnected(3, 6), Activation("tanh"),
                     FullyConnected(6, 3)), "cross_entropy"),
        NetworkSpec((Dropout(0.25), FullyConnected(4, 5), Activation("relu"),
                     BatchNorm(), FullyConnected(5, 2)), "cross_entropy"),
        NetworkSpec((FullyConnected(2, 7), Activation("tanh"), BatchNorm(),
                     FullyConnected(7, 1), BatchNorm()), "mse"),
    ]
    worst = 0.0
    for k, spec in enumerate(specs):
        rng = Rng.for_stream(11, k)
        w = rng.normal(spec.weight_count, 0.7)
        x = rng.normal((6, spec.in_dim), 1.5)
        if spec.loss == "cross_entropy":
            t = rng.integers(0, spec.out_dim, 6)
        else:
            t = rng.normal((6, spec.out_dim), 1.0)
        bn = init_bn_state(spec)
        out, cache = network.forward(spec, w, x, mode="train",
                                     rng=Rng.for_stream(7, 9), bn=bn)
        _, g = network.backward(spec, cache, t)
        g_fd = _fd_loss_grad(spec, w, x, t, seed=7)
        err = float((np.abs(g - g_fd) /
                     (1e-4 * np.maximum(np.abs(g), np.abs(g_fd)) + 1e-7)).max())
        worst = max(worst, err)
        if err > 1.0:
            return False, (f"net {k}: normalized error {err:.3f} exceeds "
                           f"1e-4 relative + 1e-7 absolute")
    return True, f"3 nets, worst normalized error {worst:.3f} (limit 1.0)"


def _suite_chain_factor():
    """chain_factor vs finite differences of the relaxation w.r.t. mu."""
    rng = Rng(23)
    n = 200
    lam = -2.0 + 4.0 * rng.uniform_open(n)
    tau = 0.1 + 1.9 * rng.uniform_open(n)
    u = -3.0 + 6.0 * rng.uniform_open(n)
    delta = u * tau - lam
    h = 1e-6
    for i in range(n):
        mu = np.tanh(lam[i])
        w_b = bernoulli.relax(np.array([lam[i]]), np.array([delta[i]]), tau[i])
        got = bernoulli.chain_factor(np.array([lam[i]]), w_b, tau[i])[0]

        def f(m):
            l = np.arctanh(m)
            return np.tanh((l + delta[i]) / tau[i])

        fd = (f(mu + h) - f(mu - h)) / (2.0 * h)
        if abs(got - fd) > 1e-6 * max(abs(fd), 1e-30) + 1e-12:
            return False, (f"chain_factor at lambda={lam[i]:.4f} tau={tau[i]:.4f}: "
                           f"got {got:.9e}, finite differences give {fd:.9e}")
    return True, f"{n} random (lambda, delta, tau) triples within 1e-6 relative"


def _suite_tau_limit():
    """Near-zero temperature: relaxation saturates to sign(lambda) exactly."""
    rng = Rng(31)
    lam = -20.0 + 40.0 * rng.uniform_open(100_000)
    lam = lam[np.abs(lam) > 1e-6]
    w_b = bernoulli.relax(lam, np.zeros_like(lam), 1e-12)
    expect = bernoulli.sign_pm1(lam)
    bad = int((w_b != expect).sum())
    if bad:
        return False, f"{bad} of {lam.size} coordinates differ from sign(lambda)"
    return True, f"{lam.size} coordinates equal sign(lambda) exactly at tau=1e-12"


def _suite_hysteresis():
    """Both hysteresis formulations walk identical sign trajectories."""
    rng = Rng(41)
    n, steps = 50, 1000
    gamma, mrate = 1e-3, 0.05
    w_b1 = rng.signs(n)
    w_b2 = w_b1.copy()
    m1 = np.zeros(n)
    m2 = np.zeros(n)
    for _ in range(steps):
        g = rng.normal(n, 1.0)
        m1 = (1.0 - mrate) * m1 + mrate * g
        w_b1 = optimizers.hyst1(m1, w_b1, gamma)
        m2 = (1.0 - mrate) * m2 - mrate * g
        w_b2 = optimizers.hyst2(m2, w_b2, gamma)
        if not np.array_equal(w_b1, w_b2):
            return False, ("sign trajectories diverged: accumulate(+g)+hyst1 vs "
                           "accumulate(-g)+hyst2")
    return True, f"{steps} steps x {n} weights: trajectories identical"


def _suite_sampler():
    """Exact binary sampling frequencies vs sigmoid(2 lambda)."""
    draws = 20_000
    for k, lam_val in enumerate((-1.5, -0.5, 0.0, 0.7, 2.0)):
        lam = np.full(draws, lam_val)
        w = bernoulli.sample_binary(lam, Rng.for_stream(53, k))
        p_hat = float((w > 0).mean())
        p = float(bernoulli.p_from_lambda(np.array([lam_val]))[0])
        sd = np.sqrt(p * (1.0 - p) / draws)
        if abs(p_hat - p) > 4.0 * sd + 1e-12:
            return False, (f"lambda={lam_val}: frequency {p_hat:.5f} vs "
                           f"sigmoid(2 lambda)={p:.5f} beyond 4 binomial sd")
    return True, "5 lambda values within 4 binomial standard deviations"


def _suite_density():
    """Relaxed-sample histogram vs the closed-form density; density integrates to 1."""
    from scipy.integrate import quad

    for lam_val, tau in ((0.0, 1.0), (0.5, 1.0), (1.0, 0.5)):
        total, _ = quad(lambda x: float(bernoulli.concrete_pdf(np.array([x]), lam_val, tau)[0]),
                        0.0, 1.0, limit=200)
        if abs(total - 1.0) > 1e-6:
            return False, (f"density at lambda={lam_val}, tau={tau} integrates to "
                           f"{total:.8f}, expected 1 within 1e-6")
    rng = Rng(61)
    n = 20_000
    lam = np.full(n, 0.5)
    x = (bernoulli.relax(lam, bernoulli.sample_gumbel_noise(rng, n), 1.0) + 1.0) / 2.0
    bins = np.linspace(0.0, 1.0, 41)
    emp, _ = np.histogram(x, bins=bins)
    emp = emp / n
    theo = np.array([
        quad(lambda t: float(bernoulli.concrete_pdf(np.array([t]), 0.5, 1.0)[0]),
             bins[i], bins[i + 1], limit=100)[0]
        for i in range(bins.size - 1)
    ])
    tv = 0.5 * float(np.abs(emp - theo).sum())
    if tv >= 0.05:
        return False, f"total variation {tv:.4f} >= 0.05 between samples and density"
    return True, f"quadrature = 1 within 1e-6; sample TV distance {tv:.4f} < 0.05"


_SUITES = [
    ("network", "backprop gradients match finite differences", _suite_gradients),
    ("bernoulli", "chain_factor matches finite differences", _suite_chain_factor),
    ("bernoulli", "tiny-tau relaxation equals sign(lambda)", _suite_tau_limit),
    ("optimizers", "hysteresis formulations are equivalent", _suite_hysteresis),
    ("bernoulli", "binary sampler frequencies match sigmoid(2 lambda)", _suite_sampler),
    ("bernoulli", "relaxed density normalizes and matches samples", _suite_density),
]


def run_selftest(verbose: bool = True) -> bool:
    """Run every invariant suite; True iff all pass."""
    all_ok = True
    for module, prop, fn in _SUITES:
        try:
            ok, detail = fn()
        except Exception as e:  # a corrupted routine may throw instead of failing
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        all_ok &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {module}: {prop} — {detail}",
                  flush=True)
    return all_ok
