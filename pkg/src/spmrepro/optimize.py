"""Filter-design solvers.

* :func:`design_deep` -- deep optimization: a small MLP with frozen random
  inputs outputs the filter coefficients and is trained on the objective.
* :func:`design_cvx` -- primal-dual proximal gradient for the non-smooth
  convex objective.
* :func:`design_fd` -- regularized least-squares frequency deconvolution.
* :func:`design_multi_position` -- deep optimization over several array
  positions with one shared filter bank.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .objective import DesignProblem, LossBreakdown, MultiPositionProblem

log = logging.getLogger(__name__)


@dataclass
class DesignResult:
    filters: np.ndarray
    solver: str
    breakdown: LossBreakdown | None = None
    curve: list = field(default_factory=list)
    iterations: int = 0
    best_iteration: int = 0
    status: str = "closed_form"

    @property
    def warning(self):
        return self.status in ("max_iter", "diverged")


def reproduce(h, channels):
    """Global responses ``g[q] = sum_l c[q, l] * h[l]`` for (Q, L, L_c) channels."""
    channels = getattr(channels, "ir", channels)
    channels = np.asarray(channels, dtype=float)
    h = np.asarray(h, dtype=float)
    q, l, lc = channels.shape
    if h.ndim != 2 or h.shape[0] != l:
        raise ValueError(f"filters {h.shape} do not match {l} loudspeaker channels")
    n = lc + h.shape[1] - 1
    n_fft = dsp.next_pow2(n)
    gf = np.einsum("qlk,lk->qk", np.fft.rfft(channels, n_fft), np.fft.rfft(h, n_fft))
    return np.fft.irfft(gf, n_fft)[:, :n]


# ------------------------------------------------------------ deep optimization


class ReparamNet:
    """MLP mapping a frozen random input vector to the filter coefficients.

    tanh hidden layers, linear output; the output layer is scaled by
    ``output_scale`` at init so training starts near h = 0.
    """

    def __init__(self, out_dim, n_inputs=64, hidden=(256, 256), seed=0, output_scale=1e-2):
        rng = np.random.default_rng(seed)
        self.inputs = rng.uniform(-1.0, 1.0, n_inputs)
        self.inputs.setflags(write=False)
        sizes = [n_inputs, *hidden, out_dim]
        self.params = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-lim, lim, (n_out, n_in))
            if i == len(sizes) - 2:
                w *= output_scale
            self.params += [w, np.zeros(n_out)]
        self._acts = None

    @property
    def out_dim(self):
        return self.params[-1].size

    def forward(self):
        x = self.inputs
        acts = [x]
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            x = w @ x + b
            if i < n_layers - 1:
                x = np.tanh(x)
            acts.append(x)
        self._acts = acts
        return x

    def backward(self, dout):
        """Parameter gradients for upstream gradient ``dout`` on the output."""
        acts = self._acts
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        d = np.asarray(dout, dtype=float).ravel()
        for i in reversed(range(n_layers)):
            w = self.params[2 * i]
            grads[2 * i] = np.outer(d, acts[i])
            grads[2 * i + 1] = d
            if i > 0:
                d = (w.T @ d) * (1.0 - acts[i] ** 2)
        return grads


class Adam:
    """Adaptive-moment gradient descent with the usual bias correction.

    Updates the parameter arrays in place.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._tmp = [np.empty_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr / (1.0 - b1**self.t)
        root_c2 = np.sqrt(1.0 - b2**self.t)
        for p, g, m, v, tmp in zip(params, grads, self.m, self.v, self._tmp):
            m *= b1
            np.multiply(g, 1.0 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp /= root_c2
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step
            p -= tmp


@dataclass
class TrainState:
    iteration: int = 0
    best_loss: float = np.inf
    best_filters: np.ndarray | None = None
    best_iteration: int = 0
    seed: int = 0


def design_deep(
    problem,
    mode="spmnet",
    seed=0,
    lr=1e-3,
    max_iter=20000,
    patience=500,
    divergence=1e6,
    callback=None,
    net_kwargs=None,
):
    """Train a :class:`ReparamNet` whose output is the filter bank.

    ``problem`` is a :class:`DesignProblem` or :class:`MultiPositionProblem`.
    ``callback(iteration, breakdowns)`` receives the list of per-position
    breakdowns each iteration. Returns the best-loss snapshot.
    """
    if mode == "cvx":
        raise ValueError("deep optimization needs a smooth mode ('nn' or 'spmnet')")
    shape = (problem.n_ls, problem.filter_len)
    net = ReparamNet(shape[0] * shape[1], seed=seed, **(net_kwargs or {}))
    opt = Adam(net.params, lr=lr)
    state = TrainState(seed=seed)
    multi = isinstance(problem, MultiPositionProblem)
    curve = []
    initial = None
    status = "max_iter"
    for it in range(max_iter):
        h = net.forward().reshape(shape)
        if multi:
            parts = problem.evaluate_positions(h, mode, grad=True)
            bds = [b for b, _ in parts]
            dh = sum(g for _, g in parts) / len(parts)
            total = float(np.mean([b.total for b in bds]))
        else:
            bd, dh = problem.evaluate(h, mode, grad=True)
            bds = [bd]
            total = bd.total
        if callback is not None:
            callback(it, bds)
        if initial is None:
            initial = total
        if not np.isfinite(total) or total > divergence * max(initial, 1e-300):
            log.warning("deep optimization diverged at iteration %d (loss %g)", it, total)
            status = "diverged"
            break
        curve.append(total)
        if total < state.best_loss:
            state.best_loss, state.best_iteration = total, it
            state.best_filters = h.copy()
        elif it - state.best_iteration >= patience:
            status = "early_stop"
            break
        opt.step(net.params, net.backward(dh))
        state.iteration = it + 1
    filters = state.best_filters if state.best_filters is not None else np.zeros(shape)
    return DesignResult(
        filters,
        "deep",
        problem.evaluate(filters, mode),
        curve,
        len(curve),
        state.best_iteration,
        status,
    )


def design_multi_position(problems, labels=("LL", "O", "RR"), mode="spmnet", **kwargs):
    """Shared filter bank trained on the mean loss over several positions."""
    if problems is None or len(problems) < 2:
        raise ValueError("multi-position design needs at least two position problems")
    return design_deep(MultiPositionProblem(problems, labels), mode=mode, **kwargs)


# ------------------------------------------------------------ convex baseline


def project_l1_ball(z, radius):
    """Euclidean projection onto ``{y : sum |y| <= radius}``.

    Complex entries are shrunk in magnitude and keep their phase. Sort-based
    threshold search (Duchi et al.).
    """
    z = np.asarray(z)
    mag = np.abs(z)
    if radius <= 0:
        return np.zeros_like(z)
    if mag.sum() <= radius:
        return z
    flat = mag.ravel()
    u = np.sort(flat)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    shrunk = np.maximum(mag - theta, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(mag > 0, shrunk / mag, 0.0)
    return z * scale


def prox_linf(x, t):
    """Prox of ``t * ||x||_inf`` via the Moreau identity and l1-ball projection."""
    return x - project_l1_ball(x, t)


def _power_norm(apply, adjoint, x0, n_iter=50):
    x = x0 / np.linalg.norm(x0)
    s = 0.0
    for _ in range(n_iter):
        y = adjoint(apply(x))
        s = np.linalg.norm(y)
        if s == 0:
            return 0.0
        x = y / s
    return float(s)


def design_cvx(problem: DesignProblem, max_iter=5000, tol=1e-6, h0=None, min_iter=20, seed=0,
               callback=None, dual_scale=10.0, window=1000):
    """Primal-dual proximal gradient (Condat-Vu) for the ``cvx`` objective.

    Gradient steps on the smooth matching term; the three infinity-norm
    terms are handled through their duals, whose prox is a projection onto
    an l1 ball of radius lambda_k / 2. Step sizes come from power-iteration
    estimates of the operator norms; ``dual_scale`` sets how the step budget
    is split between primal and dual updates. Stops when the best loss
    so far has improved by at most ``tol`` (relative) per iteration over the
    last ``window`` iterations, or after ``max_iter`` iterations, and
    returns the best iterate.
    """
    pr = problem
    lam = pr.config.weights
    w = pr.windows
    rng = np.random.default_rng(seed)
    wd2 = w.desired**2
    in_band, out_band = pr.in_band, pr.out_band

    def k2(g):
        return w.unwanted * g

    def k3(gf):
        return pr.v_weights * gf[:, in_band]

    def k4(hf):
        return pr.xi * hf[:, out_band]

    def k2t(y):
        return w.unwanted * y

    def k3t(y):
        full = np.zeros((pr.n_mics, pr.n_fft // 2 + 1), dtype=complex)
        full[:, in_band] = pr.v_weights * y
        return dsp.rfft_adjoint(full, pr.n_fft, pr.resp_len)

    def k4t(y):
        full = np.zeros((pr.n_ls, pr.n_fft // 2 + 1), dtype=complex)
        full[:, out_band] = pr.xi * y
        return dsp.rfft_adjoint(full, pr.n_fft, pr.filter_len)

    x0 = rng.standard_normal((pr.n_ls, pr.filter_len))
    lf = lam[0] * _power_norm(lambda h: w.desired * pr.response(h), lambda r: pr.adjoint(w.desired * r), x0)
    ops = []
    if lam[1] > 0:
        ops.append(("ring", lam[1] / 2, _power_norm(lambda h: k2(pr.response(h)), lambda y: pr.adjoint(k2t(y)), x0)))
    if lam[2] > 0:
        ops.append(("flat", lam[2] / 2, _power_norm(
            lambda h: k3(pr.spectra(pr.response(h))), lambda y: pr.adjoint(k3t(y)), x0)))
    if lam[3] > 0:
        ops.append(("band", lam[3] / 2, _power_norm(
            lambda h: k4(np.fft.rfft(h, pr.n_fft, axis=-1)), k4t, x0)))
    radius = {name: r for name, r, _ in ops}
    lf = max(lf, 1e-12)
    if ops:
        # 1/tau >= lf/2 + sum_i sigma_i ||K_i||^2, budget split evenly
        share = dual_scale * lf / (2.0 * len(ops))
        tau = 0.99 / (lf / 2.0 + len(ops) * share)
        sigma = {name: share / knorm for name, _, knorm in ops}
    else:
        tau, sigma = 1.9 / lf, {}
    h = np.zeros((pr.n_ls, pr.filter_len)) if h0 is None else np.array(h0, dtype=float)
    g = pr.response(h)
    y = {
        "ring": np.zeros_like(g),
        "flat": np.zeros((pr.n_mics, in_band.size), dtype=complex),
        "band": np.zeros((pr.n_ls, out_band.size), dtype=complex),
    }
    best = pr.evaluate(h, "cvx")
    best_h, best_it = h.copy(), 0
    curve = [best.total]
    best_curve = [best.total]
    status = "max_iter"
    for it in range(1, max_iter + 1):
        dg = lam[0] * wd2 * (g - pr.target)
        if "ring" in sigma:
            dg = dg + k2t(y["ring"])
        if "flat" in sigma:
            dg = dg + k3t(y["flat"])
        grad = pr.adjoint(dg)
        if "band" in sigma:
            grad = grad + k4t(y["band"])
        h_new = h - tau * grad
        g_new = pr.response(h_new)
        g_bar = 2.0 * g_new - g
        if "ring" in sigma:
            y["ring"] = project_l1_ball(y["ring"] + sigma["ring"] * k2(g_bar), radius["ring"])
        if "flat" in sigma:
            y["flat"] = project_l1_ball(y["flat"] + sigma["flat"] * k3(pr.spectra(g_bar)), radius["flat"])
        if "band" in sigma:
            hf_bar = np.fft.rfft(2.0 * h_new - h, pr.n_fft, axis=-1)
            y["band"] = project_l1_ball(y["band"] + sigma["band"] * k4(hf_bar), radius["band"])
        h, g = h_new, g_new
        bd = pr.evaluate(h, "cvx")
        cur = bd.total
        curve.append(cur)
        if callback is not None:
            callback(it, [bd])
        if not np.isfinite(cur):
            status = "diverged"
            break
        if cur < best.total:
            best, best_h, best_it = bd, h.copy(), it
        best_curve.append(best.total)
        # primal-dual losses oscillate, so track the running minimum over a
        # window rather than consecutive iterates
        if it >= max(min_iter, window):
            before = best_curve[-window - 1]
            if before - best.total <= tol * window * max(abs(before), 1e-300):
                status = "converged"
                break
    if status == "max_iter":
        log.warning("cvx design stopped at max_iter=%d without converging", max_iter)
    return DesignResult(best_h, "cvx", best, curve, len(curve) - 1, best_it, status)


# ------------------------------------------------------------ frequency deconvolution


def design_fd(channels, target, filter_len, beta=None, beta_rel=0.01, n_fft=None, modeling_delay=None):
    """Regularized least-squares inversion, bin by bin (fast deconvolution).

    ``H(f) = (C^H C + beta I)^-1 C^H D`` with C the (Q, L) channel matrix at
    bin f of an ``n_fft``-point DFT (``filter_len`` points by default, so
    longer channels are truncated, as in the classic method). The target is
    advanced by ``modeling_delay`` samples (``filter_len // 2`` by default),
    inverted, and the inverse DFT is circularly shifted back by the same
    amount so the filter is centred. ``beta`` may be a scalar or one value
    per rfft bin; by default it is ``beta_rel * max_f ||C(f)||_2^2``.
    ``beta = 0`` uses the pseudo-inverse.
    """
    channels = np.asarray(getattr(channels, "ir", channels), dtype=float)
    target = np.asarray(target, dtype=float)
    q, l, lc = channels.shape
    n_fft = n_fft or filter_len
    if n_fft < filter_len:
        raise ValueError("n_fft must cover the filter length")
    shift = filter_len // 2 if modeling_delay is None else int(modeling_delay)
    cf = np.moveaxis(np.fft.rfft(channels, n_fft, axis=-1), -1, 0)  # (K, Q, L)
    advanced = np.zeros((q, n_fft))
    seg = target[:, shift : shift + n_fft]
    advanced[:, : seg.shape[1]] = seg
    df = np.fft.rfft(advanced, n_fft, axis=-1).T  # (K, Q)
    if beta is None:
        beta = beta_rel * np.max(np.linalg.norm(cf, ord=2, axis=(1, 2)) ** 2)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (cf.shape[0],))
    if np.any(beta < 0):
        raise ValueError("regularization beta must be non-negative")
    ch = np.conj(np.swapaxes(cf, 1, 2))  # (K, L, Q)
    rhs = np.einsum("klq,kq->kl", ch, df)
    if np.all(beta > 0):
        a = ch @ cf + beta[:, None, None] * np.eye(l)
        hf = np.linalg.solve(a, rhs[..., None])[..., 0]
    else:
        hf = np.einsum("klq,kq->kl", np.linalg.pinv(cf), df)
        pos = beta > 0
        if np.any(pos):
            a = ch[pos] @ cf[pos] + beta[pos, None, None] * np.eye(l)
            hf[pos] = np.linalg.solve(a, rhs[pos][..., None])[..., 0]
    h = np.roll(np.fft.irfft(hf.T, n_fft, axis=-1), shift, axis=-1)[:, :filter_len]
    return DesignResult(h, "fd")


# ------------------------------------------------------------ original routing


def ori_filters(geometry, source, filter_len):
    """Unit-gain routing of the source to the loudspeaker nearest its azimuth
    (seen from the array centre); all other channels stay silent."""
    rel = geometry.loudspeakers - geometry.center
    az = np.rad2deg(np.arctan2(rel[:, 1], rel[:, 0])) % 360.0
    d = np.abs(az - source.azimuth) % 360.0
    nearest = int(np.argmin(np.minimum(d, 360.0 - d)))
    h = np.zeros((geometry.n_loudspeakers, filter_len))
    h[nearest, 0] = 1.0
    return DesignResult(h, "ori")
