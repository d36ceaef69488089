"""Shared-weight LSTM encoder/decoder with a mixture density output.

Everything is float64 numpy with a hand-written backward pass, batched over
snippets. Raw output layout per step (K = 1 + 6M values)::

    [p_hat | pi_hat (M) | mu_hat_x (M) | mu_hat_y (M) | sigma_hat_x (M) | sigma_hat_y (M) | rho_hat (M)]

Means and standard deviations leave the network in normalised units and are
scaled back to meters with the (x, y) channel statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .types import (
    MdnStep,
    MixtureComponent,
    ModelConfig,
    NormStats,
    ObsPoint,
    PredictionSequence,
    Variant,
    wrap_angle,
)

LOG_2PI = math.log(2 * math.pi)
CORR_LIMIT = 1.0 - 1e-6
LIKELIHOOD_FLOOR = 1e-300
LOG_FLOOR = math.log(LIKELIHOOD_FLOOR)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softplus(z):
    return np.logaddexp(0.0, z)


# ---------------------------------------------------------------- parameters


def param_layout(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    """Parameter names and shapes in checkpoint order.

    The first layer's input matrix doubles as the projection from the four
    input channels.
    """
    W, K = cfg.lstm_width, cfg.n_outputs
    out = []
    for l in range(cfg.lstm_layers):
        n_in = 4 if l == 0 else W
        out += [(f"lstm{l}.Wx", (n_in, 4 * W)), (f"lstm{l}.Wh", (W, 4 * W)), (f"lstm{l}.b", (4 * W,))]
    out += [("head.W", (W, K)), ("head.b", (K,))]
    return out


class SeqNet:
    """Parameters plus the normalisation layer they were trained with."""

    def __init__(self, cfg: ModelConfig, params: dict, stats: NormStats):
        self.cfg = cfg
        self.params = params
        self.stats = stats

    @classmethod
    def init(cls, cfg: ModelConfig, stats: NormStats, seed=0) -> "SeqNet":
        """Uniform +-1/sqrt(fan_in) matrices, zero biases, forget-gate bias 1."""
        rng = np.random.default_rng(seed)
        W = cfg.lstm_width
        params = {}
        for name, shape in param_layout(cfg):
            if len(shape) == 2:
                bound = 1.0 / math.sqrt(shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
            else:
                b = np.zeros(shape)
                if name.startswith("lstm"):
                    b[W:2 * W] = 1.0
                params[name] = b
        return cls(cfg, params, stats)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n, _ in param_layout(self.cfg)])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for name, shape in param_layout(self.cfg):
            size = int(np.prod(shape))
            self.params[name] = np.array(vec[pos:pos + size], dtype=float).reshape(shape)
            pos += size
        if pos != len(vec):
            raise ValueError("parameter vector length does not match the layout")

    def copy(self) -> "SeqNet":
        return SeqNet(self.cfg, {k: v.copy() for k, v in self.params.items()}, self.stats)

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in param_layout(self.cfg))


# ---------------------------------------------------------------- normalisation


def normalize(x, s: NormStats) -> np.ndarray:
    if isinstance(x, ObsPoint):
        x = x.as_array()
    return (np.asarray(x, dtype=float) - s.mean) / s.stdev


def denormalize(z, s: NormStats) -> np.ndarray:
    return np.asarray(z, dtype=float) * s.stdev + s.mean


# ---------------------------------------------------------------- MDN head


@dataclass
class MixtureArrays:
    """Activated mixture parameters in meters, batched over leading axes."""

    pad_prob: np.ndarray  # (...)
    log_pi: np.ndarray  # (..., M)
    mu: np.ndarray  # (..., M, 2)
    sd: np.ndarray  # (..., M, 2)
    rho: np.ndarray  # (..., M)

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    def step(self, index=()) -> MdnStep:
        pi = np.exp(self.log_pi[index])
        pi = pi / pi.sum()
        return MdnStep.from_arrays(self.pad_prob[index], pi, self.mu[index], self.sd[index], self.rho[index])


def split_raw(raw: np.ndarray, M: int):
    p_hat = raw[..., 0]
    pi_hat = raw[..., 1:1 + M]
    mu_hat = np.stack([raw[..., 1 + M:1 + 2 * M], raw[..., 1 + 2 * M:1 + 3 * M]], axis=-1)
    sd_hat = np.stack([raw[..., 1 + 3 * M:1 + 4 * M], raw[..., 1 + 4 * M:1 + 5 * M]], axis=-1)
    rho_hat = raw[..., 1 + 5 * M:1 + 6 * M]
    return p_hat, pi_hat, mu_hat, sd_hat, rho_hat


def _log_softmax(a):
    m = a.max(axis=-1, keepdims=True)
    z = a - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def activate_arrays(raw: np.ndarray, s: NormStats, M: int) -> MixtureArrays:
    p_hat, pi_hat, mu_hat, sd_hat, rho_hat = split_raw(np.asarray(raw, dtype=float), M)
    scale = s.stdev[:2]
    shift = s.mean[:2]
    return MixtureArrays(
        pad_prob=np.clip(sigmoid(-p_hat), 1e-12, 1 - 1e-12),
        log_pi=_log_softmax(pi_hat),
        mu=mu_hat * scale + shift,
        sd=np.exp(sd_hat) * scale,
        rho=np.clip(np.tanh(rho_hat), -CORR_LIMIT, CORR_LIMIT),
    )


def mdn_activate(raw, s: NormStats) -> MdnStep:
    """Turn one unconstrained output vector (1 + 6M values) into an MdnStep."""
    raw = np.asarray(raw, dtype=float).ravel()
    M = (len(raw) - 1) // 6
    if len(raw) != 1 + 6 * M:
        raise ValueError(f"raw output length {len(raw)} is not 1 + 6M")
    return activate_arrays(raw, s, M).step()


def log_bivariate(point, mu, sd, rho):
    """Log of the correlated bivariate normal density, broadcasting over components."""
    z1 = (point[..., 0] - mu[..., 0]) / sd[..., 0]
    z2 = (point[..., 1] - mu[..., 1]) / sd[..., 1]
    one_m = 1.0 - rho * rho
    quad = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2
    return -LOG_2PI - np.log(sd[..., 0]) - np.log(sd[..., 1]) - 0.5 * np.log(one_m) - quad / (2.0 * one_m)


def bivariate_density(point, comp: MixtureComponent) -> float:
    x1, x2 = point
    m1, m2 = comp.mean
    s1, s2 = comp.stdev
    rho = comp.corr
    Z = (x1 - m1) ** 2 / s1 ** 2 + (x2 - m2) ** 2 / s2 ** 2 - 2 * rho * (x1 - m1) * (x2 - m2) / (s1 * s2)
    return 1.0 / (2 * math.pi * s1 * s2 * math.sqrt(1 - rho * rho)) * math.exp(-Z / (2 * (1 - rho * rho)))


def mixture_log_likelihood(step: MdnStep, point) -> float:
    w, mu, sd, rho = step.arrays()
    with np.errstate(divide="ignore"):
        terms = np.log(w) + log_bivariate(np.asarray(point, dtype=float)[None, :], mu, sd, rho)
    m = terms.max()
    return float(m + np.log(np.exp(terms - m).sum()))


def step_loss(step: MdnStep, truth, alpha: float, beta: float) -> float:
    """Padding cross entropy plus (beta-weighted on pad steps) mixture NLL for one step."""
    x, y = truth.x, truth.y
    g = 1.0 if truth.is_pad else 0.0
    q = step.pad_prob
    ce = -(g * math.log(q) + (1 - g) * math.log(1 - q))
    ll = max(mixture_log_likelihood(step, (x, y)), LOG_FLOOR)
    nll = -ll * (beta if truth.is_pad else 1.0)
    return nll + alpha * ce


def mdn_loss(raw: np.ndarray, truth: np.ndarray, pad: np.ndarray, s: NormStats, alpha: float, beta: float,
             need_grad: bool = True):
    """Vectorised step loss.

    raw (B, K, 1+6M), truth (B, K, 2) in meters, pad (B, K) bool.
    Returns per-snippet loss (B,) summed over steps, and d(mean loss)/d raw.
    """
    B, K, NO = raw.shape
    M = (NO - 1) // 6
    p_hat, pi_hat, mu_hat, sd_hat, rho_hat = split_raw(raw, M)
    g = pad.astype(float)
    w = np.where(pad, beta, 1.0)

    # likelihood evaluated in normalised units; the Jacobian of the scaling is a constant
    scale = s.stdev[:2]
    u = (truth - s.mean[:2]) / scale  # (B,K,2)
    log_jac = float(np.log(scale).sum())
    log_pi = _log_softmax(pi_hat)
    sd = np.exp(sd_hat)
    t_rho = np.tanh(rho_hat)
    rho = np.clip(t_rho, -CORR_LIMIT, CORR_LIMIT)
    z1 = (u[..., None, 0] - mu_hat[..., 0]) / sd[..., 0]
    z2 = (u[..., None, 1] - mu_hat[..., 1]) / sd[..., 1]
    one_m = 1.0 - rho * rho
    C = 1.0 / one_m
    quad = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2
    logN = -LOG_2PI - sd_hat[..., 0] - sd_hat[..., 1] - 0.5 * np.log(one_m) - 0.5 * C * quad
    terms = log_pi + logN
    m = terms.max(axis=-1, keepdims=True)
    ex = np.exp(terms - m)
    tot = ex.sum(axis=-1, keepdims=True)
    ll = (m + np.log(tot))[..., 0] - log_jac
    floored = ll < LOG_FLOOR
    ll_f = np.where(floored, LOG_FLOOR, ll)
    ce = g * softplus(p_hat) + (1.0 - g) * softplus(-p_hat)
    per_step = -w * ll_f + alpha * ce
    per_snippet = per_step.sum(axis=1)
    if not need_grad:
        return per_snippet, None

    gamma = ex / tot  # responsibilities (B,K,M)
    coef = (w * np.where(floored, 0.0, 1.0) / B)[..., None]  # d mean / d(-ll)
    d = np.empty_like(raw)
    d[..., 0] = alpha * (g - sigmoid(-p_hat)) / B
    pi = np.exp(log_pi)
    d[..., 1:1 + M] = coef * (pi - gamma)
    cg = coef * gamma
    d[..., 1 + M:1 + 2 * M] = -cg * C * (z1 - rho * z2) / sd[..., 0]
    d[..., 1 + 2 * M:1 + 3 * M] = -cg * C * (z2 - rho * z1) / sd[..., 1]
    d[..., 1 + 3 * M:1 + 4 * M] = -cg * (C * z1 * (z1 - rho * z2) - 1.0)
    d[..., 1 + 4 * M:1 + 5 * M] = -cg * (C * z2 * (z2 - rho * z1) - 1.0)
    dlogN_drho = C * (rho + z1 * z2 - rho * C * quad)
    drho_draw = np.where(np.abs(t_rho) < CORR_LIMIT, 1.0 - t_rho * t_rho, 0.0)
    d[..., 1 + 5 * M:1 + 6 * M] = -cg * dlogN_drho * drho_draw
    return per_snippet, d


# ---------------------------------------------------------------- recurrence


@dataclass
class EncoderState:
    """Hidden and cell state of every layer after the observation window."""

    hidden: list
    cell: list
    last_obs: np.ndarray  # (B, 4) raw units

    @property
    def batch(self) -> int:
        return self.last_obs.shape[0]


class _Trace:
    def __init__(self, L):
        self.x = [[] for _ in range(L)]
        self.h_prev = [[] for _ in range(L)]
        self.c_prev = [[] for _ in range(L)]
        self.gates = [[] for _ in range(L)]  # (B, 4W) activated i, f, o, g
        self.c = [[] for _ in range(L)]
        self.tc = [[] for _ in range(L)]
        self.out_steps = []  # global time index of each emitting step
        self.tops = []


def _stack_step(net: SeqNet, x, hs, cs, trace: Optional[_Trace]):
    W = net.cfg.lstm_width
    p = net.params
    inp = x
    for l in range(net.cfg.lstm_layers):
        z = inp @ p[f"lstm{l}.Wx"] + hs[l] @ p[f"lstm{l}.Wh"] + p[f"lstm{l}.b"]
        a = np.empty_like(z)
        a[:, :3 * W] = sigmoid(z[:, :3 * W])
        a[:, 3 * W:] = np.tanh(z[:, 3 * W:])
        c = a[:, W:2 * W] * cs[l] + a[:, :W] * a[:, 3 * W:]
        tc = np.tanh(c)
        h = a[:, 2 * W:3 * W] * tc
        if trace is not None:
            trace.x[l].append(inp)
            trace.h_prev[l].append(hs[l])
            trace.c_prev[l].append(cs[l])
            trace.gates[l].append(a)
            trace.c[l].append(c)
            trace.tc[l].append(tc)
        hs[l], cs[l] = h, c
        inp = h
    return inp


def _zeros_state(net: SeqNet, B: int):
    W = net.cfg.lstm_width
    L = net.cfg.lstm_layers
    return [np.zeros((B, W)) for _ in range(L)], [np.zeros((B, W)) for _ in range(L)]


Sampler = Callable[[MixtureArrays, np.random.Generator], np.ndarray]


def sample_mixture(mix: MixtureArrays, rng: np.random.Generator) -> np.ndarray:
    """Draw one (x, y) per batch row: component by weight, then the bivariate normal."""
    pi = mix.pi
    B, M = pi.shape
    u = rng.random(B)
    cum = np.cumsum(pi, axis=1)
    j = np.minimum((cum < u[:, None] * cum[:, -1:]).sum(axis=1), M - 1)
    rows = np.arange(B)
    mu, sd, rho = mix.mu[rows, j], mix.sd[rows, j], mix.rho[rows, j]
    e = rng.standard_normal((B, 2))
    x1 = mu[:, 0] + sd[:, 0] * e[:, 0]
    x2 = mu[:, 1] + sd[:, 1] * (rho * e[:, 0] + np.sqrt(1.0 - rho * rho) * e[:, 1])
    return np.column_stack([x1, x2])


def first_component_mean(mix: MixtureArrays, rng=None) -> np.ndarray:
    """Noise-free sampler pinned to component 0 (used by gradient checks)."""
    return mix.mu[:, 0].copy()


def feedback_input(pos, prev_pos, s: NormStats, dt: float) -> np.ndarray:
    """Normalised network input for a sampled position: speed and heading from the last displacement."""
    d = pos - prev_pos
    v = np.hypot(d[:, 0], d[:, 1]) / dt
    th = wrap_angle(np.arctan2(d[:, 1], d[:, 0]))
    return normalize(np.column_stack([pos, v, th]), s)


def encode_batch(obs: np.ndarray, net: SeqNet, s: Optional[NormStats] = None,
                 trace: Optional[_Trace] = None) -> EncoderState:
    s = s or net.stats
    obs = np.asarray(obs, dtype=float)
    B = obs.shape[0]
    xin = normalize(obs, s)
    hs, cs = _zeros_state(net, B)
    for t in range(obs.shape[1]):
        _stack_step(net, xin[:, t], hs, cs, trace)
    return EncoderState(hs, cs, obs[:, -1].copy())


def decode_batch(state: EncoderState, net: SeqNet, s: Optional[NormStats], variant, p: int,
                 rng: Optional[np.random.Generator] = None, sampler: Sampler = sample_mixture,
                 trace: Optional[_Trace] = None, t0: int = 0) -> np.ndarray:
    """Roll the decoder forward; returns raw outputs (B, steps, 1+6M).

    FL emits a single step. Sampled feedback is treated as a constant input.
    """
    s = s or net.stats
    variant = Variant.parse(variant)
    steps = 1 if variant is Variant.FL else p
    hs = [h.copy() for h in state.hidden]
    cs = [c.copy() for c in state.cell]
    B = state.batch
    M = net.cfg.M
    Wy, by = net.params["head.W"], net.params["head.b"]
    if variant is Variant.ZF:
        x = np.zeros((B, 4))
    else:
        x = normalize(state.last_obs, s)
    prev = state.last_obs[:, :2]
    raws = np.empty((B, steps, net.cfg.n_outputs))
    for k in range(steps):
        top = _stack_step(net, x, hs, cs, trace)
        raws[:, k] = top @ Wy + by
        if trace is not None:
            trace.out_steps.append(t0 + k)
            trace.tops.append(top)
        if k == steps - 1:
            break
        if variant is Variant.ZF:
            continue
        if rng is None:
            rng = np.random.default_rng()
        pos = sampler(activate_arrays(raws[:, k], s, M), rng)
        x = feedback_input(pos, prev, s, net.cfg.dt)
        prev = pos
    return raws


def encode(obs, net: SeqNet, s: Optional[NormStats] = None) -> EncoderState:
    """Consume one observation window (h points) in time order."""
    arr = np.array([o.as_array() if isinstance(o, ObsPoint) else o for o in obs], dtype=float)
    return encode_batch(arr[None], net, s)


def decode(state: EncoderState, net: SeqNet, s: Optional[NormStats], variant, p: int,
           rng: Optional[np.random.Generator] = None, sampler: Sampler = sample_mixture) -> PredictionSequence:
    s = s or net.stats
    variant = Variant.parse(variant)
    raws = decode_batch(state, net, s, variant, p, rng, sampler)
    return to_sequences(raws, s, net.cfg.M, variant)[0]


def to_sequences(raws: np.ndarray, s: NormStats, M: int, variant) -> list[PredictionSequence]:
    mix = activate_arrays(raws, s, M)
    variant = Variant.parse(variant)
    out = []
    for b in range(raws.shape[0]):
        out.append(PredictionSequence(tuple(mix.step((b, k)) for k in range(raws.shape[1])), variant))
    return out


def predict(obs: np.ndarray, net: SeqNet, variant, p: Optional[int] = None,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Raw decoder outputs for a batch of observation windows, inference mode.

    FL models are rolled out for ``p`` steps with sampled feedback, the same
    way FF models are.
    """
    variant = Variant.parse(variant)
    run_as = Variant.FF if variant is Variant.FL else variant
    state = encode_batch(obs, net)
    return decode_batch(state, net, net.stats, run_as, p or net.cfg.p, rng)


# ---------------------------------------------------------------- training pass


def forward_backward(net: SeqNet, obs: np.ndarray, future: np.ndarray, pad: np.ndarray, variant,
                     rng: Optional[np.random.Generator] = None, sampler: Sampler = sample_mixture,
                     need_grad: bool = True):
    """Per-snippet loss (B,) and gradients of the batch-mean loss.

    Backpropagates through the full unroll (encoder and decoder). ``future``
    and ``pad`` may be shorter than cfg.p; FL uses only the first step.
    """
    cfg = net.cfg
    variant = Variant.parse(variant)
    steps = 1 if variant is Variant.FL else future.shape[1]
    trace = _Trace(cfg.lstm_layers) if need_grad else None
    state = encode_batch(obs, net, net.stats, trace)
    raws = decode_batch(state, net, net.stats, variant, steps, rng, sampler, trace, t0=obs.shape[1])
    per, draw = mdn_loss(raws, future[:, :steps], pad[:, :steps], net.stats, cfg.alpha, cfg.beta, need_grad)
    if not need_grad:
        return per, None
    return per, _backward(net, trace, draw)


def _backward(net: SeqNet, trace: _Trace, draw: np.ndarray) -> dict:
    cfg = net.cfg
    W, L = cfg.lstm_width, cfg.lstm_layers
    p = net.params
    grads = {}
    tops = np.stack(trace.tops, axis=1)  # (B, K, W)
    B, K, _ = tops.shape
    grads["head.W"] = tops.reshape(B * K, W).T @ draw.reshape(B * K, -1)
    grads["head.b"] = draw.sum(axis=(0, 1))
    dtop = draw @ p["head.W"].T  # (B, K, W)
    out_at = {t: k for k, t in enumerate(trace.out_steps)}

    T = len(trace.x[0])
    dh_next = [np.zeros((B, W)) for _ in range(L)]
    dc_next = [np.zeros((B, W)) for _ in range(L)]
    dz_all = [[None] * T for _ in range(L)]
    for t in range(T - 1, -1, -1):
        k = out_at.get(t)
        dh_above = dtop[:, k] if k is not None else None
        for l in range(L - 1, -1, -1):
            a = trace.gates[l][t]
            i, f, o, g = a[:, :W], a[:, W:2 * W], a[:, 2 * W:3 * W], a[:, 3 * W:]
            tc = trace.tc[l][t]
            dh = dh_next[l] if dh_above is None else dh_next[l] + dh_above
            dc = dc_next[l] + dh * o * (1.0 - tc * tc)
            dz = np.empty((B, 4 * W))
            dz[:, :W] = dc * g * i * (1.0 - i)
            dz[:, W:2 * W] = dc * trace.c_prev[l][t] * f * (1.0 - f)
            dz[:, 2 * W:3 * W] = dh * tc * o * (1.0 - o)
            dz[:, 3 * W:] = dc * i * (1.0 - g * g)
            dz_all[l][t] = dz
            dc_next[l] = dc * f
            dh_next[l] = dz @ p[f"lstm{l}.Wh"].T
            dh_above = dz @ p[f"lstm{l}.Wx"].T if l > 0 else None
    for l in range(L):
        dz = np.concatenate(dz_all[l], axis=0)
        xs = np.concatenate(trace.x[l], axis=0)
        hp = np.concatenate(trace.h_prev[l], axis=0)
        grads[f"lstm{l}.Wx"] = xs.T @ dz
        grads[f"lstm{l}.Wh"] = hp.T @ dz
        grads[f"lstm{l}.b"] = dz.sum(axis=0)
    return grads
