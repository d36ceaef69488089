"""Adam training with exponential learning-rate decay and best-validation checkpointing."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from .data import SnippetBank, balance_classes
from .seqnet import SeqNet, first_component_mean, forward_backward, param_layout, sample_mixture
from .types import ModelConfig, Variant, _ConfigMixin

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "lr", "train_loss", "val_loss", "wall_secs")


class NonFiniteLoss(Exception):
    def __init__(self, track_id, t_index, value):
        super().__init__(f"non-finite loss {value} for snippet track={track_id} t_index={t_index}")
        self.track_id = track_id
        self.t_index = t_index


class EmptyDataset(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig(_ConfigMixin):
    lr_start: float = 5e-4
    lr_end: float = 1e-5
    decay_steps: int = 20000  # stands in for the wall-clock decay horizon
    batch_size: int = 100
    max_steps: int = 20000
    seed: int = 0
    grad_clip: Optional[float] = 5.0
    checkpoint_every: int = 500
    variant: str = "ZF"
    val_max: int = 1000  # validation snippets evaluated per checkpoint
    balance: bool = True

    def __post_init__(self):
        if not self.lr_start > self.lr_end > 0:
            raise ValueError("need lr_start > lr_end > 0")
        if self.batch_size < 1 or self.max_steps < 0 or self.decay_steps < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size, decay_steps and checkpoint_every must be positive")
        object.__setattr__(self, "variant", Variant.parse(self.variant).value)


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """lr_start * (lr_end / lr_start) ** (step / decay_steps), held at lr_end afterwards."""
    frac = min(step / cfg.decay_steps, 1.0)
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


class Adam:
    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - lr * mhat / (np.sqrt(vhat) + self.eps)


def flatten_grads(grads: dict, cfg: ModelConfig) -> np.ndarray:
    return np.concatenate([grads[n].ravel() for n, _ in param_layout(cfg)])


def loss_and_gradients(net: SeqNet, obs, future, pad, variant, ids: Optional[Sequence] = None,
                       rng: Optional[np.random.Generator] = None, sampler=sample_mixture, need_grad=True):
    """Batch-mean loss (sum over decoder steps per snippet) and its parameter gradients."""
    if len(obs) == 0:
        raise EmptyDataset("empty batch")
    per, grads = forward_backward(net, obs, future, pad, variant, rng, sampler, need_grad)
    bad = np.flatnonzero(~np.isfinite(per))
    if bad.size:
        b = int(bad[0])
        tid, ti = ids[b] if ids is not None else (None, b)
        raise NonFiniteLoss(tid, ti, per[b])
    return float(per.mean()), grads


@dataclass
class GradCheck:
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def rel_error(self) -> np.ndarray:
        a, n = self.analytic, self.numeric
        return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)

    def fraction_within(self, tol: float = 1e-4) -> float:
        return float(np.mean(self.rel_error <= tol))


def gradient_check(net: SeqNet, obs, future, pad, variant, eps: float = 1e-5) -> GradCheck:
    """Central finite differences against the reverse-mode gradient of the batch-mean loss.

    FF feedback is pinned to the first component's mean. Because the
    backward pass treats fed-back samples as constants, the numeric side
    replays the samples recorded on the unperturbed pass instead of
    recomputing them.
    """
    variant = Variant.parse(variant)
    recorded = []

    def record(mix, rng):
        pos = first_component_mean(mix)
        recorded.append(pos.copy())
        return pos

    sampler = record if variant is Variant.FF else sample_mixture
    _, grads = forward_backward(net, obs, future, pad, variant, None, sampler)
    analytic = flatten_grads(grads, net.cfg)

    def replay():
        it = iter(recorded)
        return lambda mix, rng: next(it)

    base = net.flat()
    numeric = np.zeros_like(base)
    try:
        for i in range(len(base)):
            for sign in (1.0, -1.0):
                f = base.copy()
                f[i] += sign * eps
                net.set_flat(f)
                smp = replay() if variant is Variant.FF else sample_mixture
                per, _ = forward_backward(net, obs, future, pad, variant, None, smp, need_grad=False)
                numeric[i] += sign * per.mean() / (2 * eps)
    finally:
        net.set_flat(base)
    return GradCheck(analytic, numeric)


def evaluate_loss(net: SeqNet, bank: SnippetBank, rows, variant, seed=0, batch=250) -> float:
    """Mean per-snippet loss over ``rows`` using the training loss path."""
    rng = np.random.default_rng([seed, 7])
    total = 0.0
    for k in range(0, len(rows), batch):
        obs, fut, pad, ids = bank.batch(rows[k:k + batch])
        loss, _ = loss_and_gradients(net, obs, fut, pad, variant, ids, rng, need_grad=False)
        total += loss * len(ids)
    return total / len(rows)


@dataclass
class TrainResult:
    best: ckpt.Checkpoint
    best_val_loss: float
    final: ckpt.Checkpoint
    log: list = field(default_factory=list)


def train(train_bank: SnippetBank, val_bank: Optional[SnippetBank], tcfg: TrainConfig, net: SeqNet,
          out_dir=None, resume: Optional[ckpt.Checkpoint] = None) -> TrainResult:
    """Train ``net`` in place; returns the best-validation and final checkpoints.

    Training rows are class-balanced by oversampling; validation rows are not.
    With ``out_dir`` the best and latest checkpoints, ``index.json`` and
    ``metrics.csv`` are written there.
    """
    if len(train_bank) == 0:
        raise EmptyDataset("no training snippets")
    variant = Variant.parse(tcfg.variant)
    rows = np.arange(len(train_bank))
    if tcfg.balance:
        rows = np.array(balance_classes(list(rows), tcfg.seed, label=train_bank.label_of))
    val_rows = None
    if val_bank is not None and len(val_bank):
        vr = np.random.default_rng([tcfg.seed, 3]).permutation(len(val_bank))
        val_rows = np.sort(vr[: tcfg.val_max])

    opt = Adam(net.n_params)
    step = 0
    if resume is not None:
        net.set_flat(resume.net.flat())
        step = resume.step
        if resume.adam_m is not None:
            opt.m, opt.v, opt.t = resume.adam_m.copy(), resume.adam_v.copy(), resume.step
    batch_rng = np.random.default_rng([tcfg.seed, 1, step])
    sample_rng = np.random.default_rng([tcfg.seed, 2, step])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    metrics = []
    best_val = math.inf
    best = None
    if resume is not None and out is not None:
        metrics, best_val, best = _previous_run(out, step)
    running = []
    t_start = time.perf_counter() - (metrics[-1]["wall_secs"] if metrics else 0.0)

    def snapshot():
        return ckpt.Checkpoint(net.copy(), variant, step, opt.m.copy(), opt.v.copy())

    def checkpoint_now():
        nonlocal best_val, best
        lr = learning_rate(step, tcfg)
        train_loss = float(np.mean(running)) if running else float("nan")
        running.clear()
        if val_rows is not None:
            val_loss = evaluate_loss(net, val_bank, val_rows, variant, tcfg.seed)
        else:
            val_loss = train_loss
        row = {"step": step, "lr": lr, "train_loss": train_loss, "val_loss": val_loss,
               "wall_secs": time.perf_counter() - t_start}
        metrics.append(row)
        log.info("step %d lr %.3g train %.4f val %.4f", step, lr, train_loss, val_loss)
        snap = snapshot()
        if best is None or val_loss < best_val:
            best_val, best = val_loss, snap
            if out is not None:
                ckpt.save(out / "best.ckpt", snap)
        if out is not None:
            ckpt.save(out / "latest.ckpt", snap)
            _write_metrics(out / "metrics.csv", metrics)
            with open(out / "index.json", "w", encoding="utf-8") as fh:
                json.dump({"best": "best.ckpt", "best_step": best.step, "best_val_loss": best_val,
                           "latest": "latest.ckpt", "latest_step": step, "variant": variant.value},
                          fh, indent=2, sort_keys=True)
                fh.write("\n")

    cfg = net.cfg
    end = tcfg.max_steps
    while step < end:
        picks = rows[batch_rng.integers(0, len(rows), size=tcfg.batch_size)]
        obs, fut, pad, ids = train_bank.batch(picks)
        loss, grads = loss_and_gradients(net, obs, fut, pad, variant, ids, sample_rng)
        g = flatten_grads(grads, cfg)
        if tcfg.grad_clip is not None:
            norm = float(np.sqrt(g @ g))
            if norm > tcfg.grad_clip:
                g = g * (tcfg.grad_clip / norm)
        net.set_flat(opt.step(net.flat(), g, learning_rate(step, tcfg)))
        step += 1
        running.append(loss)
        if step % tcfg.checkpoint_every == 0 or step == end:
            checkpoint_now()
    if best is None:
        checkpoint_now()
    return TrainResult(best, best_val, snapshot(), metrics)


def _previous_run(out: Path, step: int):
    """Metrics rows up to ``step`` and the best checkpoint already in ``out``, if any."""
    rows = []
    if (out / "metrics.csv").exists():
        with open(out / "metrics.csv", encoding="utf-8", newline="") as fh:
            for r in csv.DictReader(fh):
                if int(r["step"]) <= step:
                    rows.append({k: (int(v) if k == "step" else float(v)) for k, v in r.items()})
    best_val, best = math.inf, None
    if (out / "best.ckpt").exists() and (out / "index.json").exists():
        with open(out / "index.json", encoding="utf-8") as fh:
            best_val = float(json.load(fh)["best_val_loss"])
        best = ckpt.load(out / "best.ckpt")
        if best.step > step:
            best_val, best = math.inf, None
    return rows, best_val, best


def _write_metrics(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["step"], repr(r["lr"]), repr(r["train_loss"]), repr(r["val_loss"]), f"{r['wall_secs']:.3f}"])
