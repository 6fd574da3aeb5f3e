"""Finite-difference verification of the overlap-suppression and
contrastive-alignment gradients.

Everything runs in float64 with central differences. Sampled configurations
are kept away from the non-smooth points of the losses: segment endpoints sit
on a coarse grid (pairwise separation 0.05, far beyond the step), the log
argument stays clear of its clamp, the per-prediction best ground-truth
overlap has a unique argmax, and feature norms stay well above the cosine
floor. Near those kinks a finite difference straddles two smooth pieces and
says nothing about the analytic gradient.
"""

from __future__ import annotations

import time
from typing import Callable, Dict

import numpy as np
import torch

from .losses import CTCAConfig, OSLConfig, ctca, osl
from .temporal import pairwise_tiou

_GRID = (np.arange(1, 40, 2)) / 40.0  # 0.025 .. 0.975, step 0.05


def central_difference(fn: Callable, x: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Central finite-difference gradient of a scalar function at x."""
    g = torch.zeros_like(x)
    flat = g.reshape(-1)
    base = x.detach().clone()
    for i in range(base.numel()):
        xp = base.clone().reshape(-1)
        xm = base.clone().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = float(fn(xp.reshape(base.shape)))
        fm = float(fn(xm.reshape(base.shape)))
        flat[i] = (fp - fm) / (2.0 * h)
    return g


def max_relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Max over coordinates of |a - n| / max(1, |a|, |n|)."""
    diff = (analytic - numeric).abs()
    scale = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=1.0)
    return float((diff / scale).max()) if diff.numel() else 0.0


def _sample_osl_case(rng: np.random.Generator):
    """Segments on the coarse grid with all guards satisfied."""
    for _ in range(500):
        k = int(rng.integers(2, 5))
        n_gt = int(rng.integers(1, 4))
        points = rng.choice(_GRID, size=2 * (k + n_gt), replace=False)
        pred = np.sort(points[: 2 * k].reshape(k, 2), axis=1)
        gts = np.sort(points[2 * k :].reshape(n_gt, 2), axis=1)
        gamma = float(rng.choice([0.0, 0.1, 0.25, 0.4, 0.5]))
        beta = float(rng.choice([1.0, 1.5]))
        cfg = OSLConfig(gamma=gamma, beta=beta, epsilon=1e-6)
        p_o = pairwise_tiou(pred, pred)
        off = p_o[~np.eye(k, dtype=bool)]
        if off.size and (beta - off.max()) < max(10 * cfg.epsilon, 1e-2):
            continue
        p_g = pairwise_tiou(pred, gts)
        ok = True
        for i in range(k):
            row = np.sort(p_g[i])[::-1]
            if row[0] > 0.0 and len(row) > 1 and row[0] - row[1] < 1e-2:
                ok = False
                break
        if ok:
            return pred, gts, cfg
    raise RuntimeError("could not sample a guarded OSL configuration")


def _sample_ctca_case(rng: np.random.Generator):
    for _ in range(500):
        k = int(rng.integers(2, 6))
        d = int(rng.choice([3, 8, 16]))
        cap = rng.standard_normal((k, d))
        loc = rng.standard_normal((k, d))
        if min(np.linalg.norm(cap, axis=1).min(), np.linalg.norm(loc, axis=1).min()) < 1e-3:
            continue
        n_matched = int(rng.integers(1, k + 1))
        matched = sorted(rng.choice(k, size=n_matched, replace=False).tolist())
        tau = float(rng.choice([0.05, 0.1, 0.5, 1.0]))
        return cap, loc, matched, CTCAConfig(tau=tau)
    raise RuntimeError("could not sample a guarded CTCA configuration")


def gradcheck_osl(n_configs: int = 24, seed: int = 0, h: float = 1e-4, tol: float = 1e-4) -> Dict:
    rng = np.random.default_rng(seed)
    started = time.time()
    rows = []
    for _ in range(n_configs):
        pred_np, gts_np, cfg = _sample_osl_case(rng)
        x = torch.tensor(pred_np, dtype=torch.float64, requires_grad=True)
        gts = torch.tensor(gts_np, dtype=torch.float64)
        analytic = torch.autograd.grad(osl(x, gts, cfg), x)[0]
        numeric = central_difference(lambda t: osl(t, gts, cfg), x, h)
        rows.append(
            {
                "k": pred_np.shape[0],
                "n_gt": gts_np.shape[0],
                "gamma": cfg.gamma,
                "beta": cfg.beta,
                "max_rel_err": max_relative_error(analytic, numeric),
            }
        )
    worst = max(r["max_rel_err"] for r in rows)
    return {
        "loss": "osl",
        "n_configs": n_configs,
        "max_rel_err": worst,
        "tol": tol,
        "passed": worst < tol,
        "elapsed_s": time.time() - started,
        "per_config": rows,
    }


def gradcheck_ctca(n_configs: int = 24, seed: int = 0, h: float = 1e-4, tol: float = 1e-4) -> Dict:
    rng = np.random.default_rng(seed)
    started = time.time()
    rows = []
    for _ in range(n_configs):
        cap_np, loc_np, matched, cfg = _sample_ctca_case(rng)
        cap = torch.tensor(cap_np, dtype=torch.float64, requires_grad=True)
        loc = torch.tensor(loc_np, dtype=torch.float64, requires_grad=True)
        g_cap, g_loc = torch.autograd.grad(ctca(cap, loc, matched, cfg), [cap, loc])
        n_cap = central_difference(
            lambda t: ctca(t, loc.detach(), matched, cfg), cap, h
        )
        n_loc = central_difference(
            lambda t: ctca(cap.detach(), t, matched, cfg), loc, h
        )
        err = max(max_relative_error(g_cap, n_cap), max_relative_error(g_loc, n_loc))
        rows.append(
            {
                "k": cap_np.shape[0],
                "d": cap_np.shape[1],
                "n_matched": len(matched),
                "tau": cfg.tau,
                "max_rel_err": err,
            }
        )
    worst = max(r["max_rel_err"] for r in rows)
    return {
        "loss": "ctca",
        "n_configs": n_configs,
        "max_rel_err": worst,
        "tol": tol,
        "passed": worst < tol,
        "elapsed_s": time.time() - started,
        "per_config": rows,
    }


def run_gradcheck(loss: str, n_configs: int = 24, seed: int = 0) -> Dict:
    if loss == "osl":
        return gradcheck_osl(n_configs=n_configs, seed=seed)
    if loss == "ctca":
        return gradcheck_ctca(n_configs=n_configs, seed=seed)
    raise ValueError(f"unknown gradcheck target {loss!r}")
