"""Gradient verification: analytic backward pass against central differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pcnn import model
from pcnn.runtime import single_threaded_blas
from pcnn.tensor import GradTape, backward, finite_difference_gradient

REL_TOLERANCE = 1e-4
FD_EPS = 1e-6


def fd_resolution_floor(loss_value: float) -> float:
    """Smallest gradient scale central differences can certify at the tolerance.

    Differencing a loss L with step h carries rounding noise of at least
    machine_eps * |L| / h per evaluation, and the loss itself accumulates
    rounding over thousands of ops (observed up to a few times that bound,
    hence the decade of margin). Coordinates whose gradients sit below
    noise / tolerance are compared in absolute terms at that scale.
    """
    noise = 10.0 * np.finfo(np.float64).eps * abs(loss_value) / FD_EPS
    return max(noise / REL_TOLERANCE, 1e-9)


@dataclass
class BlockResult:
    block: str
    n_params: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= REL_TOLERANCE


@dataclass
class GradCheckResult:
    rows: list[BlockResult]
    threshold: float = REL_TOLERANCE
    gradient_floor: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def render(self) -> str:
        lines = ["gradient check: analytic backward vs central finite differences",
                 f"threshold: relative error <= {self.threshold:g} "
                 f"(gradient scale floor {self.gradient_floor:.2e})", ""]
        lines.append(f"{'block':<12s}{'params':>8s}{'max_rel_err':>14s}  status")
        for r in self.rows:
            status = "ok" if r.passed else "FAIL"
            lines.append(f"{r.block:<12s}{r.n_params:>8d}{r.max_rel_err:>14.3e}  {status}")
        lines.append("")
        lines.append("result: " + ("pass" if self.passed else "FAIL"))
        return "\n".join(lines)


def _rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def _block_of(name: str) -> str:
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0] == "pcb" else parts[0]


def toy_signals(config: model.ModelConfig, seed: int, num_samples: int = 160):
    """Deterministic tone-plus-noise pair sized for fast finite differences."""
    rng = np.random.default_rng(seed + 1)
    t = np.arange(num_samples) / 16000.0
    clean = 0.5 * np.sin(2.0 * np.pi * 440.0 * t) + 0.15 * np.sin(2.0 * np.pi * 1210.0 * t)
    noisy = clean + 0.25 * rng.standard_normal(num_samples)
    return clean, noisy


def run_gradcheck(config: model.ModelConfig, seed: int = 0,
                  corrupt: str | None = None) -> GradCheckResult:
    """Compare every named parameter's gradient of the combined loss to
    central finite differences (eps 1e-6), reported per block.

    ``corrupt`` names a parameter whose analytic gradient is deliberately
    damaged first; used as a negative control in the tests.
    """
    params = model.build(config)
    clean, noisy = toy_signals(config, seed)

    def compute_loss():
        est = model.forward_graph(params, noisy)
        return model.loss_total(clean, est, config.alpha,
                                config.stft_frame, config.stft_hop)

    with single_threaded_blas():
        with GradTape() as tape:
            loss = compute_loss()
        grads = backward(tape, loss)
        floor = fd_resolution_floor(loss.item())

        named = list(params.named_tensors())
        analytic = {}
        for name, t in named:
            g = grads.get(t)
            analytic[name] = np.zeros_like(t.data) if g is None else np.asarray(g)
        if corrupt is not None:
            if corrupt not in analytic:
                raise KeyError(f"no parameter named {corrupt!r}")
            analytic[corrupt] = analytic[corrupt] + 1.0

        worst: dict[str, BlockResult] = {}
        for name, t in named:
            numeric = finite_difference_gradient(
                lambda: compute_loss().item(), {name: t}, eps=FD_EPS)[name]
            err = _rel_err(analytic[name], numeric, floor)
            block = _block_of(name)
            row = worst.setdefault(block, BlockResult(block, 0, 0.0))
            row.n_params += t.size
            row.max_rel_err = max(row.max_rel_err, err)
    return GradCheckResult(rows=list(worst.values()), gradient_floor=floor)
