"""Seeded two-group synthetic calibration benchmark and experiment runner."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .errors import BadSpec
from .gptq import SweepConfig
from .lattice import QuantConfig
from .pipeline import VARIANTS, SweepStep, ablation_variant, sequential_sweep
from .spqr import GateConfig, spqr_tarq_layer
from .stats import rare_mass_share

SPQR_VARIANTS = ("spqr", "spqr_tarq", "spqr_tarq_gated")
METHODS = VARIANTS + SPQR_VARIANTS


@dataclass(frozen=True)
class CovSpec:
    """Covariance ``R diag(spectrum) R^T``; ``R`` rotates coordinate pairs
    (0, 1), (2, 3), ... by ``angle_deg``. The spectrum is tiled to the dimension."""

    angle_deg: float = 0.0
    spectrum: tuple = (1.0, 0.02)

    def matrix(self, dim: int) -> np.ndarray:
        lam = np.resize(np.asarray(self.spectrum, dtype=np.float64), dim)
        R = np.eye(dim)
        t = np.deg2rad(self.angle_deg)
        c, s = np.cos(t), np.sin(t)
        for i in range(0, dim - 1, 2):
            R[i:i + 2, i:i + 2] = [[c, -s], [s, c]]
        return (R * lam) @ R.T


@dataclass(frozen=True)
class SyntheticSpec:
    layer_dims: tuple = (16, 16, 16, 16)
    positions: int = 512
    tail_share: float = 0.07
    common_cov: CovSpec = field(default_factory=CovSpec)
    tail_cov: CovSpec = field(default_factory=lambda: CovSpec(angle_deg=90.0))
    noise_seed: int = 0
    # (channel, magnitude): tail positions get +/- magnitude added on one input channel
    tail_spike: Optional[tuple] = None

    def validate(self) -> None:
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 2:
            raise BadSpec("need at least one layer and every dim >= 2")
        if not 0 < self.tail_share < 1:
            raise BadSpec("tail_share must lie in (0, 1)")
        if self.positions < 2:
            raise BadSpec("need at least two positions")
        n_tail = round(self.tail_share * self.positions)
        if not 0 < n_tail < self.positions:
            raise BadSpec("tail_share * positions must leave both groups nonempty")
        if self.tail_spike is not None and not 0 <= self.tail_spike[0] < self.layer_dims[0]:
            raise BadSpec("tail_spike channel out of range")


@dataclass(frozen=True, eq=False)
class SyntheticBatch:
    layers: list
    inputs: np.ndarray
    tail: np.ndarray
    zipf: np.ndarray

    def tags(self, threshold: float) -> np.ndarray:
        return self.zipf < threshold


def _gaussian(rng, cov: np.ndarray, n: int) -> np.ndarray:
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0, None))
    return rng.standard_normal((n, cov.shape[0])) @ root.T


def generate_batch(spec: SyntheticSpec) -> SyntheticBatch:
    """Draw weights, inputs, and per-position Zipf scores from ``spec.noise_seed``.

    Exactly ``round(p * N)`` positions are tail; they draw from ``tail_cov``
    and get Zipf scores in [1.5, 3), the rest draw from ``common_cov`` with
    scores in [3, 7).
    """
    spec.validate()
    rng = np.random.default_rng(spec.noise_seed)
    dims = spec.layer_dims
    layers = [rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i]) for i in range(len(dims) - 1)]
    n, d0 = spec.positions, dims[0]
    n_tail = round(spec.tail_share * n)
    tail = np.zeros(n, dtype=bool)
    tail[rng.permutation(n)[:n_tail]] = True
    x = np.empty((n, d0))
    x[~tail] = _gaussian(rng, spec.common_cov.matrix(d0), n - n_tail)
    x[tail] = _gaussian(rng, spec.tail_cov.matrix(d0), n_tail)
    if spec.tail_spike is not None:
        ch, mag = spec.tail_spike
        x[tail, ch] += mag * rng.choice([-1.0, 1.0], n_tail)
    zipf = np.where(tail, rng.uniform(1.5, 3.0, n), rng.uniform(3.0, 7.0, n))
    return SyntheticBatch(layers, x, tail, zipf)


@dataclass(frozen=True)
class SweepParams:
    sweep: SweepConfig = field(default_factory=SweepConfig)
    cost_ratio_c: float = 1.0
    delta: float = 0.01
    eps_rel: float = 1e-8
    zipf_calib_k: float = 3.0
    zipf_eval_k: float = 3.0
    gate: GateConfig = field(default_factory=GateConfig)
    trials: int = 1


@dataclass(frozen=True)
class LayerRecord:
    rare_mass_share: float
    lam: float
    alpha: float
    common_loss: float
    tail_loss: float
    weighted_loss: float


@dataclass(eq=False)
class RunReport:
    """Trial-mean per-layer records for one method.

    ``common_loss``/``tail_loss`` are group averages of the layer output
    error against the full-precision stream, grouped at the evaluation
    threshold. ``weighted_loss`` is ``tr(dW H dW^T)`` under the layer's
    plain metric. ``trial_common``/``trial_tail`` hold the network-output
    group losses of every trial, for paired comparisons.
    """

    method: str
    per_layer: list
    config: dict
    trials: int = 1
    trial_common: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trial_tail: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean_common(self) -> float:
        return float(np.mean(self.trial_common))

    @property
    def mean_tail(self) -> float:
        return float(np.mean(self.trial_tail))


def benchmark_params(trials: int = 200, **overrides) -> SweepParams:
    """Parameters of the seeded two-group benchmark: 4-bit codes, groups of 8."""
    return replace(SweepParams(sweep=SweepConfig(QuantConfig(4, 8)), trials=trials), **overrides)


def layer_solver(method: str, params: SweepParams, upweight_mask: Optional[np.ndarray] = None):
    if method in SPQR_VARIANTS:
        return partial(
            spqr_tarq_layer, cfg=params.sweep, gate=params.gate,
            gate_enabled=method == "spqr_tarq_gated", rarity=method != "spqr",
            c=params.cost_ratio_c, eps_rel=params.eps_rel,
        )
    if method not in VARIANTS:
        raise BadSpec(f"unknown method {method!r}")
    return partial(
        ablation_variant, cfg=params.sweep, variant=method, c=params.cost_ratio_c,
        eps_rel=params.eps_rel, delta=params.delta, upweight_mask=upweight_mask,
    )


def random_upweight_mask(n: int, size: int, seed: int) -> np.ndarray:
    """Size-matched random position set for the noise-control reweighting."""
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng([seed, 0x6E42]).permutation(n)[:size]] = True
    return mask


def _group_mean(err: np.ndarray, mask: np.ndarray) -> float:
    return float(err[mask].mean()) if mask.any() else 0.0


def layer_record(step: SweepStep, eval_tail: np.ndarray) -> LayerRecord:
    res = step.result
    err = np.sum((step.out_fp - step.out_q) ** 2, axis=1)
    return LayerRecord(
        rare_mass_share=rare_mass_share(res.moments),
        lam=res.metric.lam,
        alpha=res.residual.alpha if res.residual is not None else 0.0,
        common_loss=_group_mean(err, ~eval_tail),
        tail_loss=_group_mean(err, eval_tail),
        weighted_loss=res.losses.weighted,
    )


def run_trial(batch: SyntheticBatch, method: str, params: SweepParams, seed: int) -> list[SweepStep]:
    calib_tail = batch.tags(params.zipf_calib_k)
    mask = random_upweight_mask(len(calib_tail), int(calib_tail.sum()), seed) if method == "nB" else None
    return sequential_sweep(batch.layers, batch.inputs, calib_tail, layer_solver(method, params, mask))


def config_echo(spec: SyntheticSpec, params: SweepParams, method: str) -> dict:
    return {"method": method, "spec": asdict(spec), "params": asdict(params)}


def run_experiment(spec: SyntheticSpec, methods: Sequence[str], params: SweepParams = SweepParams()
                   ) -> list[RunReport]:
    """Run every method on ``params.trials`` seeded batches.

    Trial ``t`` uses ``noise_seed + t``; all methods see the same batches,
    so trial losses are paired across methods.
    """
    for method in methods:
        if method not in METHODS:
            raise BadSpec(f"unknown method {method!r}")
    if params.trials < 1:
        raise BadSpec("trials must be >= 1")
    records = {mth: [] for mth in methods}
    out_common = {mth: [] for mth in methods}
    out_tail = {mth: [] for mth in methods}
    for t in range(params.trials):
        seed = spec.noise_seed + t
        batch = generate_batch(replace(spec, noise_seed=seed))
        eval_tail = batch.tags(params.zipf_eval_k)
        for method in methods:
            steps = run_trial(batch, method, params, seed)
            recs = [layer_record(s, eval_tail) for s in steps]
            records[method].append(recs)
            out_common[method].append(recs[-1].common_loss)
            out_tail[method].append(recs[-1].tail_loss)
    reports = []
    for method in methods:
        per_layer = [
            LayerRecord(*np.mean([list(asdict(trial[i]).values()) for trial in records[method]], axis=0).tolist())
            for i in range(len(spec.layer_dims) - 1)
        ]
        reports.append(RunReport(
            method=method, per_layer=per_layer, config=config_echo(spec, params, method),
            trials=params.trials, trial_common=np.array(out_common[method]),
            trial_tail=np.array(out_tail[method]),
        ))
    return reports
