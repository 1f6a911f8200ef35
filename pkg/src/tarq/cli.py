"""Command-line front end: ``tarq quantize | pool | ablate | synth``.

Exit codes: 0 success, 2 unreadable or inconsistent input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import formats
from .errors import SingularMetric, TarqError
from .gptq import SweepConfig
from .harness import (
    METHODS,
    RunReport,
    SweepParams,
    SyntheticSpec,
    generate_batch,
    layer_record,
    layer_solver,
    random_upweight_mask,
    run_experiment,
)
from .lattice import QuantConfig
from .lexicon import POOL_KINDS, build_pool, cross_candidates, load_corpus, load_freq_table, zipf_score
from .pipeline import sequential_sweep
from .spqr import GateConfig

EXIT_PARSE, EXIT_NUMERIC = 2, 3
CLI_VARIANTS = tuple(m for m in METHODS if m != "spqr_tarq_gated")
GRIDS = ("variants", "c", "k", "source")


@dataclass
class RunConfig:
    bits: int = 4
    group_size: int = 128
    percdamp: float = 0.01
    delta: float = 0.01
    cost_ratio_c: float = 1.0
    zipf_calib_k: float = 3.0
    zipf_eval_k: float = 3.0
    eps_rel: float = 1e-8
    variant: str = "tarq"
    outlier_fraction: float = 0.01
    tau: float = 3.0
    rarity_gate_outliers: bool = False
    seed: int = 0
    paths: dict = field(default_factory=dict)

    def sweep_params(self, trials: int = 1) -> SweepParams:
        return SweepParams(
            sweep=SweepConfig(QuantConfig(self.bits, self.group_size), self.percdamp),
            cost_ratio_c=self.cost_ratio_c, delta=self.delta, eps_rel=self.eps_rel,
            zipf_calib_k=self.zipf_calib_k, zipf_eval_k=self.zipf_eval_k,
            gate=GateConfig(self.outlier_fraction, self.tau), trials=trials,
        )

    @property
    def method(self) -> str:
        if self.rarity_gate_outliers and self.variant == "spqr_tarq":
            return "spqr_tarq_gated"
        return self.variant


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--group-size", type=int, default=128)
    p.add_argument("--percdamp", type=float, default=0.01, help="relative damping inside the column sweep")
    p.add_argument("--delta", type=float, default=0.01, help="relative damping of the residual direction")
    p.add_argument("--cost-ratio", dest="cost_ratio_c", type=float, default=1.0)
    p.add_argument("--eps-rel", type=float, default=1e-8)
    p.add_argument("--zipf-calib-k", type=float, default=3.0)
    p.add_argument("--zipf-eval-k", type=float, default=3.0)
    p.add_argument("--variant", choices=CLI_VARIANTS, default="tarq")
    p.add_argument("--outlier-fraction", type=float, default=0.01)
    p.add_argument("--tau", type=float, default=3.0)
    p.add_argument("--rarity-gate-outliers", action="store_true",
                   help="reset rarity weights to 1 on positions already covered by outlier columns")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tarq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize a chain of linear layers")
    _add_common(q)
    q.add_argument("--weights", required=True, help="tensor file, one fp section per layer")
    q.add_argument("--calib", required=True, help="tensor file holding the N x d0 layer-0 inputs")
    tags = q.add_mutually_exclusive_group(required=True)
    tags.add_argument("--tags", help="one line per position: tail/common (or 1/0)")
    tags.add_argument("--words", help="one word per position, tagged with --freq-table")
    q.add_argument("--freq-table", help="word<TAB>count table used with --words")
    q.add_argument("--out-dir", required=True)
    q.add_argument("--report", help="report path (default OUT_DIR/report.jsonl)")

    p = sub.add_parser("pool", help="build a rare-biased calibration pool")
    p.add_argument("--corpus", action="append", required=True, help="id<TAB>text manifest (repeatable)")
    p.add_argument("--freq-table", required=True)
    p.add_argument("--kind", choices=POOL_KINDS, required=True)
    p.add_argument("-n", "--size", type=int, default=128)
    p.add_argument("--zipf-calib-k", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="run an ablation grid on the synthetic benchmark")
    _add_common(a)
    a.add_argument("--grid", choices=GRIDS, required=True)
    a.add_argument("--trials", type=int, default=20)
    a.add_argument("--dims", default="16,16,16,16")
    a.add_argument("--positions", type=int, default=512)
    a.add_argument("--tail-share", type=float, default=0.07)
    a.add_argument("--c-values", default="0.25,0.5,1,2,4")
    a.add_argument("--k-values", default="2,3,4")
    a.add_argument("--out", required=True)

    s = sub.add_parser("synth", help="write a synthetic weight/calibration set")
    s.add_argument("--dims", default="16,16,16,16")
    s.add_argument("--positions", type=int, default=512)
    s.add_argument("--tail-share", type=float, default=0.07)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    return parser


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def run_config(args) -> RunConfig:
    paths = {k: str(v) for k, v in vars(args).items()
             if k in ("weights", "calib", "tags", "words", "freq_table", "out_dir", "report", "out") and v}
    cfg = RunConfig(
        bits=args.bits, group_size=args.group_size, percdamp=args.percdamp, delta=args.delta,
        cost_ratio_c=args.cost_ratio_c, zipf_calib_k=args.zipf_calib_k, zipf_eval_k=args.zipf_eval_k,
        eps_rel=args.eps_rel, variant=args.variant, outlier_fraction=args.outlier_fraction,
        tau=args.tau, rarity_gate_outliers=args.rarity_gate_outliers, seed=args.seed, paths=paths,
    )
    if not 2 <= cfg.bits <= 8:
        raise TarqError(f"--bits must be in [2, 8], got {cfg.bits}")
    return cfg


def _read_tags(path) -> np.ndarray:
    vals = []
    for line in Path(path).read_text(encoding="utf-8").split():
        token = line.strip().lower()
        if token in ("tail", "1"):
            vals.append(True)
        elif token in ("common", "0"):
            vals.append(False)
        else:
            raise formats.FormatError(f"{path}: bad tag {token!r}")
    return np.array(vals, dtype=bool)


def _word_tags(args, cfg: RunConfig):
    if not args.freq_table:
        raise TarqError("--words needs --freq-table")
    table = load_freq_table(args.freq_table)
    words = Path(args.words).read_text(encoding="utf-8").split()
    scores = np.array([-np.inf if (z := zipf_score(w, table)) is None else z for w in words])
    return scores < cfg.zipf_calib_k, scores < cfg.zipf_eval_k


def cmd_quantize(args) -> int:
    cfg = run_config(args)
    if cfg.bits != 4:
        raise TarqError("the packed tensor format stores 4-bit codes only; use --bits 4")
    layers = formats.read_tensors(args.weights)
    if not layers or any(not isinstance(w, np.ndarray) or w.ndim != 2 for w in layers):
        raise formats.FormatError(f"{args.weights}: expected 2-d fp tensor sections")
    calib = formats.read_tensors(args.calib)
    if len(calib) != 1 or not isinstance(calib[0], np.ndarray) or calib[0].ndim != 2:
        raise formats.FormatError(f"{args.calib}: expected one 2-d fp tensor section")
    x = calib[0]
    if args.tags:
        calib_tail = eval_tail = _read_tags(args.tags)
    else:
        calib_tail, eval_tail = _word_tags(args, cfg)
    if len(calib_tail) != x.shape[0]:
        raise formats.FormatError(f"{len(calib_tail)} tags for {x.shape[0]} positions")

    params = cfg.sweep_params()
    mask = random_upweight_mask(len(calib_tail), int(calib_tail.sum()), cfg.seed) if cfg.method == "nB" else None
    steps = sequential_sweep(layers, x, calib_tail, layer_solver(cfg.method, params, mask))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, step in enumerate(steps):
        formats.write_tensors(out / f"layer_{i}.tqt", [step.result.quantized])
        rec = layer_record(step, eval_tail)
        records.append(rec)
        print(f"layer {i}: {cfg.method} lambda={rec.lam:.6g} alpha={rec.alpha:.6g} "
              f"common={rec.common_loss:.6g} tail={rec.tail_loss:.6g} weighted={rec.weighted_loss:.6g}")
    report = RunReport(cfg.method, records, asdict(cfg), 1,
                       np.array([records[-1].common_loss]), np.array([records[-1].tail_loss]))
    formats.emit_report([report], args.report or out / "report.jsonl")
    return 0


def cmd_pool(args) -> int:
    table = load_freq_table(args.freq_table)
    sources = [load_corpus(p) for p in args.corpus]
    pool = build_pool(sources, args.kind, args.size, args.seed, table, args.zipf_calib_k)
    Path(args.out).write_text("".join(u.id + "\n" for u in pool), encoding="utf-8")
    extra = ""
    if args.kind == "r_cross":
        extra = f", {len(cross_candidates(sources, args.size, table, args.zipf_calib_k))} candidates"
    print(f"{args.kind}: {len(sources)} source(s){extra}, {len(pool)} selected")
    return 0


def ablation_cells(grid: str, cfg: RunConfig, c_values, k_values) -> list:
    """``(method, RunConfig)`` per grid cell, row-major over the grid axes."""
    if grid == "variants":
        return [(m, replace(cfg, variant=m)) for m in ("gptq", "rarebal_only", "residual_only", "tarq")]
    if grid == "source":
        return [(m, replace(cfg, variant=m)) for m in ("rB", "nB", "cB")]
    if grid == "c":
        return [(cfg.method, replace(cfg, cost_ratio_c=c)) for c in c_values]
    return [(cfg.method, replace(cfg, zipf_calib_k=kc, zipf_eval_k=ke)) for kc in k_values for ke in k_values]


def cmd_ablate(args) -> int:
    cfg = run_config(args)
    spec = SyntheticSpec(layer_dims=_ints(args.dims), positions=args.positions,
                         tail_share=args.tail_share, noise_seed=cfg.seed)
    reports = []
    for method, cell in ablation_cells(args.grid, cfg, _floats(args.c_values), _floats(args.k_values)):
        rep = run_experiment(spec, [method], cell.sweep_params(args.trials))[0]
        rep.config = {"run": asdict(cell), "spec": asdict(spec), "grid": args.grid}
        reports.append(rep)
        print(f"{method} c={cell.cost_ratio_c:g} k_c={cell.zipf_calib_k:g} k_e={cell.zipf_eval_k:g}: "
              f"tail={rep.mean_tail:.6g} common={rep.mean_common:.6g}")
    formats.emit_report(reports, args.out)
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(layer_dims=_ints(args.dims), positions=args.positions,
                         tail_share=args.tail_share, noise_seed=args.seed)
    batch = generate_batch(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_tensors(out / "weights.tqt", batch.layers)
    formats.write_tensors(out / "calib.tqt", [batch.inputs])
    (out / "tags.txt").write_text("".join("tail\n" if t else "common\n" for t in batch.tail), encoding="utf-8")
    print(f"wrote {len(batch.layers)} layers, {len(batch.tail)} positions ({int(batch.tail.sum())} tail) to {out}")
    return 0


COMMANDS = {"quantize": cmd_quantize, "pool": cmd_pool, "ablate": cmd_ablate, "synth": cmd_synth}


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SingularMetric as exc:
        print(f"tarq: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TarqError, OSError, ValueError) as exc:
        print(f"tarq: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
