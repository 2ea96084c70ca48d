"""Command-line entry point: ``caeunmix <subcommand> ...``.

Exit codes: 0 success, 1 check failed, 2 usage or shape error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, metrics
from .errors import CaeError, NumericalError
from .gradcheck import TOLERANCE, run_gradcheck
from .model import (
    LR_SCHEDULES,
    Hyperparams,
    build_cae,
    dump_feature_maps,
    extract_factors,
    reconstruction,
    train,
)
from .nmf import NmfConfig, nmf
from .synth import SceneSpec, synth_scene

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# Reference average scores per scene, used as reporting targets.
REFERENCE_ROWS = {
    "jasper": {"sad": 0.4351, "rmse": 0.1681},
    "samson": {"sad": 0.3196, "rmse": 0.2479},
}
RMSE_TARGET = 0.25


class UsageError(CaeError):
    pass


def _existing(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"input path does not exist: {path}")
    return path


def _write_csv_rows(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row) + "\n")


def _write_factors(factors, rows, cols, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data.save_matrix_csv(factors.A, out_dir / "endmembers.csv")
    data.save_matrix_csv(factors.S, out_dir / "abundances.csv")
    return data.export_abundance_maps(factors.S, rows, cols, out_dir / "maps")


def _load_normalized(path):
    return data.normalize_cube(data.load_cube(_existing(path)))


def _hyper(args):
    return Hyperparams(
        r=args.r,
        epochs=args.epochs,
        dropout_rate=args.dropout,
        l2_rate=args.l2,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        shuffle=args.shuffle,
        lr_schedule=args.lr_schedule,
    )


def _banner(name, **fields):
    print(name + ": " + " ".join(f"{k}={v}" for k, v in fields.items()), flush=True)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args):
    spec = SceneSpec(args.rows, args.cols, args.r, args.bands, args.snr_db, args.seed)
    cube, gt = synth_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.save_cube(cube, out / "cube.hdr")
    data.save_matrix_csv(gt.A, out / "endmembers.csv")
    data.save_matrix_csv(gt.S, out / "abundances.csv")
    _banner("synth", rows=args.rows, cols=args.cols, bands=args.bands, r=args.r,
            snr_db=args.snr_db, seed=args.seed)
    print(f"wrote {out / 'cube.hdr'} ({cube.pixels} pixels x {cube.bands} bands)")
    return EXIT_OK


def cmd_train(args):
    cube = _load_normalized(args.cube)
    hyper = _hyper(args)
    _banner("train", seed=hyper.seed, epochs=hyper.epochs, dropout=hyper.dropout_rate,
            l2=hyper.l2_rate, lr=hyper.learning_rate, lr_schedule=hyper.lr_schedule,
            batch_size=hyper.batch_size, r=hyper.r)
    model = build_cae(cube.rows, cube.cols, cube.bands, hyper)

    def progress(epoch, loss):
        if not args.quiet:
            print(f"epoch {epoch}/{hyper.epochs} loss {loss:.6e}", flush=True)

    report = train(model, cube, progress=progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save_checkpoint(model, out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    _write_csv_rows(loss_csv, [(e, float(v)) for e, v in enumerate(report.loss_trace, start=1)])
    print(f"wrote {out} and {loss_csv}; final loss {report.final_loss:.6e}")
    return EXIT_OK


def cmd_unmix(args):
    model = checkpoint.load_checkpoint(_existing(args.checkpoint))
    cube = _load_normalized(args.cube)
    if (cube.rows, cube.cols, cube.bands) != (model.rows, model.cols, model.bands):
        raise UsageError(
            f"cube is {cube.rows}x{cube.cols}x{cube.bands} but the checkpoint expects "
            f"{model.rows}x{model.cols}x{model.bands}"
        )
    factors = extract_factors(model, cube)
    _write_factors(factors, cube.rows, cube.cols, args.out)
    X = cube.as_matrix()
    product = data.reconstruct(factors)
    print(f"unmix: r={model.r} reconstruction_mse={np.mean((product - X) ** 2):.6e}")
    if args.verify:
        gap = float(np.max(np.abs(reconstruction(model, cube) - product)))
        print(f"verify: max |X_hat - S A| = {gap:.3e}")
        if gap > 1e-9:
            return EXIT_CHECK
    return EXIT_OK


def _load_pair(endmembers, abundances):
    return data.FactorPair(data.load_matrix_csv(_existing(abundances)),
                           data.load_matrix_csv(_existing(endmembers)))


def cmd_eval(args):
    est = _load_pair(args.est_endmembers, args.est_abundances)
    gt = _load_pair(args.gt_endmembers, args.gt_abundances)
    names = args.names.split(",") if args.names else None
    report = metrics.evaluate(est, gt, names)
    print(report.to_text(args.title), end="")
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_nmf(args):
    cube = _load_normalized(args.cube)
    config = NmfConfig(r=args.r, max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    _banner("nmf", seed=config.seed, r=config.r, max_iters=config.max_iters, tol=config.tol)
    X = cube.as_matrix()
    result = nmf(X, config)
    factors = data.FactorPair(result.S, result.A)
    _write_factors(factors, cube.rows, cube.cols, args.out)
    _write_csv_rows(Path(args.out) / "objective.csv",
                    [(k, float(v)) for k, v in enumerate(result.objective_trace)])
    rel = np.linalg.norm(X - result.S @ result.A) / np.linalg.norm(X)
    print(f"nmf: iterations={result.iterations} relative_error={rel:.6e}")
    return EXIT_OK


def cmd_gradcheck(args):
    _banner("gradcheck", seed=args.seed, tol=args.tol)
    failed = []
    for res in run_gradcheck(seed=args.seed):
        name, err = res.worst
        ok = res.passed(args.tol)
        print(f"{'PASS' if ok else 'FAIL'} {res.case:<13} max_rel_err={err:.3e} ({name})")
        if not ok:
            failed.append(f"{res.case} ({name})")
    if failed:
        print("gradient check failed for: " + ", ".join(failed))
        return EXIT_CHECK
    print("all gradients within tolerance")
    return EXIT_OK


def cmd_featmaps(args):
    model = checkpoint.load_checkpoint(_existing(args.checkpoint))
    cube = _load_normalized(args.cube)
    paths = dump_feature_maps(model, cube, args.band, args.out)
    print(f"featmaps: band={args.band} wrote {len(paths)} maps to {args.out}")
    return EXIT_OK


def cmd_bench(args):
    """Train several seeds on a real scene and print a table next to the reference row."""
    cube = _load_normalized(args.cube)
    gt = _load_pair(args.gt_endmembers, args.gt_abundances)
    names = args.names.split(",") if args.names else None
    best = None
    for seed in range(args.seeds):
        hyper = Hyperparams(r=gt.r, epochs=args.epochs, seed=seed)
        model = build_cae(cube.rows, cube.cols, cube.bands, hyper)
        train(model, cube)
        report = metrics.evaluate(extract_factors(model, cube), gt, names)
        print(f"seed {seed}: average SAD {report.average_sad:.4f} RMSE {report.average_rmse:.4f}",
              flush=True)
        if best is None or report.average_sad < best[1].average_sad:
            best = (seed, report)
    seed, report = best
    print(f"\nbest seed {seed} (lowest average SAD)")
    print(report.to_text(f"CAE, {args.dataset}"), end="")
    ref = REFERENCE_ROWS[args.dataset]
    print(f"{'reference':<10} SAD {ref['sad']:.4f}  RMSE {ref['rmse']:.4f}")
    print(f"{'this run':<10} SAD {report.average_sad:.4f}  RMSE {report.average_rmse:.4f}")
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    ok = report.average_rmse <= RMSE_TARGET
    print(f"{'PASS' if ok else 'FAIL'} average RMSE {report.average_rmse:.4f} <= {RMSE_TARGET}")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_hyper_flags(p):
    d = Hyperparams(r=1)
    p.add_argument("--r", type=int, required=True, help="number of endmembers")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--dropout", type=float, default=d.dropout_rate)
    p.add_argument("--l2", type=float, default=d.l2_rate)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--lr-schedule", choices=LR_SCHEDULES, default=d.lr_schedule)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--shuffle", action="store_true", help="shuffle band order every epoch")


def build_parser():
    parser = argparse.ArgumentParser(prog="caeunmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--snr-db", type=float, default=None, help="omit for a noiseless scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the autoencoder on a cube")
    p.add_argument("--cube", required=True, help="cube header path")
    p.add_argument("--out", default="model.cae", help="checkpoint path")
    p.add_argument("--loss-csv", default=None, help="defaults to <out>.loss.csv")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress")
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("unmix", help="extract endmembers and abundances from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true", help="check X_hat == S A to 1e-9")
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("eval", help="score estimated factors against ground truth")
    p.add_argument("--est-endmembers", required=True)
    p.add_argument("--est-abundances", required=True)
    p.add_argument("--gt-endmembers", required=True)
    p.add_argument("--gt-abundances", required=True)
    p.add_argument("--names", default=None, help="comma-separated class names")
    p.add_argument("--title", default="CAE")
    p.add_argument("--out", default=None, help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nmf", help="multiplicative-update NMF baseline")
    p.add_argument("--cube", required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nmf)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("featmaps", help="dump conv-stage feature maps for one band")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--band", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featmaps)

    p = sub.add_parser("bench", help="best-of-N training on a real scene vs the reference row")
    p.add_argument("--dataset", choices=sorted(REFERENCE_ROWS), required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--gt-endmembers", required=True)
    p.add_argument("--gt-abundances", required=True)
    p.add_argument("--names", default=None)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
