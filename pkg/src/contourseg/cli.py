"""Command-line entry point: ``contourseg <subcommand> [flags]``.

Every run prints its resolved configuration as one JSON line and writes it
to ``<out>/config.json``; passing that file back with ``--config`` reruns the
same command. Failures print one JSON line on stderr and exit with:

    0 ok, 2 usage or invalid config, 3 data (missing or malformed files),
    4 numeric divergence or failed numeric check, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from contextlib import nullcontext
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4, 5

EPILOG = "exit codes: 0 ok, 2 usage/invalid config, 3 data error, 4 numeric divergence, 5 internal error"


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(f"{self.prog}: {message}", EXIT_USAGE)


# -- helpers ------------------------------------------------------------------------
def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) for v in r])


def _num(v) -> str:
    """Round-trip-safe text for numbers; blanks for missing values."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def _loss_config(args):
    from .losses import LossConfig

    return LossConfig(lam=args.lam, alpha=args.alpha, beta=args.beta, epsilon=args.epsilon,
                      k=args.k, iterations=args.iter)


def _network_config(args, num_classes: int):
    from .network import NetworkConfig

    return NetworkConfig(1, num_classes, base_channels=args.base_channels, levels=args.levels)


def _train_config(args, num_classes: int, loss: Optional[str] = None, loss_config=None):
    from .trainer import TrainConfig

    return TrainConfig(loss=loss or args.loss, loss_config=loss_config or _loss_config(args),
                       network=_network_config(args, num_classes), epochs=args.epochs,
                       batch_size=args.batch_size, lr=args.lr, schedule=args.schedule, seed=args.seed,
                       augment=not args.no_augment)


def _load_volume_arg(args):
    from .data import load_manifest, read_volume

    if args.volume:
        return read_volume(args.volume)
    if args.manifest:
        m = load_manifest(args.manifest)
        files = m.files(args.split)
        if not 0 <= args.index < len(files):
            raise CLIError(f"--index {args.index} out of range for split {args.split!r} ({len(files)} files)",
                           EXIT_USAGE)
        return read_volume(files[args.index])
    raise CLIError("one of --volume or --manifest is required", EXIT_USAGE)


# -- subcommands ------------------------------------------------------------------
def cmd_gen_data(args) -> dict:
    from .data import DatasetSpec, generate, preset, write_dataset

    n = args.train + args.val + args.test
    if args.spec:
        try:
            d = json.loads(Path(args.spec).read_text())
        except OSError as exc:
            raise CLIError(f"cannot read spec {args.spec}: {exc.strerror}", EXIT_DATA)
        d.update(seed=args.seed, num_volumes=n)
        spec = DatasetSpec.from_dict(d)
    else:
        spec = preset(args.preset, seed=args.seed, num_volumes=n, shape=(args.size,) * 3)
    samples = generate(spec)
    path = write_dataset(_out_dir(args), samples, spec, {"train": args.train, "val": args.val, "test": args.test})
    return {"manifest": str(path), "volumes": n}


def cmd_extract_contour(args) -> dict:
    from .data import Sample, write_volume
    from .morphology import StructuringElement, extract_contours
    from .validation import LabelVolume

    sample = _load_volume_arg(args)
    se = StructuringElement(args.k, tuple(args.anchor)) if args.anchor else StructuringElement(args.k)
    maps = extract_contours(sample.labels, se, args.iter)
    M = sample.num_classes
    contour_labels = np.zeros(sample.labels.shape, dtype=np.int64)
    counts = {}
    for j in range(1, M):
        contour_labels[maps.contour[j]] = j
        g = int(sample.labels.mask(j).sum())
        c = int(maps.contour[j].sum())
        counts[str(j)] = {"gt": g, "eroded": int(maps.eroded[j].sum()), "contour": c,
                          "fraction": (c / g) if g else 0.0}
    out = _out_dir(args)
    write_volume(out / "contour.csv1", Sample(maps.contour.any(axis=0)[None].astype(np.float64),
                                              LabelVolume(contour_labels, M)))
    _write_json(out / "contour_counts.json", counts)
    return {"counts": counts}


def cmd_eval_loss(args) -> dict:
    from .losses import LOSSES, NEEDS_CONTOURS, contour_maps_for, contour_dice_losses
    from .network import load_checkpoint, pdanet_forward
    from .tensor import Tensor, no_grad

    sample = _load_volume_arg(args)
    cfg = _loss_config(args)
    M = sample.num_classes
    y = sample.labels.labels[None]
    if args.checkpoint:
        params, net, _ = load_checkpoint(args.checkpoint)
        if net.num_classes != M:
            raise CLIError(f"checkpoint predicts {net.num_classes} classes, volume has {M}", EXIT_DATA)
        with no_grad():
            logits = pdanet_forward(Tensor(sample.intensity[None]), params, net)
    else:
        rng = np.random.default_rng(args.seed)
        logits = Tensor(args.logit_scale * rng.standard_normal((1, M) + sample.labels.shape))
    maps = contour_maps_for(y, M, cfg)
    with no_grad():
        value = LOSSES[args.loss](logits, y, maps if args.loss in NEEDS_CONTOURS else None, cfg).item()
        l_c, l_noc = contour_dice_losses(logits, y, maps, cfg)
        parts = {name: LOSSES[name](logits, y, maps, cfg).item() for name in ("ce", "cwce", "dice", "sdl")}
    result = {"loss": args.loss, "value": value, "components": dict(parts, l_c=l_c.item(), l_noc=l_noc.item())}
    _write_json(_out_dir(args) / "loss.json", result)
    return result


def cmd_gradcheck(args) -> dict:
    from .gradsuite import run_suite

    results = run_suite(args.target, args.seed)
    failed = [r["name"] for r in results if not r["passed"]]
    summary = {"checks": results, "failed": failed, "passed": not failed}
    _write_json(_out_dir(args) / "gradcheck.json", summary)
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']} rel_err={r['rel_err']:.3e} tol={r['tol']:.0e}")
    if failed:
        raise CLIError(f"gradient check failed for: {', '.join(failed)}", EXIT_NUMERIC)
    return {"passed": True, "checks": len(results)}


def cmd_check_theory(args) -> dict:
    from .losses import superadditivity_gaps

    rng = np.random.default_rng(args.seed)
    x1, y1, x2, y2 = (rng.uniform(0.0, args.scale, args.trials) for _ in range(4))
    gaps = superadditivity_gaps(x1, y1, x2, y2)
    violations = int(np.sum(gaps < -args.tol))
    # equality cases: (x2, y2) proportional to (x1, y1)
    t = rng.uniform(0.0, 2.0, args.trials)
    eq = np.abs(superadditivity_gaps(x1, y1, t * x1, t * y1))
    eq_fail = int(np.sum(eq >= args.tol))
    result = {"trials": args.trials, "violations": violations, "min_gap": float(gaps.min()),
              "equality_trials": args.trials, "equality_failures": eq_fail, "max_equality_gap": float(eq.max())}
    _write_json(_out_dir(args) / "theory.json", result)
    print(f"violations: {violations}")
    print(f"equality failures: {eq_fail}")
    if violations or eq_fail:
        raise CLIError(f"{violations} violations, {eq_fail} equality failures", EXIT_NUMERIC)
    return result


def cmd_train(args) -> dict:
    from .data import load_manifest
    from .trainer import train_from_manifest

    m = load_manifest(args.manifest)
    cfg = _train_config(args, m.num_classes)
    run = train_from_manifest(cfg, m, _out_dir(args))
    return {"best_epoch": run.best_epoch, "best_val_mean_dsc": run.best_dsc}


def _evaluation_rows(ev, M: int):
    rows = []
    for i, rep in enumerate(ev.reports):
        for c in range(1, M):
            m = rep.per_class[c]
            rows.append([i, c, m.dsc, m.hd95, m.assd])
    return rows


def cmd_evaluate(args) -> dict:
    from .data import load_manifest
    from .network import load_checkpoint
    from .trainer import evaluate

    params, net, _ = load_checkpoint(args.checkpoint)
    m = load_manifest(args.manifest)
    if m.num_classes != net.num_classes:
        raise CLIError(f"checkpoint predicts {net.num_classes} classes, manifest has {m.num_classes}", EXIT_DATA)
    ev = evaluate(params, net, m.load(args.split))
    out = _out_dir(args)
    summary = ev.summary()
    _write_json(out / "evaluation.json", {"split": args.split, "summary": summary,
                                          "samples": [r.to_dict() for r in ev.reports]})
    _write_csv(out / "per_sample.csv", ["sample", "class", "dsc", "hd95", "assd"], _evaluation_rows(ev, net.num_classes))
    return {"mean_dsc": summary["dsc"]["mean"]}


def _train_and_test(cfg, m, out: Path):
    from .trainer import evaluate, train

    run = train(cfg, m.load("train"), m.load("val"), out)
    ev = evaluate(run.params, cfg.network, m.load("test"))
    return run, ev


def _dsc_columns(ev, M: int) -> List[float]:
    per = ev.per_class("dsc").mean(axis=0)
    return [float(per.mean())] + [float(v) for v in per]


def cmd_sweep_iter(args) -> dict:
    from dataclasses import replace

    from .data import load_manifest
    from .morphology import contour_fraction, extract_contours

    m = load_manifest(args.manifest)
    M = m.num_classes
    out = _out_dir(args)
    base = _loss_config(args)
    train_samples = m.load("train")
    frac_rows, dsc_rows = [], []
    for it in args.iters:
        lc = replace(base, iterations=it)
        counts = np.zeros((2, M), dtype=np.int64)
        for s in train_samples:
            maps = extract_contours(s.labels, lc.structuring_element, it)
            counts[0] += maps.contour.reshape(M, -1).sum(axis=1)
            counts[1] += np.bincount(s.labels.labels.ravel(), minlength=M)
        fracs = [counts[0, j] / counts[1, j] if counts[1, j] else 0.0 for j in range(1, M)]
        frac_rows += [[it, j, int(counts[0, j]), int(counts[1, j]), fracs[j - 1]] for j in range(1, M)]
        if args.epochs > 0:
            cfg = _train_config(args, M, loss_config=lc)
            _, ev = _train_and_test(cfg, m, out / f"iter_{it}")
            dsc_rows.append([it] + _dsc_columns(ev, M))
    _write_csv(out / "contour_fraction.csv", ["iter", "class", "contour_voxels", "class_voxels", "fraction"], frac_rows)
    if dsc_rows:
        _write_csv(out / "sweep_iter.csv", ["iter", "mean_dsc"] + [f"dsc_{c}" for c in range(1, M)], dsc_rows)
    return {"iters": list(args.iters), "trained": bool(dsc_rows)}


def cmd_sweep_params(args) -> dict:
    from dataclasses import replace

    from .data import load_manifest

    m = load_manifest(args.manifest)
    M = m.num_classes
    out = _out_dir(args)
    field = {"alpha": "alpha", "beta": "beta", "lambda": "lam"}[args.param]
    rows = []
    for v in args.values:
        lc = replace(_loss_config(args), **{field: v})
        cfg = _train_config(args, M, loss_config=lc)
        _, ev = _train_and_test(cfg, m, out / f"{args.param}_{v!r}")
        rows.append([args.param, v] + _dsc_columns(ev, M))
    _write_csv(out / "sweep_params.csv", ["param", "value", "mean_dsc"] + [f"dsc_{c}" for c in range(1, M)], rows)
    return {"param": args.param, "values": list(args.values)}


def cmd_report(args) -> dict:
    lines, tidy = [], []
    for path in args.inputs:
        try:
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
        except OSError as exc:
            raise CLIError(f"cannot read {path}: {exc.strerror}", EXIT_DATA)
        if len(rows) < 2:
            raise CLIError(f"{path} has no data rows", EXIT_DATA)
        header, body = rows[0], rows[1:]
        key_cols = [i for i, h in enumerate(header) if h in ("iter", "param", "value", "class", "epoch", "sample")]
        lines.append(f"## {Path(path).name}\n")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for r in body:
            lines.append("| " + " | ".join(_render(v) for v in r) + " |")
            x = "/".join(r[i] for i in key_cols)
            for i, h in enumerate(header):
                if i not in key_cols:
                    tidy.append([Path(path).stem, x, h, r[i]])
        lines.append("")
    out = _out_dir(args)
    (out / "summary.md").write_text("\n".join(lines) + "\n")
    with open(out / "plot.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["source", "x", "series", "value"])
        w.writerows(tidy)
    return {"tables": len(args.inputs), "points": len(tidy)}


def _render(v: str) -> str:
    try:
        f = float(v)
    except ValueError:
        return v
    return v if f.is_integer() and "." not in v else f"{f:.4f}"


# -- parser ---------------------------------------------------------------------------
def _add_loss_flags(p):
    g = p.add_argument_group("loss")
    g.add_argument("--alpha", type=float, default=0.5, help="SDL weight in the compound loss (default 0.5)")
    g.add_argument("--beta", type=float, default=0.5, help="contour-term weight inside SDL (default 0.5)")
    g.add_argument("--lambda", dest="lam", type=float, default=2.0, help="contour weight in CWCE (default 2)")
    g.add_argument("--epsilon", type=float, default=1e-6, help="numerical guard (default 1e-6)")
    g.add_argument("--k", type=int, default=2, help="structuring element size (default 2)")
    g.add_argument("--iter", type=int, default=1, help="erosion iterations (default 1)")


def _add_train_flags(p, loss_default="cwcd"):
    from .losses import LOSSES

    g = p.add_argument_group("training")
    g.add_argument("--loss", choices=sorted(LOSSES), default=loss_default, help=f"loss (default {loss_default})")
    g.add_argument("--epochs", type=int, default=30, help="epochs (default 30)")
    g.add_argument("--batch-size", type=int, default=2, help="samples per optimiser step (default 2)")
    g.add_argument("--lr", type=float, default=3e-4, help="initial learning rate (default 3e-4)")
    g.add_argument("--schedule", choices=["halve", "linear"], default="halve",
                   help="halve at epochs 20/40, or linear decay to 1e-6 after epoch 20 (default halve)")
    g.add_argument("--base-channels", type=int, default=4, help="channels of the first level (default 4)")
    g.add_argument("--levels", type=int, default=3, help="down/up-sampling levels (default 3)")
    g.add_argument("--no-augment", action="store_true", help="disable rotation/flip augmentation")


def _add_volume_flags(p):
    p.add_argument("--volume", help="CSV1 volume file")
    p.add_argument("--manifest", help="dataset manifest (alternative to --volume)")
    p.add_argument("--split", default="test", help="manifest split (default test)")
    p.add_argument("--index", type=int, default=0, help="volume index within the split (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contourseg", description="Contour-weighted segmentation toolkit.", epilog=EPILOG)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_, out_default):
        p = sub.add_parser(name, help=help_, description=help_, epilog=EPILOG)
        p.add_argument("--out", default=out_default, help=f"output directory (default {out_default})")
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.add_argument("--config", help="JSON config echoed by a previous run; explicit flags override it")
        p.set_defaults(func=fn)
        return p

    p = add("gen-data", cmd_gen_data, "generate a seeded synthetic dataset", "data")
    p.add_argument("--preset", default="imbalance-v1", help="dataset preset (default imbalance-v1)")
    p.add_argument("--spec", help="JSON dataset spec (overrides --preset)")
    p.add_argument("--size", type=int, default=32, help="cubic volume side (default 32)")
    p.add_argument("--train", type=int, default=64, help="training volumes (default 64)")
    p.add_argument("--val", type=int, default=16, help="validation volumes (default 16)")
    p.add_argument("--test", type=int, default=16, help="test volumes (default 16)")

    p = add("extract-contour", cmd_extract_contour, "extract per-class contour maps", "contour")
    _add_volume_flags(p)
    p.add_argument("--k", type=int, default=2, help="structuring element size (default 2)")
    p.add_argument("--iter", type=int, default=1, help="erosion iterations (default 1)")
    p.add_argument("--anchor", type=int, nargs=3, metavar=("Z", "Y", "X"),
                   help="structuring element anchor (default 0 0 0)")

    p = add("eval-loss", cmd_eval_loss, "evaluate a loss on a volume", "loss")
    _add_volume_flags(p)
    from .losses import LOSSES
    p.add_argument("--loss", choices=sorted(LOSSES), default="cwcd", help="loss (default cwcd)")
    p.add_argument("--checkpoint", help="score model logits instead of seeded random logits")
    p.add_argument("--logit-scale", type=float, default=1.0, help="std of random logits (default 1)")
    _add_loss_flags(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient suite", "gradcheck")
    p.add_argument("--target", choices=["losses", "blocks", "model", "all"], default="all",
                   help="what to check (default all)")

    p = add("check-theory", cmd_check_theory, "randomised superadditivity check", "theory")
    p.add_argument("--trials", type=int, default=100000, help="random quadruples (default 100000)")
    p.add_argument("--tol", type=float, default=1e-12, help="tolerance (default 1e-12)")
    p.add_argument("--scale", type=float, default=1.0, help="inputs drawn from U[0, scale) (default 1)")

    p = add("train", cmd_train, "train the toy network", "run")
    p.add_argument("--manifest", required=True, help="dataset manifest")
    _add_train_flags(p)
    _add_loss_flags(p)

    p = add("evaluate", cmd_evaluate, "evaluate a checkpoint on a split", "eval")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--manifest", required=True, help="dataset manifest")
    p.add_argument("--split", default="test", help="split to evaluate (default test)")

    p = add("sweep-iter", cmd_sweep_iter, "contour thickness sweep over erosion iterations", "sweep_iter")
    p.add_argument("--manifest", required=True, help="dataset manifest")
    p.add_argument("--iters", type=int, nargs="+", default=[1, 3, 5], help="iterations (default 1 3 5)")
    _add_train_flags(p)
    _add_loss_flags(p)

    p = add("sweep-params", cmd_sweep_params, "one-at-a-time sweep of a loss weight", "sweep_params")
    p.add_argument("--manifest", required=True, help="dataset manifest")
    p.add_argument("--param", choices=["alpha", "beta", "lambda"], default="alpha", help="parameter (default alpha)")
    p.add_argument("--values", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9],
                   help="values (default 0.1 0.3 0.5 0.7 0.9)")
    _add_train_flags(p)
    _add_loss_flags(p)

    p = add("report", cmd_report, "render sweep CSVs as a table and a plot-ready CSV", "report")
    p.add_argument("inputs", nargs="+", help="CSV files written by the sweep commands")
    return parser


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, argv: Sequence[str]) -> None:
    """Install a saved config as subcommand defaults so explicit flags still win."""
    path = _config_path(argv)
    if path is None or not argv:
        return
    sub = parser._subparsers._group_actions[0].choices.get(argv[0])
    if sub is None:
        return
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc.strerror}", EXIT_DATA)
    except json.JSONDecodeError as exc:
        raise CLIError(f"config {path} is not valid JSON: {exc.msg}", EXIT_DATA)
    values = cfg.get("config", cfg) if isinstance(cfg, dict) else None
    if not isinstance(values, dict):
        raise CLIError(f"config {path} must be a JSON object", EXIT_USAGE)
    if values.get("command", argv[0]) != argv[0]:
        raise CLIError(f"config was written by {values['command']!r}, not {argv[0]!r}", EXIT_USAGE)
    values = {k: v for k, v in values.items() if k != "command"}
    actions = {a.dest: a for a in sub._actions}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise CLIError(f"unknown keys in config: {unknown}", EXIT_USAGE)
    for k in values:
        if actions[k].option_strings:
            actions[k].required = False
        elif actions[k].nargs == "+":
            actions[k].nargs = "*"
    sub.set_defaults(**values)


def _parse(parser, argv):
    _apply_config(parser, argv)
    return parser.parse_args(argv)


def _resolved(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return d


def _thread_limit():
    raw = os.environ.get("CONTOURSEG_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise CLIError(f"CONTOURSEG_THREADS must be a positive integer, got {raw!r}", EXIT_USAGE)
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _classify(exc: BaseException) -> int:
    from .data import DataFormatError, InfeasiblePackingError
    from .network import CheckpointError
    from .tensor import NonFiniteError
    from .trainer import TrainingDivergedError

    if isinstance(exc, (TrainingDivergedError, NonFiniteError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataFormatError, CheckpointError, InfeasiblePackingError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, (ValueError, KeyError)):
        return EXIT_USAGE
    return EXIT_INTERNAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args = _parse(parser, argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        resolved = _resolved(args)
        print(json.dumps({"config": resolved}, sort_keys=True))
        # divergence is detected explicitly; keep stderr to the one-line error contract
        with _thread_limit(), np.errstate(all="ignore"):
            result = args.func(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", {"config": resolved})
        print(json.dumps({"status": "ok", "result": result}, sort_keys=True, default=str))
        return EXIT_OK
    except CLIError as exc:
        code = exc.code
        msg = str(exc)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = _classify(exc)
        msg = f"{type(exc).__name__}: {exc}"
    print(json.dumps({"error": msg.replace("\n", " "), "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
