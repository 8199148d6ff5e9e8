"""Command-line interface.

Exit codes: 0 ok, 2 input/validation error, 3 numeric failure (solver
bracket, divergence, violated bound), 4 internal defect.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .codec import (CodecError, CodecParams, decode, deserialize, encode, render_bitmap,
                    serialize)
from .config import ConfigError, RunConfig
from .data import (SYNTHETIC, DataError, load_csv, make_windows, stack_windows, write_csv)
from .forecaster import (ForecastError, PersistencePredictor, PipelineContext, ReferenceNet,
                         TrainingDiverged, compare_on_batch, forecast_normalized, load_checkpoint,
                         predict, save_checkpoint, sweep, train)
from .sme import (BracketError, TABLE1_H, check_convergence, monte_carlo_sme, reproduce_table1,
                  solve_optimal_ms, sme_upper_bound)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_DEFECT = 0, 2, 3, 4


class NumericFailure(ArithmeticError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.6f}"
    return str(v)


def _args_digest(ns: argparse.Namespace) -> str:
    d = {k: v for k, v in vars(ns).items() if k not in ("func", "output", "output_dir")}
    # identify inputs by content so the same data under another path gives the same digest
    src = d.get("input")
    if src and Path(src).is_file():
        d["input"] = hashlib.sha256(Path(src).read_bytes()).hexdigest()
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_table(path, header, rows, digest: str) -> None:
    """CSV with a leading ``# config_digest=`` line and 6-decimal floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_digest={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def print_table(header, rows, digest: str) -> None:
    print(f"# config_digest={digest}")
    print(",".join(header))
    for r in rows:
        print(",".join(_fmt(v) for v in r))


def _codec_from_args(ns) -> CodecParams:
    ms = solve_optimal_ms(ns.h) if str(ns.ms) == "auto" else float(ns.ms)
    return CodecParams(ns.h, ms)


def _ms_arg(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _ts_arg(text):
    return None if text.lower() == "none" else text


# codec commands -------------------------------------------------------------

def cmd_encode(ns):
    params = _codec_from_args(ns)
    d = load_csv(ns.input, ns.timestamp_column)
    tensor = encode(d.series, params)
    Path(ns.output).write_bytes(serialize(tensor))
    print(f"encoded c={tensor.c} h={tensor.h} t={tensor.t} ms={params.ms:.6f} -> {ns.output}")


def _read_tensor(path):
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    return deserialize(data)


def cmd_decode(ns):
    tensor = _read_tensor(ns.input)
    if ns.h is not None and ns.h != tensor.h:
        raise CodecError(f"--h {ns.h} does not match the file's h={tensor.h}")
    ms = solve_optimal_ms(tensor.h) if str(ns.ms) == "auto" else float(ns.ms)
    series = decode(tensor, CodecParams(tensor.h, ms))
    header = ["step"] + [f"ch{i}" for i in range(series.channels)]
    rows = ([k] + list(series.values[:, k]) for k in range(series.steps))
    write_table(ns.output, header, rows, _args_digest(ns))
    print(f"decoded c={series.channels} t={series.steps} -> {ns.output}")


def cmd_render(ns):
    if str(ns.input).endswith(".csv"):
        if ns.h is None or ns.ms is None:
            raise CodecError("rendering a CSV needs --h and --ms")
        tensor = encode(load_csv(ns.input, ns.timestamp_column).series, _codec_from_args(ns))
    else:
        tensor = _read_tensor(ns.input)
    text = render_bitmap(tensor, ns.channel, comment=f"config_digest={_args_digest(ns)}")
    if ns.output:
        Path(ns.output).write_text(text)
        print(f"wrote {tensor.t}x{tensor.h} bitmap -> {ns.output}")
    else:
        sys.stdout.write(text)


# theory commands ------------------------------------------------------------

def cmd_solve_ms(ns):
    print(f"{solve_optimal_ms(ns.h, ns.tol):.6f}")


def cmd_bound(ns):
    per_element = not ns.total
    print(f"{sme_upper_bound(ns.h, ns.ms, per_element=per_element, c=ns.c, t=ns.t):.6f}")


def cmd_table1(ns):
    rows = reproduce_table1(ns.hs)
    header = ["h", "best_ms", "upper_bound"]
    digest = _args_digest(ns)
    if ns.output:
        write_table(ns.output, header, rows, digest)
    print_table(header, rows, digest)


def cmd_verify_sme(ns):
    params = _codec_from_args(ns)
    rep = monte_carlo_sme(params, ns.c, ns.t, ns.n, ns.seed, workers=ns.workers)
    header = ["h", "ms", "n", "seed", "empirical_mean", "stderr", "bound", "within_bound"]
    rows = [(rep.h, rep.ms, rep.n, rep.seed, rep.mean, rep.stderr, rep.bound, int(rep.within_bound))]
    digest = _args_digest(ns)
    if ns.output:
        write_table(ns.output, header, rows, digest)
    print_table(header, rows, digest)
    if not rep.within_bound:
        raise NumericFailure(f"empirical mean - 3 stderr = {rep.mean - 3 * rep.stderr:.6f} exceeds bound {rep.bound:.6f}")


def cmd_check_convergence(ns):
    rep = check_convergence(ns.ms, ns.hs)
    rows = list(zip(rep.hs, rep.bounds))
    digest = _args_digest(ns)
    if ns.output:
        write_table(ns.output, ["h", "bound"], rows, digest)
    print_table(["h", "bound"], rows, digest)
    print(f"# limit_h_to_infinity={rep.limit:.6e} decreasing={rep.decreasing}")
    if not rep.decreasing:
        raise NumericFailure("bound is not strictly decreasing along the schedule")


# forecasting commands -------------------------------------------------------

def _run_config(ns) -> RunConfig:
    cfg = RunConfig.load(ns.config) if ns.config else RunConfig()
    return cfg.with_overrides(
        dataset=ns.dataset, h=ns.h, ms=ns.ms, seed=ns.seed, predictor=getattr(ns, "predictor", None),
        net_epochs=ns.epochs, net_lr=ns.lr, net_hidden=ns.hidden)


def _out_dir(cfg: RunConfig, ns) -> Path:
    out = cfg.resolve_output_dir(ns.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_predictor(cfg: RunConfig, checkpoint):
    if cfg.predictor == "persistence":
        return PersistencePredictor(cfg.horizon)
    if checkpoint is None:
        raise ConfigError("the reference predictor needs --checkpoint (run `mvts train` first)")
    theta, digest = load_checkpoint(checkpoint)
    if digest != _model_digest(cfg):
        raise ConfigError(f"checkpoint {checkpoint} was trained with a different config")
    return ReferenceNet(cfg.net_config(), theta)


def _model_digest(cfg: RunConfig) -> bytes:
    # the predictor choice does not change the trained weights
    return replace(cfg, predictor="reference").digest()


def cmd_train(ns):
    cfg = _run_config(ns)
    out = _out_dir(cfg, ns)
    d = cfg.load_dataset()
    params = cfg.codec()
    batch = stack_windows(make_windows(d, cfg.window_spec(), "train", cfg.channel_independent,
                                       cfg.split, cfg.global_zscore))
    t0 = time.perf_counter()
    res = train(batch, cfg.net_config(), params)
    elapsed = time.perf_counter() - t0
    digest = _model_digest(cfg)
    save_checkpoint(out / "checkpoint.mvck", res.theta, digest)
    write_table(out / "loss_curve.csv", ["epoch", "loss"], enumerate(res.loss_curve), digest.hex())
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"trained on {len(batch)} windows in {elapsed:.1f}s; loss {res.loss_curve[0]:.6f} -> "
          f"{res.loss_curve[-1]:.6f}; checkpoint -> {out / 'checkpoint.mvck'}")


def cmd_eval(ns):
    cfg = _run_config(ns)
    out = _out_dir(cfg, ns)
    d = cfg.load_dataset()
    params = cfg.codec()
    predictor = _build_predictor(cfg, ns.checkpoint)
    batch = stack_windows(make_windows(d, cfg.window_spec(evaluation=True), ns.split,
                                       cfg.channel_independent, cfg.split, cfg.global_zscore))
    cmp = compare_on_batch(predictor, batch, params)
    header = ["predictor", "horizon", "mse", "mae", "windows"]
    rows = [r for rep in cmp.reports() for r in rep.rows()]
    write_table(out / "eval_report.csv", header, rows, cfg.digest().hex())
    for rep in cmp.reports():
        print(f"{rep.label:>20s}  MSE={rep.mse:.6f}  MAE={rep.mae:.6f}")
    print(f"report -> {out / 'eval_report.csv'}")


def cmd_predict(ns):
    cfg = _run_config(ns)
    out = _out_dir(cfg, ns)
    params = cfg.codec()
    predictor = _build_predictor(cfg, ns.checkpoint)
    digest = cfg.digest().hex()
    if ns.input:
        window = load_csv(ns.input, cfg.timestamp_column)
        d = cfg.load_dataset()
        ctx = PipelineContext.from_dataset(d) if cfg.global_zscore else None
        vals = window.series.values[:, -cfg.lookback:] if window.rows >= cfg.lookback else window.series.values
        if cfg.channel_independent or vals.shape[0] == 1:
            fc = predict(predictor, vals, params, ctx, lookback=cfg.lookback)
        else:
            raise ConfigError("predict --input requires channel_independent")
        names = window.series.channel_names
        rows = ([k] + list(fc.values[:, k]) for k in range(fc.steps))
        path = out / "forecast.csv"
        write_table(path, ["step", *names], rows, digest)
    else:
        d = cfg.load_dataset()
        batch = stack_windows(make_windows(d, cfg.window_spec(evaluation=True), ns.split,
                                           cfg.channel_independent, cfg.split, cfg.global_zscore))
        pred = batch.denormalize(forecast_normalized(predictor, batch.x, params))
        rows = []
        for i in range(len(batch)):
            for ci in range(pred.shape[1]):
                ch = batch.channel[i] if batch.channel[i] >= 0 else ci
                for k in range(pred.shape[2]):
                    rows.append((int(batch.window_id[i]), int(ch), k, float(pred[i, ci, k])))
        path = out / "predictions.csv"
        write_table(path, ["window_id", "channel", "step", "value"], rows, digest)
    print(f"predictions -> {path}")


def cmd_sweep(ns):
    cfg = _run_config(ns)
    out = _out_dir(cfg, ns)
    d = cfg.load_dataset()
    base = cfg.codec()
    if ns.vary == "ms":
        ms_values, h_values = ns.values, [cfg.h]
    elif ns.vary == "h":
        ms_values, h_values = [base.ms], [int(v) for v in ns.values]
    else:
        ms_values, h_values = ns.values, [int(v) for v in ns.h_values]
    rows = sweep(d, cfg.window_spec(evaluation=True), ms_values, h_values, ns.sweep_predictor,
                 cfg.net_config(), ns.split, cfg.channel_independent, cfg.split, cfg.global_zscore)
    write_table(out / "sweep.csv", ["ms", "h", "mae"], rows, cfg.digest().hex())
    best = min(rows, key=lambda r: r[2])
    print(f"{len(rows)} grid points; best ms={best[0]:.6f} h={best[1]} mae={best[2]:.6f}")
    print(f"sweep -> {out / 'sweep.csv'}")


def cmd_synth(ns):
    opts = {"t": ns.t, "c": ns.c, "seed": ns.seed}
    d = SYNTHETIC[ns.kind](**opts)
    write_csv(d, ns.output)
    print(f"wrote {d.channels} x {d.rows} {ns.kind} series -> {ns.output}")


def cmd_info(ns):
    print(f"mvts {__version__}; kernel backend: {kernels.BACKEND}")


# parser ---------------------------------------------------------------------

def _run_flags(p, predictor=True):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--dataset", help="CSV path or synthetic:<kind>")
    p.add_argument("--h", type=int)
    p.add_argument("--ms", type=_ms_arg)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    if predictor:
        p.add_argument("--predictor", choices=("reference", "persistence"))
    p.add_argument("--output-dir", help="defaults to config output_dir, then $MVTS_OUTPUT_DIR, then ./runs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvts", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="CSV series -> MVTS tensor file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--ms", type=_ms_arg, required=True)
    p.add_argument("--timestamp-column", type=_ts_arg, default="auto", help="column name, auto, or none")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="MVTS tensor file -> CSV of bin midpoints")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ms", type=_ms_arg, required=True)
    p.add_argument("--h", type=int)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("render", help="MVTS file (or CSV) -> plain PBM bitmap of one channel")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--h", type=int)
    p.add_argument("--ms", type=_ms_arg)
    p.add_argument("--timestamp-column", type=_ts_arg, default="auto", help="column name, auto, or none")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("solve-ms", help="bound-minimizing ms for a given h")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_solve_ms)

    p = sub.add_parser("bound", help="upper bound on the expected roundtrip error")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--ms", type=float, required=True)
    p.add_argument("--c", type=int, default=1)
    p.add_argument("--t", type=int, default=1)
    p.add_argument("--total", action="store_true", help="multiply by c*t instead of per element")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("table1", help="best ms and bound for h in 50..800")
    p.add_argument("--hs", type=int, nargs="+", default=list(TABLE1_H))
    p.add_argument("--output")
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("verify-sme", help="Monte-Carlo check of the error bound")
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--ms", type=_ms_arg, default="auto")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c", type=int, default=1)
    p.add_argument("--t", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output")
    p.set_defaults(func=cmd_verify_sme)

    p = sub.add_parser("check-convergence", help="bound along an increasing h schedule")
    p.add_argument("--ms", type=float, required=True)
    p.add_argument("--hs", type=int, nargs="+", default=list(TABLE1_H))
    p.add_argument("--output")
    p.set_defaults(func=cmd_check_convergence)

    p = sub.add_parser("train", help="train the reference network")
    _run_flags(p, predictor=False)
    p.set_defaults(func=cmd_train, predictor=None)

    p = sub.add_parser("eval", help="MSE/MAE of model, persistence and quantization floor")
    _run_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="forecast test windows, or one raw window from --input")
    _run_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="CSV holding at least `lookback` rows")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="MAE over a grid of ms and/or h")
    _run_flags(p, predictor=False)
    p.add_argument("--vary", choices=("ms", "h", "both"), required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--h-values", type=int, nargs="+", default=[])
    p.add_argument("--sweep-predictor", default="codec", choices=("codec", "persistence", "reference"))
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_sweep, predictor=None)

    p = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    p.add_argument("--kind", choices=sorted(SYNTHETIC), default="noisy_sine")
    p.add_argument("--t", type=int, default=2000)
    p.add_argument("--c", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("info", help="version and active kernel backend")
    p.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command == "sweep" and ns.vary == "both" and not ns.h_values:
        parser.error("--vary both needs --h-values")
    try:
        ns.func(ns)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"mvts: config error: {problem}", file=sys.stderr)
        return EXIT_INPUT
    except (BracketError, TrainingDiverged, NumericFailure) as exc:
        print(f"mvts: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CodecError, DataError, ForecastError, ValueError, OSError) as exc:
        print(f"mvts: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"mvts: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEFECT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
