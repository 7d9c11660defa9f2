"""Command-line interface.

Every subcommand reads an optional TOML config (``--config``), merges the
command-line overrides into it, and writes its outputs to ``--out``. The
effective configuration is echoed to ``config.json`` and its hash is
embedded in every output file, so any run can be repeated from the echo.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""
import argparse
import hashlib
import io
import os
import sys

import numpy as np
import tomli

from . import __version__
from .exceptions import NonConvergenceError, NumericalFailure, UCError
from .io_utils import canonical_json, config_hash, write_atomic, write_csv, write_json

__all__ = ["main", "build_parser", "effective_config"]

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

DEFAULT_MODEL = {"trend": "random_walk_drift", "seasonal": {"period": 12}}


class _Invalid(UCError):
    pass


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise _Invalid(f"--config: file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise _Invalid(f"--config {path}: {exc}") from None


def _resolve(path, base):
    if path is None or os.path.isabs(path) or base is None:
        return path
    return os.path.normpath(os.path.join(base, path))


def effective_config(args):
    """Merge config-file values with command-line overrides."""
    cfg = _read_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else None
    for key in ("input", "model_file"):
        if key in cfg:
            cfg[key] = _resolve(cfg[key], base)
    if getattr(args, "input", None):
        cfg["input"] = args.input
    if getattr(args, "model", None):
        cfg["model_file"] = args.model
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 20240601 if args.command == "mc-critvals" else 0)
    for key, value in getattr(args, "overrides", {}).items():
        if value is not None:
            section, _, name = key.partition(".")
            cfg.setdefault(section, {})[name] = value
    if "model_file" in cfg:
        try:
            with open(cfg["model_file"], "rb") as fh:
                cfg["model"] = tomli.load(fh)
        except FileNotFoundError:
            raise _Invalid(f"model file not found: {cfg['model_file']}") from None
        except tomli.TOMLDecodeError as exc:
            raise _Invalid(f"model file {cfg['model_file']}: {exc}") from None
        del cfg["model_file"]
    cfg["command"] = args.command
    return cfg


def _hash(cfg):
    """Config hash keyed on input content rather than its location."""
    keyed = {k: v for k, v in cfg.items() if k != "input"}
    path = cfg.get("input")
    if path and os.path.exists(path):
        with open(path, "rb") as fh:
            keyed["input_sha256"] = hashlib.sha256(fh.read()).hexdigest()
    return config_hash(keyed)


def _need_input(cfg):
    path = cfg.get("input")
    if not path:
        raise _Invalid("input: no input file given (positional argument or 'input' in the config)")
    if not os.path.exists(path):
        raise _Invalid(f"input: file not found: {path}")
    return path


def _load_series(cfg):
    from .series import read_series_csv

    with open(_need_input(cfg)) as fh:
        return read_series_csv(fh)


def _spec(cfg):
    from .model_spec import ModelSpec

    return ModelSpec.from_dict(cfg.get("model", DEFAULT_MODEL))


def _working_series(cfg, ts):
    """Apply the optional sample window and log transform shared by fit/test/diagnose."""
    from .series import MonthIndex, log_transform, slice_series

    sect = cfg.get("fit", {})
    start = MonthIndex.parse(sect["start"]) if "start" in sect else ts.start
    end = MonthIndex.parse(sect["end"]) if "end" in sect else ts.end
    ts = slice_series(ts, start, end)
    if sect.get("log", True) and ts.scale == "level":
        ts = log_transform(ts)
    return ts


def _fit(cfg, ts):
    from .estimation import fit

    sect = cfg.get("fit", {})
    return fit(
        _spec(cfg),
        ts,
        restarts=int(sect.get("restarts", 8)),
        tolerance=float(sect.get("tolerance", 1e-3)),
        seed=int(cfg["seed"]),
    )


def _fit_payload(res):
    from .model_spec import classify

    d = res.to_dict()
    c = classify(res.params, res.spec.trend)
    d["classification"] = {
        "label": c.label,
        "integration_order": c.integration_order,
        "deterministic_trend": c.deterministic_trend,
    }
    return d


# -- subcommands ---------------------------------------------------------------


def cmd_ingest(cfg, out, h, say):
    from .series import ingest_daily_csv, to_monthly_market_cap, write_series_csv

    sect = cfg.get("ingest", {})
    mapping = {k: sect.get(k, k) for k in ("date", "price", "shares")}
    with open(_need_input(cfg), "rb") as fh:
        result = ingest_daily_csv(fh, mapping, bool(sect.get("mdy", False)))
    if not result.quotes:
        raise _Invalid("input: no valid daily quotes")
    ts = to_monthly_market_cap(result.quotes, label=sect.get("label", "market_cap"))
    buf = io.StringIO()
    write_series_csv(ts, buf, {"tool": "ucimpact", "version": __version__, "config_hash": h,
                               "scale": ts.scale, "label": ts.label})
    write_atomic(os.path.join(out, "series.csv"), buf.getvalue())
    write_csv(os.path.join(out, "skipped.csv"), ["line", "reason", "raw"],
              [(s.line, s.reason, ";".join(s.raw)) for s in result.skipped], h)
    write_json(os.path.join(out, "ingest.json"), {
        "quotes": len(result.quotes), "skipped": len(result.skipped),
        "months": len(ts), "start": str(ts.start), "end": str(ts.end),
        "missing_months": int(ts.missing.sum()),
    }, h)
    say(f"ingested {len(result.quotes)} quotes into {len(ts)} months "
        f"({ts.start}..{ts.end}); {len(result.skipped)} rows skipped")


def cmd_fit(cfg, out, h, say):
    ts = _working_series(cfg, _load_series(cfg))
    res = _fit(cfg, ts)
    payload = _fit_payload(res)
    write_json(os.path.join(out, "fit.json"), {"fit": payload}, h)
    say(f"loglik {res.loglik:.4f}  AIC {res.AIC:.3f}  BIC {res.BIC:.3f}  AICc {res.AICc:.3f}  "
        f"[{payload['classification']['label']}]")
    for name, v in payload["free_parameters"].items():
        say(f"  sigma2[{name}] = {v:.6g}")
    if res.params.drift is not None:
        say(f"  drift = {res.params.drift:.6g} (se {res.drift_se:.3g})")


def cmd_test(cfg, out, h, say):
    from .variance_tests import run_battery

    ts = _working_series(cfg, _load_series(cfg))
    sect = cfg.get("test", {})
    rep = run_battery(
        ts,
        period=int(sect.get("period", 12)),
        groups=sect.get("groups"),
        seasonal_differences=int(sect.get("seasonal_differences", 1)),
        lags=sect.get("lags", "auto"),
    )
    text = rep.to_text()
    write_atomic(os.path.join(out, "variance_tests.txt"),
                 f"# tool=ucimpact version={__version__} config_hash={h}\n" + text)
    write_json(os.path.join(out, "variance_tests.json"), rep.to_dict(), h)
    say(text.rstrip("\n"))


def cmd_diagnose(cfg, out, h, say):
    from .kalman import kalman_filter
    from .residual_diagnostics import diagnose

    ts = _working_series(cfg, _load_series(cfg))
    res = _fit(cfg, ts)
    fo = kalman_filter(res.system, ts.values)
    sect = cfg.get("diagnose", {})
    rep = diagnose(
        fo.std_innovations,
        lags=int(sect.get("lags", 24)),
        n_hyper=res.n_hyper,
        h=sect.get("h"),
        maxlag=sect.get("maxlag"),
        fit={"loglik": res.loglik, "AIC": res.AIC, "BIC": res.BIC, "AICc": res.AICc},
    )
    months = ts.months()
    e = fo.std_innovations
    write_csv(os.path.join(out, "residuals.csv"), ["month", "standardized_residual"],
              [(str(months[i]), float(e[i])) for i in range(len(months))], h)
    write_csv(os.path.join(out, "acf.csv"), ["lag", "acf"], [(k, float(r)) for k, r in enumerate(rep.acf)], h)
    write_csv(os.path.join(out, "qq.csv"), ["theoretical", "sample"], [tuple(map(float, r)) for r in rep.qq], h)
    c = rep.cusum
    write_csv(os.path.join(out, "cusum.csv"), ["t", "cusum", "lower", "upper"],
              [(i + 1, float(c.path[i]), float(c.lower[i]), float(c.upper[i])) for i in range(c.path.size)], h)
    text = rep.to_text()
    write_atomic(os.path.join(out, "diagnostics.txt"),
                 f"# tool=ucimpact version={__version__} config_hash={h}\n" + text)
    write_json(os.path.join(out, "diagnostics.json"), {"diagnostics": rep.to_dict(), "fit": _fit_payload(res)}, h)
    say(text.rstrip("\n"))


def cmd_impact(cfg, out, h, say):
    from .counterfactual import EventStudyConfig, run_event_study

    ts = _load_series(cfg)
    ev = cfg.get("event")
    if not ev:
        raise _Invalid("event: missing [event] section (train_start, train_end, event_month, horizon)")
    ev = dict(ev)
    if "windows" in ev:
        ev["windows"] = tuple(ev["windows"])
    econf = EventStudyConfig.from_dict(ev)
    sect = cfg.get("fit", {})
    result = run_event_study(ts, _spec(cfg), econf, {
        "restarts": int(sect.get("restarts", 8)),
        "tolerance": float(sect.get("tolerance", 1e-3)),
        "seed": int(cfg["seed"]),
    })
    rep = result.report
    write_json(os.path.join(out, "report.json"), {"impact": rep.to_dict(), "fit": _fit_payload(result.fit)}, h)
    months = result.observed.months()
    write_csv(os.path.join(out, "bands.csv"), ["month", "observed", "cf_mean", "lower", "upper"], [
        (str(months[i]), float(result.observed.values[i]), float(result.counterfactual.values[i]),
         float(result.lower[i]), float(result.upper[i]))
        for i in range(len(months))
    ], h)
    write_csv(os.path.join(out, "losses.csv"), ["window_years", "months", "n_used", "avg_loss", "pct_loss", "partial"],
              [(r.window, r.months, r.n_used, r.avg_loss, r.pct_loss, r.partial) for r in rep.rows], h)
    text = rep.to_text()
    write_atomic(os.path.join(out, "impact.txt"), f"# tool=ucimpact version={__version__} config_hash={h}\n" + text)
    say(text.rstrip("\n"))


def cmd_simulate(cfg, out, h, say):
    from .model_spec import ParamVector, assemble
    from .montecarlo import simulate_ssm
    from .series import MonthIndex

    sect = cfg.get("simulate", {})
    if "params" not in sect:
        raise _Invalid("simulate.params: missing disturbance variances")
    spec = _spec(cfg)
    params = ParamVector.from_dict(dict(sect["params"]))
    system = assemble(spec, params)
    init = sect.get("initial_state")
    if init is not None:
        init = np.asarray(init, dtype=float)
    T = int(sect.get("T", 150))
    reps = int(sect.get("replications", 1))
    if T < 1 or reps < 1:
        raise _Invalid("simulate.T and simulate.replications must be >= 1")
    start = MonthIndex.parse(sect.get("start", "2000-01"))
    rows = []
    for r in range(reps):
        ts = simulate_ssm(system, T, int(cfg["seed"]), init, replication=r, start=start)
        rows.extend((r, str(m), float(v)) for m, v in zip(ts.months(), ts.values))
    write_csv(os.path.join(out, "simulated.csv"), ["replication", "month", "value"], rows, h)
    say(f"simulated {reps} replication(s) of length {T}")


def cmd_mc_critvals(cfg, out, h, say):
    from .montecarlo import build_critvals

    sect = cfg.get("critvals", {})
    doc = build_critvals(
        replications=int(sect.get("replications", 100_000)),
        T=int(sect.get("T", 2000)),
        df_max=int(sect.get("df_max", 12)),
        seed=int(cfg["seed"]),
    )
    write_json(os.path.join(out, "cvm_critvals.json"), doc, h)
    rows = []
    for kind, table in doc["tables"].items():
        for df, vals in table["values"].items():
            rows.append((kind, int(df), vals["0.10"], vals["0.05"], vals["0.01"]))
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(os.path.join(out, "cvm_critvals.csv"), ["kind", "df", "q10", "q05", "q01"], rows, h)
    say(f"critical values for df 1..{doc['generator']['df_max']} written")


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "test": cmd_test,
    "diagnose": cmd_diagnose,
    "impact": cmd_impact,
    "simulate": cmd_simulate,
    "mc-critvals": cmd_mc_critvals,
}


def build_parser():
    def flags(suppress):
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        parser = argparse.ArgumentParser(add_help=False)
        parser.add_argument("--config", metavar="PATH", help="TOML run configuration", **kw)
        parser.add_argument("--seed", type=int, help="random seed", **kw)
        parser.add_argument("--out", metavar="DIR", help="output directory (default .)", **kw)
        parser.add_argument("--quiet", action="store_true", help="suppress the stdout summary", **kw)
        return parser

    # subcommand copies must not reset flags given before the subcommand
    common = flags(True)
    p = argparse.ArgumentParser(prog="ucimpact", description=__doc__.splitlines()[0], parents=[flags(False)])
    p.add_argument("--version", action="version", version=f"ucimpact {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, input_help=None, model=False):
        sp = sub.add_parser(name, help=help_text, parents=[common])
        if input_help:
            sp.add_argument("input", nargs="?", help=input_help)
        if model:
            sp.add_argument("--model", metavar="PATH", help="model spec TOML file")
        return sp

    add("ingest", "daily quotes CSV to monthly market cap", "daily CSV (date, price, shares)")
    for name, text in (("fit", "estimate a structural model"),
                       ("test", "variance (stationarity) tests"),
                       ("diagnose", "residual diagnostics of a fitted model")):
        sp = add(name, text, "monthly series CSV", model=name != "test")
        if name != "test":
            sp.add_argument("--restarts", type=int, dest="ov:fit.restarts", metavar="N")
    sp = add("impact", "counterfactual event study", "monthly market-cap CSV", model=True)
    sp.add_argument("--restarts", type=int, dest="ov:fit.restarts", metavar="N")
    sp.add_argument("--train-start", dest="ov:event.train_start", metavar="YYYY-MM")
    sp.add_argument("--train-end", dest="ov:event.train_end", metavar="YYYY-MM")
    sp.add_argument("--event-month", dest="ov:event.event_month", metavar="YYYY-MM")
    sp.add_argument("--horizon", type=int, dest="ov:event.horizon", metavar="N")
    sp = add("simulate", "simulate series from a model", model=True)
    sp.add_argument("--T", type=int, dest="ov:simulate.T", metavar="N")
    sp.add_argument("--replications", type=int, dest="ov:simulate.replications", metavar="N")
    sp = add("mc-critvals", "Monte Carlo Cramer-von Mises critical values")
    sp.add_argument("--replications", type=int, dest="ov:critvals.replications", metavar="N")
    sp.add_argument("--T", type=int, dest="ov:critvals.T", metavar="N")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.overrides = {k[3:]: v for k, v in vars(args).items() if k.startswith("ov:")}

    def say(msg):
        if not args.quiet:
            print(msg)

    try:
        cfg = effective_config(args)
        h = _hash(cfg)
        out = args.out or "."
        os.makedirs(out, exist_ok=True)
        write_atomic(os.path.join(out, "config.json"),
                     canonical_json({"tool": "ucimpact", "version": __version__, "config_hash": h,
                                     "config": cfg}, indent=2) + "\n")
        COMMANDS[args.command](cfg, out, h, say)
    except (NumericalFailure, NonConvergenceError) as exc:
        print(f"error (numerical): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc!r}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
