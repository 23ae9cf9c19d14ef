"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 internal error, 2 input or validation error.
"""

from __future__ import annotations

import argparse
import gc
import json
import logging
import sys
import warnings
from pathlib import Path

import jsonschema

from . import __version__
from . import pipeline, reports
from .powerlaw import PowerLawError, bootstrap_pvalue, fit_discrete_powerlaw
from .synth import InjectionPlan, MarketConfig, PlanError, generate, write_labels
from .tape import (
    ParsedTape,
    TapeError,
    parse_order_tape,
    read_quotes,
    read_trades,
    write_bars,
    write_order_tape,
    write_quotes,
    write_trades,
)

log = logging.getLogger("tradenet")

# long report arrays are spot-checked against the schema; the test suite validates in full
VALIDATE_LIMIT = 250


class UsageError(Exception):
    """Bad input file or flag; maps to exit code 2."""


def _fit_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if lo < 1 or hi <= lo:
        raise argparse.ArgumentTypeError(f"need 1 <= LO < HI, got {text!r}")
    return lo, hi


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _need(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _ext(fmt: str) -> str:
    return "jsonl" if fmt == "jsonl" else "csv"


def _manifest(out: Path, subcommand: str, params: dict, inputs: list[Path], outputs: list[Path], seed=None) -> None:
    manifest = {
        "tool": "tradenet",
        "version": __version__,
        "subcommand": subcommand,
        "params": params,
        "seed": seed,
        "inputs": {str(p): reports.sha256(p) for p in inputs},
        "outputs": {p.name: reports.sha256(p) for p in outputs},
    }
    reports.validate(manifest, "manifest")
    reports.dump_json(manifest, out / f"manifest_{subcommand}.json")


def _load_json(path: Path):
    try:
        return reports.load_json(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None


def cmd_synth(args) -> None:
    cfg_path = _need(args.config)
    raw = _load_json(cfg_path)
    if args.seed is not None:
        raw["seed"] = args.seed
    config = MarketConfig.from_dict(raw)
    inputs = [cfg_path]
    plan = InjectionPlan()
    if args.plan:
        plan_path = _need(args.plan)
        plan = InjectionPlan.from_dict(_load_json(plan_path))
        inputs.append(plan_path)
    result = generate(config, plan, jobs=args.jobs)
    args.memo["events"] = result.events
    out = args.out
    tape = out / f"tape.{_ext(args.format)}"
    labels = out / "labels.jsonl"
    write_order_tape(result.events, tape, args.format)
    write_labels(result.labels, labels)
    _manifest(out, "synth", {"format": args.format, "config": raw}, inputs, [tape, labels], seed=config.seed)
    print(f"{len(result.events)} order events, {len(result.labels)} labels -> {out}")


def cmd_replay(args) -> None:
    tape_path = _need(args.tape)
    parsed = args.memo.pop("events", None)
    parsed = ParsedTape(parsed) if parsed is not None else parse_order_tape(tape_path, args.input_format)
    for d in parsed.diagnostics:
        log.warning("%s: %s", tape_path, d)
    trades, quotes, bars, diags = pipeline.replay_all(parsed.events, jobs=args.jobs)
    for stock, day, d in diags:
        log.warning("%s %s: %s", stock, day, d)
    ext = _ext(args.format)
    out = args.out
    paths = [out / f"trades.{ext}", out / f"quotes.{ext}", out / f"bars.{ext}"]
    write_trades(trades, paths[0], args.format)
    write_quotes(quotes, paths[1], args.format)
    write_bars(bars, paths[2], args.format)
    args.memo.update(trades=trades, quotes=quotes)
    diag_path = out / "diagnostics.txt"
    with open(diag_path, "w", encoding="utf-8", newline="\n") as fh:
        for d in parsed.diagnostics:
            fh.write(f"tape {d}\n")
        for stock, day, d in diags:
            fh.write(f"replay {stock} {day} {d}\n")
    _manifest(out, "replay", {"format": args.format}, [tape_path], paths + [diag_path])
    print(f"{len(parsed.events)} events -> {len(trades)} trades, {len(quotes)} quotes")


def cmd_motifs(args) -> None:
    trades_path = _need(args.trades)
    trades = args.memo.get("trades") or read_trades(trades_path)
    report = pipeline.motif_report(trades, jobs=args.jobs)
    args.memo["motifs"] = report
    reports.validate(report, "motif_report", limit=VALIDATE_LIMIT)
    out = args.out
    path = out / "motifs.json"
    reports.dump_json(report, path)
    edges = out / "edges.csv"
    with open(edges, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("stock,seller,buyer,day,seq\n")
        for t in sorted(trades, key=lambda t: (t.stock, t.day, t.seq)):
            fh.write(f"{t.stock},{t.seller},{t.buyer},{t.day.isoformat()},{t.seq}\n")
    _manifest(out, "motifs", {}, [trades_path], [path, edges])
    for stock, entry in report["stocks"].items():
        print(stock, " ".join(f"{k}={v:g}" for k, v in entry["census"].items()))


def cmd_eventstudy(args) -> None:
    paths = [_need(args.trades), _need(args.quotes), _need(args.motifs)]
    trades = args.memo.get("trades") or read_trades(paths[0])
    quotes = args.memo.get("quotes") or read_quotes(paths[1])
    motif = args.memo.get("motifs") or _load_json(paths[2])
    reports.validate(motif, "motif_report", limit=VALIDATE_LIMIT)
    report = pipeline.event_study(trades, quotes, motif, args.group_size, args.fit_range, args.side)
    reports.validate(report, "event_study_report", limit=VALIDATE_LIMIT)
    out = args.out
    path, traj = out / "event_study.json", out / "trajectories.csv"
    reports.dump_json(report, path)
    reports.write_trajectories(report, traj)
    params = {"group_size": args.group_size, "fit_range": list(args.fit_range), "side": args.side}
    _manifest(out, "eventstudy", params, paths, [path, traj])
    for g, per_var in report["groups"].items():
        for v, e in per_var.items():
            print(f"{g} {v}: n={e['n_events']} beta_pre={e['beta_pre']} beta_post={e['beta_post']}")


def cmd_impact(args) -> None:
    paths = [_need(args.trades), _need(args.motifs)]
    trades = args.memo.get("trades") or read_trades(paths[0])
    motif = args.memo.get("motifs") or _load_json(paths[1])
    reports.validate(motif, "motif_report", limit=VALIDATE_LIMIT)
    report = pipeline.impact_study(trades, motif, args.side)
    reports.validate(report, "impact_report", limit=VALIDATE_LIMIT)
    out = args.out
    path, table = out / "impact.json", out / "impact_table.csv"
    reports.dump_json(report, path)
    reports.write_impact_table(report, table)
    _manifest(out, "impact", {"side": args.side}, paths, [path, table])
    for side in ("buyer", "seller"):
        if side in report:
            row = report[side]["panel_a"][10]
            print(f"{side}: n={report[side]['n_events']} r0={row['mean_raw']} p={row['p_raw']}")


def _read_sample(path: Path) -> list[int]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        obj = json.loads(text)
        if isinstance(obj, dict) and "stocks" in obj:
            return [n for entry in obj["stocks"].values() for n in entry["edge_counts"]]
        if isinstance(obj, list):
            return [int(x) for x in obj]
        raise UsageError(f"{path}: expected a JSON list or a motif report")
    try:
        return [int(line) for line in text.split() if line]
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_fit(args) -> None:
    sample_path = _need(args.sample)
    sample = _read_sample(sample_path)
    try:
        fit = fit_discrete_powerlaw(sample)
        if args.bootstrap:
            fit = bootstrap_pvalue(sample, fit, args.bootstrap, args.seed)
    except PowerLawError as exc:
        raise UsageError(f"no power-law fit: {exc}") from None
    report = fit.report()
    reports.validate(report, "fit_report")
    path = args.out / "fit.json"
    reports.dump_json(report, path)
    _manifest(args.out, "fit", {"bootstrap": args.bootstrap}, [sample_path], [path], seed=args.seed)
    print(f"exponent={fit.exponent:.4f} x_min={fit.x_min} n_tail={fit.n_tail} ks={fit.ks_distance:.4f}")


def cmd_pipeline(args) -> None:
    out = args.out
    dirs = {k: out / k for k in ("synth", "replay", "motifs", "eventstudy", "impact")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    ext = _ext(args.format)
    # stages hand their records to the next one instead of re-reading the files they just wrote
    common = {"format": args.format, "jobs": args.jobs, "input_format": None, "memo": {}}
    steps = [
        (cmd_synth, dict(config=args.config, plan=args.plan, seed=args.seed, out=dirs["synth"])),
        (cmd_replay, dict(tape=str(dirs["synth"] / f"tape.{ext}"), out=dirs["replay"])),
        (cmd_motifs, dict(trades=str(dirs["replay"] / f"trades.{ext}"), out=dirs["motifs"])),
        (
            cmd_eventstudy,
            dict(
                trades=str(dirs["replay"] / f"trades.{ext}"),
                quotes=str(dirs["replay"] / f"quotes.{ext}"),
                motifs=str(dirs["motifs"] / "motifs.json"),
                group_size=args.group_size,
                fit_range=args.fit_range,
                side=args.side,
                out=dirs["eventstudy"],
            ),
        ),
        (
            cmd_impact,
            dict(
                trades=str(dirs["replay"] / f"trades.{ext}"),
                motifs=str(dirs["motifs"] / "motifs.json"),
                side=args.side,
                out=dirs["impact"],
            ),
        ),
    ]
    for fn, kw in steps:
        fn(argparse.Namespace(**common, **kw))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tradenet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tradenet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt=True):
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--jobs", type=_positive, default=1, help="stocks processed in parallel")
        if fmt:
            p.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    p = sub.add_parser("synth", help="generate a synthetic order tape and labels")
    p.add_argument("--config", required=True)
    p.add_argument("--plan")
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("replay", help="replay an order tape into trades, quotes and minute bars")
    p.add_argument("tape")
    p.add_argument("--input-format", choices=("csv", "jsonl"))
    common(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("motifs", help="build trading networks and detect A/B/C motifs")
    p.add_argument("trades")
    common(p, fmt=False)
    p.set_defaults(func=cmd_motifs)

    def study_flags(p):
        p.add_argument("--side", choices=("buyer", "seller", "both"), default="both")

    p = sub.add_parser("eventstudy", help="minute-level dynamics around motif trades")
    p.add_argument("trades")
    p.add_argument("quotes")
    p.add_argument("motifs")
    p.add_argument("--group-size", type=_positive, default=20)
    p.add_argument("--fit-range", type=_fit_range, default=(3, 200))
    study_flags(p)
    common(p, fmt=False)
    p.set_defaults(func=cmd_eventstudy)

    p = sub.add_parser("impact", help="trade-by-trade raw and excess returns around motif trades")
    p.add_argument("trades")
    p.add_argument("motifs")
    study_flags(p)
    common(p, fmt=False)
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("fit", help="discrete power-law tail fit")
    p.add_argument("sample", help="integers one per line, a JSON list, or a motif report (C edge counts)")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replications for a p-value")
    p.add_argument("--seed", type=int, default=0)
    common(p, fmt=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("pipeline", help="synth -> replay -> motifs -> eventstudy -> impact")
    p.add_argument("--config", required=True)
    p.add_argument("--plan")
    p.add_argument("--seed", type=int)
    p.add_argument("--group-size", type=_positive, default=20)
    p.add_argument("--fit-range", type=_fit_range, default=(3, 200))
    study_flags(p)
    common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    # stages build millions of small acyclic records; default gen-0 collections dominate otherwise
    gc.set_threshold(200_000, 20, 20)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        if not hasattr(args, "memo"):
            args.memo = {}
        args.func(args)
    except (UsageError, TapeError, PlanError, FileNotFoundError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
