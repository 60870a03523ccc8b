"""Command line entry point: ``python -m oohomog <command> --config study.toml``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .reconstruct import PolyMatrixField
from .microcell import EffectiveTable

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _load(args) -> harness.StudyConfig:
    cfg = harness.StudyConfig.from_toml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out(args, cfg) -> Path:
    return Path(args.out or cfg.output.get("dir", "out"))


def cmd_offline(args) -> dict:
    cfg = _load(args)
    out = _out(args, cfg)
    written = {}
    table = None
    for q in cfg.q_schedule or []:
        table = None
        for m in cfg.m_values:
            art = harness.run_offline(cfg, q, m, jobs=args.jobs, table=table)
            table = art.table
            written[f"q{q}_m{m}"] = {k: str(v) for k, v in art.write(out).items()}
    if not written:
        raise harness.ConfigError("offline.q is required")
    return written


def cmd_online(args) -> dict:
    cfg = _load(args)
    out = _out(args, cfg)
    q = (cfg.q_schedule or [None])[0]
    m = cfg.m_values[0]
    path = Path(args.field) if args.field else out / f"field_q{q}_m{m}.json"
    field = PolyMatrixField.from_json(path)
    tpath = path.with_name(path.name.replace("field_", "table_", 1))
    table = EffectiveTable.from_json(tpath) if tpath.exists() else None
    if table is None:
        raise harness.ConfigError(f"missing table artifact next to {path}")
    art = harness.OfflineArtifact(table, field, float(table.wall_time), cfg.seed)
    rows = [harness.run_online(cfg, art, n) for n in (cfg.n_schedule or [])]
    if not rows:
        raise harness.ConfigError("online.n is required")
    rep = harness.ErrorReport(rows)
    return {k: str(v) for k, v in rep.write(out).items()}


def cmd_study(args) -> dict:
    cfg = _load(args)
    out = _out(args, cfg)
    rep = harness.run_convergence_study(cfg, jobs=args.jobs, out=out)
    return {"slopes": rep.slopes, "files": str(out)}


def cmd_ensemble(args) -> dict:
    cfg = _load(args)
    out = _out(args, cfg)
    rep = harness.run_ensemble(cfg, jobs=args.jobs, out=out)
    return {"slopes": rep.slopes, "excluded": rep.excluded, "files": str(out)}


def cmd_report(args) -> dict:
    out = Path(args.out) if args.out else _out(args, _load(args))
    rows = harness.read_csv(out / "errors.csv")
    timings = harness.read_csv(out / "timings.csv") if (out / "timings.csv").exists() else None
    table = harness.cost_report(rows, timings)
    harness.write_csv(out / "cost.csv", harness.COST_COLUMNS, table)
    for r in table:
        print(f"q={r['q']:4d} n={r['n']:4d} m={r['m']} cells={r['cell_problems']:6d} "
              f"hmm-ls proxy={r['hmm_ls_proxy']:6d} offline={r['offline_time']:.2f}s h1={r['h1_error']:.3e}")
    return {"cost": str(out / "cost.csv")}


COMMANDS = {"offline": cmd_offline, "online": cmd_online, "study": cmd_study, "ensemble": cmd_ensemble,
            "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oohomog", description="Offline-online numerical homogenization runs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="TOML study file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "online":
            p.add_argument("--field", default=None, help="reconstructed field JSON (default: from --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        args.seed = args.seed % 2**64
    try:
        result = COMMANDS[args.command](args)
    except (harness.ConfigError, FileNotFoundError, KeyError, TypeError) as exc:
        _error(args.command, exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report every failure as a record
        _error(args.command, exc)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=2, default=str))
    return 0


def _error(command, exc) -> None:
    record = {"status": "error", "command": command, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
