"""Command-line front end: generate circuits, learn them, run campaigns, contract pairs."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import contraction
from .circuit import deserialize, random_mera, serialize, validate
from .learner import LearnOptions, learn_mera, learn_mera_no_postselect
from .optimizer import OptimizerOptions
from .renormalize import learn_mera_indirect
from .statevector import fidelity, generate_state
from .tomography import setting_count

FORMAT_VERSION = 1
MODES = ("control", "no-postselect", "indirect")
BENCH_COLUMNS = ["format_version", "n", "seed", "sweeps", "mode", "status", "infidelity", "certified_bound",
                 "runtime_s", "settings_count", "reason"]


@dataclass
class CampaignConfig:
    sizes: list[int] = field(default_factory=lambda: [8, 16])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    sweeps: list[int] = field(default_factory=lambda: [3])
    mode: str = "control"
    tomo: str = "exact"
    shots: int = 1000
    optimizer: dict = field(default_factory=dict)
    out: str = "benchmark.csv"
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"format_version"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k in known}
        if isinstance(kwargs.get("sweeps"), int):
            kwargs["sweeps"] = [kwargs["sweeps"]]
        cfg = cls(**kwargs)
        if cfg.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        return cfg

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, **asdict(self)}


class CliError(Exception):
    pass


def _is_power_of_two(n: int) -> bool:
    return n >= 4 and n & (n - 1) == 0


def _learn_options(sweeps: int, tomo: str, shots: int, seed: int, optimizer: dict) -> LearnOptions:
    return LearnOptions(sweeps=sweeps, tomography=tomo, shots=shots, seed=seed,
                        optimizer=OptimizerOptions(**optimizer))


def _run_learning(circuit, mode: str, opts: LearnOptions) -> dict:
    """Learn the state of ``circuit``; returns the reconstruction and its figures of merit."""
    truth = generate_state(circuit)
    start = time.perf_counter()
    if mode == "control":
        learned, report = learn_mera(truth, opts=opts)
        extra = {"report": report.to_dict(), "certified_bound": report.infidelity_bound,
                 "settings_count": setting_count(circuit.n, opts.sweeps, include_pairs=True)}
    elif mode == "no-postselect":
        learned, diag = learn_mera_no_postselect(truth, opts=opts)
        extra = {"report": {"format_version": FORMAT_VERSION, "sweeps_used": diag.sweeps_used,
                            "steps": [asdict(s) for s in diag.steps]},
                 "certified_bound": None,
                 "settings_count": setting_count(circuit.n, opts.sweeps, include_pairs=True)}
    elif mode == "indirect":
        learned, diag = learn_mera_indirect(truth, opts=opts)
        extra = {"report": diag.to_dict(), "certified_bound": None, "settings_count": diag.observables_measured}
    else:
        raise CliError(f"unknown mode {mode!r}")
    runtime = time.perf_counter() - start
    infid = 1.0 - fidelity(generate_state(learned), truth)
    return {"learned": learned, "infidelity": infid, "runtime_s": runtime, **extra}


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    if not _is_power_of_two(args.n):
        raise CliError(f"n = {args.n} is not supported: sizes must be powers of two >= 4")
    circuit = random_mera(args.n, np.random.default_rng(args.seed))
    report = validate(circuit)
    if not report.ok:
        raise CliError(f"generated circuit failed validation: {report.violations}")
    Path(args.out).write_text(serialize(circuit))
    return 0


def cmd_learn(args) -> int:
    if args.circuit:
        circuit = deserialize(Path(args.circuit).read_text())
    else:
        if not _is_power_of_two(args.n):
            raise CliError(f"n = {args.n} is not supported: sizes must be powers of two >= 4")
        circuit = random_mera(args.n, np.random.default_rng(args.seed))
    opts = _learn_options(args.sweeps, args.tomo, args.shots, args.seed, args.optimizer)
    res = _run_learning(circuit, args.mode, opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reconstruction.json").write_text(serialize(res["learned"]))
    name = "report.json" if args.mode == "control" else "diagnostics.json"
    _write_json(out / name, res["report"])
    row = {"format_version": FORMAT_VERSION, "n": circuit.n, "seed": args.seed, "sweeps": args.sweeps,
           "mode": args.mode, "status": "ok", "infidelity": res["infidelity"],
           "certified_bound": res["certified_bound"], "runtime_s": res["runtime_s"],
           "settings_count": res["settings_count"], "reason": None}
    _write_csv(out / "timing.csv", BENCH_COLUMNS, [row])
    return 0


def _bench_row(task: tuple) -> dict:
    n, seed, sweeps, cfg = task
    row = {"format_version": FORMAT_VERSION, "n": n, "seed": seed, "sweeps": sweeps, "mode": cfg.mode,
           "status": "ok", "infidelity": None, "certified_bound": None, "runtime_s": None,
           "settings_count": None, "reason": None}
    if not _is_power_of_two(n):
        row.update(status="skipped", reason="not a power of two: the binary layout needs n = 2^K")
        return row
    try:
        circuit = random_mera(n, np.random.default_rng(seed))
        res = _run_learning(circuit, cfg.mode, _learn_options(sweeps, cfg.tomo, cfg.shots, seed, cfg.optimizer))
        row.update(infidelity=res["infidelity"], certified_bound=res["certified_bound"],
                   runtime_s=res["runtime_s"], settings_count=res["settings_count"])
    except Exception as exc:  # a failed row is recorded and the campaign continues
        row.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
    return row


def summarize(rows: list[dict]) -> dict:
    groups: dict[tuple[int, int], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["n"], r["sweeps"]), []).append(r)
    out = []
    for (n, sweeps), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
        ok = [r for r in rs if r["status"] == "ok"]
        out.append({
            "n": n, "sweeps": sweeps, "rows": len(rs), "ok": len(ok),
            "failed": sum(r["status"] == "failed" for r in rs),
            "skipped": sum(r["status"] == "skipped" for r in rs),
            "median_infidelity": float(np.median([r["infidelity"] for r in ok])) if ok else None,
            "median_runtime_s": float(np.median([r["runtime_s"] for r in ok])) if ok else None,
        })
    return {"format_version": FORMAT_VERSION, "groups": out}


def run_campaign(cfg: CampaignConfig) -> list[dict]:
    tasks = []
    for n in cfg.sizes:
        if not _is_power_of_two(n):
            tasks.append((n, None, None, cfg))
            continue
        tasks += [(n, seed, sweeps, cfg) for sweeps in cfg.sweeps for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_bench_row, tasks))
    return [_bench_row(t) for t in tasks]


def cmd_benchmark(args) -> int:
    cfg = CampaignConfig.from_dict({
        "sizes": args.sizes, "seeds": args.seeds, "sweeps": args.sweeps_list, "mode": args.mode,
        "tomo": args.tomo, "shots": args.shots, "optimizer": args.optimizer, "out": args.out,
        "workers": args.workers,
    })
    rows = run_campaign(cfg)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, BENCH_COLUMNS, rows)
    _write_json(out.with_suffix(".summary.json"), summarize(rows))
    return 0


def cmd_contract(args) -> int:
    a = deserialize(Path(args.file_a).read_text())
    b = deserialize(Path(args.file_b).read_text())
    if a.n != b.n:
        raise CliError(f"circuit sizes differ: {a.n} != {b.n}")
    value, stats = contraction.overlap(a, b)
    row = {"format_version": FORMAT_VERSION, "n": a.n, "re": value.real, "im": value.imag,
           "fidelity": abs(value) ** 2, "max_bonds": stats.max_open_bonds, "multiply_adds": stats.multiply_adds}
    out = Path(args.out)
    if out.suffix == ".csv":
        _write_csv(out, list(row), [row])
    else:
        _write_json(out, row)
    return 0


# ---------------------------------------------------------------- parsing

class _Parser(argparse.ArgumentParser):
    """Usage errors raise so that ``main`` can report them as JSON records."""

    def error(self, message: str):
        raise CliError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meralearn", description="Learn MERA circuits from simulated measurements.")
    p.add_argument("--config", help="JSON file whose keys set defaults for the chosen command")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random MERA circuit file")
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="circuit.json")
    g.set_defaults(func=cmd_generate)

    def learning_flags(sp):
        sp.add_argument("--mode", choices=MODES, default="control")
        sp.add_argument("--tomo", choices=("exact", "sampled"), default="exact")
        sp.add_argument("--shots", type=int, default=1000)

    ln = sub.add_parser("learn", help="reconstruct a circuit from its state")
    ln.add_argument("--circuit", help="circuit file; a random circuit is generated when absent")
    ln.add_argument("--n", type=int, default=8)
    ln.add_argument("--seed", type=int, default=0)
    ln.add_argument("--sweeps", type=int, default=3)
    learning_flags(ln)
    ln.add_argument("--out", default="learn_out")
    ln.set_defaults(func=cmd_learn)

    b = sub.add_parser("benchmark", help="run a seeded campaign and write a CSV table")
    b.add_argument("--sizes", type=_int_list, default=[8, 16])
    b.add_argument("--seeds", type=_int_list, default=list(range(10)))
    b.add_argument("--sweeps", dest="sweeps_list", type=_int_list, default=[3])
    b.add_argument("--workers", type=int, default=1)
    learning_flags(b)
    b.add_argument("--out", default="benchmark.csv")
    b.set_defaults(func=cmd_benchmark)

    c = sub.add_parser("contract", help="overlap of two circuit files")
    c.add_argument("file_a")
    c.add_argument("file_b")
    c.add_argument("--out", default="overlap.json")
    c.set_defaults(func=cmd_contract)
    p.commands = {"generate": g, "learn": ln, "benchmark": b, "contract": c}
    return p


def _parse(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; keys from ``--config`` become defaults that explicit flags override."""
    args = parser.parse_args(argv)
    optimizer: dict = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        data.pop("format_version", None)
        optimizer = data.pop("optimizer", {})
        if args.command == "benchmark" and "sweeps" in data:
            sw = data.pop("sweeps")
            data["sweeps_list"] = [sw] if isinstance(sw, int) else sw
        sub = parser.commands[args.command]
        unknown = set(data) - {a.dest for a in sub._actions}
        if unknown:
            raise CliError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        sub.set_defaults(**data)
        args = parser.parse_args(argv)
    args.optimizer = optimizer
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        return args.func(args)
    except Exception as exc:
        record = {"format_version": FORMAT_VERSION, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
