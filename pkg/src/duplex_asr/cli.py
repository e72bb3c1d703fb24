"""Scenario runner: solves, power sweeps, FD/HD ratios, oracle comparisons and channel dumps.

Scenarios come from an INI file (``--config``) and/or flags; a flag always
wins over the file. Results are CSV (to ``--out`` or stdout) and a short
human-readable summary goes to stderr.

Exit codes: 0 when every solve converged and every output was written,
1 when some solve did not converge, 2 for configuration or input errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import channel as chan
from .model import ChannelRealization, SystemParams
from .numerics import NewtonConfig
from .oracle import OracleSizeError, compare
from .solvers import STRATEGIES, SolverConfig, solve

log = logging.getLogger("duplex_asr")

CHANNEL_MODELS = ("flat", "itu-a", "asymmetric", "file")
ORACLE_MAX_K = 6
THREADS_ENV = "DUPLEX_ASR_THREADS"
SWEEP_DEFAULT_DBM = [float(p) for p in range(0, 41, 2)]
ORACLE_DEFAULT_DBM = [0.0, 10.0, 20.0, 30.0, 40.0]

SOLVE_COLUMNS = ("strategy", "t1", "t2", "eps1_total", "eps2_total", "r1", "r2", "sum", "iterations", "residual")
SWEEP_COLUMNS = ("power_dbm", "strategy", "r1", "r2", "sum")
RATIO_COLUMNS = ("power_dbm", "si_db", "ratio")
ORACLE_COLUMNS = ("power_dbm", "strategy", "asr_solver", "asr_oracle", "gap_pct")


class ConfigError(ValueError):
    """A scenario field is missing or malformed."""


@dataclass
class Scenario:
    """Everything one CLI command needs, after merging config file and flags."""

    channel_model: str = "flat"
    channel_file: str | None = None
    si_db: list = field(default_factory=lambda: [-60.0])
    beta_db: float = -40.0
    seed: int = chan.DEFAULT_ITU_SEED
    raw_taps: bool = False
    system: dict = field(default_factory=dict)
    num_subcarriers: int = 64
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    power_dbm: list | None = None
    ratio_pair: str = "nupa"
    solver: SolverConfig = field(default_factory=SolverConfig)
    oracle_n: int | None = None
    oracle_refine: int = 2
    out: str | None = None

    def powers(self, default) -> list:
        """The configured power points, or ``default`` when none were given."""
        return list(default) if self.power_dbm is None else self.power_dbm

    def params(self, power_dbm: float) -> SystemParams:
        return SystemParams.from_table(dbm_to_energy(power_dbm), num_subcarriers=self.num_subcarriers, **self.system)

    def realization(self, params: SystemParams, si_db: float) -> ChannelRealization:
        if self.channel_model == "flat":
            return chan.flat_channel(params, si_db, self.beta_db)
        if self.channel_model == "itu-a":
            return chan.itu_a_channel(params, si_db, self.beta_db, self.seed)
        if self.channel_model == "asymmetric":
            return chan.asymmetric_channel(params, si_db, self.beta_db, raw=self.raw_taps)
        path = Path(self.channel_file)
        ch = chan.read_channel_csv(path)
        if ch.num_subcarriers != params.num_subcarriers:
            raise ConfigError(f"channel file {path} has {ch.num_subcarriers} sub-carriers but k={params.num_subcarriers}")
        return ch


def dbm_to_energy(power_dbm: float) -> float:
    """Total energy over the unit frame for a maximum transmission power in dBm."""
    return 10.0 ** (power_dbm / 10.0) * 1e-3


def parse_power_range(text: str) -> list:
    """``start:stop:step`` (inclusive stop) or a single value, in dBm."""
    parts = text.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"power_dbm: cannot parse {text!r}; expected start:stop:step") from None
    if len(nums) == 1:
        return nums
    if len(nums) != 3:
        raise ConfigError(f"power_dbm: expected start:stop:step, got {text!r}")
    start, stop, step = nums
    if step <= 0 or stop < start:
        raise ConfigError(f"power_dbm: empty range {text!r}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(count)]


def _float_list(name, text):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as a list of numbers") from None
    if not vals:
        raise ConfigError(f"{name}: empty list")
    return vals


def _strategy_list(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise ConfigError("strategies: empty strategy list")
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"strategies: unknown {', '.join(bad)}; choose from {', '.join(STRATEGIES)}")
    return names


_SYSTEM_FLOATS = (
    "bandwidth_hz",
    "carrier_hz",
    "distance_m",
    "noise_figure_db",
    "evm_dbc",
    "antenna_gain_db",
    "noise_density_dbm_hz",
)


def load_config(path) -> Scenario:
    """Read a scenario INI file; unknown keys are rejected so typos surface."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sc = Scenario()
    known = {
        "channel": {"model", "file", "si_db", "beta_db", "seed", "raw_taps"},
        "system": {"num_subcarriers", "full_band_noise", *_SYSTEM_FLOATS},
        "run": {"strategies", "power_dbm", "ratio_pair", "out"},
        "solver": {"time_step", "exact_grid", "lambda_grid_points", "alpha", "beta", "tol_delta", "max_iters"},
        "oracle": {"resolution", "refine_levels"},
    }
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")
        extra = set(cp[section]) - known[section]
        if extra:
            raise ConfigError(f"{path}: unknown key(s) in [{section}]: {', '.join(sorted(extra))}")

    def get(section, key, conv, name=None):
        name = name or f"{section}.{key}"
        try:
            return conv(cp[section][key])
        except (ValueError, configparser.Error) as exc:
            raise ConfigError(f"{name}: {exc}") from None

    def boolean(section, key):
        return get(section, key, lambda _: cp.getboolean(section, key))

    if cp.has_section("channel"):
        c = cp["channel"]
        if "model" in c:
            sc.channel_model = c["model"].strip()
        if "file" in c:
            sc.channel_file = c["file"].strip()
        if "si_db" in c:
            sc.si_db = _float_list("channel.si_db", c["si_db"])
        if "beta_db" in c:
            sc.beta_db = get("channel", "beta_db", float)
        if "seed" in c:
            sc.seed = get("channel", "seed", int)
        if "raw_taps" in c:
            sc.raw_taps = boolean("channel", "raw_taps")
    if cp.has_section("system"):
        s = cp["system"]
        for key in _SYSTEM_FLOATS:
            if key in s:
                sc.system[key] = get("system", key, float)
        if "full_band_noise" in s:
            sc.system["full_band_noise"] = boolean("system", "full_band_noise")
        if "num_subcarriers" in s:
            sc.num_subcarriers = get("system", "num_subcarriers", int)
    if cp.has_section("run"):
        r = cp["run"]
        if "strategies" in r:
            sc.strategies = _strategy_list(r["strategies"])
        if "power_dbm" in r:
            sc.power_dbm = parse_power_range(r["power_dbm"])
        if "ratio_pair" in r:
            sc.ratio_pair = r["ratio_pair"].strip()
        if "out" in r:
            sc.out = r["out"].strip()
    if cp.has_section("solver"):
        s = cp["solver"]
        newton = {}
        for key, conv in (("alpha", float), ("beta", float), ("tol_delta", float), ("max_iters", int)):
            if key in s:
                newton[key] = get("solver", key, conv)
        updates = {}
        if newton:
            try:
                updates["newton"] = replace(NewtonConfig(), **newton)
            except ValueError as exc:
                raise ConfigError(f"solver: {exc}") from None
        if "time_step" in s:
            updates["time_step"] = get("solver", "time_step", float)
        if "exact_grid" in s:
            updates["exact_grid"] = boolean("solver", "exact_grid")
        if "lambda_grid_points" in s:
            updates["lambda_grid_points"] = get("solver", "lambda_grid_points", int)
        try:
            sc.solver = replace(sc.solver, **updates)
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from None
    if cp.has_section("oracle"):
        o = cp["oracle"]
        if "resolution" in o:
            sc.oracle_n = get("oracle", "resolution", int)
        if "refine_levels" in o:
            sc.oracle_refine = get("oracle", "refine_levels", int)
    return sc


def validate(sc: Scenario) -> None:
    if sc.channel_model not in CHANNEL_MODELS:
        raise ConfigError(f"channel.model: {sc.channel_model!r} is not one of {', '.join(CHANNEL_MODELS)}")
    if sc.channel_model == "file":
        if not sc.channel_file:
            raise ConfigError("channel.file: required when channel.model = file")
        if not Path(sc.channel_file).is_file():
            raise FileNotFoundError(f"channel file not found: {sc.channel_file}")
    if sc.num_subcarriers < 1:
        raise ConfigError(f"system.num_subcarriers: must be positive, got {sc.num_subcarriers}")
    if not sc.strategies:
        raise ConfigError("strategies: empty strategy list")
    if sc.power_dbm is not None and not sc.power_dbm:
        raise ConfigError("power_dbm: empty range")
    if sc.ratio_pair not in ("nupa", "upa"):
        raise ConfigError(f"run.ratio_pair: expected nupa or upa, got {sc.ratio_pair!r}")


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    return repr(float(x))


def _write_csv(columns, rows, out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    _emit(buf.getvalue(), out)


def _emit(text, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}: expected an integer, got {raw!r}") from None
        return max(1, n)
    return max(1, min(4, os.cpu_count() or 1))


def _map(fn, items):
    """Run ``fn`` over ``items`` on the worker pool, returning results in input order."""
    items = list(items)
    workers = min(_workers(), len(items)) or 1
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _residual(result) -> float:
    return float(result.report.final_residual)


def run_solve(sc: Scenario):
    power = sc.powers([20.0])[0]
    params = sc.params(power)
    ch = sc.realization(params, sc.si_db[0])
    results = _map(lambda s: solve(s, params, ch, sc.solver), sc.strategies)
    rows, ok = [], True
    for res in results:
        a = res.allocation
        k = params.num_subcarriers
        e1 = float(a.eps1) * k if not hasattr(a.eps1, "__len__") else float(a.eps1.sum())
        e2 = float(a.eps2) * k if not hasattr(a.eps2, "__len__") else float(a.eps2.sum())
        rows.append((res.strategy, a.t1, a.t2, e1, e2, res.rates.r1, res.rates.r2, res.asr, res.report.iterations, _residual(res)))
        ok &= res.report.converged
        log.info("%s at %s dBm: ASR %.6f bits/s/Hz (%s)", res.strategy, power, res.asr, res.report.notes or "ok")
    _write_csv(SOLVE_COLUMNS, rows, sc.out)
    return ok


def run_sweep(sc: Scenario):
    si = sc.si_db[0]
    jobs = [(p, s) for p in sc.powers(SWEEP_DEFAULT_DBM) for s in sc.strategies]

    def one(job):
        p, s = job
        params = sc.params(p)
        return solve(s, params, sc.realization(params, si), sc.solver)

    results = _map(one, jobs)
    rows = [(p, s, r.rates.r1, r.rates.r2, r.asr) for (p, s), r in zip(jobs, results)]
    _write_csv(SWEEP_COLUMNS, rows, sc.out)
    bad = [f"{s}@{p}" for (p, s), r in zip(jobs, results) if not r.report.converged]
    if bad:
        log.warning("not converged: %s", ", ".join(bad))
    return not bad


def run_ratio(sc: Scenario):
    fd, hd = ("fd-nupa", "hd-nupa") if sc.ratio_pair == "nupa" else ("fd-upa", "hd-upa")
    jobs = [(p, si) for p in sc.powers(SWEEP_DEFAULT_DBM) for si in sc.si_db]

    def one(job):
        p, si = job
        params = sc.params(p)
        ch = sc.realization(params, si)
        return solve(fd, params, ch, sc.solver), solve(hd, params, ch, sc.solver)

    results = _map(one, jobs)
    rows, ok = [], True
    for (p, si), (rf, rh) in zip(jobs, results):
        ok &= rf.report.converged and rh.report.converged
        if rh.asr > 0:
            rows.append((p, si, rf.asr / rh.asr))
        else:
            log.warning("HD ASR is zero at %s dBm, SI %s dB; ratio left empty", p, si)
            rows.append((p, si, ""))
    _write_csv(RATIO_COLUMNS, rows, sc.out)
    return ok


def run_oracle_compare(sc: Scenario):
    if sc.num_subcarriers > ORACLE_MAX_K:
        raise ConfigError(
            f"system.num_subcarriers: oracle comparison needs k <= {ORACLE_MAX_K}, got {sc.num_subcarriers}; pass --k 4"
        )
    si = sc.si_db[0]
    jobs = [(p, s) for p in sc.powers(ORACLE_DEFAULT_DBM) for s in sc.strategies]

    def one(job):
        p, s = job
        params = sc.params(p)
        return compare(s, params, sc.realization(params, si), sc.solver, n=sc.oracle_n, refine_levels=sc.oracle_refine)

    try:
        results = _map(one, jobs)
    except OracleSizeError as exc:
        raise ConfigError(f"oracle: {exc}") from None
    rows = [(p, s, c["asr_solver"], c["asr_oracle"], 100.0 * c["gap"]) for (p, s), c in zip(jobs, results)]
    _write_csv(ORACLE_COLUMNS, rows, sc.out)
    worst = max(results, key=lambda c: c["gap"])
    log.info("largest solver/oracle gap: %.4f%% (%s)", 100 * worst["gap"], worst["strategy"])
    return all(c["solver"].report.converged for c in results)


def run_channel(sc: Scenario):
    params = sc.params(sc.powers([20.0])[0])
    _emit(chan.channel_csv_text(sc.realization(params, sc.si_db[0])), sc.out)
    return True


COMMANDS = {
    "solve": run_solve,
    "sweep": run_sweep,
    "ratio": run_ratio,
    "oracle-compare": run_oracle_compare,
    "channel": run_channel,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duplex-asr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log solver details to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="scenario INI file")
        s.add_argument("--out", help="output CSV path (default: stdout)")
        s.add_argument("--strategy", help="comma-separated strategies: " + ",".join(STRATEGIES))
        s.add_argument("--si-db", help="SI attenuation(s) in dB, comma-separated")
        s.add_argument("--power-dbm", help="power in dBm, a value or start:stop:step")
        s.add_argument("--seed", type=int, help="ITU outdoor A phase seed")
        s.add_argument("--k", type=int, help="number of sub-carriers")
        s.add_argument("--channel", choices=CHANNEL_MODELS, help="channel model")
        s.add_argument("--channel-file", help="channel CSV for --channel file")
        s.add_argument("--exact-grid", action="store_true", help="uniform multiplier scan for FD-NUPA")
        s.add_argument("--raw-taps", action="store_true", help="asymmetric taps without renormalization")
        s.add_argument("--ratio-pair", choices=("nupa", "upa"), help="strategies compared by `ratio`")
    return p


def scenario_from_args(args) -> Scenario:
    sc = load_config(args.config) if args.config else Scenario()
    if args.command == "oracle-compare" and not args.config and args.k is None:
        sc.num_subcarriers = 4
    if args.out is not None:
        sc.out = args.out
    if args.strategy is not None:
        sc.strategies = _strategy_list(args.strategy)
    if args.si_db is not None:
        sc.si_db = _float_list("--si-db", args.si_db)
    if args.power_dbm is not None:
        sc.power_dbm = parse_power_range(args.power_dbm)
    if args.seed is not None:
        sc.seed = args.seed
    if args.k is not None:
        sc.num_subcarriers = args.k
    if args.channel is not None:
        sc.channel_model = args.channel
    if args.channel_file is not None:
        sc.channel_file = args.channel_file
        if args.channel is None:
            sc.channel_model = "file"
    if args.exact_grid:
        sc.solver = replace(sc.solver, exact_grid=True)
    if args.raw_taps:
        sc.raw_taps = True
    if args.ratio_pair is not None:
        sc.ratio_pair = args.ratio_pair
    validate(sc)
    return sc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        sc = scenario_from_args(args)
        ok = COMMANDS[args.command](sc)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
