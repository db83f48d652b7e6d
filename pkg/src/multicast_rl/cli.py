"""Experiment runner: scenario catalog, config files, CSV outputs."""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenarios
from .acdqn import AcdqnParams, acdqn_train
from .baselines import TinyEnv, constant_power_policy, lagrangian_oracle, write_oracle_csv
from .dsgd import dsgd_run, write_dsgd_csv
from .ida import ida_train
from .model import ChannelModel, SystemConfig
from .nn import save_weights
from .queue import StrategyParams
from .sim import POWER_WINDOW, REPORT_WINDOW, World, _fmt, write_sojourn_csv, write_trace_csv

ALGORITHMS = ("baseline-constant", "dsgd", "acdqn", "ida", "oracle")
OUT_ENV = "MULTICAST_RL_OUT"

HOUR = 3600.0
TRACKING_SCHEDULE = ((24 * HOUR, 1.0), (6 * HOUR, 0.6), (6 * HOUR, 0.5), (6 * HOUR, 0.4), (6 * HOUR, 0.8))

_SCENARIO_KEYS = ("name", "algorithm", "strategy", "acdqn_mode", "power", "rate_schedule", "output")
_SYSTEM_KEYS = tuple(f.name for f in dataclasses.fields(SystemConfig))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SystemConfig
    algorithm: str
    strategy: tuple[float, float, float] = (0.0, 1.0, 0.0)
    acdqn_mode: str = "decaying"
    power: float | None = None
    rate_schedule: tuple[tuple[float, float], ...] = ()
    output: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: expected one of {', '.join(ALGORITHMS)}, got {self.algorithm!r}")
        if self.acdqn_mode not in ("decaying", "constant"):
            raise ConfigError(f"acdqn_mode: expected 'decaying' or 'constant', got {self.acdqn_mode!r}")
        try:
            StrategyParams(self.strategy)
        except ValueError as e:
            raise ConfigError(f"strategy: {e}") from None
        for seg in self.rate_schedule:
            if len(seg) != 2 or seg[0] <= 0 or seg[1] < 0:
                raise ConfigError(f"rate_schedule: segments must be [positive duration, rate >= 0], got {list(seg)}")
        if self.power is not None and self.power <= 0:
            raise ConfigError("power: must be positive")

    @property
    def duration(self) -> float | None:
        return sum(d for d, _ in self.rate_schedule) if self.rate_schedule else None


def builtin_scenarios() -> dict[str, Scenario]:
    return {
        "small": Scenario("small", scenarios.small(1.0), "acdqn"),
        "moderate": Scenario("moderate", scenarios.moderate(3.0), "baseline-constant"),
        "large": Scenario("large", scenarios.large(1.0), "acdqn"),
        "tracking48h": Scenario(
            "tracking48h", scenarios.large(1.0, avg_power_limit=5.0), "acdqn",
            acdqn_mode="constant", rate_schedule=TRACKING_SCHEDULE,
        ),
        "tiny": Scenario("tiny", scenarios.tiny(), "oracle"),
    }


def _channel_groups(channels) -> list[dict]:
    groups: list[dict] = []
    for c in channels:
        d = {"kind": c.kind, "tag": c.tag, "quantity": c.quantity}
        if c.kind == "uniform":
            d["support"] = list(c.support)
        else:
            d["mean"] = c.mean
        if groups and {k: v for k, v in groups[-1].items() if k != "count"} == d:
            groups[-1]["count"] += 1
        else:
            groups.append({"count": 1, **d})
    return groups


def _channels_from_groups(groups) -> tuple[ChannelModel, ...]:
    out = []
    for g in groups:
        g = dict(g)
        count = int(g.pop("count", 1))
        if "support" in g:
            g["support"] = tuple(float(x) for x in g["support"])
        out += [ChannelModel(**g)] * count
    return tuple(out)


def serialize(s: Scenario) -> str:
    """Flat key-value text that ``parse_config`` reads back to an equal scenario."""
    lines = ["[scenario]"]
    lines.append(f"name = {s.name}")
    lines.append(f"algorithm = {s.algorithm}")
    lines.append(f"strategy = {json.dumps(list(s.strategy))}")
    lines.append(f"acdqn_mode = {s.acdqn_mode}")
    if s.power is not None:
        lines.append(f"power = {json.dumps(s.power)}")
    lines.append(f"rate_schedule = {json.dumps([list(x) for x in s.rate_schedule])}")
    if s.output:
        lines.append(f"output = {s.output}")
    lines.append("")
    lines.append("[system]")
    for f in dataclasses.fields(SystemConfig):
        v = getattr(s.config, f.name)
        if f.name == "channels":
            v = _channel_groups(v)
        elif f.name == "power_levels":
            v = list(v)
        lines.append(f"{f.name} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"


def _value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


def parse_config(text: str) -> Scenario:
    """Read a scenario from ``[scenario]`` and ``[system]`` sections.

    Values are JSON (bare words are read as strings). ``[system] base`` names a
    built-in system whose settings fill any key not given.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    extra = set(cp.sections()) - {"scenario", "system"}
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    sc = {k: _value(v) for k, v in cp["scenario"].items()} if cp.has_section("scenario") else {}
    sy = {k: _value(v) for k, v in cp["system"].items()} if cp.has_section("system") else {}
    for k in sc:
        if k not in _SCENARIO_KEYS:
            raise ConfigError(f"scenario.{k}: unknown key")
    for k in sy:
        if k not in _SYSTEM_KEYS and k != "base":
            raise ConfigError(f"system.{k}: unknown key")
    if "algorithm" not in sc:
        raise ConfigError("scenario.algorithm: missing required key")

    base = sy.pop("base", "moderate")
    if base not in scenarios.BUILTIN:
        raise ConfigError(f"system.base: unknown built-in system {base!r}")
    kw = dataclasses.asdict(scenarios.BUILTIN[base]())
    kw["channels"] = scenarios.BUILTIN[base]().channels
    for k, v in sy.items():
        try:
            if k == "channels":
                v = _channels_from_groups(v)
            elif k == "power_levels":
                v = _power_levels(v)
            elif k in ("num_users", "catalog_size", "horizon", "seed"):
                if not isinstance(v, int) or isinstance(v, bool):
                    raise ConfigError(f"system.{k}: expected an integer, got {v!r}")
            elif not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"system.{k}: expected a number, got {v!r}")
            else:
                v = float(v)
        except (TypeError, ValueError, KeyError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"system.{k}: {e}") from None
        kw[k] = v
    if "num_users" in sy and "channels" not in sy:
        raise ConfigError("system.channels: required when num_users is overridden")
    try:
        cfg = SystemConfig(**kw)
    except ValueError as e:
        raise ConfigError(f"system: {e}") from None

    try:
        return Scenario(
            name=str(sc.get("name", base)),
            config=cfg,
            algorithm=str(sc["algorithm"]),
            strategy=_strategy(sc.get("strategy", [0.0, 1.0, 0.0])),
            acdqn_mode=str(sc.get("acdqn_mode", "decaying")),
            power=None if sc.get("power") is None else float(sc["power"]),
            rate_schedule=tuple((float(d), float(r)) for d, r in sc.get("rate_schedule", [])),
            output=str(sc.get("output", "")),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"scenario: {e}") from None


def _strategy(v) -> tuple[float, float, float]:
    named = {"retransmit": (1.0, 0.0, 0.0), "loopback": (0.0, 1.0, 0.0), "defer": (0.0, 0.0, 1.0)}
    if isinstance(v, str) and "," in v:
        try:
            v = [float(x) for x in v.split(",")]
        except ValueError:
            raise ConfigError(f"strategy: expected three numbers, got {v!r}") from None
    if isinstance(v, str):
        if v not in named:
            raise ConfigError(f"strategy: expected retransmit, loopback, defer or [p1, p2, p3], got {v!r}")
        return named[v]
    return tuple(float(x) for x in v)


def _power_levels(v) -> tuple[float, ...]:
    if isinstance(v, dict):
        lo, hi, n = v["linspace"]
        return tuple(float(x) for x in np.linspace(lo, hi, int(n)))
    return tuple(float(x) for x in v)


def load_scenario(ref: str) -> Scenario:
    """A built-in scenario name or a path to a config file."""
    builtins = builtin_scenarios()
    if ref in builtins:
        return builtins[ref]
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"{ref}: neither a built-in scenario ({', '.join(builtins)}) nor a file")
    return parse_config(path.read_text())


def _class_means(trace, tags, window: int | None = None) -> dict[str, float | None]:
    out = {}
    for tag in ("bad", "good"):
        vals = [s for s, u in zip(trace.sojourns, trace.sojourn_users) if tags[u] == tag]
        if window:
            vals = vals[-window:]
        out[tag] = float(np.mean(vals)) if vals else None
    vals = trace.sojourns[-window:] if window else trace.sojourns
    out["all"] = float(np.mean(vals)) if vals else None
    return out


def _write_summary(path: Path, rows: list[tuple[str, object]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in rows:
            w.writerow([k, v if isinstance(v, str) else _fmt(v)])


def run_scenario(s: Scenario, out_dir: str | Path, horizon: int | None = None, save_net: bool = False) -> Path:
    """Execute ``s`` and write its CSV outputs into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = s.config
    summary: list[tuple[str, object]] = [
        ("scenario", s.name), ("algorithm", s.algorithm), ("seed", cfg.seed),
    ]

    if s.algorithm == "oracle":
        env = TinyEnv.from_config(cfg)
        spec = env.spec()
        res = lagrangian_oracle(spec, cfg.avg_power_limit)
        write_oracle_csv(spec, res, out / "oracle.csv")
        summary += [("states", spec.num_states), ("avg_power_w", res.avg_power),
                    ("objective", res.objective), ("beta", res.beta)]
        _write_summary(out / "summary.csv", summary)
        return out

    n = horizon if horizon is not None else (None if s.rate_schedule else cfg.horizon)
    until = s.duration
    strategy = StrategyParams(s.strategy)
    world = World(cfg, strategy, POWER_WINDOW, s.rate_schedule or None)
    beta = None
    if s.algorithm == "baseline-constant":
        policy = constant_power_policy(cfg.avg_power_limit if s.power is None else s.power, strategy)
        while (n is None or world.trace.transmissions < n) and (until is None or world.clock < until):
            if world.step(policy) is None:
                break
    elif s.algorithm == "acdqn":
        params = AcdqnParams.constant_step() if s.acdqn_mode == "constant" else AcdqnParams.decaying()
        res = acdqn_train(cfg, horizon=n, params=params, world=world, until_time=until)
        beta = res.agent.beta
        if save_net:
            save_weights(res.agent.online, out / "q_network.mlpw")
    elif s.algorithm == "dsgd":
        policy = constant_power_policy(cfg.avg_power_limit if s.power is None else s.power)
        res = dsgd_run(cfg, policy, horizon=n, world=world, until_time=until)
        write_dsgd_csv(res.state, out / "dsgd.csv")
    else:
        res = ida_train(cfg, horizon=n, world=world, until_time=until)
        beta = res.agent.beta
        write_dsgd_csv(res.dsgd, out / "dsgd.csv")
        if save_net:
            save_weights(res.agent.online, out / "q_network.mlpw")

    trace = world.trace
    write_trace_csv(trace, out / "trace.csv")
    write_sojourn_csv(trace, cfg.tags(), out / "sojourns.csv")
    full = _class_means(trace, cfg.tags())
    tail = _class_means(trace, cfg.tags(), REPORT_WINDOW)
    p = world.strategy.p
    summary += [
        ("transmissions", trace.transmissions), ("sim_time_s", trace.sim_time),
        ("arrivals", trace.arrivals), ("delivered", len(trace.sojourns)),
        ("mean_sojourn_bad_s", full["bad"]), ("mean_sojourn_good_s", full["good"]),
        ("mean_sojourn_all_s", full["all"]),
        ("trailing_sojourn_bad_s", tail["bad"]), ("trailing_sojourn_good_s", tail["good"]),
        ("trailing_sojourn_all_s", tail["all"]),
        ("final_avg_power_w", world.window_avg_power),
        ("beta", beta), ("p1", p[0]), ("p2", p[1]), ("p3", p[2]),
    ]
    _write_summary(out / "summary.csv", summary)
    return out


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    if not rows:
        raise ConfigError(f"{path}: empty file, expected a header row")
    header, body = rows[0], rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ConfigError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
    return header, body


def _num(path: str, col: str, cell: str) -> float | None:
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise ConfigError(f"{path}: column {col} holds non-numeric value {cell!r}") from None


def _stats(values: list[float]) -> tuple[str, str, str]:
    if not values:
        return "0", "-", "-"
    return str(len(values)), _fmt(float(np.mean(values))), _fmt(float(np.mean(values[-REPORT_WINDOW:])))


def summarize(paths) -> list[list[str]]:
    """Per-file statistics: per-class sojourn means for sojourn CSVs, power and price for traces.

    Rows are ``file, series, count, mean, trailing_mean``; ``-`` marks an absent value.
    """
    table = [["file", "series", "count", "mean", "trailing_mean"]]
    for path in paths:
        header, body = _read_csv(path)
        cols = {h: i for i, h in enumerate(header)}
        if "sojourn_s" in cols and "tag" in cols:
            by_tag: dict[str, list[float]] = {"bad": [], "good": []}
            allv = []
            for r in body:
                v = _num(path, "sojourn_s", r[cols["sojourn_s"]])
                if v is None:
                    continue
                by_tag.setdefault(r[cols["tag"]], []).append(v)
                allv.append(v)
            for tag, vals in sorted(by_tag.items()):
                table.append([path, f"sojourn_{tag}", *_stats(vals)])
            table.append([path, "sojourn_all", *_stats(allv)])
        elif "power_w" in cols:
            for col in ("power_w", "beta", "mean_sojourn_s"):
                vals = [v for v in (_num(path, col, r[cols[col]]) for r in body) if v is not None] if col in cols else []
                table.append([path, col, *_stats(vals)])
        elif "f_hat" in cols:
            for col in ("p1", "p2", "p3", "f_hat"):
                vals = [v for v in (_num(path, col, r[cols[col]]) for r in body) if v is not None]
                table.append([path, col, *_stats(vals)])
        else:
            raise ConfigError(f"{path}: unrecognized columns {header}")
    return table


def _out_dir(args, s: Scenario) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or "runs"
    return Path(root) / (s.output or f"{s.name}-{s.algorithm}-seed{s.config.seed}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="multicast_rl", description="Multicast queueing and power-control experiments.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a built-in scenario or a config file")
    r.add_argument("config", help="built-in scenario name or config path")
    r.add_argument("--seed", type=int, help="master seed (overrides the config)")
    r.add_argument("--horizon", type=int, help="number of transmissions")
    r.add_argument("--out", help=f"output root directory (default ${OUT_ENV} or ./runs)")
    r.add_argument("--algorithm", choices=ALGORITHMS, help="override the scenario's algorithm")
    r.add_argument("--arrival-rate", type=float, help="override the arrival rate")
    r.add_argument("--strategy", help="retransmit, loopback, defer or p1,p2,p3")
    r.add_argument("--save-net", action="store_true", help="write the Q-network weights")
    sm = sub.add_parser("summarize", help="summary table of CSV outputs")
    sm.add_argument("csv", nargs="+")
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    args = ap.parse_args(argv)

    try:
        if args.cmd == "list-scenarios":
            for name, s in builtin_scenarios().items():
                c = s.config
                sched = f" schedule={len(s.rate_schedule)} segments" if s.rate_schedule else ""
                print(f"{name}: {s.algorithm} L={c.num_users} M={c.catalog_size} "
                      f"rate={c.arrival_rate:g} P={c.avg_power_limit:g}{sched}")
            return 0
        if args.cmd == "summarize":
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerows(summarize(args.csv))
            return 0
        s = load_scenario(args.config)
        cfg_kw = {}
        if args.seed is not None:
            cfg_kw["seed"] = args.seed
        if args.arrival_rate is not None:
            cfg_kw["arrival_rate"] = args.arrival_rate
        changes = {}
        if cfg_kw:
            changes["config"] = dataclasses.replace(s.config, **cfg_kw)
        if args.algorithm:
            changes["algorithm"] = args.algorithm
        if args.strategy:
            changes["strategy"] = _strategy(args.strategy)
        if changes:
            s = dataclasses.replace(s, **changes)
        out = run_scenario(s, _out_dir(args, s), args.horizon, args.save_net)
        print(out)
        return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
