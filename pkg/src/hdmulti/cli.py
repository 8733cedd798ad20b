"""Command line entry point: ``hdmulti <subcommand> [flags]``.

Exit status: 0 on success, 1 on invalid input, 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from hdmulti import bench
from hdmulti.bench import ConfigError, ExperimentConfig
from hdmulti.calibration import gof_test, parse_method, permutation_tests
from hdmulti.prob import RngSpec, read_counts, sample_counts
from hdmulti.twosample import TWO_SAMPLE_STATISTICS, TwoSampleData

SUBCOMMANDS = ("gof", "two-sample", "power-curve", "null-dist", "radius")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _eps_grid(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad --eps-grid {text!r}; expected a:b:steps")
        a, b, steps = float(parts[0]), float(parts[1]), int(parts[2])
        if steps < 1:
            raise ConfigError("--eps-grid needs at least one step")
        return [round(float(v), 12) for v in np.linspace(a, b, steps)]
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--null", default=argparse.SUPPRESS, help="uniform | powerlaw | pointmass | file:PATH")
    common.add_argument("--d", type=int, default=argparse.SUPPRESS)
    common.add_argument("--n", type=int, default=argparse.SUPPRESS)
    common.add_argument("--n1", type=int, default=argparse.SUPPRESS)
    common.add_argument("--n2", type=int, default=argparse.SUPPRESS)
    common.add_argument("--test", default=argparse.SUPPRESS, help="NAME[,NAME...]")
    common.add_argument("--alt", default=argparse.SUPPRESS, help="alternative kind or two-sample pair")
    common.add_argument("--eps-grid", default=argparse.SUPPRESS, help="a:b:steps or comma list")
    common.add_argument("--alpha", type=float, default=argparse.SUPPRESS)
    common.add_argument("--trials", type=int, default=argparse.SUPPRESS)
    common.add_argument("--calib", default=argparse.SUPPRESS, help="mc:M | perm:B | analytic")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--config", default=None, help="JSON config; its keys override flags")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    common.add_argument("--scenario", default=argparse.SUPPRESS)

    parser = _Parser(prog="hdmulti", description="Tests for high-dimensional multinomials.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    gof = sub.add_parser("gof", parents=[common], help="goodness-of-fit test of one count vector")
    gof.add_argument("--data", default=None, help="counts file; default: draw n counts from the null")
    ts = sub.add_parser("two-sample", parents=[common], help="permutation two-sample test")
    ts.add_argument("--x", default=None, help="first sample counts file")
    ts.add_argument("--y", default=None, help="second sample counts file")
    pc = sub.add_parser("power-curve", parents=[common], help="power curve CSV")
    pc.add_argument("--two-sample", action="store_true", default=argparse.SUPPRESS)
    pc.add_argument("--pair-n", type=int, default=argparse.SUPPRESS)
    pc.add_argument("--oracle-calib", default=argparse.SUPPRESS)
    nd = sub.add_parser("null-dist", parents=[common], help="null distribution summaries and histograms")
    nd.add_argument("--bins", type=int, default=argparse.SUPPRESS)
    rad = sub.add_parser("radius", parents=[common], help="local critical radius table")
    rad.add_argument("--d-grid", default=argparse.SUPPRESS)
    rad.add_argument("--n-grid", default=argparse.SUPPRESS)
    return parser


_MODES = {"gof": "gof-power", "two-sample": "two-sample-power", "null-dist": "null-dist", "radius": "radius"}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    flags = vars(args)
    data: dict = {}
    for key in ("null", "d", "n", "n1", "n2", "alt", "alpha", "trials", "calib", "seed",
                "workers", "scenario", "bins"):
        if key in flags:
            data[key] = flags[key]
    if "test" in flags:
        data["tests"] = [t.strip() for t in flags["test"].split(",") if t.strip()]
    if "eps_grid" in flags:
        data["eps_grid"] = _eps_grid(flags["eps_grid"])
    if "pair_n" in flags:
        data["pair_n"] = flags["pair_n"]
    if "oracle_calib" in flags:
        data["oracle_calib"] = flags["oracle_calib"]
    if "d_grid" in flags:
        data["d_grid"] = _int_list(flags["d_grid"])
    if "n_grid" in flags:
        data["n_grid"] = _int_list(flags["n_grid"])
    command = flags["command"]
    if command == "power-curve":
        two = flags.get("two_sample") or "n1" in data or data.get("alt") == "batu"
        data["mode"] = "two-sample-power" if two else "gof-power"
        if two:
            data.setdefault("calib", "perm:200")
    else:
        data["mode"] = _MODES[command]
        if command == "two-sample":
            data.setdefault("calib", "perm:200")
    if flags.get("config"):
        try:
            overrides = json.loads(Path(flags["config"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {flags['config']}: {exc}") from None
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        data.update(overrides)
    if "mode" not in data:
        raise ConfigError("mode missing")
    return ExperimentConfig.from_dict(data)


def _run_gof(config: ExperimentConfig, data_path) -> str:
    if not config.tests:
        raise ConfigError(f"--test is required; choose from {list(bench.GOF_TESTS)}")
    for name in config.tests:
        bench._check_gof_name(name)
    p0 = bench.resolve_null(config.null, config.d)
    root = RngSpec(config.seed)
    if data_path:
        x = read_counts(data_path)
        if config.n is not None and config.n != x.n:
            raise ConfigError(f"--n {config.n} disagrees with the data (sample size {x.n})")
        if x.d != p0.d:
            raise ConfigError(f"data has {x.d} categories, null has {p0.d}")
    else:
        if not config.n:
            raise ConfigError("--n is required when no --data is given")
        x = sample_counts(p0, config.n, root.substream(7, 0))
    kind, _ = parse_method(config.calib)
    if kind == "perm":
        raise ConfigError("goodness-of-fit tests use mc:M or analytic calibration")
    blocks = []
    for name in config.tests:
        test = bench.build_gof_test(name, p0, x.n, config.sigma_grid)
        report = gof_test(x, p0, test, config.alpha, config.calib, root.substream(0, 0))
        blocks.append(report.summary())
    return "\n\n".join(blocks) + "\n"


def _run_two_sample(config: ExperimentConfig, x_path, y_path) -> str:
    tests = config.tests or ["l1"]
    for name in tests:
        if name not in TWO_SAMPLE_STATISTICS:
            raise ConfigError(f"unknown two-sample test {name!r}; choose from {sorted(TWO_SAMPLE_STATISTICS)}")
    kind, B = parse_method(config.calib)
    if kind != "perm":
        raise ConfigError("two-sample tests are calibrated with perm:B")
    root = RngSpec(config.seed)
    if x_path and y_path:
        data = TwoSampleData(read_counts(x_path), read_counts(y_path))
    elif x_path or y_path:
        raise ConfigError("give both --x and --y, or neither")
    else:
        if not config.n1 or not config.n2:
            raise ConfigError("--n1 and --n2 are required when no data files are given")
        p0 = bench.resolve_null(config.null, config.d)
        data = TwoSampleData(sample_counts(p0, config.n1, root.substream(2, 0)),
                             sample_counts(p0, config.n2, root.substream(3, 0)))
    if "chi2" in tests and data.n1 != data.n2:
        raise ConfigError("chi2 needs equal sample sizes; use chi2-imbalanced")
    reports = permutation_tests(data, tests, config.alpha, B, root.substream(4, 0))
    return "\n\n".join(r.summary() for r in reports.values()) + "\n"


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError(f"missing subcommand; choose from {list(SUBCOMMANDS)}")
        config = config_from_args(args)
        if args.command == "gof":
            text = _run_gof(config, args.data)
        elif args.command == "two-sample":
            text = _run_two_sample(config, args.x, args.y)
        else:
            if config.mode == "gof-power" and not config.tests:
                config.tests = ["trunc-chi2"]
            text = bench.run(config)
        _emit(text, args.out)
        return 0
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
