"""Command-line entry point: ``pilotless {train,eval,export-constellation,gradcheck}``."""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baseline import DmrsPattern
from .coding import MCS_TABLE
from .constellation import (export_constellations, load_constellation_params,
                            save_constellation_params, write_constellation_csv)
from .evaluation import (SCHEMES, EvalSetup, StoppingRule, bler_sweeps, export_csv, link_adapt)
from .link import Profile, SlotGeometry
from .neuralrx import load_rx_params, save_rx_params
from .train import TrainConfig, TrainingDiverged, train_e2e

log = logging.getLogger("pilotless")

OUT_ENV = "PILOTLESS_OUT"

# section -> key -> (type, default); None defaults mean "derive from Q_m"
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "run": {"seed": (int, 0), "out": (str, "runs"), "jobs": (int, 1)},
    "geometry": {"n_subcarriers": (int, 72), "n_symbols": (int, 14), "n_streams": (int, 2),
                 "n_rx": (int, 4), "subcarrier_spacing": (float, 30e3),
                 "carrier_frequency": (float, 3.5e9)},
    "channel": {"delay_spread_min": (float, 10e-9), "delay_spread_max": (float, 300e-9),
                "velocity_min": (float, 0.0), "velocity_max": (float, 5.0),
                "tap_count": (int, 12)},
    "model": {"n_transforms": (int, 3), "rx_blocks": (int, 8), "rx_filters": (int, 48),
              "rx_input_features": (int, 32)},
    "train": {"qm": (int, 4), "lam": (float, None), "bias": (float, None), "lr": (float, 5e-4),
              "batch": (int, 10), "steps": (int, 1000), "snr_min": (float, 0.0),
              "snr_max": (float, 30.0), "grad_clip": (float, 10.0),
              "profiles": (str, "TDL-TRAIN-A,TDL-TRAIN-B")},
    "eval": {"schemes": (str, "practical,perfect,ML"), "mcs": (str, "1-15"),
             "snr_min": (float, 0.0), "snr_max": (float, 30.0), "snr_step": (float, 1.0),
             "min_errors": (int, 100), "max_blocks": (int, 10_000), "min_blocks": (int, 0),
             "kbest_qm4": (int, 16), "kbest_qm6": (int, 32), "target": (float, 0.10),
             "isotonic": (bool, False)},
}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Typed view of the ``[section] key = value`` configuration."""

    def __init__(self):
        self.values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}

    def set(self, section: str, key: str, raw) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown configuration key {section}.{key}")
        typ = SCHEMA[section][key][0]
        if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
            self.values[section][key] = None
            return
        if typ is bool and isinstance(raw, str):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{section}.{key}: expected a boolean, got {raw!r}")
            self.values[section][key] = low in ("true", "1", "yes")
            return
        try:
            self.values[section][key] = typ(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None

    def get(self, section: str, key: str):
        return self.values[section][key]

    def read(self, path) -> None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                self.set(section, key, raw)

    def override(self, assignment: str) -> None:
        target, sep, raw = assignment.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {assignment!r}")
        self.set(section, key.strip(), raw.strip())

    def write(self, path) -> None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {k: "" if v is None else (repr(v) if isinstance(v, float) else str(v))
                               for k, v in keys.items()}
        with open(path, "w") as fh:
            parser.write(fh)

    # ------------------------------------------------------------ builders

    def geometry(self) -> SlotGeometry:
        return SlotGeometry(**self.values["geometry"])

    def train_config(self) -> TrainConfig:
        t, c, m = self.values["train"], self.values["channel"], self.values["model"]
        return TrainConfig(
            qm=t["qm"], lam=t["lam"], bias=t["bias"], lr=t["lr"], batch=t["batch"],
            steps=t["steps"], snr_db=(t["snr_min"], t["snr_max"]),
            delay_spread=(c["delay_spread_min"], c["delay_spread_max"]),
            velocity=(c["velocity_min"], c["velocity_max"]),
            profiles=tuple(Profile(p.strip()) for p in t["profiles"].split(",")),
            tap_count=c["tap_count"], seed=self.get("run", "seed"),
            n_transforms=m["n_transforms"], rx_blocks=m["rx_blocks"], rx_filters=m["rx_filters"],
            rx_input_features=m["rx_input_features"], grad_clip=t["grad_clip"],
            geometry=self.geometry())

    def snr_grid(self) -> list[float]:
        e = self.values["eval"]
        if e["snr_step"] <= 0:
            raise ConfigError("eval.snr_step must be positive")
        n = int(np.floor((e["snr_max"] - e["snr_min"]) / e["snr_step"] + 1e-9)) + 1
        return [float(round(e["snr_min"] + i * e["snr_step"], 9)) for i in range(max(n, 0))]

    def mcs_list(self) -> list[int]:
        return parse_index_list(self.get("eval", "mcs"))

    def schemes(self) -> list[str]:
        names = [s.strip() for s in self.get("eval", "schemes").split(",") if s.strip()]
        bad = [s for s in names if s not in SCHEMES]
        if bad or not names:
            raise ConfigError(f"schemes must be a subset of {','.join(SCHEMES)}; got {names}")
        return names


def parse_index_list(text: str) -> list[int]:
    """``"1-3,7"`` -> [1, 2, 3, 7]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, dash, hi = part.partition("-")
        try:
            out.extend(range(int(lo), int(hi) + 1) if dash else [int(lo)])
        except ValueError:
            raise ConfigError(f"bad index list {text!r}") from None
    bad = [i for i in out if not 1 <= i <= len(MCS_TABLE)]
    if bad:
        raise ConfigError(f"MCS indices out of range: {bad}")
    return sorted(set(out))


def parse_snr_list(text: str) -> list[float]:
    """Comma-separated values or ``start:stop:step`` (inclusive)."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        try:
            a, b, s = (float(v) for v in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad SNR range {text!r}") from None
        if s <= 0:
            raise ConfigError("SNR step must be positive")
        n = int(np.floor((b - a) / s + 1e-9)) + 1
        return [float(round(a + i * s, 9)) for i in range(max(n, 0))]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad SNR list {text!r}") from None


# --------------------------------------------------------------------------- commands

def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg.get("run", "out"))


def cmd_train(args, cfg: RunConfig) -> int:
    tc = cfg.train_config()
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    # record the resolved Q_m-dependent defaults
    cfg.set("train", "bias", tc.bias)
    cfg.set("train", "lam", tc.lam)
    cfg.write(out / "config.ini")
    every = max(1, tc.steps // 20)

    def progress(rec):
        if rec.step % every == 0 or rec.step == tc.steps - 1:
            log.info("step %d loss %.4f bce %.4f D %.4f", rec.step, rec.loss, rec.bce, rec.dterm)

    try:
        tx, rx, history = train_e2e(tc, progress=progress)
    except TrainingDiverged as exc:
        exc.history.write_csv(out / "history.csv")
        log.error("%s; partial history in %s", exc, out / "history.csv")
        return 1
    save_constellation_params(tx, out / "tx.bin")
    save_rx_params(rx, out / "rx.bin")
    history.write_csv(out / "history.csv")
    print(f"checkpoint written to {out}")
    return 0


def load_checkpoint(path):
    path = Path(path)
    tx_path, rx_path = path / "tx.bin", path / "rx.bin"
    if not tx_path.is_file() or not rx_path.is_file():
        raise FileNotFoundError(f"{path}: missing tx.bin or rx.bin")
    return load_constellation_params(tx_path), load_rx_params(rx_path)


def cmd_eval(args, cfg: RunConfig) -> int:
    schemes = cfg.schemes()
    snrs = parse_snr_list(args.snr) if args.snr is not None else cfg.snr_grid()
    if not snrs:
        raise ConfigError("empty SNR grid")
    mcs = cfg.mcs_list()
    if not mcs:
        raise ConfigError("empty MCS list")
    g, c, e = cfg.geometry(), cfg.values["channel"], cfg.values["eval"]
    models = {}
    for ck in args.checkpoint or []:
        tx, rx = load_checkpoint(ck)
        models[tx.qm] = (tx, rx)
    if "ML" in schemes:
        need = {MCS_TABLE[i - 1].qm for i in mcs} - set(models)
        if need:
            raise ConfigError(f"ML scheme needs a checkpoint for Q_m {sorted(need)} (--checkpoint)")
    setup = EvalSetup(geometry=g, delay_spread=(c["delay_spread_min"], c["delay_spread_max"]),
                      velocity=(c["velocity_min"], c["velocity_max"]), tap_count=c["tap_count"],
                      kbest={4: e["kbest_qm4"], 6: e["kbest_qm6"]}, models=models)
    rule = StoppingRule(e["min_errors"], e["max_blocks"], e["min_blocks"])
    jobs = args.jobs if args.jobs is not None else cfg.get("run", "jobs")
    rows = bler_sweeps(schemes, mcs, snrs, setup, rule, cfg.get("run", "seed"), jobs)
    curves = link_adapt(rows, g.n_streams, g.n_symbols, DmrsPattern(n_streams=g.n_streams),
                        e["target"], mcs_set=mcs, isotonic=e["isotonic"])
    consts = None
    if "ML" in schemes:
        consts = [cst for qm in sorted(models) for cst in export_constellations(models[qm][0])]
    out = _out_dir(args, cfg)
    export_csv(rows, curves, out, consts)
    cfg.write(out / "config.ini")
    print(f"evaluation written to {out}")
    return 0


def cmd_export_constellation(args, cfg: RunConfig) -> int:
    tx = load_constellation_params(Path(args.checkpoint) / "tx.bin")
    out = Path(args.out) if args.out else Path(args.checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    for l, c in enumerate(export_constellations(tx)):
        write_constellation_csv(c, out / f"layer{l}_const.csv")
    print(f"{tx.n_streams} constellation files written to {out}")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradcheck import run_suite

    results = run_suite(n_points=args.points, seed=cfg.get("run", "seed"))
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:16s} max_rel_err={r.max_rel_error:.3e}")
    return 0 if all(r.ok for r in results) else 1


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [section] key = value entries")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration entry (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or run.out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pilotless", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="jointly train transmitter and receiver")
    t.add_argument("--qm", type=int, choices=(4, 6))
    t.add_argument("--steps", type=int)
    t.add_argument("--b", type=float, dest="bias", help="distance-loss bias")
    t.add_argument("--lam", type=float, help="distance-loss weight")

    e = sub.add_parser("eval", parents=[common], help="BLER sweeps and link adaptation")
    e.add_argument("--checkpoint", action="append", help="trained model directory (repeatable)")
    e.add_argument("--schemes", help="comma list of ML,practical,perfect")
    e.add_argument("--snr", help="SNR grid: 'a,b,c' or 'start:stop:step'")
    e.add_argument("--mcs", help="MCS indices, e.g. '1-6' or '2'")
    e.add_argument("--jobs", type=int, help="worker processes")

    x = sub.add_parser("export-constellation", parents=[common],
                       help="write per-stream constellation CSVs from a checkpoint")
    x.add_argument("checkpoint")

    g = sub.add_parser("gradcheck", parents=[common], help="run the gradient verification suite")
    g.add_argument("--points", type=int, default=20)
    return p


def _apply_flags(args, cfg: RunConfig) -> None:
    if args.config:
        cfg.read(args.config)
    for item in args.set:
        cfg.override(item)
    flag_map = {"seed": ("run", "seed"), "qm": ("train", "qm"), "steps": ("train", "steps"),
                "bias": ("train", "bias"), "lam": ("train", "lam"),
                "schemes": ("eval", "schemes"), "mcs": ("eval", "mcs"), "jobs": ("run", "jobs")}
    for attr, (section, key) in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, value)


COMMANDS = {"train": cmd_train, "eval": cmd_eval,
            "export-constellation": cmd_export_constellation, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = RunConfig()
    try:
        _apply_flags(args, cfg)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"pilotless: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, LookupError, RuntimeError) as exc:
        print(f"pilotless: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
