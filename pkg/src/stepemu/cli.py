"""Command-line entry point: build, run, compare, sweep-budget."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .budget import BudgetError, ErrorBudget, allocate, output_swing, sweep_eN_share
from .link import (
    ConfigError,
    LinkConfig,
    build_link_ade,
    compare_with_oracle,
    edges_per_ui,
    oracle_output,
    run_link,
    settling_time,
    trace_histogram,
)
from .oracle import compare
from .step import (
    TWO_PI,
    StepFormatError,
    StepResponse,
    cascade_step,
    ctle_setting,
    load_step_csv,
    synth_channel_step,
)

log = logging.getLogger("stepemu")

DEFAULT_SHARES = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


def _strict(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**doc)


@dataclass
class ChannelConfig:
    csv: str | None = None
    loss_pole_hz: float = 3e9
    delay: float = 1e-9
    reflection_amp: float = 0.1
    reflection_delay: float = 3e-9
    dt: float = 125e-12 / 64
    t_end: float = 12e-9

    def step(self) -> StepResponse:
        if self.csv is not None:
            return load_step_csv(self.csv)
        return synth_channel_step(
            TWO_PI * self.loss_pole_hz, self.delay, self.reflection_amp,
            self.reflection_delay, self.dt, self.t_end,
        )


@dataclass
class CtleConfig:
    n_settings: int = 16
    f_zero_lo: float = 0.4e9
    f_zero_hi: float = 2.0e9
    gain_db: float = 0.0
    f_pole1: float = 2e9
    f_pole2: float = 8e9


@dataclass
class BudgetConfig:
    total: float = 1e-3
    en_share: float = 0.6
    sweep_shares: list[float] = field(default_factory=lambda: list(DEFAULT_SHARES))


@dataclass
class RunConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    ctle: CtleConfig = field(default_factory=CtleConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    seed: int = 1
    out: str = "out"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - {"channel", "ctle", "link", "budget", "seed", "out"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        cfg = cls(
            channel=_strict(ChannelConfig, doc.get("channel", {}), "channel"),
            ctle=_strict(CtleConfig, doc.get("ctle", {}), "ctle"),
            link=_strict(LinkConfig, doc.get("link", {}), "link"),
            budget=_strict(BudgetConfig, doc.get("budget", {}), "budget"),
            seed=doc.get("seed", 1),
            out=doc.get("out", "out"),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not 0 <= self.link.ctle_setting < self.ctle.n_settings:
            raise ConfigError("link.ctle_setting outside the CTLE family")
        ErrorBudget(self.budget.total, self.budget.en_share)
        if not all(0 < s < 1 for s in self.budget.sweep_shares):
            raise ConfigError("sweep shares must lie in (0, 1)")
        self.link.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results (the output path does not)."""
        doc = self.to_dict()
        doc.pop("out")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def seeded_link(self, **kw) -> LinkConfig:
        """Link config with its LFSR seeds derived from ``seed``."""
        s = self.seed
        return self.link.replace(
            jitter_seed=s % (2**31 - 1) + 1,
            prbs_seed=(s >> 31) % (2**self.link.prbs_order - 1) + 1,
            **kw,
        )

    def step(self, setting: int, channel: StepResponse | None = None) -> StepResponse:
        ch = self.channel.step() if channel is None else channel
        c = self.ctle
        tf = ctle_setting(setting, c.n_settings, c.f_zero_lo, c.f_zero_hi, c.gain_db,
                          c.f_pole1, c.f_pole2)
        return cascade_step(ch, tf, label=f"ctle{setting}")


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)


def _header(cfg: RunConfig, command: str) -> str:
    return f"stepemu {command}\nconfig-sha256: {cfg.digest()}"


def _write_csv(path: Path, header: str, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def _write_json(path: Path, header: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"_comment": header, **doc}, fh, indent=2, sort_keys=True, default=float)


# commands


def cmd_build(cfg: RunConfig, out: Path) -> dict:
    lk = cfg.link
    F = cfg.step(lk.ctle_setting)
    T, J = lk.ui_period, lk.tx_jitter
    rep = allocate(
        F, ErrorBudget(cfg.budget.total, cfg.budget.en_share), T - J, 1.0,
        dt_max=T + J, fit_tol_rel=lk.fit_tol_rel,
    )
    head = _header(cfg, "build")
    _write_json(out / "build.json", head, rep.to_dict(with_tables=True))
    rows = [
        (j + 1, t.n_segments, rep.u[j], rep.v[j], rep.w[j], rep.z[j], rep.bits[j], rep.half_tiles[j])
        for j, t in enumerate(rep.tables)
    ]
    _write_csv(out / "storage.csv", head,
               ("tap", "segments", "u", "v", "w", "z", "bits", "half_tiles"), rows)
    for k in rep.shares:
        print(f"e_{k}: realized {rep.realized[k]:.3e}  share {rep.shares[k]:.3e}")
    one = sum(1 for h in rep.half_tiles if h <= 1) / len(rep.half_tiles)
    print(f"taps {rep.n}  total bits {rep.total_bits}  within one half-tile {one:.1%}")
    return rep.to_dict()


def _summary(trace, cfg: LinkConfig) -> dict:
    doc = {"cycles": len(trace), "clamped_lookups": trace.clamp_count}
    try:
        ts, final = settling_time(trace)
        doc.update(settling_time_s=ts, settled_code=final)
    except ValueError:
        doc.update(settling_time_s=None, settled_code=None)
    t_end = float(trace.times[-1])
    h = trace_histogram(trace, skip=min(0.5 * t_end, 200e-9))
    doc.update(std_pos=h.std_pos, std_neg=h.std_neg, mean_pos=h.mean_pos, mean_neg=h.mean_neg)
    t0 = 0.5 * t_end
    n_ui = int((t_end - t0) / cfg.ui_period)
    if n_ui > 0:
        doc["edges_per_ui"] = edges_per_ui(trace, t0, t0 + n_ui * cfg.ui_period, cfg.ui_period)
    return doc


def _settings(cfg: RunConfig, sweep: bool):
    if not sweep:
        return [(cfg.link.ctle_setting, cfg.link.tx_setting)]
    return [(c, t) for c in range(cfg.ctle.n_settings) for t in range(10)]


def _run_one(cfg: RunConfig, ctle: int, tx: int, F: StepResponse):
    lk = cfg.seeded_link(ctle_setting=ctle, tx_setting=tx)
    return lk, run_link(lk, F=F, ade=_engine(cfg, lk, F))


_ENGINES: dict = {}


def _engine(cfg: RunConfig, lk: LinkConfig, F: StepResponse):
    key = (cfg.digest(), lk.ctle_setting)
    if key not in _ENGINES:
        _ENGINES[key] = build_link_ade(lk, F)
    return _ENGINES[key]


def cmd_run(cfg: RunConfig, out: Path, sweep: bool = False) -> dict:
    head = _header(cfg, "run")
    channel = cfg.channel.step()
    if not sweep:
        F = cfg.step(cfg.link.ctle_setting, channel)
        lk, tr = _run_one(cfg, cfg.link.ctle_setting, cfg.link.tx_setting, F)
        tr.to_csv(out / "trace.csv", head)
        doc = _summary(tr, lk)
        _write_json(out / "summary.json", head, doc)
        for k, v in doc.items():
            print(f"{k}: {v}")
        return doc
    rows, worst = [], 0.0
    for ctle in range(cfg.ctle.n_settings):
        F = cfg.step(ctle, channel)
        for tx in range(10):
            lk, tr = _run_one(cfg, ctle, tx, F)
            err = compare_with_oracle(tr, F)
            h = trace_histogram(tr, skip=0.5 * float(tr.times[-1]))
            worst = max(worst, err)
            rows.append((ctle, tx, len(tr), err, h.std_pos, h.std_neg))
            print(f"ctle {ctle:2d} tx {tx}: relative error {err:.3e}  std {h.std:.4f}")
    _write_csv(out / "sweep.csv", head,
               ("ctle", "tx", "cycles", "relative_error", "std_pos", "std_neg"), rows)
    print(f"worst-case relative error over {len(rows)} settings: {worst:.3e}")
    return {"settings": len(rows), "worst_relative_error": worst}


def cmd_compare(cfg: RunConfig, out: Path, sweep: bool = False) -> dict:
    head = _header(cfg, "compare")
    channel = cfg.channel.step()
    rows, worst = [], 0.0
    cache: dict[int, StepResponse] = {}
    for ctle, tx in _settings(cfg, sweep):
        F = cache.setdefault(ctle, cfg.step(ctle, channel))
        _, tr = _run_one(cfg, ctle, tx, F)
        rep = compare(tr.times, tr.ade_out, (tr.times, oracle_output(tr, F)))
        worst = max(worst, rep.relative)
        rows.append((ctle, tx, rep.n, rep.max_abs, rep.relative, rep.rms))
    _write_csv(out / "compare.csv", head,
               ("ctle", "tx", "points", "max_abs", "relative", "rms"), rows)
    for r in rows:
        print(f"ctle {r[0]:2d} tx {r[1]}: max_abs {r[3]:.3e} relative {r[4]:.3e} rms {r[5]:.3e}")
    print(f"worst-case relative error: {worst:.3e}")
    return {"worst_relative_error": worst, "rows": len(rows)}


def cmd_sweep_budget(cfg: RunConfig, out: Path) -> list[dict]:
    lk = cfg.link
    F = cfg.step(lk.ctle_setting)
    T, J = lk.ui_period, lk.tx_jitter
    rows = sweep_eN_share(F, cfg.budget.total, cfg.budget.sweep_shares, T - J, 1.0,
                          dt_max=T + J, fit_tol_rel=lk.fit_tol_rel)
    head = _header(cfg, "sweep-budget")
    _write_csv(out / "budget_sweep.csv", head, ("en_share", "n", "total_bits", "half_tiles"),
               [(r["en_share"], r["n"], r["total_bits"], r["half_tiles"]) for r in rows])
    best = min(rows, key=lambda r: r["total_bits"])
    for r in rows:
        print(f"e_N share {r['en_share']:.2f}: n {r['n']:3d}  bits {r['total_bits']}")
    print(f"minimum storage at e_N share {best['en_share']:.2f} "
          f"(swing {output_swing(F, 1.0):.3f})")
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stepemu", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("build", "run", "compare", "sweep-budget"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--ui-count", type=int, metavar="N", help="override link.ui_count")
        if name in ("run", "compare"):
            sp.add_argument("--settings-sweep", action="store_true",
                            help="every CTLE x TX setting")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.ui_count is not None:
            cfg.link = cfg.link.replace(ui_count=args.ui_count)
        if args.out is not None:
            cfg.out = args.out
        cfg.validate()
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        log.info("config %s -> %s", cfg.digest(), out)
        sweep = getattr(args, "settings_sweep", False)
        if args.command == "build":
            cmd_build(cfg, out)
        elif args.command == "run":
            cmd_run(cfg, out, sweep)
        elif args.command == "compare":
            cmd_compare(cfg, out, sweep)
        else:
            cmd_sweep_budget(cfg, out)
    except (ConfigError, StepFormatError, BudgetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
