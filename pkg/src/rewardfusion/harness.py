"""Metrics, the five-way ablation runner, curve dumps and config files."""

from __future__ import annotations

import ast
import configparser
import csv
import io
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from rewardfusion.environment import EnvConfig
from rewardfusion.geometry import Se3Weights
from rewardfusion.reward_fusion import ALL_MODES, BasicWeights, FusionConfig, FusionMode, sample_curves
from rewardfusion.rollout import RolloutTrace
from rewardfusion.trainer import TrainConfig, cem_train, eval_seeds, evaluate, save_params

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 50


# ---------------------------------------------------------------- metrics


def success_rate(n: int, f: int) -> float:
    """Percentage of the ``n`` trials that did not fail."""
    if n <= 0:
        raise ValueError("success_rate needs n > 0")
    if not 0 <= f <= n:
        raise ValueError(f"failures must lie in [0, {n}], got {f}")
    return (n - f) / n * 100.0


def tracking_errors(trace: RolloutTrace, window: int = DEFAULT_WINDOW) -> tuple[float, float, float]:
    """Mean (d_p, d_theta, epsilon) over the last ``window`` steps."""
    if window <= 0:
        raise ValueError("window must be positive")
    if trace.steps < window:
        raise ValueError(f"trace has {trace.steps} steps, shorter than the {window}-step window")
    tail = slice(trace.steps - window, trace.steps)
    return tuple(float(np.mean(trace.data[k][tail])) for k in ("d_p", "d_theta", "epsilon"))


def posture_deviation(trace: RolloutTrace) -> float:
    """Mean over steps of sum_i |q_i - q_i,stow| over the arm joints."""
    if trace.steps == 0:
        raise ValueError("empty trace")
    q = np.asarray(trace.data["arm_q"])[: trace.steps]
    return float(np.mean(np.sum(np.abs(q - np.asarray(trace.q_stow)), axis=-1)))


def power_and_accel(trace: RolloutTrace) -> tuple[float, float]:
    """(mean sum|u * qd|, mean sum|qdd|) over all seven DoF.

    ``u`` is the applied effort recorded by the rollout; ``qdd`` comes from
    finite differences of consecutive recorded velocities.
    """
    if trace.steps == 0:
        raise ValueError("empty trace")
    qd = np.concatenate([trace.data["base_vel"], trace.data["arm_qd"]], axis=-1)[: trace.steps]
    u = np.asarray(trace.data["effort"])[: trace.steps]
    power = float(np.mean(np.sum(np.abs(u * qd), axis=-1)))
    if trace.steps < 2:
        return power, 0.0
    qdd = np.diff(qd, axis=0) / trace.dt
    return power, float(np.mean(np.sum(np.abs(qdd), axis=-1)))


# ---------------------------------------------------------------- report

COLUMNS = (
    ("success_rate", "Success Rate (%)", "↑"),
    ("avg_power", "Avg Power", "↓"),
    ("avg_accel", "Avg Accel", "↓"),
    ("ee_pos_error", "EE Pos Err (m)", "↓"),
    ("ee_ori_error", "EE Ori Err (rad)", "↓"),
    ("posture_deviation", "Posture Devi. (rad)", "↓"),
)
POSTURE_NOTE = "posture_deviation: arm-joint analog of nominal deviation, mean sum|q - q_stow|"
CSV_HEADER = ("mode",) + tuple(c[0] for c in COLUMNS) + ("trials", "train_seed", "eval_seeds", "error")


@dataclass
class ReportRow:
    mode: str
    success_rate: float = math.nan
    avg_power: float = math.nan
    avg_accel: float = math.nan
    ee_pos_error: float = math.nan
    ee_ori_error: float = math.nan
    posture_deviation: float = math.nan
    trials: int = 0
    train_seed: int = 0
    eval_seeds: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class ExperimentReport:
    rows: list[ReportRow]

    def row(self, mode) -> ReportRow:
        name = FusionMode.parse(mode).value
        for r in self.rows:
            if r.mode == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            values = [getattr(r, c[0]) for c in COLUMNS]
            writer.writerow(
                [r.mode] + [repr(float(v)) for v in values] + [r.trials, r.train_seed, r.eval_seeds, r.error]
            )
        return buf.getvalue()

    def to_table(self) -> str:
        """Aligned text table; arrows mark the better direction of each column."""
        heads = ["Mode"] + [f"{label} {arrow}" for _, label, arrow in COLUMNS]
        body = []
        for r in self.rows:
            if r.error:
                body.append([r.mode] + ["failed"] * len(COLUMNS))
                continue
            cells = [r.mode, f"{r.success_rate:.1f}%"]
            cells += [f"{getattr(r, key):.4f}" for key, _, _ in COLUMNS[1:]]
            body.append(cells)
        widths = [max(len(row[i]) for row in [heads] + body) for i in range(len(heads))]
        fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        lines = [fmt(heads), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
        lines.append("")
        lines.append(POSTURE_NOTE)
        for r in self.rows:
            if r.error:
                lines.append(f"{r.mode}: {r.error}")
        return "\n".join(lines) + "\n"


def summarize(mode: str, traces: list[RolloutTrace], window: int = DEFAULT_WINDOW) -> ReportRow:
    """Report row from evaluation traces; failed trials only count against success."""
    if not traces:
        raise ValueError("no traces to summarize")
    failed = [int(t.failure) != 0 for t in traces]
    row = ReportRow(mode, success_rate=success_rate(len(traces), sum(failed)), trials=len(traces))
    kept = [t for t, bad in zip(traces, failed) if not bad]
    if kept:
        err = np.array([tracking_errors(t, window) for t in kept])
        pa = np.array([power_and_accel(t) for t in kept])
        row.ee_pos_error = float(np.mean(err[:, 0]))
        row.ee_ori_error = float(np.mean(err[:, 1]))
        row.avg_power = float(np.mean(pa[:, 0]))
        row.avg_accel = float(np.mean(pa[:, 1]))
        row.posture_deviation = float(np.mean([posture_deviation(t) for t in kept]))
    return row


# ---------------------------------------------------------------- config

SECTIONS = ("geometry", "fusion", "env", "train", "harness")


@dataclass(frozen=True)
class HarnessConfig:
    modes: tuple[str, ...] = tuple(m.value for m in ALL_MODES)
    trials: int = 100
    seed: int = 0
    window: int = DEFAULT_WINDOW
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(FusionMode.parse(m).value for m in self.modes))
        if self.trials <= 0:
            raise ValueError("trials must be positive")
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.workers <= 0:
            raise ValueError("workers must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, harness=replace(self.harness, seed=seed), train=replace(self.train, seed=seed))

    def with_trials(self, trials: int) -> "ExperimentConfig":
        return replace(self, harness=replace(self.harness, trials=trials))

    def with_modes(self, modes) -> "ExperimentConfig":
        return replace(self, harness=replace(self.harness, modes=tuple(modes)))


class ConfigError(ValueError):
    pass


def _value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse ``[section]`` / ``key = value`` text. Unknown sections or keys raise."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]; expected one of {SECTIONS}")

    def section(name: str, allowed: set[str]) -> dict:
        if not cp.has_section(name):
            return {}
        out = {}
        for key, raw in cp.items(name):
            if key not in allowed:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            out[key] = _value(raw)
        return out

    basic_keys = {f"basic_{n}" for n in _names(BasicWeights)}
    fusion_keys = (_names(FusionConfig) - {"se3_weights", "basic_weights"}) | basic_keys
    try:
        geometry = section("geometry", _names(Se3Weights))
        fusion_kw = section("fusion", fusion_keys)
        basic = {k[len("basic_"):]: fusion_kw.pop(k) for k in list(fusion_kw) if k in basic_keys}
        fusion = FusionConfig(se3_weights=Se3Weights(**geometry), basic_weights=BasicWeights(**basic), **fusion_kw)
        env = EnvConfig(**section("env", _names(EnvConfig)))
        train_kw = section("train", _names(TrainConfig))
        harness_kw = section("harness", _names(HarnessConfig))
        if "seed" in train_kw and "seed" in harness_kw and train_kw["seed"] != harness_kw["seed"]:
            raise ConfigError(f"{source}: [harness] seed and [train] seed disagree")
        seed = harness_kw.pop("seed", train_kw.pop("seed", 0))
        train = TrainConfig(seed=seed, **train_kw)
        harness = HarnessConfig(seed=seed, **harness_kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return ExperimentConfig(fusion, env, train, harness)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


# ---------------------------------------------------------------- outputs


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def curve_csv(curve: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("iteration", "mean_return", "max_return", "success_rate"))
    for row in curve:
        writer.writerow(
            [row["iteration"]] + [repr(float(row[k])) for k in ("mean_return", "max_return", "success_rate")]
        )
    return buf.getvalue()


def xy_csv(x: np.ndarray, y: np.ndarray) -> str:
    lines = ["x,value"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)]
    return "\n".join(lines) + "\n"


def emit_curves(fusion_cfg: FusionConfig, out_dir) -> list[Path]:
    """Write the enhancement and phase curves as ``x,value`` CSVs."""
    out_dir = Path(out_dir)
    written = []
    for name, (x, y) in sample_curves(fusion_cfg).items():
        path = out_dir / f"curve_{name}.csv"
        atomic_write(path, xy_csv(x, y))
        written.append(path)
    return written


# ---------------------------------------------------------------- ablation


@dataclass
class ModeOutcome:
    row: ReportRow
    params: np.ndarray | None = None
    curve: list[dict] = field(default_factory=list)


def train_and_evaluate(cfg: ExperimentConfig, mode: str) -> ModeOutcome:
    """Train one mode and evaluate it; any exception becomes the row's error."""
    h = cfg.harness
    seeds = eval_seeds(h.seed, h.trials)
    label = f"{int(seeds[0])}-{int(seeds[-1])}"
    try:
        fusion = cfg.fusion.with_mode(mode)
        result = cem_train(replace(cfg.train, seed=h.seed), cfg.env, fusion)
        summary = evaluate(result.best_params, cfg.env, fusion, seeds, record=True)
        row = summarize(fusion.mode.value, summary.result.traces, h.window)
        row.train_seed, row.eval_seeds = h.seed, label
        return ModeOutcome(row, result.best_params, result.curve)
    except Exception as exc:  # recorded per row; the other modes still run
        log.exception("mode %s failed", mode)
        name = mode if isinstance(mode, str) else FusionMode.parse(mode).value
        return ModeOutcome(ReportRow(name, train_seed=h.seed, eval_seeds=label, error=f"{type(exc).__name__}: {exc}"))


def _run_one(args):
    return train_and_evaluate(*args)


def run_ablation(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Train and evaluate every configured mode on shared seeds.

    With ``out_dir`` the report (``report.csv``, ``report.txt``), one
    learning curve and one parameter file per mode are written there.
    """
    jobs = [(cfg, m) for m in cfg.harness.modes]
    if cfg.harness.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.harness.workers, len(jobs))) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]
    report = ExperimentReport([o.row for o in outcomes])
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write(out / "report.csv", report.to_csv())
        atomic_write(out / "report.txt", report.to_table())
        for o in outcomes:
            if o.params is not None:
                atomic_write(out / f"curve_{o.row.mode}.csv", curve_csv(o.curve))
                tmp = out / f".{o.row.mode}.params.tmp"
                save_params(o.params, tmp)
                os.replace(tmp, out / f"params_{o.row.mode}.txt")
    return report
