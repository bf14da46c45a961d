"""Run-log data model and on-disk manifest format.

A run is stored as one JSON manifest plus two sibling CSV files::

    run.json        {"run_id": ..., "arch": {...}, "hparams": {...}, ...}
    run.steps.csv   step,tokens,train_loss
    run.vals.csv    tokens,loss,subsample_std

Token counts are cumulative. Unknown manifest keys are ignored with a warning.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

logger = logging.getLogger(__name__)

DEFAULT_VOCAB = 50432
DEFAULT_SEQ_LEN = 2048
DEFAULT_LOG_INTERVAL = 20


class IngestError(ValueError):
    """Malformed or inconsistent run data."""


class ScheduleKind(str, enum.Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


@dataclass(frozen=True)
class ModelArch:
    depth: int
    width: int
    vocab: int = DEFAULT_VOCAB
    seq_len: int = DEFAULT_SEQ_LEN
    heads: int = 4

    def __post_init__(self):
        for name in ("depth", "width", "vocab", "seq_len", "heads"):
            if int(getattr(self, name)) < 1:
                raise IngestError(f"arch.{name} must be positive, got {getattr(self, name)}")
        if self.width % self.heads:
            raise IngestError(f"width {self.width} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class Schedule:
    kind: ScheduleKind = ScheduleKind.CONSTANT
    warmup_tokens: int = 0
    decay_end_tokens: Optional[int] = None
    final_lr_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.warmup_tokens < 0:
            raise IngestError("schedule.warmup_tokens must be nonnegative")
        if self.kind is ScheduleKind.COSINE:
            if self.decay_end_tokens is None or self.decay_end_tokens <= 0:
                raise IngestError("cosine schedule requires positive decay_end_tokens")
            if self.warmup_tokens >= self.decay_end_tokens:
                raise IngestError("cosine schedule requires warmup_tokens < decay_end_tokens")
            if not 0.0 <= self.final_lr_fraction <= 1.0:
                raise IngestError("schedule.final_lr_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float
    batch_size_seqs: int
    beta2: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise IngestError("hparams.lr must be positive")
        if self.batch_size_seqs < 1:
            raise IngestError("hparams.batch_size_seqs must be positive")
        if not 0.0 < self.beta2 < 1.0:
            raise IngestError("hparams.beta2 must lie in (0, 1)")


@dataclass(frozen=True)
class StepRecord:
    step: int
    tokens: int
    train_loss: float


@dataclass(frozen=True)
class ValRecord:
    tokens: int
    loss: float
    subsample_std: Optional[float] = None


@dataclass(frozen=True)
class TrainingRun:
    run_id: str
    dataset: str
    arch: ModelArch
    hparams: HyperParams
    schedule: Schedule
    steps: tuple[StepRecord, ...]
    vals: tuple[ValRecord, ...] = ()
    log_interval: int = DEFAULT_LOG_INTERVAL

    @property
    def batch_tokens(self) -> int:
        return self.hparams.batch_size_seqs * self.arch.seq_len

    @property
    def total_tokens(self) -> int:
        return self.steps[-1].tokens

    def validate(self) -> "TrainingRun":
        if not self.steps:
            raise IngestError(f"run {self.run_id!r}: no step records")
        if self.log_interval < 1:
            raise IngestError(f"run {self.run_id!r}: log_interval must be positive")
        bt = self.batch_tokens
        last = len(self.steps) - 1
        for i, rec in enumerate(self.steps):
            if rec.step < 0 or rec.tokens < 0:
                raise IngestError(f"negative step/tokens at record {i}")
            if not math.isfinite(rec.train_loss) or rec.train_loss < 0:
                raise IngestError(f"invalid train_loss at record {i}")
            if i == 0:
                continue
            prev = self.steps[i - 1]
            if rec.tokens <= prev.tokens:
                raise IngestError(f"non-monotone tokens at record {i}")
            if rec.step <= prev.step:
                raise IngestError(f"non-monotone step at record {i}")
            dstep = rec.step - prev.step
            if rec.tokens - prev.tokens != bt * dstep:
                raise IngestError(
                    f"token delta inconsistent with batch size at record {i}: "
                    f"{rec.tokens - prev.tokens} != {bt} * {dstep}"
                )
            # first and last intervals may be partial
            if dstep != self.log_interval and i not in (1, last):
                raise IngestError(f"step delta {dstep} != log_interval {self.log_interval} at record {i}")
        horizon = self.total_tokens
        for i, v in enumerate(self.vals):
            if not math.isfinite(v.loss) or v.loss < 0:
                raise IngestError(f"invalid validation loss at val record {i}")
            if v.tokens < 0 or v.tokens > horizon:
                raise IngestError(f"validation tokens outside run duration at val record {i}")
            if v.subsample_std is not None and v.subsample_std < 0:
                raise IngestError(f"negative subsample_std at val record {i}")
            if i and v.tokens <= self.vals[i - 1].tokens:
                raise IngestError(f"non-monotone validation tokens at val record {i}")
        return self


_MANIFEST_KEYS = {
    "run_id", "dataset", "arch", "hparams", "schedule", "log_interval", "steps_file", "vals_file",
}


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise IngestError(f"missing required field {where}{key}")
    return obj[key]


def _parse_manifest(raw: dict, source: str) -> dict:
    extra = sorted(set(raw) - _MANIFEST_KEYS)
    if extra:
        logger.warning("%s: ignoring unknown manifest keys %s", source, extra)
    arch = _require(raw, "arch", "")
    hp = _require(raw, "hparams", "")
    sch = raw.get("schedule", {}) or {}
    try:
        return dict(
            run_id=str(_require(raw, "run_id", "")),
            dataset=str(raw.get("dataset", "")),
            arch=ModelArch(
                depth=int(_require(arch, "depth", "arch.")),
                width=int(_require(arch, "width", "arch.")),
                vocab=int(arch.get("vocab", DEFAULT_VOCAB)),
                seq_len=int(arch.get("seq_len", DEFAULT_SEQ_LEN)),
                heads=int(arch.get("heads", 4)),
            ),
            hparams=HyperParams(
                learning_rate=float(_require(hp, "lr", "hparams.")),
                batch_size_seqs=int(_require(hp, "batch_size_seqs", "hparams.")),
                beta2=float(hp.get("beta2", 0.95)),
                seed=int(hp.get("seed", 0)),
            ),
            schedule=Schedule(
                kind=ScheduleKind(sch.get("kind", "constant")),
                warmup_tokens=int(sch.get("warmup_tokens", 0)),
                decay_end_tokens=None if sch.get("decay_end_tokens") is None else int(sch["decay_end_tokens"]),
                final_lr_fraction=float(sch.get("final_lr_fraction", 0.0)),
            ),
            log_interval=int(raw.get("log_interval", DEFAULT_LOG_INTERVAL)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, IngestError):
            raise
        raise IngestError(f"{source}: {exc}") from exc


def _read_steps(path: Path) -> tuple[StepRecord, ...]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"step", "tokens", "train_loss"}:
            raise IngestError(f"{path}: expected header step,tokens,train_loss")
        for i, row in enumerate(reader):
            try:
                out.append(StepRecord(int(row["step"]), int(row["tokens"]), float(row["train_loss"])))
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{path}: malformed step record {i}: {exc}") from exc
    return tuple(out)


def _read_vals(path: Path) -> tuple[ValRecord, ...]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"tokens", "loss"}:
            raise IngestError(f"{path}: expected header tokens,loss,subsample_std")
        for i, row in enumerate(reader):
            try:
                std = row.get("subsample_std")
                out.append(ValRecord(int(row["tokens"]), float(row["loss"]),
                                     float(std) if std not in (None, "") else None))
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{path}: malformed val record {i}: {exc}") from exc
    return tuple(out)


def load_run(manifest_path) -> TrainingRun:
    """Load and validate a single run from its JSON manifest."""
    path = Path(manifest_path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise IngestError(f"{path}: manifest must be a JSON object")
    fields = _parse_manifest(raw, str(path))
    steps = _read_steps(path.parent / _require(raw, "steps_file", ""))
    vals_file = raw.get("vals_file")
    vals = _read_vals(path.parent / vals_file) if vals_file else ()
    return TrainingRun(steps=steps, vals=vals, **fields).validate()


def _fmt(x: float) -> str:
    return repr(float(x))


def write_run(run: TrainingRun, directory, stem: Optional[str] = None) -> Path:
    """Write ``run`` in manifest format; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or run.run_id
    steps_name, vals_name = f"{stem}.steps.csv", f"{stem}.vals.csv"
    sch = run.schedule
    manifest = {
        "run_id": run.run_id,
        "dataset": run.dataset,
        "arch": {"depth": run.arch.depth, "width": run.arch.width, "vocab": run.arch.vocab,
                 "seq_len": run.arch.seq_len, "heads": run.arch.heads},
        "hparams": {"lr": run.hparams.learning_rate, "batch_size_seqs": run.hparams.batch_size_seqs,
                    "beta2": run.hparams.beta2, "seed": run.hparams.seed},
        "schedule": {"kind": sch.kind.value, "warmup_tokens": sch.warmup_tokens,
                     "decay_end_tokens": sch.decay_end_tokens,
                     "final_lr_fraction": sch.final_lr_fraction},
        "log_interval": run.log_interval,
        "steps_file": steps_name,
        "vals_file": vals_name,
    }
    with open(directory / steps_name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "tokens", "train_loss"])
        for r in run.steps:
            w.writerow([r.step, r.tokens, _fmt(r.train_loss)])
    with open(directory / vals_name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tokens", "loss", "subsample_std"])
        for v in run.vals:
            w.writerow([v.tokens, _fmt(v.loss), "" if v.subsample_std is None else _fmt(v.subsample_std)])
    out = directory / f"{stem}.json"
    with open(out, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def find_manifests(dir_path) -> list[Path]:
    root = Path(dir_path)
    return sorted(p for p in root.rglob("*.json") if _looks_like_manifest(p))


def _looks_like_manifest(p: Path) -> bool:
    try:
        with open(p) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(raw, dict) and "run_id" in raw and "steps_file" in raw


def load_sweep(dir_path) -> list[TrainingRun]:
    """Load every manifest below ``dir_path``; run ids must be unique."""
    root = Path(dir_path)
    if not root.is_dir():
        raise IngestError(f"not a directory: {root}")
    paths = find_manifests(root)
    if not paths:
        raise IngestError(f"no run manifests found in {root}")
    runs: list[TrainingRun] = []
    seen: dict[str, Path] = {}
    for p in paths:
        run = load_run(p)
        if run.run_id in seen:
            raise IngestError(f"duplicate run_id {run.run_id!r} in {seen[run.run_id]} and {p}")
        seen[run.run_id] = p
        runs.append(run)
    return runs


def make_run(run_id: str, arch: ModelArch, hparams: HyperParams, schedule: Schedule,
             steps: Sequence[int], losses: Sequence[float], vals: Sequence[ValRecord] = (),
             dataset: str = "synthetic", log_interval: int = DEFAULT_LOG_INTERVAL) -> TrainingRun:
    """Build a validated run from a step index list and per-step losses."""
    bt = hparams.batch_size_seqs * arch.seq_len
    records = tuple(StepRecord(int(s), int(s) * bt, float(l)) for s, l in zip(steps, losses))
    return TrainingRun(run_id, dataset, arch, hparams, schedule, records, tuple(vals),
                       log_interval).validate()


__all__ = [
    "IngestError", "ScheduleKind", "ModelArch", "Schedule", "HyperParams", "StepRecord",
    "ValRecord", "TrainingRun", "load_run", "write_run", "load_sweep", "find_manifests", "make_run",
]
