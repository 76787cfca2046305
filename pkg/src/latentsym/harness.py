"""Experiment configs, the training loop, run reports and comparisons."""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import center_crop, random_crop_batch
from .groups import Group, act_on_image, resolve_mode
from .layers import Module, default_group
from .models import EquivariantClassifier, PlainClassifier, matched_plain_widths, parity_gap
from .optim import Adam
from .tasks import N_ROTATIONS, Corruption, PairDataset, make_rotation_pairs

PARITY_LIMIT = 0.10
METHODS = ("equivariant", "plain")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


# ---------------------------------------------------------------------------
# config

@dataclass
class TaskSpec:
    corruption: str = "none"
    view_angle: float = 45.0
    n_train: int = 100
    n_val: int = 100
    n_test: int = 100
    seed: int = 0
    data_path: str | None = None

    def corruption_spec(self) -> Corruption:
        return Corruption(self.corruption, self.view_angle)


@dataclass
class ModelSpec:
    kind: str = "equivariant"
    group: str = "C8"
    fields: list[int] = field(default_factory=lambda: [4, 8, 16, 16])
    mode: str = "auto"
    # plain models take widths parameter-matched to this group and these fields
    widths: list[int] | None = None
    # per-channel input shift and scale fitted on the training split
    standardize: bool = True


@dataclass
class AugmentSpec:
    random_crop: bool = True
    image_transform: str | None = None


@dataclass
class OptimSpec:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 100
    max_steps: int | None = None
    # "constant" or "cosine" (per-epoch decay to zero at max_epochs)
    schedule: str = "constant"
    # linear ramp over the first epochs; guards wide models against dead units early on
    warmup_epochs: int = 0


@dataclass
class ExperimentConfig:
    name: str = "run"
    task: TaskSpec = field(default_factory=TaskSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    seed: int = 0
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"name", "task", "model", "augment", "optim", "seed", "output_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            name=doc.get("name", "run"),
            task=TaskSpec(**doc.get("task", {})),
            model=ModelSpec(**doc.get("model", {})),
            augment=AugmentSpec(**doc.get("augment", {})),
            optim=OptimSpec(**doc.get("optim", {})),
            seed=int(doc.get("seed", 0)),
            output_dir=doc.get("output_dir"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Apply dotted-key overrides such as ``{"optim.lr": 1e-4}``."""
        doc = copy.deepcopy(self.to_dict())
        for key, value in overrides.items():
            target = doc
            *path, last = key.split(".")
            for part in path:
                target = target[part]
            if last not in target:
                raise KeyError(f"unknown config key {key!r}")
            target[last] = value
        return ExperimentConfig.from_dict(doc)

    @property
    def method(self) -> str:
        if self.model.kind == "equivariant":
            return "equivariant"
        return "plain+augment" if self.augment.image_transform else "plain"


# ---------------------------------------------------------------------------
# data and models

@lru_cache(maxsize=8)
def _cached_pairs(n_train, n_val, n_test, corruption, view_angle, seed) -> PairDataset:
    return make_rotation_pairs(n_train, Corruption(corruption, view_angle), seed, n_val=n_val, n_test=n_test)


def load_task(task: TaskSpec) -> PairDataset:
    if task.data_path:
        return PairDataset.load(task.data_path)
    return _cached_pairs(task.n_train, task.n_val, task.n_test, task.corruption, task.view_angle, task.seed)


def build_model(spec: ModelSpec, in_channels: int, rng: np.random.Generator) -> Module:
    if spec.kind == "equivariant":
        return EquivariantClassifier(default_group(spec.group), in_channels, tuple(spec.fields), N_ROTATIONS,
                                     rng, mode=spec.mode)
    if spec.kind == "plain":
        return PlainClassifier(in_channels, tuple(plain_widths(spec, in_channels)), N_ROTATIONS, rng)
    raise ValueError(f"unknown model kind {spec.kind!r}")


def plain_widths(spec: ModelSpec, in_channels: int) -> list[int]:
    if spec.widths:
        return list(spec.widths)
    group = default_group(spec.group)
    mode = resolve_mode(group, spec.mode)
    return list(matched_plain_widths(group.order, in_channels, spec.fields, N_ROTATIONS, mode))


def parameter_counts(spec: ModelSpec, in_channels: int) -> dict:
    """Free parameters of the configured model and of its counterpart."""
    rng = _rng(0, 0)
    equiv = build_model(ModelSpec("equivariant", spec.group, spec.fields, spec.mode), in_channels, rng)
    plain = build_model(ModelSpec("plain", spec.group, spec.fields, spec.mode, spec.widths), in_channels, rng)
    return {
        "equivariant": equiv.num_parameters(),
        "plain": plain.num_parameters(),
        "plain_widths": list(plain.widths),
        "parity_gap": parity_gap(equiv, plain),
    }


def image_transform_augment(batch: np.ndarray, group: Group, rng: np.random.Generator,
                            fill: float = 0.0) -> np.ndarray:
    """Replace every sample by ``g . sample`` for a uniformly drawn ``g``.

    A sample is the stacked pair [2*4, H, W]; one ``g`` moves all its channels,
    so both images of the pair are co-rotated and the label is kept.
    """
    out = np.empty_like(batch)
    picks = rng.integers(0, group.order, size=len(batch))
    for i, k in enumerate(picks):
        g = group.elements[int(k)]
        out[i] = act_on_image(g, batch[i], mode=resolve_mode([g]), fill=fill)
    return out


def channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation over samples and pixels."""
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def _eval_inputs(x: np.ndarray, crop: int) -> np.ndarray:
    return center_crop(x, (crop, crop)) if x.shape[-1] != crop else x


def evaluate(model: Module, x: np.ndarray, y: np.ndarray, batch_size: int = 128) -> tuple[float, float]:
    """(mean cross-entropy, accuracy)."""
    if len(x) == 0:
        return float("nan"), float("nan")
    loss, correct = 0.0, 0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        logits = model(xb)
        loss += float(ad.softmax_cross_entropy(logits, yb).data) * len(xb)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    return loss / len(x), correct / len(x)


# ---------------------------------------------------------------------------
# training

@dataclass
class RunReport:
    config: dict
    method: str
    epochs: list[dict]
    best_epoch: int
    test_accuracy: float
    test_loss: float
    parameters: dict
    seeds: dict
    stopped: str
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        doc = asdict(self)
        if not include_timing:
            doc.pop("wall_time")
        return doc

    def to_json(self) -> str:
        """Canonical bytes: wall time is kept out so reruns compare equal."""
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(self.to_json() + "\n")
        (directory / "timing.json").write_text(json.dumps({"wall_time": self.wall_time}) + "\n")
        return directory / "report.json"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        return cls(**{k: doc[k] for k in doc if k in cls.__dataclass_fields__})

    @classmethod
    def load(cls, path) -> "RunReport":
        path = Path(path)
        if path.is_dir():
            path = path / "report.json"
        return cls.from_dict(json.loads(path.read_text()))


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, report: RunReport):
        super().__init__(message)
        self.report = report


def scheduled_lr(opt: OptimSpec, epoch: int) -> float:
    """Learning rate for a 1-based epoch."""
    ramp = min(1.0, epoch / opt.warmup_epochs) if opt.warmup_epochs > 0 else 1.0
    if opt.schedule == "constant":
        return opt.lr * ramp
    if opt.schedule == "cosine":
        return opt.lr * ramp * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / opt.max_epochs))
    raise ValueError(f"unknown schedule {opt.schedule!r}")


def train(config: ExperimentConfig, dataset: PairDataset | None = None, verbose: bool = False) -> RunReport:
    """Train with early stopping on validation accuracy; test the best checkpoint once."""
    start = time.perf_counter()
    data = dataset if dataset is not None else load_task(config.task)
    crop = data.config.crop
    opt = config.optim
    x_train, y_train = data.split("train")
    x_val, y_val = data.split("val")
    x_val = _eval_inputs(x_val, crop)
    in_channels = x_train.shape[1]
    model = build_model(config.model, in_channels, _rng(config.seed, 1))
    if config.model.standardize:
        model.set_input_stats(*channel_stats(x_train))
    params = model.parameters()
    optimizer = Adam(params, lr=opt.lr)
    shuffle_rng = _rng(config.seed, 2)
    augment_rng = _rng(config.seed, 3)
    aug_group = default_group(config.augment.image_transform) if config.augment.image_transform else None
    counts = parameter_counts(config.model, in_channels)
    counts["model"] = model.num_parameters()

    history: list[dict] = []
    best = (-1.0, 0, [p.data.copy() for p in params])
    steps, stopped = 0, "max_epochs"

    def report(test_loss=float("nan"), test_acc=float("nan")) -> RunReport:
        return RunReport(config.to_dict(), config.method, history, best[1], test_acc, test_loss, counts,
                         {"train": config.seed, "data": config.task.seed}, stopped,
                         time.perf_counter() - start)

    # epoch 0 is the untrained model
    val_loss, val_acc = evaluate(model, x_val, y_val)
    history.append({"epoch": 0, "train_loss": None, "train_acc": None, "val_loss": val_loss, "val_acc": val_acc})
    best = (val_acc, 0, [p.data.copy() for p in params])
    for epoch in range(1, opt.max_epochs + 1):
        optimizer.state.lr = scheduled_lr(opt, epoch)
        if opt.max_steps is not None and steps >= opt.max_steps:
            stopped = "max_steps"
            break
        order = shuffle_rng.permutation(len(x_train))
        total_loss, correct = 0.0, 0
        for s in range(0, len(order), opt.batch_size):
            if opt.max_steps is not None and steps >= opt.max_steps:
                break
            idx = order[s:s + opt.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            if aug_group is not None:
                xb = image_transform_augment(xb, aug_group, augment_rng)
            if config.augment.random_crop:
                xb = random_crop_batch(xb, (crop, crop), augment_rng)
            else:
                xb = _eval_inputs(xb, crop)
            optimizer.zero_grad()
            logits = model(xb)
            loss = ad.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss.data):
                stopped = "diverged"
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", report())
            loss.backward()
            try:
                optimizer.step()
            except FloatingPointError as exc:
                stopped = "diverged"
                raise TrainingDiverged(str(exc), report()) from exc
            steps += 1
            total_loss += float(loss.data) * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
        val_loss, val_acc = evaluate(model, x_val, y_val)
        history.append({"epoch": epoch, "train_loss": total_loss / len(x_train), "train_acc": correct / len(x_train),
                        "val_loss": val_loss, "val_acc": val_acc})
        if verbose:
            print(f"{config.name} epoch {epoch}: train {correct / len(x_train):.3f} val {val_acc:.3f}")
        if val_acc > best[0]:
            best = (val_acc, epoch, [p.data.copy() for p in params])
        elif epoch - best[1] >= opt.patience:
            stopped = "patience"
            break
    for p, saved in zip(params, best[2]):
        p.data[...] = saved
    x_test, y_test = data.split("test")
    test_loss, test_acc = evaluate(model, _eval_inputs(x_test, crop), y_test)
    result = report(test_loss, test_acc)
    if config.output_dir:
        out = Path(config.output_dir)
        result.save(out)
        save_model(model, out / "model")
    return result


# ---------------------------------------------------------------------------
# model serialization

def save_model(model: Module, stem) -> tuple[Path, Path]:
    """Little-endian double blob plus a JSON manifest of names, shapes and layer metadata."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    for name, p in model.named_parameters():
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.size
        chunks.append(p.data.astype("<f8").ravel())
    blob = stem.with_suffix(".bin")
    manifest = stem.with_suffix(".json")
    (np.concatenate(chunks) if chunks else np.zeros(0)).astype("<f8").tofile(blob)
    manifest.write_text(json.dumps({"dtype": "<f8", "count": offset, "parameters": entries,
                                    "model": model.metadata()}, indent=1, sort_keys=True))
    return blob, manifest


def load_model_parameters(model: Module, stem) -> Module:
    stem = Path(stem)
    doc = json.loads(stem.with_suffix(".json").read_text())
    values = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    named = dict(model.named_parameters())
    for entry in doc["parameters"]:
        p = named[entry["name"]]
        if list(p.shape) != entry["shape"]:
            raise ValueError(f"shape mismatch for {entry['name']}: {p.shape} vs {entry['shape']}")
        p.data[...] = values[entry["offset"]:entry["offset"] + p.size].reshape(p.shape)
    stats = doc["model"].get("input_stats")
    if stats and hasattr(model, "set_input_stats"):
        model.set_input_stats(stats["shift"], stats["scale"])
    return model


# ---------------------------------------------------------------------------
# comparison

def _task_key(config: dict) -> tuple:
    task = dict(config["task"])
    task.pop("data_path", None)
    task.pop("n_train")
    task.pop("seed")
    return tuple(sorted(task.items()))


def summarize(reports: list[RunReport]) -> list[dict]:
    """Rows (method, n_train, mean, stderr, n_seeds), sorted by method then size."""
    if len(reports) < 2:
        raise ValueError("comparison needs at least two run reports")
    keys = {_task_key(r.config) for r in reports}
    if len(keys) > 1:
        raise ValueError("run reports come from different task specs")
    groups: dict[tuple[str, int], list[float]] = {}
    for r in reports:
        groups.setdefault((r.method, int(r.config["task"]["n_train"])), []).append(float(r.test_accuracy))
    rows = []
    for (method, n), accs in sorted(groups.items()):
        a = np.array(accs)
        stderr = float(a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0
        rows.append({"method": method, "n_train": n, "mean": float(a.mean()), "stderr": stderr,
                     "n_seeds": len(a), "accuracies": accs})
    return rows


def check_orderings(rows: list[dict], orderings: list[str]) -> list[dict]:
    """Evaluate ``"a>b"`` statements per training size present for both methods."""
    results = []
    for spec in orderings:
        left, right = (s.strip() for s in spec.split(">"))
        sizes = sorted({r["n_train"] for r in rows})
        for n in sizes:
            a = next((r for r in rows if r["method"] == left and r["n_train"] == n), None)
            b = next((r for r in rows if r["method"] == right and r["n_train"] == n), None)
            if a is None or b is None:
                continue
            results.append({"ordering": spec, "n_train": n, "left": a["mean"], "right": b["mean"],
                            "holds": bool(a["mean"] > b["mean"])})
    return results


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "n_train", "mean", "stderr", "n_seeds"])
    for r in rows:
        writer.writerow([r["method"], r["n_train"], repr(r["mean"]), repr(r["stderr"]), r["n_seeds"]])
    return buf.getvalue()


_PALETTE = {"equivariant": "#1f4e9c", "plain": "#2a8c3a", "plain+augment": "#c0392b"}


def learning_curves_svg(reports: list[RunReport], width: int = 480, height: int = 300) -> str:
    """Validation accuracy per epoch, one polyline per run."""
    pad = 40
    max_epoch = max((len(r.epochs) - 1 for r in reports), default=1) or 1
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">validation accuracy</text>',
    ]
    for r in reports:
        pts = []
        for e in r.epochs:
            x = pad + (width - 2 * pad) * e["epoch"] / max_epoch
            y = height - pad - (height - 2 * pad) * float(e["val_acc"])
            pts.append(f"{x:.1f},{y:.1f}")
        color = _PALETTE.get(r.method, "#555555")
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{" ".join(pts)}"/>')
    for i, (method, color) in enumerate(_PALETTE.items()):
        lines.append(f'<text x="{width - pad - 110}" y="{pad + 14 * i}" font-size="11" fill="{color}">{method}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def compare(reports: list[RunReport], out_dir=None, orderings: list[str] = (), svg: bool = True) -> dict:
    """Aggregate reports into a table and summary; ``summary["ok"]`` is False if an ordering fails."""
    rows = summarize(reports)
    checks = check_orderings(rows, list(orderings))
    summary = {
        "rows": rows,
        "orderings": checks,
        "ok": all(c["holds"] for c in checks),
        "parity": [{"method": r.method, "seed": r.seeds["train"], "parity_gap": r.parameters["parity_gap"]}
                   for r in reports],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(rows_to_csv(rows))
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        if svg:
            (out / "curves.svg").write_text(learning_curves_svg(reports))
    return summary


def comparison_configs(corruption: str, n_train: int, seeds=(0, 1, 2, 3), group: str = "C8",
                       fields=(4, 8, 16, 16), augment_group: str | None = "C8", optim: OptimSpec | None = None,
                       **task_kwargs) -> list[ExperimentConfig]:
    """Equivariant, plain and plain+augmentation configs over the given seeds."""
    configs = []
    optim = optim or OptimSpec()
    for seed in seeds:
        task = TaskSpec(corruption=corruption, n_train=n_train, seed=seed, **task_kwargs)
        model = ModelSpec("equivariant", group, list(fields))
        configs.append(ExperimentConfig(f"equivariant-{corruption}-n{n_train}-s{seed}", task, model,
                                        optim=copy.deepcopy(optim), seed=seed))
        plain = ModelSpec("plain", group, list(fields))
        configs.append(ExperimentConfig(f"plain-{corruption}-n{n_train}-s{seed}", copy.deepcopy(task), plain,
                                        optim=copy.deepcopy(optim), seed=seed))
        if augment_group:
            configs.append(ExperimentConfig(f"plain+augment-{corruption}-n{n_train}-s{seed}", copy.deepcopy(task),
                                            copy.deepcopy(plain), AugmentSpec(True, augment_group),
                                            copy.deepcopy(optim), seed=seed))
    return configs
