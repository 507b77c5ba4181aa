"""Daily spatiotemporal datasets, the recurrent graph collision classifier,
imbalance-aware evaluation, and per-segment risk prediction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date as date_type
from datetime import datetime, timedelta

import numpy as np

from .neural import (
    Adam,
    RecurrentGraphModel,
    load_checkpoint,
    save_checkpoint,
    tensor,
    weighted_bce,
)
from .roadnet import RoadNetwork
from .routing import TripRecord, assign_trips

LOG = logging.getLogger(__name__)

# Fixed feature vocabulary: static block, dynamic block, day block.
STATIC_FEATURES = [
    "length_m", "width_m", "lanes", "speed_limit_kmh",
    "bike_lane", "border", "double_level", "curve_radius_m",
]
DYNAMIC_FEATURES = ["car_volume", "travel_time_s"]
DAY_FEATURES = ["precip_mm", "snow_mm", "temp_c"] + [f"dow_{i}" for i in range(7)]
FEATURE_NAMES = STATIC_FEATURES + DYNAMIC_FEATURES + DAY_FEATURES
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

WEATHER_HEADER = ["date", "precip_mm", "snow_mm", "temp_c"]
COLLISIONS_HEADER = ["date", "segment_id", "count"]


class CollisionError(Exception):
    pass


class MissingDay(CollisionError):
    pass


class EmptyDataset(CollisionError):
    pass


class Diverged(CollisionError):
    pass


@dataclass(frozen=True)
class Weather:
    precip_mm: float
    snow_mm: float
    temp_c: float


def static_feature_matrix(net: RoadNetwork) -> np.ndarray:
    rows = []
    for sid in net.dual.order:
        s = net.segments[sid]
        rows.append([
            s.length_m, s.width_m, float(s.lanes), s.speed_limit_kmh,
            float(s.bike_lane), float(s.border), float(s.double_level),
            s.curve_radius_m if s.curve_radius_m is not None else 0.0,
        ])
    return np.array(rows, dtype=np.float64)


def build_day_features(
    net: RoadNetwork,
    volumes: dict[int, float],
    weather: Weather,
    day: date_type,
    static: np.ndarray | None = None,
) -> np.ndarray:
    """Raw (unstandardized) |V| x F feature matrix for one day.

    Vertex order follows the dual graph; the day block is broadcast to all
    segments.
    """
    if static is None:
        static = static_feature_matrix(net)
    n = len(net.dual.order)
    dynamic = np.zeros((n, 2))
    for i, sid in enumerate(net.dual.order):
        dynamic[i, 0] = volumes.get(sid, 0.0)
        dynamic[i, 1] = net.travel_times[sid]
    day_block = np.zeros((n, 10))
    day_block[:, 0] = weather.precip_mm
    day_block[:, 1] = weather.snow_mm
    day_block[:, 2] = weather.temp_c
    day_block[:, 3 + day.weekday()] = 1.0
    return np.concatenate([static, dynamic, day_block], axis=1)


# --- corpus -----------------------------------------------------------------

@dataclass
class Corpus:
    """A network plus aligned per-day traffic, weather, and labels."""

    net: RoadNetwork
    dates: list[date_type]
    volumes: dict[date_type, dict[int, float]]
    weather: dict[date_type, Weather]
    labels: dict[date_type, np.ndarray]            # 0/1 per dual-order vertex
    trips: dict[date_type, list[TripRecord]] = field(default_factory=dict)

    def base_features(self, day: date_type, static: np.ndarray | None = None) -> np.ndarray:
        return build_day_features(self.net, self.volumes[day], self.weather[day], day, static)


def load_weather(path: str) -> dict[date_type, Weather]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != WEATHER_HEADER:
            raise CollisionError(f"weather header mismatch: expected {','.join(WEATHER_HEADER)}")
        for row in reader:
            day = datetime.strptime(row["date"], "%Y-%m-%d").date()
            out[day] = Weather(
                precip_mm=float(row["precip_mm"]),
                snow_mm=float(row["snow_mm"]),
                temp_c=float(row["temp_c"]),
            )
    return out


def load_collisions(path: str, net: RoadNetwork) -> dict[date_type, np.ndarray]:
    index = net.dual.index
    out: dict[date_type, np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLLISIONS_HEADER:
            raise CollisionError(f"collisions header mismatch: expected {','.join(COLLISIONS_HEADER)}")
        for row in reader:
            day = datetime.strptime(row["date"], "%Y-%m-%d").date()
            sid = int(row["segment_id"])
            if sid not in index:
                raise CollisionError(f"collision references unknown segment {sid}")
            labels = out.setdefault(day, np.zeros(len(index)))
            if int(row["count"]) >= 1:
                labels[index[sid]] = 1.0
    return out


def build_corpus(
    net: RoadNetwork,
    trips: list[TripRecord],
    weather: dict[date_type, Weather],
    collisions: dict[date_type, np.ndarray],
) -> Corpus:
    """Assemble a day-indexed corpus; traffic is assigned per day from trips."""
    by_day: dict[date_type, list[TripRecord]] = {}
    for trip in trips:
        by_day.setdefault(trip.date, []).append(trip)
    dates = sorted(weather)
    if not dates:
        raise EmptyDataset("no weather days")
    n = len(net.dual.order)
    volumes = {}
    labels = {}
    for day in dates:
        day_trips = by_day.get(day, [])
        volumes[day] = assign_trips(net, day_trips).volumes
        labels[day] = collisions.get(day, np.zeros(n))
    return Corpus(net=net, dates=dates, volumes=volumes, weather=weather,
                  labels=labels, trips=by_day)


# --- dataset ------------------------------------------------------------------

@dataclass
class Sample:
    dates: tuple[date_type, ...]
    features: np.ndarray       # (T, V, F) raw
    labels: np.ndarray         # (V,) final-day labels


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class Dataset:
    train: list[Sample]
    test: list[Sample]
    scaler: Scaler
    window: int
    feature_names: list[str] = field(default_factory=lambda: list(FEATURE_NAMES))


def build_dataset(corpus: Corpus, window: int = 7, test_fraction: float = 0.25) -> Dataset:
    """Sliding windows over consecutive days with a chronological train/test split.

    Standardization is fit on the training windows only. Every (day, segment)
    pair in range becomes a labeled example; nothing is subsampled.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    dates = corpus.dates
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise MissingDay(f"gap between {a} and {b}")
    if len(dates) < window:
        raise EmptyDataset(f"{len(dates)} days cannot fill a {window}-day window")
    static = static_feature_matrix(corpus.net)
    feats = {day: corpus.base_features(day, static) for day in dates}
    samples = []
    for i in range(len(dates) - window + 1):
        span = tuple(dates[i:i + window])
        samples.append(Sample(
            dates=span,
            features=np.stack([feats[d] for d in span]),
            labels=corpus.labels[span[-1]].copy(),
        ))
    n_train = len(samples) - int(round(test_fraction * len(samples)))
    n_train = max(1, min(n_train, len(samples) - 1)) if len(samples) > 1 else 1
    train, test = samples[:n_train], samples[n_train:]
    stacked = np.concatenate([s.features.reshape(-1, len(FEATURE_NAMES)) for s in train])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-9] = 1.0
    return Dataset(train=train, test=test, scaler=Scaler(mean, std), window=window)


# --- metrics -------------------------------------------------------------------

@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    recall_pos: float
    recall_neg: float
    f1: float
    macro_recall: float

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "recall_pos": self.recall_pos, "recall_neg": self.recall_neg,
            "f1": self.f1, "macro_recall": self.macro_recall,
        }


def confusion_report(tp: int, fp: int, tn: int, fn: int) -> EvalReport:
    recall_pos = tp / (tp + fn) if tp + fn else 0.0
    recall_neg = tn / (tn + fp) if tn + fp else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = (2 * precision * recall_pos / (precision + recall_pos)
          if precision + recall_pos else 0.0)
    return EvalReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        recall_pos=recall_pos, recall_neg=recall_neg, f1=f1,
        macro_recall=(recall_pos + recall_neg) / 2.0,
    )


def report_from_predictions(y_true: np.ndarray, y_prob: np.ndarray,
                            threshold: float = 0.5) -> EvalReport:
    pred = y_prob >= threshold
    truth = y_true >= 0.5
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return confusion_report(tp, fp, tn, fn)


# --- model wrapper and training --------------------------------------------------

@dataclass
class TrainConfig:
    hidden_dim: int = 32
    conv_layers: int = 2
    epochs: int = 60
    lr: float = 8e-3
    batch_size: int = 8
    pos_weight: float | None = None    # default: N_neg / N_pos from training labels


class CollisionModel:
    """Trained recurrent graph classifier plus its feature standardization.

    pos_weight is the class weight the model was trained with; the weighted
    loss shifts the learned logits by about ln(pos_weight), so calibrated
    probabilities come from logits minus that shift.
    """

    def __init__(self, core: RecurrentGraphModel, scaler: Scaler, window: int,
                 pos_weight: float = 1.0):
        self.core = core
        self.scaler = scaler
        self.window = window
        self.pos_weight = pos_weight

    def predict_risk(self, window_features: np.ndarray, dual) -> np.ndarray:
        """Per-segment collision probability from a raw (T, V, F) day window."""
        if window_features.ndim != 3:
            raise ValueError("expected a (T, V, F) window")
        steps = [tensor(self.scaler.apply(x)) for x in window_features]
        return self.core.forward_probs(steps, dual).data

    def predict_batch(self, windows: np.ndarray, dual) -> np.ndarray:
        """(B, T, V, F) raw windows -> (B, V) probabilities."""
        steps = [tensor(self.scaler.apply(windows[:, t])) for t in range(windows.shape[1])]
        return self.core.forward_probs(steps, dual).data

    def save(self, path: str) -> None:
        meta = {
            "window": self.window,
            "pos_weight": self.pos_weight,
            "in_features": self.core.in_features,
            "hidden_dim": self.core.hidden_dim,
            "conv_layers": len(self.core.encoder),
            "feature_names": list(FEATURE_NAMES),
            "scaler_mean": self.scaler.mean.tolist(),
            "scaler_std": self.scaler.std.tolist(),
        }
        save_checkpoint(path, "collision", meta,
                        [(name, p.data) for name, p in self.core.named_parameters()])

    @classmethod
    def load(cls, path: str) -> "CollisionModel":
        kind, meta, params = load_checkpoint(path)
        if kind != "collision":
            raise CollisionError(f"{path}: checkpoint kind {kind!r}, expected 'collision'")
        core = RecurrentGraphModel(
            in_features=meta["in_features"],
            hidden_dim=meta["hidden_dim"],
            conv_layers=meta["conv_layers"],
        )
        for name, p in core.named_parameters():
            p.data = params[name]
        scaler = Scaler(np.array(meta["scaler_mean"]), np.array(meta["scaler_std"]))
        return cls(core, scaler, meta["window"], meta.get("pos_weight", 1.0))


def train_collision(
    dataset: Dataset,
    net: RoadNetwork,
    config: TrainConfig | None = None,
    seed: int = 0,
) -> tuple[CollisionModel, list[float]]:
    """Train with weighted cross entropy; deterministic for a fixed seed."""
    config = config or TrainConfig()
    if not dataset.train:
        raise EmptyDataset("no training windows")
    labels = np.stack([s.labels for s in dataset.train])
    n_pos = float(labels.sum())
    n_neg = float(labels.size - n_pos)
    pos_weight = config.pos_weight
    if pos_weight is None:
        pos_weight = n_neg / n_pos if n_pos > 0 else 1.0
    core = RecurrentGraphModel(
        in_features=len(FEATURE_NAMES),
        hidden_dim=config.hidden_dim,
        conv_layers=config.conv_layers,
        seed=seed,
    )
    model = CollisionModel(core, dataset.scaler, dataset.window, pos_weight)
    optimizer = Adam(core.parameters(), lr=config.lr)
    rng = np.random.default_rng(seed)
    dual = net.dual
    history: list[float] = []
    scaled = np.stack([dataset.scaler.apply(s.features.reshape(-1, len(FEATURE_NAMES)))
                       .reshape(s.features.shape) for s in dataset.train])
    all_labels = labels
    n = len(dataset.train)
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            windows = scaled[batch_idx]            # (B, T, V, F)
            y = all_labels[batch_idx]              # (B, V)
            steps = [tensor(windows[:, t]) for t in range(dataset.window)]
            probs = core.forward_probs(steps, dual)
            loss = weighted_bce(probs, y, pos_weight)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.data) * len(batch_idx)
        epoch_loss /= n
        if not math.isfinite(epoch_loss):
            raise Diverged(f"epoch loss {epoch_loss}")
        history.append(epoch_loss)
    return model, history


def evaluate(model: CollisionModel, samples: list[Sample], net: RoadNetwork,
             threshold: float = 0.5) -> EvalReport:
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    probs = []
    truths = []
    for s in samples:
        probs.append(model.predict_risk(s.features, net.dual))
        truths.append(s.labels)
    return report_from_predictions(np.concatenate(truths), np.concatenate(probs), threshold)


def predict_risk(model: CollisionModel, window_features: np.ndarray, net: RoadNetwork) -> np.ndarray:
    return model.predict_risk(window_features, net.dual)


def feature_importance(
    model: CollisionModel,
    samples: list[Sample],
    net: RoadNetwork,
    steps: int = 64,
    max_samples: int | None = None,
) -> np.ndarray:
    """Mean signed attribution per feature via integrated gradients.

    Baseline is the per-feature training mean (zero in standardized space);
    negative values decrease predicted risk. Attribution runs on the
    calibrated head (logits minus ln pos_weight): with rebalanced logits the
    sigmoid saturates on high-risk segments and the deviation-weighted mean
    flips sign, while calibrated probabilities keep the high-risk rows
    dominant.
    """
    from .neural import integrated_gradients

    dual = net.dual
    chosen = samples if max_samples is None else samples[:max_samples]
    if not chosen:
        raise EmptyDataset("no samples for attribution")
    shift = math.log(model.pos_weight) if model.pos_weight > 0 else 0.0
    totals = np.zeros(len(FEATURE_NAMES))
    for s in chosen:
        std_steps = [model.scaler.apply(x) for x in s.features]
        baselines = [np.zeros_like(x) for x in std_steps]

        def f(leafs):
            return (model.core.forward(leafs, dual) - shift).sigmoid().sum()

        attrs = integrated_gradients(f, std_steps, baselines, steps=steps)
        totals += np.sum([a.sum(axis=0) for a in attrs], axis=0)
    return totals / len(chosen)
