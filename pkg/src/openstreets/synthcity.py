"""Deterministic generator of Manhattan-like synthetic grids, trips, weather,
and collision labels drawn from a known logistic rule.

Because labels come from a logistic rule over the same feature vocabulary the
models see, learnability is guaranteed and test thresholds can be anchored to
the rule's own Bayes classifier instead of magic numbers.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .collision import FEATURE_INDEX, Weather, build_corpus, Corpus
from .roadnet import CSV_HEADER, RoadNetwork, SegmentRecord, parse_segment_row
from .routing import TripRecord, assign_trips

LAT0 = 40.72
LON0 = -74.00
M_PER_DEG_LAT = 111_320.0
AVENUE_BLOCK_M = 80.0     # north-south segment length
STREET_BLOCK_M = 250.0    # east-west segment length

SCENARIOS = ("plain", "detour_magnet")


class ScenarioUnsupported(Exception):
    pass


@dataclass(frozen=True)
class RiskCoefficients:
    """Logistic label rule: eta = intercept + speed*z_speed + length*z_length
    + curve*z_curve - cars*z_cars + precip*z_precip, label ~ Bernoulli(sigmoid(eta))."""

    intercept: float = -15.0
    speed: float = 5.5
    length: float = 2.2
    curve: float = 4.2
    cars: float = 1.4
    precip: float = 2.6

    RULE_FEATURES = ("speed_limit_kmh", "length_m", "curve_radius_m", "car_volume", "precip_mm")


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 8
    cols: int = 12
    days: int = 60
    trips_per_day: int = 400
    seed: int = 0
    coefficients: RiskCoefficients = field(default_factory=RiskCoefficients)
    scenario: str = "plain"
    start: date = date(2024, 1, 1)

    def __post_init__(self):
        if self.rows < 3 or self.cols < 3:
            raise ValueError("grid must be at least 3x3")
        if self.days < 10:
            raise ValueError("need at least 10 days")
        if self.scenario not in SCENARIOS:
            raise ScenarioUnsupported(self.scenario)


def _node(cfg: SynthConfig, r: int, c: int) -> int:
    return r * cfg.cols + c

def _coords(r: int, c: int) -> tuple[float, float]:
    lat = LAT0 + r * AVENUE_BLOCK_M / M_PER_DEG_LAT
    lon = LON0 + c * STREET_BLOCK_M / (M_PER_DEG_LAT * math.cos(math.radians(LAT0)))
    return lat, lon


def _magnet_position(cfg: SynthConfig) -> tuple[int, int]:
    # central east-west street segment: between (r, c) and (r, c+1)
    return cfg.rows // 2, cfg.cols // 2 - 1


def gen_network(cfg: SynthConfig) -> str:
    """segments.csv text: alternating one-way avenues (fast, wide) crossing
    two-way streets; border and double-level flags on the perimeter."""
    rows: list[list[str]] = []
    sid = 0
    magnet_r, magnet_c = _magnet_position(cfg) if cfg.scenario == "detour_magnet" else (-1, -1)

    def emit(sid, u, v, ul, vl, length, width, lanes, speed, one_way,
             bike, border, double, curve):
        rows.append([
            str(sid), str(u), str(v),
            f"{ul[0]:.6f}", f"{ul[1]:.6f}", f"{vl[0]:.6f}", f"{vl[1]:.6f}",
            f"{length:.1f}", f"{width:.1f}", str(lanes), f"{speed:.1f}",
            str(one_way), str(bike), str(border), str(double),
            "" if curve is None else f"{curve:.0f}",
        ])

    # east-west streets, two-way
    for r in range(cfg.rows):
        for c in range(cfg.cols - 1):
            sid += 1
            border = 1 if r in (0, cfg.rows - 1) else 0
            curve = 150.0 if border else None
            width, lanes, speed = 9.0, 1, 25.0
            if (r, c) == (magnet_r, magnet_c):
                # the detour magnet: fast, narrow, sweeping curve
                width, speed, curve = 6.0, 65.0, 500.0
            emit(sid, _node(cfg, r, c), _node(cfg, r, c + 1),
                 _coords(r, c), _coords(r, c + 1), STREET_BLOCK_M, width, lanes,
                 speed, 0, 1 if r % 3 == 1 else 0, border, 0, curve)
    # north-south avenues, one-way, direction alternates by column
    for c in range(cfg.cols):
        for r in range(cfg.rows - 1):
            sid += 1
            border = 1 if c in (0, cfg.cols - 1) else 0
            if c % 2 == 0:
                u, v = _node(cfg, r, c), _node(cfg, r + 1, c)
                ul, vl = _coords(r, c), _coords(r + 1, c)
            else:
                u, v = _node(cfg, r + 1, c), _node(cfg, r, c)
                ul, vl = _coords(r + 1, c), _coords(r, c)
            emit(sid, u, v, ul, vl, AVENUE_BLOCK_M, 15.0, 3, 50.0, 1, 0,
                 border, border, None)

    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\r\n")
    for row in rows:
        buf.write(",".join(row) + "\r\n")
    return buf.getvalue()


def build_network(cfg: SynthConfig) -> RoadNetwork:
    text = gen_network(cfg)
    lines = text.splitlines()
    records: list[SegmentRecord] = []
    for i, line in enumerate(lines[1:], start=2):
        values = dict(zip(CSV_HEADER, line.split(",")))
        records.append(parse_segment_row(values, i))
    return RoadNetwork(records)


@dataclass
class SynthCorpus:
    cfg: SynthConfig
    net: RoadNetwork
    trips_csv: str
    weather_csv: str
    collisions_csv: str
    answer_key: dict
    corpus: Corpus


def magnet_segment_id(cfg: SynthConfig, net: RoadNetwork) -> int | None:
    if cfg.scenario != "detour_magnet":
        return None
    r, c = _magnet_position(cfg)
    u, v = _node(cfg, r, c), _node(cfg, r, c + 1)
    for sid in sorted(net.segments):
        seg = net.segments[sid]
        if seg.from_node == u and seg.to_node == v:
            return sid
    raise ScenarioUnsupported("magnet segment not found")


def gen_days(cfg: SynthConfig, net: RoadNetwork) -> SynthCorpus:
    """trips.csv, weather.csv and collisions.csv for cfg.days consecutive days.

    Trips concentrate on seeded hot spots with weekend volume at 0.7x; labels
    are Bernoulli draws from the configured logistic rule.
    """
    rng = np.random.default_rng(cfg.seed)
    label_rng = np.random.default_rng([cfg.seed, 1])
    nodes = sorted(net.node_coords)
    hotspots = [int(x) for x in rng.choice(nodes, size=min(6, len(nodes)), replace=False)]
    magnet = magnet_segment_id(cfg, net)

    trips_buf = io.StringIO()
    trips_buf.write("trip_id,date,pickup_lat,pickup_lon,dropoff_lat,dropoff_lon,count\r\n")
    trip_records: list[TripRecord] = []
    trip_id = 0

    def pick_node():
        if rng.random() < 0.6:
            return hotspots[int(rng.integers(0, len(hotspots)))]
        return int(nodes[int(rng.integers(0, len(nodes)))])

    dates = [cfg.start + timedelta(days=i) for i in range(cfg.days)]
    for day in dates:
        n_trips = cfg.trips_per_day if day.weekday() < 5 else round(0.7 * cfg.trips_per_day)
        day_pairs = []
        for _ in range(n_trips):
            o = pick_node()
            d = pick_node()
            while d == o:
                d = pick_node()
            day_pairs.append((o, d, int(rng.integers(1, 4))))
        if magnet is not None:
            seg = net.segments[magnet]
            for _ in range(3):
                day_pairs.append((seg.from_node, seg.to_node, int(rng.integers(8, 13))))
        for o, d, count in day_pairs:
            trip_id += 1
            olat, olon = net.node_coords[o]
            dlat, dlon = net.node_coords[d]
            trips_buf.write(
                f"{trip_id},{day.isoformat()},{olat:.6f},{olon:.6f},{dlat:.6f},{dlon:.6f},{count}\r\n"
            )
            trip_records.append(TripRecord(trip_id, day, o, d, count))

    weather_buf = io.StringIO()
    weather_buf.write("date,precip_mm,snow_mm,temp_c\r\n")
    weather: dict[date, Weather] = {}
    for i, day in enumerate(dates):
        temp = 10.0 + 8.0 * math.sin(2 * math.pi * (i + 15) / 180.0) + rng.normal(0, 2.0)
        # capped tail keeps extreme days from saturating the label rule
        precip = min(float(rng.gamma(0.9, 3.0)), 10.0) if rng.random() < 0.45 else 0.0
        precip = round(precip, 1)
        temp = round(temp, 1)
        snow = precip if temp < 0 else 0.0
        weather[day] = Weather(precip, snow, temp)
        weather_buf.write(f"{day.isoformat()},{precip:.1f},{snow:.1f},{temp:.1f}\r\n")

    # per-day traffic assignment feeds both the label rule and the corpus
    volumes_by_day = {}
    trips_by_day: dict[date, list[TripRecord]] = {}
    for t in trip_records:
        trips_by_day.setdefault(t.date, []).append(t)
    for day in dates:
        volumes_by_day[day] = assign_trips(net, trips_by_day.get(day, [])).volumes

    order = net.dual.order
    speed = np.array([net.segments[s].speed_limit_kmh for s in order])
    length = np.array([net.segments[s].length_m for s in order])
    curve = np.array([net.segments[s].curve_radius_m or 0.0 for s in order])
    vol = np.array([[volumes_by_day[d][s] for s in order] for d in dates])
    precip_arr = np.array([weather[d].precip_mm for d in dates])

    def moments(values: np.ndarray) -> tuple[float, float]:
        m, s = float(values.mean()), float(values.std())
        return m, s if s > 1e-9 else 1.0

    mom = {
        "speed_limit_kmh": moments(speed),
        "length_m": moments(length),
        "curve_radius_m": moments(curve),
        "car_volume": moments(vol),
        "precip_mm": moments(precip_arr),
    }
    co = cfg.coefficients
    z = lambda x, name: (x - mom[name][0]) / mom[name][1]
    eta = (
        co.intercept
        + co.speed * z(speed, "speed_limit_kmh")[None, :]
        + co.length * z(length, "length_m")[None, :]
        + co.curve * z(curve, "curve_radius_m")[None, :]
        - co.cars * z(vol, "car_volume")
        + co.precip * z(precip_arr, "precip_mm")[:, None]
    )
    prob = 1.0 / (1.0 + np.exp(-eta))
    labels = (label_rng.random(prob.shape) < prob).astype(float)

    collisions_buf = io.StringIO()
    collisions_buf.write("date,segment_id,count\r\n")
    for i, day in enumerate(dates):
        for j, sid in enumerate(order):
            if labels[i, j]:
                collisions_buf.write(f"{day.isoformat()},{sid},1\r\n")

    artery = None
    if cfg.scenario == "detour_magnet":
        mean_vol = vol.mean(axis=0)
        avenue_idx = [j for j, sid in enumerate(order) if net.segments[sid].one_way]
        artery = int(order[max(avenue_idx, key=lambda j: mean_vol[j])])

    answer_key = {
        "scenario": cfg.scenario,
        "magnet_segment": magnet,
        "artery_segment": artery,
        "coefficients": asdict(co),
        "moments": {k: list(v) for k, v in mom.items()},
        "positive_rate": float(labels.mean()),
        "expected": {
            "magnet_reward_sign": "positive" if magnet is not None else None,
            "artery_reward_sign": "negative" if artery is not None else None,
        },
    }

    corpus = Corpus(
        net=net,
        dates=list(dates),
        volumes=volumes_by_day,
        weather=weather,
        labels={d: labels[i] for i, d in enumerate(dates)},
        trips=trips_by_day,
    )
    return SynthCorpus(
        cfg=cfg, net=net,
        trips_csv=trips_buf.getvalue(),
        weather_csv=weather_buf.getvalue(),
        collisions_csv=collisions_buf.getvalue(),
        answer_key=answer_key,
        corpus=corpus,
    )


def generate(cfg: SynthConfig) -> SynthCorpus:
    return gen_days(cfg, build_network(cfg))


def write_corpus(cfg: SynthConfig, outdir: str | Path) -> SynthCorpus:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    synth = generate(cfg)
    (outdir / "segments.csv").write_text(gen_network(cfg), newline="")
    (outdir / "trips.csv").write_text(synth.trips_csv, newline="")
    (outdir / "weather.csv").write_text(synth.weather_csv, newline="")
    (outdir / "collisions.csv").write_text(synth.collisions_csv, newline="")
    (outdir / "answer_key.json").write_text(json.dumps(synth.answer_key, indent=2, sort_keys=True))
    return synth


class TrueRiskModel:
    """The generator's own logistic rule as a risk model; the Bayes oracle for
    anything trained on synthetic corpora."""

    window = 1

    def __init__(self, coefficients: RiskCoefficients, moments: dict[str, tuple[float, float]]):
        self.coefficients = coefficients
        self.moments = moments

    def predict_risk(self, window_features: np.ndarray, dual=None) -> np.ndarray:
        x = window_features[-1] if window_features.ndim == 3 else window_features
        co = self.coefficients

        def z(name):
            m, s = self.moments[name]
            return (x[:, FEATURE_INDEX[name]] - m) / s

        eta = (
            co.intercept
            + co.speed * z("speed_limit_kmh")
            + co.length * z("length_m")
            + co.curve * z("curve_radius_m")
            - co.cars * z("car_volume")
            + co.precip * z("precip_mm")
        )
        return 1.0 / (1.0 + np.exp(-eta))

    @classmethod
    def from_answer_key(cls, key: dict) -> "TrueRiskModel":
        co = RiskCoefficients(**key["coefficients"])
        moments = {k: tuple(v) for k, v in key["moments"].items()}
        return cls(co, moments)
