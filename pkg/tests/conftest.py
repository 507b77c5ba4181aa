import io
import csv

import pytest

from openstreets.roadnet import CSV_HEADER, RoadNetwork, parse_segment_row


def segments_csv(rows: list[dict]) -> str:
    """Build a segments.csv text from partial row dicts (defaults filled in)."""
    defaults = {
        "from_lat": "40.70", "from_lon": "-74.00",
        "to_lat": "40.71", "to_lon": "-74.00",
        "length_m": "100", "width_m": "10", "lanes": "1",
        "speed_limit_kmh": "36", "one_way": "0", "bike_lane": "0",
        "border": "0", "double_level": "0", "curve_radius_m": "",
    }
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for row in rows:
        merged = {**defaults, **{k: str(v) for k, v in row.items()}}
        writer.writerow([merged[col] for col in CSV_HEADER])
    return buf.getvalue()


def network_from_rows(rows: list[dict]) -> RoadNetwork:
    records = []
    for i, row in enumerate(rows):
        text = segments_csv([row])
        line = text.splitlines()[1]
        values = dict(zip(CSV_HEADER, next(csv.reader([line]))))
        records.append(parse_segment_row(values, i + 2))
    return RoadNetwork(records)


@pytest.fixture
def two_segment_chain() -> RoadNetwork:
    # nodes 1 -2- 3, both two-way
    return network_from_rows([
        {"segment_id": 1, "from_node": 1, "to_node": 2,
         "from_lat": 40.70, "from_lon": -74.00, "to_lat": 40.701, "to_lon": -74.00},
        {"segment_id": 2, "from_node": 2, "to_node": 3,
         "from_lat": 40.701, "from_lon": -74.00, "to_lat": 40.702, "to_lon": -74.00},
    ])


@pytest.fixture(scope="session")
def default_synth():
    """The default synthetic corpus (8x12 grid, 60 days, seed 0); shared
    across modules because generation assigns traffic for every day."""
    from openstreets.synthcity import SynthConfig, generate

    return generate(SynthConfig())


@pytest.fixture(scope="session")
def default_dataset(default_synth):
    from openstreets.collision import build_dataset

    return build_dataset(default_synth.corpus, window=7)


@pytest.fixture(scope="session")
def trained_collision(default_synth, default_dataset):
    from openstreets.collision import train_collision

    return train_collision(default_dataset, default_synth.net, seed=0)


@pytest.fixture(scope="session")
def scenario_synth():
    from openstreets.synthcity import SynthConfig, generate

    return generate(SynthConfig(rows=6, cols=6, days=40, trips_per_day=120,
                                seed=0, scenario="detour_magnet"))


@pytest.fixture(scope="session")
def scenario_env(scenario_synth):
    from openstreets.openenv import Environment
    from openstreets.synthcity import TrueRiskModel

    model = TrueRiskModel.from_answer_key(scenario_synth.answer_key)
    return Environment(scenario_synth.corpus, model, horizon=10)


def scenario_qconfig():
    """Q-learning hyperparameters for the planted-optimum scenario: strong
    discounting sharpens the one-time gain of opening the best segment."""
    from openstreets.qagent import QConfig

    return QConfig(gamma=0.6, episodes=350, batch_size=32, target_sync=150,
                   lr=1e-3, hidden_dim=32, conv_layers=2, epsilon_end=0.2)


@pytest.fixture(scope="session")
def scenario_qmodel(scenario_env):
    from openstreets.qagent import train_q

    return train_q(scenario_env, scenario_qconfig(), seed=0)


class ChainMDP:
    """Deterministic 5-state chain: action 1 moves right, 0 moves left;
    entering the terminal right end pays 1."""

    n_states = 5
    n_actions = 2

    def __init__(self):
        self.s = 0

    def reset(self) -> int:
        self.s = 0
        return 0

    def step(self, action: int):
        nxt = min(self.s + 1, 4) if action == 1 else max(self.s - 1, 0)
        reward = 1.0 if (nxt == 4 and self.s != 4) else 0.0
        self.s = nxt
        return nxt, reward, nxt == 4


def chain_value_iteration(gamma: float, iters: int = 500):
    import numpy as np

    q = np.zeros((5, 2))
    for _ in range(iters):
        new = np.zeros_like(q)
        for s in range(4):
            for a in range(2):
                nxt = min(s + 1, 4) if a == 1 else max(s - 1, 0)
                r = 1.0 if nxt == 4 else 0.0
                new[s, a] = r + (0.0 if nxt == 4 else gamma * q[nxt].max())
        q = new
    return q
