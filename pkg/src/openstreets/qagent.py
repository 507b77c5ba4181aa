"""Deep Q-learning over the street-opening environment: per-segment Q-values
from a graph network, FIFO replay, a frozen target network, epsilon-greedy
control, segment ranking, and policy comparison."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .collision import FEATURE_NAMES, Scaler
from .neural import Adam, GraphQNetwork, Tensor, load_checkpoint, save_checkpoint, tensor
from .openenv import DayState, Environment
from .roadnet import DualGraph, RoadNetwork, UnknownSegmentId

LOG = logging.getLogger(__name__)

Q_FEATURE_NAMES = FEATURE_NAMES + ["is_open"]


class QAgentError(Exception):
    pass


class NoValidActions(QAgentError):
    pass


class EmptyBatch(QAgentError):
    pass


class Diverged(QAgentError):
    pass


@dataclass
class QConfig:
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int | None = None   # default: half the estimated total steps
    replay_capacity: int = 50_000
    batch_size: int = 64
    target_sync: int = 250
    episodes: int = 60
    lr: float = 1e-3
    hidden_dim: int = 32
    conv_layers: int = 2

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class Experience:
    state_x: np.ndarray      # (V, F+1) standardized features plus is-open column
    action: int              # segment id
    action_row: int          # dual-graph row of the action
    reward: float
    next_x: np.ndarray
    done: bool


class ReplayBuffer:
    """Bounded FIFO buffer; eviction is strictly oldest-first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Experience] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, exp: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(exp)
        else:
            self._items[self._next] = exp
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        if not self._items:
            raise EmptyBatch("replay buffer is empty")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass
class EpsilonSchedule:
    start: float
    end: float
    decay_steps: int

    def value(self, step: int) -> float:
        if self.decay_steps <= 0:
            return self.end
        frac = min(1.0, step / self.decay_steps)
        return self.start + (self.end - self.start) * frac


def select_action(
    q_values: np.ndarray,
    valid: list[int],
    epsilon: float,
    rng: np.random.Generator,
    index: dict[int, int],
) -> int:
    """Epsilon-greedy over the valid set; greedy ties break to the lowest id."""
    if not valid:
        raise NoValidActions("no valid actions to select from")
    if rng.random() < epsilon:
        return valid[int(rng.integers(0, len(valid)))]
    return min(valid, key=lambda sid: (-float(q_values[index[sid]]), sid))


def td_loss(
    batch: list[Experience],
    qnet: GraphQNetwork,
    target: GraphQNetwork,
    gamma: float,
    dual: DualGraph,
) -> Tensor:
    """Mean squared Bellman error; the target network is evaluated without
    gradients and terminal transitions bootstrap from zero."""
    if not batch:
        raise EmptyBatch("td_loss needs a non-empty batch")
    x = np.stack([e.state_x for e in batch])
    next_x = np.stack([e.next_x for e in batch])
    q_all = qnet.forward(tensor(x), dual)
    q_sa = q_all.gather_rows(np.array([e.action_row for e in batch]))
    target_q = target.forward(tensor(next_x), dual).data
    targets = np.empty(len(batch))
    for i, e in enumerate(batch):
        if e.done:
            targets[i] = e.reward
        else:
            open_mask = next_x[i][:, -1] >= 0.5
            vals = target_q[i][~open_mask]
            targets[i] = e.reward + gamma * (float(vals.max()) if vals.size else 0.0)
    return (q_sa - Tensor(targets)).square().mean()


class QModel:
    """Trained Q network plus the feature standardization it was trained with."""

    def __init__(self, core: GraphQNetwork, scaler: Scaler):
        self.core = core
        self.scaler = scaler

    def features(self, state: DayState, dual: DualGraph) -> np.ndarray:
        raw = state.feature_window[-1]
        std = self.scaler.apply(raw)
        is_open = np.zeros((std.shape[0], 1))
        for sid in state.open_list:
            is_open[dual.index[sid], 0] = 1.0
        return np.concatenate([std, is_open], axis=1)

    def q_values(self, state: DayState, dual: DualGraph) -> np.ndarray:
        return self.core.forward(tensor(self.features(state, dual)), dual).data

    def save(self, path: str) -> None:
        meta = {
            "in_features": self.core.in_features,
            "hidden_dim": self.core.hidden_dim,
            "conv_layers": len(self.core.convs),
            "feature_names": list(Q_FEATURE_NAMES),
            "scaler_mean": self.scaler.mean.tolist(),
            "scaler_std": self.scaler.std.tolist(),
        }
        save_checkpoint(path, "q", meta,
                        [(name, p.data) for name, p in self.core.named_parameters()])

    @classmethod
    def load(cls, path: str) -> "QModel":
        kind, meta, params = load_checkpoint(path)
        if kind != "q":
            raise QAgentError(f"{path}: checkpoint kind {kind!r}, expected 'q'")
        core = GraphQNetwork(
            in_features=meta["in_features"],
            hidden_dim=meta["hidden_dim"],
            conv_layers=meta["conv_layers"],
        )
        for name, p in core.named_parameters():
            p.data = params[name]
        return cls(core, Scaler(np.array(meta["scaler_mean"]), np.array(meta["scaler_std"])))


def q_values_with_removal(qmodel: QModel, state: DayState,
                          net: RoadNetwork) -> tuple[np.ndarray, DualGraph]:
    """Alternative evaluation that removes opened vertices from the dual graph
    (weights renormalized on the reduced network) instead of masking them.
    Returns the Q vector over the reduced vertex order plus that order's dual."""
    sub_records = [seg for sid, seg in net.segments.items()
                   if sid not in state.open_list]
    subnet = RoadNetwork(sub_records)
    raw = state.feature_window[-1]
    rows = [net.dual.index[sid] for sid in subnet.dual.order]
    std = qmodel.scaler.apply(raw[rows])
    x = np.concatenate([std, np.zeros((len(rows), 1))], axis=1)
    q = qmodel.core.forward(tensor(x), subnet.dual).data
    return q, subnet.dual


def fit_q_scaler(env: Environment) -> Scaler:
    stacked = np.concatenate(
        [env.corpus.base_features(d, env.static) for d in env.corpus.dates]
    )
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-9] = 1.0
    return Scaler(mean, std)


def _clone_network(core: GraphQNetwork) -> GraphQNetwork:
    twin = GraphQNetwork(core.in_features, core.hidden_dim, len(core.convs))
    _sync_network(core, twin)
    return twin


def _sync_network(src: GraphQNetwork, dst: GraphQNetwork) -> None:
    for (_, p_src), (_, p_dst) in zip(src.named_parameters(), dst.named_parameters()):
        p_dst.data = p_src.data.copy()


def train_q(
    env: Environment,
    cfg: QConfig | None = None,
    seed: int = 0,
) -> tuple[QModel, list[float]]:
    """Epsilon-greedy rollouts fill the replay buffer; one batch update per
    environment step; the target network syncs every cfg.target_sync updates.
    Deterministic for a fixed seed."""
    cfg = cfg or QConfig()
    rng = np.random.default_rng(seed)
    dual = env.net.dual
    scaler = fit_q_scaler(env)
    core = GraphQNetwork(
        in_features=len(Q_FEATURE_NAMES),
        hidden_dim=cfg.hidden_dim,
        conv_layers=cfg.conv_layers,
        seed=seed,
    )
    model = QModel(core, scaler)
    target = _clone_network(core)
    optimizer = Adam(core.parameters(), lr=cfg.lr)
    buffer = ReplayBuffer(cfg.replay_capacity)
    starts = env.eligible_starts()
    if not starts:
        raise QAgentError("corpus has no eligible episode starts")
    steps_per_episode = max(1, env.episode_horizon(starts[0]) - 1)
    decay = cfg.epsilon_decay_steps
    if decay is None:
        decay = max(1, (cfg.episodes * steps_per_episode) // 2)
    schedule = EpsilonSchedule(cfg.epsilon_start, cfg.epsilon_end, decay)
    history: list[float] = []
    step_count = 0
    update_count = 0
    for episode in range(cfg.episodes):
        state = env.reset(starts[episode % len(starts)])
        episode_reward = 0.0
        while not state.done:
            valid = env.valid_actions(state)
            if not valid:
                break
            state_x = model.features(state, dual)
            q_vals = core.forward(tensor(state_x), dual).data
            action = select_action(q_vals, valid, schedule.value(step_count), rng, dual.index)
            outcome = env.step(state, action)
            next_state = outcome.next_state
            buffer.push(Experience(
                state_x=state_x,
                action=action,
                action_row=dual.index[action],
                reward=outcome.reward,
                next_x=model.features(next_state, dual),
                done=outcome.done,
            ))
            episode_reward += outcome.reward
            state = next_state
            step_count += 1
            if len(buffer) >= cfg.batch_size:
                batch = buffer.sample(cfg.batch_size, rng)
                loss = td_loss(batch, core, target, cfg.gamma, dual)
                if not math.isfinite(float(loss.data)):
                    raise Diverged(f"TD loss {float(loss.data)} at update {update_count}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                update_count += 1
                if update_count % cfg.target_sync == 0:
                    _sync_network(core, target)
        history.append(episode_reward)
    return model, history


def rank_segments(
    qmodel: QModel,
    state: DayState,
    net: RoadNetwork,
    top: int = 121,
) -> list[tuple[int, float]]:
    """Segments ordered by descending Q-value, lowest id first on ties."""
    q = qmodel.q_values(state, net.dual)
    pairs = sorted(
        ((sid, float(q[net.dual.index[sid]])) for sid in net.dual.order),
        key=lambda item: (-item[1], item[0]),
    )
    return pairs[:top]


def _summary(values: list[float]) -> dict:
    arr = np.array(values, dtype=float)
    return {
        "min": float(arr.min()),
        "q1": float(np.percentile(arr, 25)),
        "median": float(np.median(arr)),
        "q3": float(np.percentile(arr, 75)),
        "max": float(arr.max()),
        "mean": float(arr.mean()),
        "episodes": len(values),
    }


def compare_policies(
    env: Environment,
    qmodel: QModel | None = None,
    designated: list[int] | None = None,
    episodes: int = 20,
    seed: int = 0,
) -> dict[str, dict]:
    """Episode-reward distributions for the greedy-Q, random, and designated
    policies over identical corpus days."""
    if designated:
        for sid in designated:
            if sid not in env.net.segments:
                raise UnknownSegmentId(sid)
    dual = env.net.dual
    starts = env.eligible_starts()
    if not starts:
        raise QAgentError("corpus has no eligible episode starts")
    policies: dict[str, object] = {}
    if qmodel is not None:
        policies["q_top"] = "q_top"
    policies["random"] = "random"
    if designated:
        policies["designated"] = "designated"
    elif designated is not None:
        LOG.warning("designated list is empty; policy omitted")
    results: dict[str, dict] = {}
    for name in policies:
        totals = []
        for episode in range(episodes):
            rng = np.random.default_rng([seed, episode])
            state = env.reset(starts[episode % len(starts)])
            total = 0.0
            designated_idx = 0
            while not state.done:
                if name == "designated":
                    if designated_idx >= len(designated):
                        break
                    action = designated[designated_idx]
                    designated_idx += 1
                    outcome = env.step(state, action)   # invalid ends the trajectory
                else:
                    valid = env.valid_actions(state)
                    if not valid:
                        break
                    if name == "q_top":
                        q = qmodel.q_values(state, dual)
                        action = select_action(q, valid, 0.0, rng, dual.index)
                    else:
                        action = valid[int(rng.integers(0, len(valid)))]
                    outcome = env.step(state, action)
                total += outcome.reward
                state = outcome.next_state
            totals.append(total)
        results[name] = _summary(totals)
    return results


# --- tabular mode -------------------------------------------------------------

def train_q_tabular(
    mdp,
    gamma: float,
    episodes: int = 400,
    lr: float = 0.5,
    epsilon: float = 0.3,
    replay_capacity: int = 4000,
    batch_size: int = 16,
    target_sync: int = 100,
    max_steps: int = 50,
    seed: int = 0,
) -> np.ndarray:
    """Q-learning on a small discrete MDP with the same replay / frozen-target
    machinery, bypassing the graph network: the Q function is a table."""
    rng = np.random.default_rng(seed)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    target_q = q.copy()
    buffer: list[tuple[int, int, float, int, bool]] = []
    update_count = 0
    for _ in range(episodes):
        s = mdp.reset()
        for _step in range(max_steps):
            if rng.random() < epsilon:
                a = int(rng.integers(0, mdp.n_actions))
            else:
                a = int(np.argmax(q[s]))
            s2, r, done = mdp.step(a)
            buffer.append((s, a, r, s2, done))
            if len(buffer) > replay_capacity:
                buffer.pop(0)
            idx = rng.integers(0, len(buffer), size=batch_size)
            for i in idx:
                bs, ba, br, bs2, bdone = buffer[i]
                bootstrap = 0.0 if bdone else gamma * float(np.max(target_q[bs2]))
                q[bs, ba] += lr * (br + bootstrap - q[bs, ba])
                update_count += 1
                if update_count % target_sync == 0:
                    target_q = q.copy()
            s = s2
            if done:
                break
    return q
