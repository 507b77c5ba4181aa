"""Reinforcement-learning environment: day states, street-opening actions,
reward from normalized collision risk plus lane density, and episode control.

Opening a segment reroutes its traffic locally and propagates to every
following day of the episode; invalid actions (already open, nothing to
reroute, no alternative path) terminate the trajectory by default.
"""

from __future__ import annotations

import calendar
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import date as date_type
from datetime import timedelta

import numpy as np

from .collision import Corpus, MissingDay, build_day_features, static_feature_matrix
from .routing import NoAlternativePath, apply_reroute, plan_local_reroute, shortest_path

LOG = logging.getLogger(__name__)

INVALID_ALREADY_OPEN = "already_open"
INVALID_NO_CARS = "no_cars"
INVALID_NO_ALTERNATIVE = "no_alternative"


@dataclass(frozen=True)
class DayState:
    date: date_type
    open_list: tuple[int, ...]
    volumes: dict[int, float]
    weather: tuple[float, float, float]
    done: bool
    end_date: date_type
    feature_window: np.ndarray = field(repr=False)   # (T, V, F) raw features
    risk_total: float = 0.0
    density_total: float = 0.0


@dataclass(frozen=True)
class RewardComponents:
    risk_total: float
    density_total: float
    risk_norm: float
    density_norm: float

    def normalized(self, w_risk: float = 1.0, w_density: float = 1.0) -> float:
        return w_risk * self.risk_total / self.risk_norm + \
            w_density * self.density_total / self.density_norm


@dataclass
class StepOutcome:
    next_state: DayState
    reward: float
    done: bool
    info: dict


class Environment:
    """One instance is single-threaded; run concurrent rollouts on separate
    instances. The plan cache only depends on network topology, so it is safe
    to share via a common instance across sequential episodes."""

    def __init__(
        self,
        corpus: Corpus,
        risk_model,
        k: int = 3,
        share_rule: str = "inverse",
        normalizer_seed: int = 0,
        horizon: int | None = None,
        weights: tuple[float, float] = (1.0, 1.0),
    ):
        self.corpus = corpus
        self.net = corpus.net
        self.risk_model = risk_model
        self.window = int(getattr(risk_model, "window", 1))
        self.k = k
        self.share_rule = share_rule
        self.horizon = horizon
        self.w_risk, self.w_density = weights
        self.static = static_feature_matrix(self.net)
        self._date_index = {d: i for i, d in enumerate(corpus.dates)}
        self._base_features: dict[date_type, np.ndarray] = {}
        self._plan_cache: dict[tuple[int, frozenset[int]], object] = {}
        self._reach_cache: dict[tuple[int, frozenset[int]], bool] = {}
        self._lane_length = {
            sid: self.net.segments[sid].lanes * self.net.segments[sid].length_m
            for sid in self.net.segments
        }
        rng = np.random.default_rng(normalizer_seed)
        eligible = corpus.dates[self.window - 1:]
        if not eligible:
            raise MissingDay("corpus shorter than the risk model window")
        self.normalizer_date = eligible[int(rng.integers(0, len(eligible)))]
        base = self._base_state_parts(self.normalizer_date)
        self.risk_norm = max(base[0], 1e-12)
        self.density_norm = max(base[1], 1e-12)

    # -- state construction -------------------------------------------------

    def _features_for(self, day: date_type) -> np.ndarray:
        if day not in self._base_features:
            self._base_features[day] = self.corpus.base_features(day, self.static)
        return self._base_features[day]

    def _base_window(self, day: date_type) -> np.ndarray:
        idx = self._date_index[day]
        if idx < self.window - 1:
            raise MissingDay(f"{day} lacks {self.window - 1} preceding days")
        days = self.corpus.dates[idx - self.window + 1: idx + 1]
        return np.stack([self._features_for(d) for d in days])

    def _base_state_parts(self, day: date_type) -> tuple[float, float]:
        window = self._base_window(day)
        risk = float(np.sum(self.risk_model.predict_risk(window, self.net.dual)))
        density = self._density(self.corpus.volumes[day], ())
        return risk, density

    def _density(self, volumes: dict[int, float], open_list: tuple[int, ...]) -> float:
        opened = set(open_list)
        return sum(
            vol / self._lane_length[sid]
            for sid, vol in volumes.items()
            if sid not in opened
        )

    def _risk(self, window: np.ndarray, open_list: tuple[int, ...]) -> float:
        probs = self.risk_model.predict_risk(window, self.net.dual)
        if open_list:
            index = self.net.dual.index
            probs = probs.copy()
            for sid in open_list:
                probs[index[sid]] = 0.0
        return float(np.sum(probs))

    def compute_density(self, state: DayState) -> float:
        return self._density(state.volumes, state.open_list)

    def reward_components(self, state: DayState) -> RewardComponents:
        return RewardComponents(
            risk_total=state.risk_total,
            density_total=state.density_total,
            risk_norm=self.risk_norm,
            density_norm=self.density_norm,
        )

    def state_cost(self, state: DayState) -> float:
        return self.reward_components(state).normalized(self.w_risk, self.w_density)

    def episode_horizon(self, start_date: date_type) -> int:
        if self.horizon is not None:
            return self.horizon
        return calendar.monthrange(start_date.year, start_date.month)[1]

    def eligible_starts(self) -> list[date_type]:
        out = []
        for i, day in enumerate(self.corpus.dates):
            if i < self.window - 1:
                continue
            if i + self.episode_horizon(day) - 1 < len(self.corpus.dates):
                out.append(day)
        return out

    def reset(self, start_date: date_type) -> DayState:
        if start_date not in self._date_index:
            raise MissingDay(f"{start_date} not in corpus")
        idx = self._date_index[start_date]
        horizon = self.episode_horizon(start_date)
        if idx + horizon - 1 >= len(self.corpus.dates):
            raise MissingDay(
                f"episode from {start_date} needs {horizon} days; corpus ends "
                f"{self.corpus.dates[-1]}"
            )
        window = self._base_window(start_date)
        volumes = dict(self.corpus.volumes[start_date])
        weather = self.corpus.weather[start_date]
        end_date = self.corpus.dates[idx + horizon - 1]
        risk = self._risk(window, ())
        density = self._density(volumes, ())
        return DayState(
            date=start_date, open_list=(), volumes=volumes,
            weather=(weather.precip_mm, weather.snow_mm, weather.temp_c),
            done=horizon == 1, end_date=end_date, feature_window=window,
            risk_total=risk, density_total=density,
        )

    # -- actions -------------------------------------------------------------

    def _plan(self, sid: int, closed: frozenset[int]):
        key = (sid, closed)
        if key not in self._plan_cache:
            self._plan_cache[key] = plan_local_reroute(
                self.net, sid, self.k, closed, self.share_rule
            )
        return self._plan_cache[key]

    def _has_alternative(self, sid: int, closed: frozenset[int]) -> bool:
        key = (sid, closed)
        if key not in self._reach_cache:
            seg = self.net.segments[sid]
            path = shortest_path(
                self.net.primal, seg.from_node, seg.to_node,
                banned_segments=closed | {sid},
            )
            self._reach_cache[key] = path is not None
        return self._reach_cache[key]

    def valid_actions(self, state: DayState) -> list[int]:
        closed = frozenset(state.open_list)
        return [
            sid for sid in sorted(self.net.segments)
            if sid not in closed
            and state.volumes.get(sid, 0.0) > 0.0
            and self._has_alternative(sid, closed)
        ]

    def invalid_reason(self, state: DayState, action: int) -> str | None:
        if action in state.open_list:
            return INVALID_ALREADY_OPEN
        if state.volumes.get(action, 0.0) <= 0.0:
            return INVALID_NO_CARS
        if not self._has_alternative(action, frozenset(state.open_list)):
            return INVALID_NO_ALTERNATIVE
        return None

    def _apply_opens(self, base_volumes: dict[int, float],
                     open_list: tuple[int, ...]) -> dict[int, float]:
        volumes = dict(base_volumes)
        closed: set[int] = set()
        for sid in open_list:
            if volumes.get(sid, 0.0) > 0.0:
                plan = self._plan(sid, frozenset(closed))
                volumes = apply_reroute(volumes, plan)
            else:
                volumes[sid] = 0.0
            closed.add(sid)
        return volumes

    def step(self, state: DayState, action: int,
             terminate_on_invalid: bool = True) -> StepOutcome:
        """Open `action`, advance one day, and propagate every open segment
        into the new day's traffic. Invalidity is an outcome, not an error."""
        if state.done:
            raise ValueError("episode is done; reset first")
        self.net.segment(action)   # raises UnknownSegmentId
        reason = self.invalid_reason(state, action)
        if reason is not None:
            next_state = replace(state, done=True) if terminate_on_invalid else state
            return StepOutcome(
                next_state=next_state,
                reward=0.0,
                done=terminate_on_invalid,
                info={"invalid_reason": reason, "risk_delta": 0.0, "density_delta": 0.0},
            )
        open_list = state.open_list + (action,)
        next_date = state.date + timedelta(days=1)
        if next_date not in self._date_index:
            raise MissingDay(f"{next_date} not in corpus")
        volumes = self._apply_opens(self.corpus.volumes[next_date], open_list)
        feats = build_day_features(
            self.net, volumes, self.corpus.weather[next_date], next_date, self.static
        )
        window = np.concatenate([state.feature_window[1:], feats[None]]) \
            if self.window > 1 else feats[None]
        risk = self._risk(window, open_list)
        density = self._density(volumes, open_list)
        weather = self.corpus.weather[next_date]
        done = next_date >= state.end_date
        next_state = DayState(
            date=next_date, open_list=open_list, volumes=volumes,
            weather=(weather.precip_mm, weather.snow_mm, weather.temp_c),
            done=done, end_date=state.end_date, feature_window=window,
            risk_total=risk, density_total=density,
        )
        reward = self.compute_reward(state, next_state)
        risk_delta = risk / self.risk_norm - state.risk_total / self.risk_norm
        density_delta = density / self.density_norm - state.density_total / self.density_norm
        return StepOutcome(
            next_state=next_state, reward=reward, done=done,
            info={"risk_delta": risk_delta, "density_delta": density_delta},
        )

    def compute_reward(self, cur: DayState, nxt: DayState) -> float:
        """Normalized cost of the current state minus the next state's;
        positive exactly when risk plus density decreased."""
        return self.state_cost(cur) - self.state_cost(nxt)

    def rollout(self, start_date: date_type, actions: list[int],
                skip_invalid: bool = False) -> tuple[DayState, list[StepOutcome]]:
        """Apply a fixed action list through step(); with skip_invalid the
        invalid opens are recorded but do not end the episode."""
        state = self.reset(start_date)
        outcomes: list[StepOutcome] = []
        for action in actions:
            if state.done:
                break
            outcome = self.step(state, action, terminate_on_invalid=not skip_invalid)
            outcomes.append(outcome)
            state = outcome.next_state
            if outcome.done:
                break
        return state, outcomes


def trace_record(state: DayState, action: int | None, outcome: StepOutcome) -> dict:
    return {
        "date": outcome.next_state.date.isoformat(),
        "action": action,
        "reward": outcome.reward,
        "risk": outcome.next_state.risk_total,
        "density": outcome.next_state.density_total,
        "invalid": outcome.info.get("invalid_reason"),
    }


def write_trace(path: str, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
