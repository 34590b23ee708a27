"""Episodic MDP wrapper around the scheduling problem.

The state couples the current channel grid with the bits delivered so
far; an action picks a catalog group for the slot. The per-step reward
is the drop in the weighted squared gaps, so with an undiscounted sum
an episode's return telescopes to the change of the scheduling
objective between the empty and the final schedule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import ChannelState, FsmcModel, initial_state, step_channel
from .instance import GroupCatalog, Instance, rate


class MdpError(ValueError):
    pass


@dataclass
class Task:
    """One learning task: a problem instance plus its channel model."""

    instance: Instance
    fsmc: FsmcModel
    catalog: GroupCatalog


@dataclass
class MdpState:
    channels: ChannelState
    delivered: np.ndarray
    t: int

    def __post_init__(self):
        self.delivered = np.asarray(self.delivered, dtype=float)


@dataclass
class Transition:
    s: MdpState
    a: int
    r: float
    s_next: MdpState
    done: bool


@dataclass
class Trajectory:
    transitions: list

    def __len__(self) -> int:
        return len(self.transitions)

    def segment(self, u: int, w: int) -> list:
        """Transitions with step indices in [u, w] (clamped at the start)."""
        return self.transitions[max(u, 0):w + 1]

    def rewards(self) -> np.ndarray:
        return np.array([tr.r for tr in self.transitions])

    def actions(self) -> np.ndarray:
        return np.array([tr.a for tr in self.transitions], dtype=int)

    def to_jsonl(self) -> str:
        lines = []
        for tr in self.transitions:
            lines.append(json.dumps({
                "t": tr.s.t,
                "a": int(tr.a),
                "r": tr.r,
                "done": tr.done,
                "delivered": tr.s.delivered.tolist(),
                "level_index": tr.s.channels.level_index.tolist(),
            }, sort_keys=True))
        return "\n".join(lines) + "\n"


def gap_vector(inst: Instance, delivered: np.ndarray) -> np.ndarray:
    """Current weighted-gap coordinates: served-count gap then data gaps."""
    served = (delivered > inst.thresholds).astype(float)
    out = np.empty(inst.n_users + 1)
    out[0] = served.sum() - inst.n_users
    out[1:] = delivered - inst.demands
    return out


def gap_value(inst: Instance, delivered: np.ndarray) -> float:
    """Weighted squared gaps of the partial schedule reaching ``delivered``."""
    d = gap_vector(inst, delivered)
    return float(np.sum(inst.weights * d * d))


def initial_gap_value(inst: Instance) -> float:
    """Objective of the empty schedule; also the episode-return offset."""
    return gap_value(inst, np.zeros(inst.n_users))


class SchedulingEnv:
    """Slot-stepped environment over one task; owns its RNG only."""

    def __init__(self, task: Task, rng: np.random.Generator):
        self.task = task
        self.rng = rng

    def reset(self) -> MdpState:
        inst = self.task.instance
        ch = initial_state(self.task.fsmc, inst.n_users, inst.n_transmitters,
                           self.rng)
        return MdpState(channels=ch, delivered=np.zeros(inst.n_users), t=0)

    def step(self, state: MdpState, action: int):
        """Apply one group for the current slot; returns (state', reward, done)."""
        inst = self.task.instance
        if not (0 <= action < self.task.catalog.size):
            raise MdpError(f"action {action} outside catalog of size "
                           f"{self.task.catalog.size}")
        if state.t >= inst.slot_count:
            raise MdpError("episode already finished")
        group = self.task.catalog.groups[int(action)]
        bits = rate(inst, group, state.channels)
        delivered = state.delivered + bits
        prev = gap_vector(inst, state.delivered)
        new = gap_vector(inst, delivered)
        reward = float(np.sum(inst.weights * (prev * prev - new * new)))
        channels = step_channel(state.channels, self.task.fsmc, self.rng)
        nxt = MdpState(channels=channels, delivered=delivered, t=state.t + 1)
        done = nxt.t == inst.slot_count
        return nxt, reward, done

    def rollout(self, policy) -> Trajectory:
        """Run one episode with ``policy(state, t) -> action``."""
        s = self.reset()
        transitions = []
        done = False
        while not done:
            a = int(policy(s, s.t))
            s_next, r, done = self.step(s, a)
            transitions.append(Transition(s=s, a=a, r=r, s_next=s_next,
                                          done=done))
            s = s_next
        return Trajectory(transitions=transitions)


def accumulated_reward(traj: Trajectory, gamma: float) -> float:
    """Discounted episode return; with gamma = 1 it telescopes to the
    drop of the scheduling objective over the episode."""
    rewards = traj.rewards()
    weights = gamma ** np.arange(len(rewards))
    return float(np.sum(weights * rewards))
