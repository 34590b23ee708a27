"""Static scheduling problem data and its per-slot evaluation.

An instance couples transmitters (one Ka-band satellite plus C-band
BSs/TSTs), ground devices with data demands, and a slotted horizon. The
scheduling atom is a link group: an injective partial matching of
transmitters to ground devices. Groups are enumerated into a canonical
catalog whose index 0 is the idle group.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelState

BAND_KA = "ka"
BAND_C = "c"


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class Transmitter:
    band: str
    power: float       # W
    bandwidth: float   # Hz

    def __post_init__(self):
        if self.band not in (BAND_KA, BAND_C):
            raise InstanceError(f"unknown band {self.band!r}")
        if self.power <= 0 or self.bandwidth <= 0:
            raise InstanceError("power and bandwidth must be positive")


@dataclass
class Instance:
    """Problem data: transmitters, demands, weights, and the slot grid.

    ``weights`` has length K+1: entry 0 weighs the squared served-count
    gap, entries 1..K weigh each user's squared delivered-data gap.
    ``big_m`` is the constant of the SINR-floor linearization; ``None``
    lets solvers derive it from the channel realization.
    """

    transmitters: list
    demands: np.ndarray        # D_k, bits
    thresholds: np.ndarray     # D'_k, bits (service cutoff)
    sinr_floors: np.ndarray    # linear
    weights: np.ndarray        # eta_0..eta_K
    slot_count: int            # T
    slot_len: float            # s
    noise_psd: float           # W/Hz
    big_m: float | None = None

    def __post_init__(self):
        self.demands = np.asarray(self.demands, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.sinr_floors = np.asarray(self.sinr_floors, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        k = self.demands.shape[0]
        if self.thresholds.shape != (k,) or self.sinr_floors.shape != (k,):
            raise InstanceError("demands/thresholds/sinr_floors length mismatch")
        if self.weights.shape != (k + 1,):
            raise InstanceError("weights must have length K+1")
        if np.any(self.thresholds <= 0) or np.any(self.thresholds >= self.demands):
            raise InstanceError("need 0 < threshold < demand per user")
        if np.any(self.weights < 0):
            raise InstanceError("weights must be non-negative")
        if self.slot_count < 1:
            raise InstanceError("slot_count must be >= 1")
        if self.slot_len <= 0 or self.noise_psd <= 0:
            raise InstanceError("slot_len and noise_psd must be positive")
        for band in (BAND_KA, BAND_C):
            bws = {t.bandwidth for t in self.transmitters if t.band == band}
            if len(bws) > 1:
                raise InstanceError(f"band {band!r} must use a single bandwidth")

    @property
    def n_users(self) -> int:
        return self.demands.shape[0]

    @property
    def n_transmitters(self) -> int:
        return len(self.transmitters)

    def band_bandwidth(self, band: str) -> float | None:
        for t in self.transmitters:
            if t.band == band:
                return t.bandwidth
        return None

    def to_dict(self) -> dict:
        return {
            "transmitters": [
                {"band": t.band, "power": t.power, "bandwidth": t.bandwidth}
                for t in self.transmitters
            ],
            "demands": self.demands.tolist(),
            "thresholds": self.thresholds.tolist(),
            "sinr_floors": self.sinr_floors.tolist(),
            "weights": self.weights.tolist(),
            "slot_count": self.slot_count,
            "slot_len": self.slot_len,
            "noise_psd": self.noise_psd,
            "big_m": self.big_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        return cls(
            transmitters=[Transmitter(x["band"], x["power"], x["bandwidth"])
                          for x in d["transmitters"]],
            demands=np.array(d["demands"], dtype=float),
            thresholds=np.array(d["thresholds"], dtype=float),
            sinr_floors=np.array(d["sinr_floors"], dtype=float),
            weights=np.array(d["weights"], dtype=float),
            slot_count=int(d["slot_count"]),
            slot_len=float(d["slot_len"]),
            noise_psd=float(d["noise_psd"]),
            big_m=d.get("big_m"),
        )


@dataclass(frozen=True)
class LinkGroup:
    """A set of simultaneous (transmitter, user) unicast links.

    Every user appears at most once and every transmitter at most once;
    the empty tuple is the idle group.
    """

    links: tuple

    def __post_init__(self):
        users = [k for _, k in self.links]
        txs = [n for n, _ in self.links]
        if len(set(users)) != len(users):
            raise InstanceError("a user may appear in at most one link")
        if len(set(txs)) != len(txs):
            raise InstanceError("a transmitter may appear in at most one link")
        object.__setattr__(self, "links", tuple(sorted(self.links)))

    @property
    def is_idle(self) -> bool:
        return not self.links

    def transmitter_of(self, user: int) -> int | None:
        for n, k in self.links:
            if k == user:
                return n
        return None

    def alpha(self, n_users: int, n_transmitters: int) -> np.ndarray:
        a = np.zeros((n_users, n_transmitters), dtype=int)
        for n, k in self.links:
            a[k, n] = 1
        return a

    def alpha_key(self, n_users: int, n_transmitters: int) -> tuple:
        return tuple(self.alpha(n_users, n_transmitters).ravel())


@dataclass
class GroupCatalog:
    """Canonically ordered list of valid link groups; index 0 is idle."""

    groups: list
    n_users: int
    n_transmitters: int

    def __post_init__(self):
        if not self.groups or not self.groups[0].is_idle:
            raise InstanceError("catalog must start with the idle group")
        keys = [g.links for g in self.groups]
        if len(set(keys)) != len(keys):
            raise InstanceError("catalog contains duplicate groups")

    @property
    def size(self) -> int:
        return len(self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_transmitters": self.n_transmitters,
            "groups": [[[n, k] for n, k in g.links] for g in self.groups],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupCatalog":
        groups = [LinkGroup(tuple((int(n), int(k)) for n, k in links))
                  for links in d["groups"]]
        return cls(groups=groups, n_users=int(d["n_users"]),
                   n_transmitters=int(d["n_transmitters"]))


@dataclass
class Schedule:
    """One group index per slot (0 = idle) plus the served flags."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=int)
        self.y = np.asarray(self.y, dtype=int)


@dataclass
class RateTensor:
    """Per-slot deliverable bits R[user, group, slot]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise InstanceError("rate tensor must be K x G x T")
        if np.any(self.values < 0):
            raise InstanceError("rates must be non-negative")

    @property
    def shape(self):
        return self.values.shape

    def save(self, path) -> None:
        k, g, t = self.values.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qqq", k, g, t))
            fh.write(self.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "RateTensor":
        with open(path, "rb") as fh:
            k, g, t = struct.unpack("<qqq", fh.read(24))
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(k, g, t)
        return cls(values=np.array(data, dtype=float))


def enumerate_groups(inst: Instance, cap: int = 8,
                     mean_gains: np.ndarray | None = None,
                     max_groups: int = 200_000) -> GroupCatalog:
    """Enumerate injective transmitter-to-user matchings into a catalog.

    Each transmitter considers its top-``cap`` users ranked by
    ``mean_gains`` (all users when ``cap >= K``; index order when no
    gains are given). Groups are sorted by their flattened incidence
    pattern, which places the idle group first.
    """
    if cap < 1:
        raise InstanceError("cap must be >= 1")
    k_all = list(range(inst.n_users))
    candidates = []
    for n in range(inst.n_transmitters):
        if cap >= inst.n_users or mean_gains is None:
            ranked = k_all if cap >= inst.n_users else k_all[:cap]
        else:
            order = sorted(k_all, key=lambda k: (-mean_gains[k, n], k))
            ranked = sorted(order[:cap])
        candidates.append(ranked)

    groups = []

    def extend(n: int, used: set, links: list) -> None:
        if len(groups) > max_groups:
            raise InstanceError(
                f"catalog exceeds max_groups={max_groups}; raise the limit "
                "or lower the per-transmitter cap")
        if n == inst.n_transmitters:
            groups.append(LinkGroup(tuple(links)))
            return
        extend(n + 1, used, links)
        for k in candidates[n]:
            if k in used:
                continue
            links.append((n, k))
            used.add(k)
            extend(n + 1, used, links)
            used.remove(k)
            links.pop()

    extend(0, set(), [])
    if len(groups) > max_groups:
        raise InstanceError(
            f"catalog exceeds max_groups={max_groups}; raise the limit "
            "or lower the per-transmitter cap")
    groups.sort(key=lambda g: g.alpha_key(inst.n_users, inst.n_transmitters))
    return GroupCatalog(groups=groups, n_users=inst.n_users,
                        n_transmitters=inst.n_transmitters)


def sinr(inst: Instance, group: LinkGroup, ch: ChannelState) -> np.ndarray:
    """Per-user linear SINR for one group under the current channel grid.

    Links interfere only within their own band. The cross terms sum the
    serving-link gains of the other active links, scaled by the user's
    own transmit power, and the noise floor is the band bandwidth times
    the noise density. Users outside the group get 0.
    """
    if ch.grid.shape != (inst.n_users, inst.n_transmitters):
        raise InstanceError("channel grid shape mismatch")
    gam = np.zeros(inst.n_users)
    for band in (BAND_KA, BAND_C):
        active = [(n, k) for n, k in group.links
                  if inst.transmitters[n].band == band]
        if not active:
            continue
        bw = inst.band_bandwidth(band)
        noise = inst.noise_psd * bw
        serving_gain = {k: ch.grid[k, n] for n, k in active}
        total_gain = sum(serving_gain.values())
        for n, k in active:
            p = inst.transmitters[n].power
            signal = serving_gain[k] * p
            interference = p * (total_gain - serving_gain[k])
            gam[k] = signal / (interference + noise)
    return gam


def rate(inst: Instance, group: LinkGroup, ch: ChannelState) -> np.ndarray:
    """Deliverable bits per user this slot: slot_len * B * log2(1 + SINR)."""
    gam = sinr(inst, group, ch)
    bits = np.zeros(inst.n_users)
    for n, k in group.links:
        bw = inst.transmitters[n].bandwidth
        bits[k] = inst.slot_len * bw * np.log2(1.0 + gam[k])
    return bits


def build_rate_tensor(inst: Instance, catalog: GroupCatalog,
                      states: list) -> RateTensor:
    """Precompute R[k, g, t] over a T-slot channel trajectory."""
    if len(states) != inst.slot_count:
        raise InstanceError("trajectory length must equal slot_count")
    vals = np.zeros((inst.n_users, catalog.size, inst.slot_count))
    for t, ch in enumerate(states):
        for g, group in enumerate(catalog.groups):
            if group.is_idle:
                continue
            vals[:, g, t] = rate(inst, group, ch)
    return RateTensor(values=vals)


def delivered_bits(x: np.ndarray, tensor: RateTensor) -> np.ndarray:
    """Total bits per user delivered by schedule ``x``."""
    vals = tensor.values
    t_idx = np.arange(vals.shape[2])
    return vals[:, np.asarray(x, dtype=int), t_idx].sum(axis=1)


def served_flags(inst: Instance, x: np.ndarray, tensor: RateTensor) -> np.ndarray:
    """Served indicator per user: delivered strictly above the threshold."""
    return (delivered_bits(x, tensor) > inst.thresholds).astype(int)


def objective(inst: Instance, x: np.ndarray, tensor: RateTensor) -> float:
    """Weighted squared gaps of served count and per-user delivered bits."""
    y = served_flags(inst, x, tensor)
    dlv = delivered_bits(x, tensor)
    val = inst.weights[0] * (y.sum() - inst.n_users) ** 2
    val += float(np.sum(inst.weights[1:] * (dlv - inst.demands) ** 2))
    return float(val)


@dataclass(frozen=True)
class Violation:
    constraint: str
    detail: dict


def check_feasible(inst: Instance, x: np.ndarray, y: np.ndarray,
                   tensor: RateTensor, states: list,
                   catalog: GroupCatalog) -> list:
    """List every violated constraint of the scheduling program.

    Checks, per slot, the SINR floors of the scheduled group's users;
    the one-group-per-slot structure; the service-threshold coupling on
    the served flags; and binariness of the decision vectors.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    out = []
    if x.shape != (inst.slot_count,):
        out.append(Violation("one_group_per_slot",
                             {"reason": "schedule length mismatch"}))
        return out
    if np.any(x < 0) or np.any(x >= catalog.size) or not np.issubdtype(x.dtype, np.integer):
        out.append(Violation("binary_x", {"reason": "indices out of range"}))
        return out
    for t in range(inst.slot_count):
        group = catalog.groups[int(x[t])]
        if group.is_idle:
            continue
        gam = sinr(inst, group, states[t])
        for n, k in group.links:
            if gam[k] < inst.sinr_floors[k]:
                out.append(Violation("sinr_floor",
                                     {"user": k, "slot": t, "group": int(x[t]),
                                      "sinr": float(gam[k]),
                                      "floor": float(inst.sinr_floors[k])}))
    if y.shape != (inst.n_users,) or np.any((y != 0) & (y != 1)):
        out.append(Violation("binary_y", {"reason": "flags must be 0/1"}))
        return out
    dlv = delivered_bits(x, tensor)
    for k in range(inst.n_users):
        if y[k] == 1 and inst.thresholds[k] > dlv[k]:
            out.append(Violation("service_threshold",
                                 {"user": k, "delivered": float(dlv[k]),
                                  "threshold": float(inst.thresholds[k])}))
    return out
