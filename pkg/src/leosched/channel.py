"""Physical-layer link gains and the finite-state Markov channel (FSMC).

Satellite links (Ka-band) combine free-space loss, a pitch-angle gain
lookup, an atmospheric cloud/rain term, and Rician small-scale fading.
Terrestrial links (C-band) combine free-space loss and Rayleigh fading.
Time variation is captured by quantizing the gain process into L levels
with an empirical Markov transition matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget constants shared by all transmitter-receiver pairs.

    All gains are linear (not dB). ``chi`` is the cloud/rain attenuation
    coefficient in dB/km; ``pitch_gain_table`` maps elevation angle (rad)
    to a linear pitch-angle gain and defaults to all-ones.
    """

    c: float = SPEED_OF_LIGHT
    f_leo: float = 30e9          # Ka-band carrier (Hz)
    f_ter: float = 4e9           # C-band carrier (Hz)
    g_tx_leo: float = 1e4        # satellite transmit antenna gain
    g_tx_ter: float = 10.0       # BS/TST transmit antenna gain
    g_rx: float = 100.0          # receive antenna gain
    chi: float = 1.0             # cloud/rain attenuation (dB/km)
    h_alt: float = 780e3         # satellite altitude (m)
    rician_k: float = 10.0       # Rician K-factor (linear)
    pitch_gain_table: tuple = (
        (0.0, 1.0),
        (math.pi / 2.0, 1.0),
    )

    def __post_init__(self):
        for name in ("c", "g_tx_leo", "g_tx_ter", "g_rx"):
            if getattr(self, name) <= 0:
                raise ChannelError(f"{name} must be positive")
        if self.f_leo <= self.f_ter:
            raise ChannelError("f_leo must exceed f_ter")
        if self.h_alt <= 0:
            raise ChannelError("h_alt must be positive")
        if self.chi < 0:
            raise ChannelError("chi must be non-negative")
        if self.rician_k <= 0:
            raise ChannelError("rician_k must be positive")

    def pitch_gain(self, elevation: float) -> float:
        angles = np.array([row[0] for row in self.pitch_gain_table])
        gains = np.array([row[1] for row in self.pitch_gain_table])
        return float(np.interp(elevation, angles, gains))


def atmospheric_loss(d: float, params: ChannelParams) -> float:
    """Cloud/rain term 10^(3*chi*d / (10*H)), applied verbatim.

    Note the exponent is positive, so the factor is >= 1 for chi >= 0;
    the formula is kept exactly as specified rather than reinterpreted
    as a dB attenuation.
    """
    return 10.0 ** (3.0 * params.chi * d / (10.0 * params.h_alt))


def free_space_factor(d: float, f: float, c: float) -> float:
    return (c / (4.0 * math.pi * d * f)) ** 2


def leo_path_gain(d: float, params: ChannelParams, rician_draw: float,
                  pitch: float = math.pi / 2.0) -> float:
    """Linear gain of a satellite downlink at propagation distance ``d`` (m).

    ``rician_draw`` is the small-scale power factor (unit mean); ``pitch``
    is the elevation angle in rad used for the pitch-gain lookup.
    """
    if d <= 0:
        raise ChannelError(f"distance must be positive, got {d}")
    if rician_draw <= 0:
        raise ChannelError(f"rician_draw must be positive, got {rician_draw}")
    fs = free_space_factor(d, params.f_leo, params.c)
    return (params.g_tx_leo * fs * params.pitch_gain(pitch)
            * atmospheric_loss(d, params) * rician_draw * params.g_rx)


def ter_path_gain(d: float, params: ChannelParams, rayleigh_draw: float) -> float:
    """Linear gain of a terrestrial link at distance ``d`` (m).

    ``rayleigh_draw`` is the small-scale power factor; zero models a
    deep fade.
    """
    if d <= 0:
        raise ChannelError(f"distance must be positive, got {d}")
    if rayleigh_draw < 0:
        raise ChannelError(f"rayleigh_draw must be non-negative, got {rayleigh_draw}")
    fs = free_space_factor(d, params.f_ter, params.c)
    return params.g_tx_ter * fs * rayleigh_draw * params.g_rx


# ---------------------------------------------------------------------------
# FSMC construction and stepping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FadingComponent:
    """One link's gain process: deterministic base gain times a fading factor."""

    base_gain: float = 1.0
    kind: str = "rician"         # "rician" | "rayleigh"
    k_factor: float = 10.0

    def __post_init__(self):
        if self.kind not in ("rician", "rayleigh"):
            raise ChannelError(f"unknown fading kind {self.kind!r}")
        if self.base_gain < 0:
            raise ChannelError("base_gain must be non-negative")


@dataclass(frozen=True)
class FadingConfig:
    """Parameters of the simulated gain process the FSMC quantizes.

    ``components`` lists the links whose marginals are pooled; each is
    simulated as an AR(1)-correlated complex diffuse term (per-slot
    correlation ``corr``) shaping a Rician or Rayleigh power envelope.
    """

    components: tuple = (FadingComponent(),)
    corr: float = 0.9

    def __post_init__(self):
        if not (0.0 <= self.corr < 1.0 or self.corr == 1.0):
            raise ChannelError("corr must lie in [0, 1]")
        if not self.components:
            raise ChannelError("at least one fading component required")


@dataclass
class FsmcModel:
    """Quantized channel: L ascending gain levels and a row-stochastic matrix."""

    levels: np.ndarray
    transition: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.transition = np.asarray(self.transition, dtype=float)
        L = self.levels.shape[0]
        if self.transition.shape != (L, L):
            raise ChannelError("transition must be LxL")
        if np.any(np.diff(self.levels) <= 0):
            raise ChannelError("levels must be strictly ascending")
        rows = self.transition.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise ChannelError("transition rows must sum to 1")
        if np.any(self.transition < 0) or np.any(self.transition > 1):
            raise ChannelError("transition entries must lie in [0, 1]")

    @property
    def n_levels(self) -> int:
        return self.levels.shape[0]

    def stationary(self) -> np.ndarray:
        """Stationary level distribution (power iteration; uniform fallback)."""
        L = self.n_levels
        pi = np.full(L, 1.0 / L)
        for _ in range(500):
            nxt = pi @ self.transition
            if np.max(np.abs(nxt - pi)) < 1e-14:
                pi = nxt
                break
            pi = nxt
        pi = np.maximum(pi, 0.0)
        s = pi.sum()
        return pi / s if s > 0 else np.full(L, 1.0 / L)

    def to_dict(self) -> dict:
        return {"levels": self.levels.tolist(),
                "transition": self.transition.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FsmcModel":
        return cls(levels=np.array(d["levels"], dtype=float),
                   transition=np.array(d["transition"], dtype=float))


@dataclass
class ChannelState:
    """Current K x N gain grid plus its FSMC level indices."""

    grid: np.ndarray
    level_index: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.level_index = np.asarray(self.level_index, dtype=int)
        if self.grid.shape != self.level_index.shape:
            raise ChannelError("grid and level_index shapes differ")

    @property
    def shape(self):
        return self.grid.shape

    def check_consistent(self, model: FsmcModel) -> None:
        if np.any(self.level_index < 0) or np.any(self.level_index >= model.n_levels):
            raise ChannelError("level_index out of range for model")
        if not np.array_equal(self.grid, model.levels[self.level_index]):
            raise ChannelError("grid inconsistent with model levels")


def _simulate_envelope(comp: FadingComponent, corr: float, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """AR(1)-correlated unit-mean power envelope for one link."""
    re = rng.standard_normal(n)
    im = rng.standard_normal(n)
    a = corr
    b = math.sqrt(max(0.0, 1.0 - a * a))
    u = np.empty(n, dtype=complex)
    u[0] = complex(re[0], im[0]) / math.sqrt(2.0)
    for t in range(1, n):
        w = complex(re[t], im[t]) / math.sqrt(2.0)
        u[t] = a * u[t - 1] + b * w
    if comp.kind == "rician":
        k = comp.k_factor
        los = math.sqrt(k / (k + 1.0))
        diff = math.sqrt(1.0 / (k + 1.0))
        return np.abs(los + diff * u) ** 2
    return np.abs(u) ** 2


def build_fsmc(fading_cfg: FadingConfig, L: int, n_samples: int,
               rng_seed: int) -> FsmcModel:
    """Quantize the simulated gain process into an L-level Markov model.

    Level boundaries are equal-probability quantiles of the pooled
    marginal, level values are per-bin conditional means, and the
    transition matrix counts empirical level-to-level moves within each
    component's own run (never across components).
    """
    if L < 2:
        raise ChannelError("L must be at least 2")
    if n_samples < 10 * L * L:
        raise ChannelError(f"n_samples must be >= 10*L^2 = {10 * L * L}")
    rng = np.random.default_rng(rng_seed)
    n_comp = len(fading_cfg.components)
    per = max(2, int(math.ceil(n_samples / n_comp)))
    runs = []
    for comp in fading_cfg.components:
        env = _simulate_envelope(comp, fading_cfg.corr, per, rng)
        runs.append(comp.base_gain * env)
    pooled = np.concatenate(runs)

    mean = pooled.mean()
    spread = pooled.std()
    if spread <= 1e-12 * max(abs(mean), 1e-300):
        # Constant process: identity transitions, levels jittered only to
        # keep the strictly-ascending contract.
        base = mean if mean > 0 else 1.0
        eps = base * 1e-12
        levels = base + eps * np.arange(L)
        return FsmcModel(levels=levels, transition=np.eye(L), degenerate=True)

    edges = np.quantile(pooled, np.arange(1, L) / L)
    bin_of = np.searchsorted(edges, pooled, side="left")
    level_values = np.empty(L)
    for l in range(L):
        mask = bin_of == l
        if mask.any():
            level_values[l] = pooled[mask].mean()
        else:
            lo = edges[l - 1] if l > 0 else pooled.min()
            hi = edges[l] if l < L - 1 else pooled.max()
            level_values[l] = 0.5 * (lo + hi)
    # Ties from heavy quantile collisions would break ascension; nudge.
    for l in range(1, L):
        if level_values[l] <= level_values[l - 1]:
            level_values[l] = np.nextafter(level_values[l - 1], np.inf)

    counts = np.zeros((L, L))
    for run in runs:
        idx = np.searchsorted(edges, run, side="left")
        np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
    transition = np.empty((L, L))
    for l in range(L):
        s = counts[l].sum()
        if s > 0:
            transition[l] = counts[l] / s
        else:
            transition[l] = 0.0
            transition[l, l] = 1.0
    # Renormalize exactly against float drift.
    transition /= transition.sum(axis=1, keepdims=True)
    return FsmcModel(levels=level_values, transition=transition)


def initial_state(model: FsmcModel, n_users: int, n_transmitters: int,
                  rng: np.random.Generator) -> ChannelState:
    """Draw a K x N grid from the stationary level distribution."""
    pi = model.stationary()
    idx = rng.choice(model.n_levels, size=(n_users, n_transmitters), p=pi)
    return ChannelState(grid=model.levels[idx], level_index=idx)


def step_channel(state: ChannelState, model: FsmcModel,
                 rng: np.random.Generator) -> ChannelState:
    """Advance every grid entry one slot; entries transition independently."""
    state.check_consistent(model)
    flat = state.level_index.ravel()
    cum = np.cumsum(model.transition, axis=1)
    u = rng.random(flat.shape[0])
    rows = cum[flat]
    nxt = (rows < u[:, None]).sum(axis=1)
    nxt = np.minimum(nxt, model.n_levels - 1)
    idx = nxt.reshape(state.level_index.shape)
    return ChannelState(grid=model.levels[idx], level_index=idx)
