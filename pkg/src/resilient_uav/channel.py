"""Rician fading draws, distance-based channel gains and SINR rates."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .scenario import _FADING_STREAM, ChannelParams, Scenario


@dataclass(frozen=True)
class ChannelRealization:
    """Fading power factors ``hbar[u, k, j]`` for slots ``first_slot + j``."""

    hbar: np.ndarray
    first_slot: int
    seed: int

    @property
    def n_slots(self) -> int:
        return self.hbar.shape[2]

    @property
    def last_slot(self) -> int:
        return self.first_slot + self.n_slots - 1

    def window(self, first: int, last: int) -> "ChannelRealization":
        if first < self.first_slot or last > self.last_slot:
            raise ValueError(f"slots [{first}, {last}] not covered by realization "
                             f"[{self.first_slot}, {self.last_slot}]")
        lo = first - self.first_slot
        return ChannelRealization(self.hbar[:, :, lo:lo + last - first + 1], first, self.seed)

    def slot(self, n: int) -> np.ndarray:
        return self.hbar[:, :, n - self.first_slot]

    def expected(self) -> "ChannelRealization":
        """Same shape with every factor replaced by its mean, 1."""
        return ChannelRealization(np.ones_like(self.hbar), self.first_slot, self.seed)

    def to_csv(self, path, uav_ids=None, user_ids=None) -> None:
        U, K, W = self.hbar.shape
        uav_ids = list(uav_ids) if uav_ids is not None else list(range(1, U + 1))
        user_ids = list(user_ids) if user_ids is not None else list(range(1, K + 1))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["uav", "user", "slot", "hbar"])
            for u in range(U):
                for k in range(K):
                    for j in range(W):
                        w.writerow([uav_ids[u], user_ids[k], self.first_slot + j, repr(float(self.hbar[u, k, j]))])


def rician_power(rician_m: float, size, rng: np.random.Generator) -> np.ndarray:
    """|sqrt(M/(M+1)) g_los + sqrt(1/(M+1)) g_nlos|^2 with a unit-phase LoS term."""
    if np.isinf(rician_m):
        return np.ones(size)
    los = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=size))
    nlos = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)
    h = np.sqrt(rician_m / (rician_m + 1.0)) * los + np.sqrt(1.0 / (rician_m + 1.0)) * nlos
    return np.abs(h) ** 2


def draw_fading(scenario: Scenario, window: tuple[int, int] | None = None,
                seed: int | None = None) -> ChannelRealization:
    """Independent Rician power factors per (uav, user, slot).

    Each slot draws from its own stream keyed by (seed, slot), so the value at
    a given slot does not depend on which window was requested.
    """
    seed = scenario.seed if seed is None else seed
    first, last = window if window is not None else (1, scenario.n_slots)
    U, K = scenario.n_uavs, scenario.n_users
    out = np.empty((U, K, last - first + 1))
    for j, n in enumerate(range(first, last + 1)):
        rng = np.random.default_rng([seed, _FADING_STREAM, n])
        out[:, :, j] = rician_power(scenario.channel.rician_m, (U, K), rng)
    return ChannelRealization(out, first, seed)


def channel_gain(position_u, position_k, h_bar, params: ChannelParams, altitude: float):
    """rho * hbar / (horizontal distance^2 + H^2); broadcasts over leading axes."""
    diff = np.asarray(position_u, dtype=float) - np.asarray(position_k, dtype=float)
    d2 = np.sum(diff * diff, axis=-1)
    return params.ref_gain_rho * np.asarray(h_bar, dtype=float) / (d2 + altitude ** 2)


def link_rate(bandwidth: float, gains, powers, serving_uav: int, noise: float, alive=None) -> float:
    """Shannon rate of one link with every other alive UAV as an interferer."""
    gains = np.asarray(gains, dtype=float)
    powers = np.asarray(powers, dtype=float)
    alive = np.ones(gains.shape, dtype=bool) if alive is None else np.asarray(alive, dtype=bool)
    if not alive[serving_uav]:
        raise ValueError(f"serving UAV {serving_uav} is not alive")
    rx = np.where(alive, gains * powers, 0.0)
    interference = rx.sum() - rx[serving_uav]
    return float(bandwidth * np.log2(1.0 + rx[serving_uav] / (interference + noise)))


def gain_table(traj: np.ndarray, scenario: Scenario, hbar: np.ndarray) -> np.ndarray:
    """Channel gains ``h[u, k, j]`` for trajectories ``traj[u, j, :]``."""
    users = scenario.user_positions()
    diff = traj[:, None, :, :] - users[None, :, None, :]
    d2 = np.einsum("ukjc,ukjc->ukj", diff, diff)
    return scenario.channel.ref_gain_rho * hbar / (d2 + scenario.altitude_h ** 2)


def spectral_efficiency(traj: np.ndarray, scenario: Scenario, hbar: np.ndarray, alive) -> np.ndarray:
    """log2(1 + SINR) for every (uav, user, slot); zero on rows of dead UAVs.

    Dead UAVs radiate nothing, so they are absent from every interference sum.
    """
    alive = np.asarray(alive, dtype=bool)
    rx = gain_table(traj, scenario, hbar) * scenario.powers()[:, None, None]
    rx[~alive] = 0.0
    interference = rx.sum(axis=0, keepdims=True) - rx
    se = np.log2(1.0 + rx / (interference + scenario.channel.noise_power))
    se[~alive] = 0.0
    return se


def rate_table(plan, scenario: Scenario, hbar: np.ndarray) -> np.ndarray:
    """Per-link contributions a * b * log2(1 + SINR), shape (uav, user, slot)."""
    se = spectral_efficiency(plan.traj, scenario, hbar, plan.alive)
    return plan.assoc * plan.bandwidth * se


def user_rates(plan, scenario: Scenario, hbar: np.ndarray) -> np.ndarray:
    """R_k[n] for every user and window slot, shape (user, slot)."""
    return rate_table(plan, scenario, hbar).sum(axis=0)


def sum_rates(plan, scenario: Scenario, hbar: np.ndarray) -> np.ndarray:
    return user_rates(plan, scenario, hbar).sum(axis=0)


def user_rate(plan, realization: ChannelRealization, scenario: Scenario, k: int, n: int) -> float:
    """Rate of user index ``k`` at absolute slot ``n``."""
    hbar = realization.window(plan.first_slot, plan.last_slot).hbar
    return float(user_rates(plan, scenario, hbar)[k, n - plan.first_slot])


def sum_rate(plan, realization: ChannelRealization, scenario: Scenario, n: int) -> float:
    hbar = realization.window(plan.first_slot, plan.last_slot).hbar
    return float(sum_rates(plan, scenario, hbar)[n - plan.first_slot])
