"""Experiment world: UAV fleet, ground users, channel constants, time grid and failures.

All value types are frozen dataclasses so a scenario can be shared between
concurrent episode runs. ``validate_scenario`` collects every violated
invariant instead of stopping at the first one.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

Point = tuple[float, float]

DEFAULT_TX_POWER = 0.1  # W
DEFAULT_NOISE_POWER = 1e-13  # W
DEFAULT_NUM_USERS = 9
DEFAULT_AREA = ((0.0, 0.0), (500.0, 500.0))

_USER_STREAM = 1
_FADING_STREAM = 2


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


@dataclass(frozen=True)
class UavConfig:
    id: int
    initial_position: Point
    bandwidth_budget: float  # Hz
    tx_power: float = DEFAULT_TX_POWER  # W


@dataclass(frozen=True)
class UserSite:
    id: int
    position: Point


@dataclass(frozen=True)
class FailureEvent:
    uav_id: int
    slot: int  # first slot at which the UAV is unavailable (1-based)


@dataclass(frozen=True)
class ChannelParams:
    ref_gain_rho: float  # linear power gain at 1 m
    rician_m: float  # linear Rician factor
    noise_power: float = DEFAULT_NOISE_POWER  # W


@dataclass(frozen=True)
class SlotBounds:
    q_min: Point
    q_max: Point


@dataclass(frozen=True)
class Scenario:
    uavs: tuple[UavConfig, ...]
    users: tuple[UserSite, ...]
    channel: ChannelParams
    n_slots: int
    slot_bounds: SlotBounds
    altitude_h: float
    d_max: float
    d_min: float
    failures: tuple[FailureEvent, ...] = ()
    seed: int = 0
    # When set, ``users`` were drawn uniformly in the area from ``seed`` and
    # are redrawn by ``reseeded``.
    random_users: int | None = None

    @property
    def n_uavs(self) -> int:
        return len(self.uavs)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def uav_index(self, uav_id: int) -> int:
        for i, uav in enumerate(self.uavs):
            if uav.id == uav_id:
                return i
        raise KeyError(f"unknown UAV id {uav_id}")

    def initial_positions(self) -> np.ndarray:
        return np.array([u.initial_position for u in self.uavs], dtype=float).reshape(-1, 2)

    def user_positions(self) -> np.ndarray:
        return np.array([k.position for k in self.users], dtype=float).reshape(-1, 2)

    def budgets(self) -> np.ndarray:
        return np.array([u.bandwidth_budget for u in self.uavs], dtype=float)

    def powers(self) -> np.ndarray:
        return np.array([u.tx_power for u in self.uavs], dtype=float)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.asarray(self.slot_bounds.q_min, dtype=float),
                np.asarray(self.slot_bounds.q_max, dtype=float))

    def failure_slots(self) -> list[int]:
        """Distinct failure slots in increasing order."""
        return sorted({f.slot for f in self.failures})

    def alive_mask(self, slot: int) -> np.ndarray:
        """UAVs still operating at ``slot`` (1-based)."""
        alive = np.ones(self.n_uavs, dtype=bool)
        for f in self.failures:
            if f.slot <= slot:
                alive[self.uav_index(f.uav_id)] = False
        return alive

    def reseeded(self, seed: int) -> "Scenario":
        """Same scenario under another seed; random user layouts are redrawn."""
        if self.random_users is None:
            return dataclasses.replace(self, seed=seed)
        users = random_users(self.random_users, self.slot_bounds, seed)
        return dataclasses.replace(self, seed=seed, users=users)


def random_users(count: int, bounds: SlotBounds, seed: int) -> tuple[UserSite, ...]:
    """Users placed uniformly at random in the flying area."""
    rng = np.random.default_rng([seed, _USER_STREAM])
    lo = np.asarray(bounds.q_min, dtype=float)
    hi = np.asarray(bounds.q_max, dtype=float)
    xy = rng.uniform(lo, hi, size=(count, 2))
    return tuple(UserSite(id=k + 1, position=(float(x), float(y))) for k, (x, y) in enumerate(xy))


def paper_setup(seed: int = 0, n_users: int = DEFAULT_NUM_USERS,
                failure_uav: int | None = 1, failure_slot: int = 11) -> Scenario:
    """Three UAVs at 60 m with 10 kHz each, 20 slots and one mid-episode failure."""
    bounds = SlotBounds(*DEFAULT_AREA)
    uavs = tuple(
        UavConfig(id=i + 1, initial_position=p, bandwidth_budget=10e3, tx_power=DEFAULT_TX_POWER)
        for i, p in enumerate([(125.0, 375.0), (375.0, 375.0), (250.0, 125.0)])
    )
    failures = () if failure_uav is None else (FailureEvent(uav_id=failure_uav, slot=failure_slot),)
    return Scenario(
        uavs=uavs,
        users=random_users(n_users, bounds, seed),
        channel=ChannelParams(ref_gain_rho=db_to_linear(-20.0), rician_m=db_to_linear(3.0),
                              noise_power=DEFAULT_NOISE_POWER),
        n_slots=20,
        slot_bounds=bounds,
        altitude_h=60.0,
        d_max=25.0,
        d_min=4.0,
        failures=failures,
        seed=seed,
        random_users=n_users,
    )


class ScenarioError(ValueError):
    """Raised with the full list of diagnostics when a scenario is invalid."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _finite_point(p: Any) -> bool:
    try:
        return len(p) == 2 and all(math.isfinite(float(v)) for v in p)
    except (TypeError, ValueError):
        return False


def scenario_problems(s: Scenario) -> list[str]:
    """Every violated scenario invariant, one message per violation."""
    problems: list[str] = []
    if s.n_slots < 1:
        problems.append("n_slots: must be >= 1")
    if not s.d_max > 0:
        problems.append("d_max: must be > 0")
    if not s.d_min >= 0:
        problems.append("d_min: must be >= 0")
    if not s.altitude_h > 0:
        problems.append("altitude_h: must be > 0")
    ch = s.channel
    if not ch.ref_gain_rho > 0:
        problems.append("channel.ref_gain_rho: must be > 0")
    if not ch.rician_m >= 0:
        problems.append("channel.rician_m: must be >= 0")
    if not ch.noise_power > 0:
        problems.append("channel.noise_power: must be > 0")

    lo_ok = _finite_point(s.slot_bounds.q_min)
    hi_ok = _finite_point(s.slot_bounds.q_max)
    if not (lo_ok and hi_ok):
        problems.append("slot_bounds: q_min and q_max must be finite 2-D points")
    elif not all(a < b for a, b in zip(s.slot_bounds.q_min, s.slot_bounds.q_max)):
        problems.append("slot_bounds: q_min must be strictly below q_max")

    if not s.uavs:
        problems.append("uavs: at least one UAV is required")
    ids = [u.id for u in s.uavs]
    if len(set(ids)) != len(ids):
        problems.append("uavs.id: duplicate UAV ids")
    for u in s.uavs:
        if not u.bandwidth_budget > 0:
            problems.append(f"uavs[{u.id}].bandwidth_budget: must be > 0")
        if not u.tx_power > 0:
            problems.append(f"uavs[{u.id}].tx_power: must be > 0")
        if not _finite_point(u.initial_position):
            problems.append(f"uavs[{u.id}].initial_position: must be a finite 2-D point")
        elif lo_ok and hi_ok:
            x, y = u.initial_position
            (x0, y0), (x1, y1) = s.slot_bounds.q_min, s.slot_bounds.q_max
            if not (x0 <= x <= x1 and y0 <= y <= y1):
                problems.append(f"uavs[{u.id}].initial_position: outside slot_bounds")
    for i, a in enumerate(s.uavs):
        for b in s.uavs[i + 1:]:
            if _finite_point(a.initial_position) and _finite_point(b.initial_position):
                sep = math.dist(a.initial_position, b.initial_position)
                if sep < s.d_min:
                    problems.append(
                        f"uavs[{a.id}],uavs[{b.id}].initial_position: initial separation below D_min "
                        f"({sep:.6g} < {s.d_min:.6g})")

    user_ids = [k.id for k in s.users]
    if len(set(user_ids)) != len(user_ids):
        problems.append("users.id: duplicate user ids")
    for k in s.users:
        if not _finite_point(k.position):
            problems.append(f"users[{k.id}].position: must be a finite 2-D point")

    failed: set[int] = set()
    for f in s.failures:
        if f.uav_id not in ids:
            problems.append(f"failures: unknown uav_id {f.uav_id}")
        if not 2 <= f.slot <= s.n_slots:
            problems.append(f"failures[{f.uav_id}].slot: failure slot out of range [2, {s.n_slots}] ({f.slot})")
        if f.uav_id in failed:
            problems.append(f"failures: uav_id {f.uav_id} fails more than once")
        failed.add(f.uav_id)
    if ids and set(ids) <= failed:
        problems.append("failures: no UAV survives the failure schedule")
    return problems


def validate_scenario(raw: Scenario) -> Scenario:
    """Return ``raw`` unchanged if it is valid, else raise ScenarioError listing all problems."""
    problems = scenario_problems(raw)
    if problems:
        raise ScenarioError(problems)
    return raw


# ---------------------------------------------------------------------------
# JSON schema (strict: unknown fields are errors)
# ---------------------------------------------------------------------------

class SchemaError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _check_keys(obj: Any, where: str, required: set[str], optional: set[str], problems: list[str]) -> bool:
    if not isinstance(obj, dict):
        problems.append(f"{where}: expected an object, got {type(obj).__name__}")
        return False
    for key in obj:
        if key not in required | optional:
            problems.append(f"{where}.{key}: unknown field")
    for key in required:
        if key not in obj:
            problems.append(f"{where}.{key}: missing required field")
    return True


def _number(obj: dict, key: str, where: str, problems: list[str], default: float | None = None) -> float | None:
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append(f"{where}.{key}: type mismatch, expected number, got {type(v).__name__}")
        return default
    return float(v)


def _integer(obj: dict, key: str, where: str, problems: list[str], default: int | None = None) -> int | None:
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        problems.append(f"{where}.{key}: type mismatch, expected integer, got {type(v).__name__}")
        return default
    return v


def _point(obj: dict, key: str, where: str, problems: list[str]) -> Point | None:
    if key not in obj:
        return None
    v = obj[key]
    if (not isinstance(v, list) or len(v) != 2
            or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)):
        problems.append(f"{where}.{key}: type mismatch, expected [x, y] numbers")
        return None
    return (float(v[0]), float(v[1]))


def scenario_from_dict(data: Any) -> Scenario:
    """Strict parse of the scenario JSON object; raises SchemaError with all problems.

    Optional fields fall back to the documented defaults. ``channel`` accepts
    either linear values or ``*_db`` variants (converted here), and users may
    be given explicitly or as ``random_users: K``.
    """
    problems: list[str] = []
    top_req = {"uavs", "channel", "n_slots", "altitude_h", "d_max", "d_min"}
    top_opt = {"users", "random_users", "slot_bounds", "failures", "seed"}
    if not _check_keys(data, "scenario", top_req, top_opt, problems):
        raise SchemaError(problems)

    seed = _integer(data, "seed", "scenario", problems, 0)
    n_slots = _integer(data, "n_slots", "scenario", problems, 1)
    altitude = _number(data, "altitude_h", "scenario", problems, 1.0)
    d_max = _number(data, "d_max", "scenario", problems, 1.0)
    d_min = _number(data, "d_min", "scenario", problems, 0.0)

    bounds = SlotBounds(*DEFAULT_AREA)
    if "slot_bounds" in data:
        sb = data["slot_bounds"]
        if _check_keys(sb, "scenario.slot_bounds", {"q_min", "q_max"}, set(), problems):
            lo = _point(sb, "q_min", "scenario.slot_bounds", problems)
            hi = _point(sb, "q_max", "scenario.slot_bounds", problems)
            if lo and hi:
                bounds = SlotBounds(lo, hi)

    channel = ChannelParams(1.0, 0.0, DEFAULT_NOISE_POWER)
    ch = data.get("channel")
    if _check_keys(ch, "scenario.channel", set(),
                   {"ref_gain_rho", "ref_gain_rho_db", "rician_m", "rician_m_db", "noise_power", "noise_power_dbm"},
                   problems):
        w = "scenario.channel"
        for lin, log in (("ref_gain_rho", "ref_gain_rho_db"), ("rician_m", "rician_m_db")):
            if (lin in ch) == (log in ch):
                problems.append(f"{w}: exactly one of {lin} or {log} is required")
        if "noise_power" in ch and "noise_power_dbm" in ch:
            problems.append(f"{w}: give noise_power or noise_power_dbm, not both")
        rho = _number(ch, "ref_gain_rho", w, problems)
        if rho is None:
            rho_db = _number(ch, "ref_gain_rho_db", w, problems)
            rho = db_to_linear(rho_db) if rho_db is not None else 1.0
        m = _number(ch, "rician_m", w, problems)
        if m is None:
            m_db = _number(ch, "rician_m_db", w, problems)
            m = db_to_linear(m_db) if m_db is not None else 0.0
        noise = _number(ch, "noise_power", w, problems)
        if noise is None:
            dbm = _number(ch, "noise_power_dbm", w, problems)
            noise = db_to_linear(dbm) * 1e-3 if dbm is not None else DEFAULT_NOISE_POWER
        channel = ChannelParams(rho, m, noise)

    uavs: list[UavConfig] = []
    raw_uavs = data.get("uavs")
    if not isinstance(raw_uavs, list):
        problems.append("scenario.uavs: expected a list")
    else:
        for i, u in enumerate(raw_uavs):
            w = f"scenario.uavs[{i}]"
            if not _check_keys(u, w, {"id", "initial_position", "bandwidth_budget"}, {"tx_power"}, problems):
                continue
            uid = _integer(u, "id", w, problems)
            pos = _point(u, "initial_position", w, problems)
            bw = _number(u, "bandwidth_budget", w, problems)
            p = _number(u, "tx_power", w, problems, DEFAULT_TX_POWER)
            if uid is not None and pos is not None and bw is not None:
                uavs.append(UavConfig(uid, pos, bw, p))

    n_random = _integer(data, "random_users", "scenario", problems)
    users: tuple[UserSite, ...] = ()
    if "users" in data and n_random is not None:
        problems.append("scenario: give users or random_users, not both")
    elif "users" in data:
        raw_users = data["users"]
        if not isinstance(raw_users, list):
            problems.append("scenario.users: expected a list")
        else:
            parsed = []
            for i, k in enumerate(raw_users):
                w = f"scenario.users[{i}]"
                if not _check_keys(k, w, {"id", "position"}, set(), problems):
                    continue
                kid = _integer(k, "id", w, problems)
                pos = _point(k, "position", w, problems)
                if kid is not None and pos is not None:
                    parsed.append(UserSite(kid, pos))
            users = tuple(parsed)
    else:
        if n_random is None:
            n_random = DEFAULT_NUM_USERS
        if n_random < 1:
            problems.append("scenario.random_users: must be >= 1")
        else:
            users = random_users(n_random, bounds, seed)

    failures: list[FailureEvent] = []
    raw_fail = data.get("failures", [])
    if not isinstance(raw_fail, list):
        problems.append("scenario.failures: expected a list")
    else:
        for i, f in enumerate(raw_fail):
            w = f"scenario.failures[{i}]"
            if not _check_keys(f, w, {"uav_id", "slot"}, set(), problems):
                continue
            uid = _integer(f, "uav_id", w, problems)
            slot = _integer(f, "slot", w, problems)
            if uid is not None and slot is not None:
                failures.append(FailureEvent(uid, slot))

    scenario = Scenario(
        uavs=tuple(uavs), users=users, channel=channel, n_slots=n_slots, slot_bounds=bounds,
        altitude_h=altitude, d_max=d_max, d_min=d_min, failures=tuple(failures), seed=seed,
        random_users=n_random if "users" not in data else None,
    )
    if problems:
        # stray keys leave every value intact, so the invariants can still be reported
        if all(p.endswith(": unknown field") for p in problems):
            problems += scenario_problems(scenario)
        raise SchemaError(problems)
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    out: dict[str, Any] = {
        "seed": s.seed,
        "n_slots": s.n_slots,
        "altitude_h": s.altitude_h,
        "d_max": s.d_max,
        "d_min": s.d_min,
        "slot_bounds": {"q_min": list(s.slot_bounds.q_min), "q_max": list(s.slot_bounds.q_max)},
        "channel": {
            "ref_gain_rho": s.channel.ref_gain_rho,
            "rician_m": s.channel.rician_m,
            "noise_power": s.channel.noise_power,
        },
        "uavs": [
            {"id": u.id, "initial_position": list(u.initial_position),
             "bandwidth_budget": u.bandwidth_budget, "tx_power": u.tx_power}
            for u in s.uavs
        ],
        "failures": [{"uav_id": f.uav_id, "slot": f.slot} for f in s.failures],
    }
    if s.random_users is not None:
        out["random_users"] = s.random_users
    else:
        out["users"] = [{"id": k.id, "position": list(k.position)} for k in s.users]
    return out


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return validate_scenario(scenario_from_dict(json.load(fh)))
