"""Episodic carpool dispatch environment.

One episode is one simulated day: the driver starts at second 0 at a random
grid cell and the episode ends once the clock crosses day end. Each step is
one of three top-level actions: wait in place, serve a single trip, or serve
two trips as a carpool. Trip assignment inside an action is handled by the
environment: the first trip is the earliest reachable pickup inside the
search window, and the carpool's second trip minimizes the passengers' total
extra travel time over the two possible dropoff orderings.

Leg travel times come from the historical record when the leg is an actual
recorded trip ((O1, D1) or (O2, D2)) and from the configured travel-time
source otherwise. Rewards are effective distance: the sum of the served
trips' recorded distances, in miles; zero whenever nothing was served.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from .geo import Bbox, GeoPoint, GridSpec
from .trips import DAY_TYPES, TripRecord, TripStore, WEEKDAY, WEEKEND

PATH_ONE = "I"    # drop the first passenger first: O1 -> O2 -> D1 -> D2
PATH_TWO = "II"   # drop the second passenger first: O1 -> O2 -> D2 -> D1
PATH_NONE = "none"

# Successful transitions always advance the clock by at least this much, so
# every episode terminates even on degenerate zero-length estimated legs.
_MIN_PROGRESS = 1.0


class Action(IntEnum):
    WAIT = 0
    TAKE_ONE = 1
    TAKE_TWO = 2


class EpisodeOver(RuntimeError):
    """step() was called on a state at or past day end."""


@dataclass(frozen=True)
class DriverState:
    location: GeoPoint
    time_of_day: float  # seconds; may pass day end on the final transition
    day_type: str = WEEKDAY

    def __post_init__(self):
        if self.day_type not in DAY_TYPES:
            raise ValueError(f"unknown day type {self.day_type!r}")

    @property
    def is_weekend(self) -> bool:
        return self.day_type == WEEKEND


@dataclass(frozen=True)
class EnvConfig:
    region: Bbox
    grid: GridSpec
    search_window: float = 600.0     # pickup-time window for the first trip
    carpool_fraction: float = 0.5    # second window as a fraction of trip 1's duration
    wait_delay: float = 600.0        # clock advance when waiting / nothing found
    episode_end: float = 86400.0
    day_type: str = WEEKDAY

    def __post_init__(self):
        if self.search_window <= 0:
            raise ValueError("search_window must be positive")
        if not 0 < self.carpool_fraction < 1:
            raise ValueError("carpool_fraction must lie in (0, 1)")
        if self.wait_delay <= 0:
            raise ValueError("wait_delay must be positive")
        if self.day_type not in DAY_TYPES:
            raise ValueError(f"unknown day type {self.day_type!r}")


@dataclass(frozen=True)
class TransitionInfo:
    """Diagnostics: which trips were served and which dropoff order was used."""

    trips: tuple[TripRecord, ...] = ()
    path: str = PATH_NONE
    total_extra_one: Optional[float] = None
    total_extra_two: Optional[float] = None


@dataclass(frozen=True)
class Transition:
    state: DriverState
    action: Action
    reward: float  # effective distance, miles
    next_state: DriverState
    done: bool
    info: TransitionInfo = field(default_factory=TransitionInfo)


@dataclass(frozen=True)
class ExtraTravelTimes:
    """Per-passenger extra travel time under both dropoff orderings.

    ``path_one`` drops passenger 1 first (O1 -> O2 -> D1 -> D2); ``path_two``
    drops passenger 2 first (O1 -> O2 -> D2 -> D1), in which case passenger 2
    rides exactly their solo trip and incurs zero extra time.
    """

    path_one: tuple[float, float]
    path_two: tuple[float, float]
    total_one: float
    total_two: float
    chosen: str  # PATH_ONE iff total_one < total_two, else PATH_TWO


def extra_travel_times(leg_time: Callable[[GeoPoint, GeoPoint], float],
                       o1: GeoPoint, d1: GeoPoint,
                       o2: GeoPoint, d2: GeoPoint) -> ExtraTravelTimes:
    """Evaluate both carpool dropoff orderings for the two passenger trips.

    ``leg_time`` must return the recorded duration for the two actual trips
    (o1, d1) and (o2, d2) and an estimate for every other leg.
    """
    t_o1_d1 = leg_time(o1, d1)
    t_o2_d2 = leg_time(o2, d2)
    t_o1_o2 = leg_time(o1, o2)
    t_o2_d1 = leg_time(o2, d1)

    ext1_p1 = t_o1_o2 + t_o2_d1 - t_o1_d1
    ext1_p2 = t_o2_d1 + leg_time(d1, d2) - t_o2_d2
    ext2_p1 = t_o1_o2 + t_o2_d2 + leg_time(d2, d1) - t_o1_d1
    ext2_p2 = 0.0

    total_one = ext1_p1 + ext1_p2
    total_two = ext2_p1 + ext2_p2
    chosen = PATH_ONE if total_one < total_two else PATH_TWO
    return ExtraTravelTimes((ext1_p1, ext1_p2), (ext2_p1, ext2_p2),
                            total_one, total_two, chosen)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class CarpoolEnv:
    """Single-taxi carpool environment over an immutable trip store.

    Trips are never consumed: the store models ambient demand, not a queue
    shared with other drivers.
    """

    def __init__(self, store: TripStore, eta_source, config: EnvConfig):
        self.store = store
        self.eta = eta_source
        self.config = config
        span_lat = config.region.lat_max - config.region.lat_min
        span_lon = config.region.lon_max - config.region.lon_min
        self._n_lat = int(np.floor(span_lat / config.grid.cell_lat + 1e-9))
        self._n_lon = int(np.floor(span_lon / config.grid.cell_lon + 1e-9))
        if self._n_lat < 1 or self._n_lon < 1:
            raise ValueError("region smaller than one grid cell")

    # -- episode control ---------------------------------------------------

    def reset(self, seed=None) -> DriverState:
        """Start a new day: time 0, location uniform over the region's cells."""
        rng = _as_rng(seed)
        i = int(rng.integers(self._n_lat))
        j = int(rng.integers(self._n_lon))
        origin = self.config.grid.origin_corner
        loc = GeoPoint(origin.lat + i * self.config.grid.cell_lat,
                       origin.lon + j * self.config.grid.cell_lon)
        return DriverState(loc, 0.0, self.config.day_type)

    def step(self, state: DriverState, action: Action) -> Transition:
        if state.time_of_day >= self.config.episode_end:
            raise EpisodeOver(
                f"episode already over at t={state.time_of_day}")
        if action == Action.WAIT:
            return self.wait(state)
        if action == Action.TAKE_ONE:
            return self.take_one(state)
        if action == Action.TAKE_TWO:
            return self.take_two(state)
        raise ValueError(f"unknown action {action!r}")

    # -- actions -----------------------------------------------------------

    def wait(self, state: DriverState) -> Transition:
        nxt = DriverState(state.location,
                          state.time_of_day + self.config.wait_delay,
                          state.day_type)
        return self._finish(state, Action.WAIT, 0.0, nxt, TransitionInfo())

    def take_one(self, state: DriverState) -> Transition:
        trip = self._first_assignment(state)
        if trip is None:
            return self._fallback(state, Action.TAKE_ONE)
        nxt = DriverState(trip.destination,
                          max(trip.dropoff_seconds,
                              state.time_of_day + _MIN_PROGRESS),
                          state.day_type)
        info = TransitionInfo(trips=(trip,))
        return self._finish(state, Action.TAKE_ONE, trip.distance, nxt, info)

    def take_two(self, state: DriverState) -> Transition:
        trip1 = self._first_assignment(state)
        if trip1 is None:
            return self._fallback(state, Action.TAKE_TWO)
        candidates = self._second_candidates(state, trip1)
        if not candidates:
            # Literal rollback: a failed second assignment yields nothing.
            return self._fallback(state, Action.TAKE_TWO)

        t_o1 = trip1.pickup_seconds
        best_trip, best_ett = None, None
        for cand in candidates:  # ascending pickup time; first minimum wins
            ett = extra_travel_times(self._leg_fn(state, trip1, cand),
                                     trip1.origin, trip1.destination,
                                     cand.origin, cand.destination)
            if best_ett is None or (ett.total_one + ett.total_two
                                    < best_ett.total_one + best_ett.total_two):
                best_trip, best_ett = cand, ett

        leg = self._leg_fn(state, trip1, best_trip)
        if best_ett.chosen == PATH_ONE:
            last_drop = best_trip.destination
            travel = (leg(trip1.origin, best_trip.origin)
                      + leg(best_trip.origin, trip1.destination)
                      + leg(trip1.destination, best_trip.destination))
        else:
            last_drop = trip1.destination
            travel = (leg(trip1.origin, best_trip.origin)
                      + leg(best_trip.origin, best_trip.destination)
                      + leg(best_trip.destination, trip1.destination))
        nxt = DriverState(last_drop,
                          max(t_o1 + travel, state.time_of_day + _MIN_PROGRESS),
                          state.day_type)
        info = TransitionInfo(trips=(trip1, best_trip), path=best_ett.chosen,
                              total_extra_one=best_ett.total_one,
                              total_extra_two=best_ett.total_two)
        reward = trip1.distance + best_trip.distance
        return self._finish(state, Action.TAKE_TWO, reward, nxt, info)

    # -- feasibility probes (read-only) -------------------------------------

    def can_take_one(self, state: DriverState) -> bool:
        return self._first_assignment(state) is not None

    def can_take_two(self, state: DriverState) -> bool:
        trip1 = self._first_assignment(state)
        if trip1 is None:
            return False
        return bool(self._second_candidates(state, trip1))

    # -- internals -----------------------------------------------------------

    def _first_assignment(self, state: DriverState) -> Optional[TripRecord]:
        """Earliest-pickup trip in the search window the taxi can reach in time."""
        t0 = state.time_of_day
        window = self.store.query_window(t0, t0 + self.config.search_window,
                                         state.day_type)
        for trip in window:
            approach = self.eta.travel_time(state.location, trip.origin,
                                            t0, state.is_weekend)
            if approach <= trip.pickup_seconds - t0:
                return trip
        return None

    def _second_candidates(self, state: DriverState,
                           trip1: TripRecord) -> list[TripRecord]:
        """Trips reachable from the first pickup within the carpool window."""
        t_o1 = trip1.pickup_seconds
        horizon = t_o1 + self.config.carpool_fraction * trip1.duration
        window = self.store.query_window(t_o1, horizon, state.day_type)
        out = []
        for trip in window:
            if trip is trip1:
                continue
            approach = self.eta.travel_time(trip1.origin, trip.origin,
                                            t_o1, state.is_weekend)
            if approach <= trip.pickup_seconds - t_o1:
                out.append(trip)
        return out

    def _leg_fn(self, state: DriverState, trip1: TripRecord,
                trip2: TripRecord) -> Callable[[GeoPoint, GeoPoint], float]:
        """Recorded durations for the two assigned trips, estimates elsewhere.

        Estimated legs are queried at the first pickup time.
        """
        t_query = trip1.pickup_seconds
        weekend = state.is_weekend

        def leg(a: GeoPoint, b: GeoPoint) -> float:
            if a == trip1.origin and b == trip1.destination:
                return trip1.duration
            if a == trip2.origin and b == trip2.destination:
                return trip2.duration
            return self.eta.travel_time(a, b, t_query, weekend)

        return leg

    def _fallback(self, state: DriverState, action: Action) -> Transition:
        nxt = DriverState(state.location,
                          state.time_of_day + self.config.wait_delay,
                          state.day_type)
        return self._finish(state, action, 0.0, nxt, TransitionInfo())

    def _finish(self, state, action, reward, nxt, info) -> Transition:
        done = nxt.time_of_day >= self.config.episode_end
        return Transition(state, action, reward, nxt, done, info)


# -- trace export ------------------------------------------------------------

def _state_dict(s: DriverState) -> dict:
    return {"lat": s.location.lat, "lon": s.location.lon,
            "t": s.time_of_day, "day_type": s.day_type}


def _trip_dict(r: TripRecord) -> dict:
    return {"o_lat": r.origin.lat, "o_lon": r.origin.lon,
            "d_lat": r.destination.lat, "d_lon": r.destination.lon,
            "pickup_s": r.pickup_seconds, "duration": r.duration,
            "distance": r.distance}


def transition_to_dict(tr: Transition) -> dict:
    return {
        "state": _state_dict(tr.state),
        "action": tr.action.name,
        "reward": tr.reward,
        "next_state": _state_dict(tr.next_state),
        "done": tr.done,
        "info": {
            "trips": [_trip_dict(t) for t in tr.info.trips],
            "path": tr.info.path,
            "total_extra_one": tr.info.total_extra_one,
            "total_extra_two": tr.info.total_extra_two,
        },
    }


def write_trace_jsonl(transitions, path) -> None:
    """One JSON object per line, one line per transition."""
    with open(path, "w") as fh:
        for tr in transitions:
            fh.write(json.dumps(transition_to_dict(tr)) + "\n")
