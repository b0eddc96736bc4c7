"""State-level Covid case ingestion and joint growth-rate estimation.

Input follows the public ``date,state,fips,cases,deaths`` daily-cases CSV
layout.  Ingestion accumulates each state's daily new cases into the
cumulative series the model observes, rescales calendar dates onto [0, 1],
and drops territories.  The growth pipeline then runs the full two-stage
calibration with a second-order system (one component per state) and emits
plot-ready curves: observed daily new cases, the filtered daily new cases
(first-derivative estimate), and the estimated growth rate (the fitted
right-hand side along the estimated states), all in per-day units.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date as _date

import numpy as np

from .network import save_checkpoint
from .panel_io import MalformedRow
from .pipeline import OdeCalibrator
from .smoother import TimeSeriesPanel

__all__ = [
    "CovidPanel",
    "MissingState",
    "US_STATES",
    "covid_growth",
    "ingest_covid",
]

logger = logging.getLogger(__name__)

US_STATES = (
    "Alabama", "Alaska", "Arizona", "Arkansas", "California", "Colorado",
    "Connecticut", "Delaware", "Florida", "Georgia", "Hawaii", "Idaho",
    "Illinois", "Indiana", "Iowa", "Kansas", "Kentucky", "Louisiana",
    "Maine", "Maryland", "Massachusetts", "Michigan", "Minnesota",
    "Mississippi", "Missouri", "Montana", "Nebraska", "Nevada",
    "New Hampshire", "New Jersey", "New Mexico", "New York",
    "North Carolina", "North Dakota", "Ohio", "Oklahoma", "Oregon",
    "Pennsylvania", "Rhode Island", "South Carolina", "South Dakota",
    "Tennessee", "Texas", "Utah", "Vermont", "Virginia", "Washington",
    "West Virginia", "Wisconsin", "Wyoming",
)

REQUIRED_COLUMNS = ["date", "state", "fips", "cases", "deaths"]


class MissingState(ValueError):
    """Requested (or required) states are absent from the input file."""


@dataclass
class CovidPanel:
    """Per-state cumulative case series with dates rescaled onto [0, 1]."""

    states: list
    dates: list        # list of lists of datetime.date per state
    cumulative: list   # list of float arrays per state
    times: list        # list of float arrays, global rescale of dates
    day_span: int      # days between the global first and last date

    @property
    def n_states(self) -> int:
        return len(self.states)

    def to_panel(self, scale: float = 1.0) -> TimeSeriesPanel:
        return TimeSeriesPanel(
            times=[t.copy() for t in self.times],
            values=[c / scale for c in self.cumulative],
        )


def ingest_covid(path, states=None) -> CovidPanel:
    """Parse the daily-cases CSV into cumulative per-state series.

    ``states=None`` keeps all 50 states (territories dropped) and raises
    :class:`MissingState` when any is absent; an explicit state list keeps
    exactly those, raising if one is missing.  Daily counts accumulate to
    cumulative series; any decrease in the cumulative series (negative
    daily revisions in the feed) is clipped to the running maximum and
    logged.
    """
    wanted = list(US_STATES) if states is None else list(states)
    unknown = [s for s in wanted if s not in US_STATES]
    if unknown:
        raise MissingState(f"not US states: {unknown}")
    per_state: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != REQUIRED_COLUMNS:
            raise MalformedRow(1, f"expected header {','.join(REQUIRED_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            state = row["state"]
            if state not in US_STATES:
                continue  # territories and districts are out of scope
            if states is not None and state not in wanted:
                continue
            try:
                day = _date.fromisoformat(row["date"])
                cases = float(row["cases"])
            except (ValueError, TypeError) as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            per_state.setdefault(state, []).append((day, cases))

    missing = [s for s in wanted if s not in per_state]
    if missing:
        raise MissingState(
            f"{len(missing)} expected state(s) absent from {path}: "
            f"{missing[:5]}{'...' if len(missing) > 5 else ''}"
        )

    all_days = [d for rows in per_state.values() for d, _ in rows]
    d0, d1 = min(all_days), max(all_days)
    span = (d1 - d0).days
    if span < 1:
        raise ValueError("input must cover at least two distinct dates")

    names, dates, cumulative, times = [], [], [], []
    for state in wanted:
        rows = sorted(per_state[state])
        days = [d for d, _ in rows]
        if len(days) != len(set(days)):
            raise ValueError(f"duplicate dates for {state}")
        daily = np.array([c for _, c in rows])
        cum = np.cumsum(daily)
        clipped = np.maximum.accumulate(cum)
        if np.any(clipped != cum):
            logger.warning(
                "cumulative cases for %s decreased at %d point(s); "
                "clipped to the running maximum", state,
                int(np.sum(clipped != cum)),
            )
        names.append(state)
        dates.append(days)
        cumulative.append(clipped.astype(float))
        times.append(np.array([(d - d0).days / span for d in days]))
    return CovidPanel(states=names, dates=dates, cumulative=cumulative,
                      times=times, day_span=span)


def covid_growth(panel: CovidPanel, calibrator: OdeCalibrator | None = None,
                 population: dict | None = None, checkpoint_path=None):
    """Joint two-stage growth-rate estimation over the panel's states.

    Cumulative counts are divided by their global maximum before fitting
    (a linear change of units that keeps the optimization well scaled) and
    the emitted curves are mapped back to per-day case units.  The filtered
    daily series is clipped at zero.  With a ``population`` mapping the
    curves are additionally normalized per 100k residents.

    Returns ``(curves, calibrator)`` where curves is a list of per-state
    dicts with keys state/date/time/observed/filtered/growth.
    """
    if calibrator is None:
        calibrator = OdeCalibrator(order=2, hidden=(32, 32), epochs=1500,
                                   train_trim=0.05, seed=0)
    if calibrator.order != 2:
        raise ValueError("the growth pipeline models a second-order system")
    scale = max(float(np.max(c)) for c in panel.cumulative)
    if scale <= 0:
        raise ValueError("panel has no positive case counts")
    calibrator.fit(panel.to_panel(scale=scale))

    # One smoothing pass over the union grid covers every state's dates.
    union = np.unique(np.concatenate(panel.times))
    est = calibrator.smoother_.transform(union)
    fhat = calibrator.predict(est.design_matrix())

    curves = []
    for j, state in enumerate(panel.states):
        t = panel.times[j]
        idx = np.searchsorted(union, t)
        # Back to per-day units: d/dday = d/dt / span, counts scale back by `scale`.
        filtered = scale * est.derivs[1][j, idx] / panel.day_span
        growth = scale * fhat[idx, j] / panel.day_span ** 2
        observed = np.diff(panel.cumulative[j], prepend=0.0)
        norm = 1.0
        if population is not None:
            pop = population.get(state)
            if pop is None or pop <= 0:
                raise ValueError(f"population table lacks a value for {state}")
            norm = 1e5 / pop  # per 100k residents
        curves.append({
            "state": state,
            "date": [d.isoformat() for d in panel.dates[j]],
            "time": t,
            "observed": observed * norm,
            "filtered": np.maximum(filtered, 0.0) * norm,
            "growth": growth * norm,
        })
    if checkpoint_path is not None:
        save_checkpoint(calibrator.network_, checkpoint_path,
                        seed=calibrator.seed)
    return curves, calibrator


def write_curves(curves: list, path):
    """Plot-ready long CSV: state,date,time,observed,filtered,growth."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "date", "time", "observed", "filtered", "growth"])
        for cur in curves:
            for i in range(len(cur["time"])):
                w.writerow([
                    cur["state"], cur["date"][i], repr(float(cur["time"][i])),
                    repr(float(cur["observed"][i])),
                    repr(float(cur["filtered"][i])),
                    repr(float(cur["growth"][i])),
                ])
