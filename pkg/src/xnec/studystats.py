"""Quantitative analysis of the user-study response table.

Covers the full analysis stack: Pearson and point-biserial correlations on
necessity ratings, per-scenario Friedman tests on explanation-content
rankings, the three-condition driver-type rule, and seat-transition trust
tallies. All computations are pure; loaders at the bottom read the two-file
CSV layout produced by the fixture generator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import ValidationError, XnecError


class IncompleteResponseError(XnecError):
    """A participant's driver-type answers are missing."""


# Explanation-content formats participants ranked (1 = most preferred).
CONTENT_FORMATS = (
    "action_reason_first",
    "action_reason_third",
    "action_first",
    "action_third",
)

# Raw seat codes: A front driver, C front passenger, B/D the two back seats
# (merged to one "back" group for transition analysis).
SEAT_GROUPS = {"A": "front-driver", "B": "back", "C": "front-passenger", "D": "back"}
SEAT_ORDER = ("front-driver", "front-passenger", "back")
CONDITION_PAIRS = ("ordinary_to_av", "av_to_av_explained", "ordinary_to_av_explained")
REASON_CODES = ("comfort", "safety", "control")

SPEED_LIMIT_CONTEXT_MPH = 30.0
AGGRESSIVE_SPEED_MPH = 35.0  # strictly above counts as speeding


@dataclass(frozen=True)
class RatingRow:
    """One participant's answers for one driving clip."""

    participant_id: str
    vid: str
    necessity: float
    attention: float
    ranking: dict[str, int]
    scenario_flags: dict[str, int]


@dataclass(frozen=True)
class ParticipantRow:
    """Post-study answers for one participant."""

    participant_id: str
    speed_mph: float | None
    self_described_aggressive: bool | None
    frequent_lane_changes: bool | None
    motion_sickness: int
    seat_ordinary: str
    seat_av: str
    seat_av_explained: str
    reasons: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class StudyResponseTable:
    ratings: tuple[RatingRow, ...]
    participants: tuple[ParticipantRow, ...]


@dataclass(frozen=True)
class DriverType:
    participant_id: str
    type: str  # "aggressive" | "cautious"
    triggered_conditions: tuple[str, ...]


@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    dof: int
    p_value: float
    reject: bool
    alpha: float
    n_subjects: int
    k_treatments: int


# ---------------------------------------------------------------------------
# correlations
# ---------------------------------------------------------------------------


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation; errors on constant input."""
    if len(x) != len(y):
        raise ValidationError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise ValidationError("pearson needs at least 3 points")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("correlation undefined for a constant series")
    return float(np.dot(xc, yc) / (sx * sy))


def point_biserial(b: Sequence[int], y: Sequence[float]) -> float:
    """Correlation of a binary variable with a continuous one.

    Computed with the two-group mean formula; mathematically identical to
    Pearson on the {0,1} coding, which is how it is cross-checked.
    """
    if len(b) != len(y):
        raise ValidationError(f"length mismatch: {len(b)} vs {len(y)}")
    ba = np.asarray(b, dtype=np.float64)
    if not set(np.unique(ba)) <= {0.0, 1.0}:
        raise ValidationError("binary series must be coded {0, 1}")
    ya = np.asarray(y, dtype=np.float64)
    n = ba.shape[0]
    n1 = float(ba.sum())
    n0 = n - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("binary series must contain both classes")
    s = float(ya.std())  # population sd
    if s == 0.0:
        raise ValidationError("correlation undefined for a constant series")
    m1 = float(ya[ba == 1].mean())
    m0 = float(ya[ba == 0].mean())
    return float((m1 - m0) / s * math.sqrt(n1 * n0) / n)


# ---------------------------------------------------------------------------
# Friedman test
# ---------------------------------------------------------------------------


def _check_ranking_row(row: Sequence[float], k: int) -> None:
    """A valid row is the mid-rank transform of some k-vector."""
    if len(row) != k:
        raise ValidationError(f"ranking row has {len(row)} entries, expected {k}")
    pos = 1
    for value, size in _tie_groups(sorted(row)):
        expected = pos + (size - 1) / 2.0
        if abs(value - expected) > 1e-9:
            raise ValidationError(f"malformed ranking row {list(row)}")
        pos += size


def _tie_groups(sorted_row: Sequence[float]) -> list[tuple[float, int]]:
    groups: list[tuple[float, int]] = []
    for value in sorted_row:
        if groups and abs(groups[-1][0] - value) <= 1e-9:
            groups[-1] = (groups[-1][0], groups[-1][1] + 1)
        else:
            groups.append((value, 1))
    return groups


def friedman_statistic(rank_table: Sequence[Sequence[float]]) -> tuple[float, int]:
    """Tie-corrected Friedman chi-square and its degrees of freedom."""
    n = len(rank_table)
    if n < 2:
        raise ValidationError("friedman needs at least 2 subjects")
    k = len(rank_table[0])
    if k < 3:
        raise ValidationError("friedman needs at least 3 treatments")
    for row in rank_table:
        _check_ranking_row(row, k)

    table = np.asarray(rank_table, dtype=np.float64)
    rank_sums = table.sum(axis=0)
    chisq = 12.0 / (n * k * (k + 1)) * float(np.sum(rank_sums**2)) - 3.0 * n * (k + 1)

    ties = 0.0
    for row in table:
        for _, size in _tie_groups(sorted(row)):
            ties += size**3 - size
    correction = 1.0 - ties / (n * k * (k * k - 1))
    if correction <= 0.0:
        return 0.0, k - 1  # every row fully tied: no discrimination at all
    return chisq / correction, k - 1


def friedman(
    rank_table: Sequence[Sequence[float]],
    alpha: float = 0.05,
    exact: bool = False,
) -> FriedmanResult:
    """Friedman test over an n-subjects x k-treatments ranking table.

    Rows must already be rankings (ties mid-ranked). The p-value uses the
    chi-square approximation; ``exact=True`` switches to the permutation
    distribution (only sensible for small n, enforced at n <= 10).
    """
    statistic, dof = friedman_statistic(rank_table)
    n = len(rank_table)
    if exact:
        if n > 10:
            raise ValidationError("exact permutation p-value restricted to n <= 10")
        p_value = _exact_p_value(rank_table, statistic)
    else:
        p_value = float(chi2.sf(statistic, dof))
    return FriedmanResult(
        statistic=float(statistic),
        dof=dof,
        p_value=p_value,
        reject=bool(p_value < alpha),
        alpha=alpha,
        n_subjects=n,
        k_treatments=len(rank_table[0]),
    )


def _exact_p_value(rank_table: Sequence[Sequence[float]], observed: float) -> float:
    """Permutation null: each subject's row is shuffled uniformly.

    Tracks the distribution of the column rank-sum vector with a DP over
    subjects; the tie-correction term is row-local so it is constant across
    permutations.
    """
    k = len(rank_table[0])
    n = len(rank_table)
    states: dict[tuple[float, ...], int] = {(0.0,) * k: 1}
    for row in rank_table:
        row_perms = sorted(set(permutations(row)))
        new_states: dict[tuple[float, ...], int] = {}
        for sums, count in states.items():
            for perm in row_perms:
                key = tuple(s + v for s, v in zip(sums, perm))
                new_states[key] = new_states.get(key, 0) + count
        states = new_states

    ties = 0.0
    for row in rank_table:
        for _, size in _tie_groups(sorted(row)):
            ties += size**3 - size
    correction = 1.0 - ties / (n * k * (k * k - 1))

    total = sum(states.values())
    at_least = 0
    for sums, count in states.items():
        chisq = 12.0 / (n * k * (k + 1)) * sum(s * s for s in sums) - 3.0 * n * (k + 1)
        stat = 0.0 if correction <= 0.0 else chisq / correction
        if stat >= observed - 1e-9:
            at_least += count
    return at_least / total


# ---------------------------------------------------------------------------
# driver typing
# ---------------------------------------------------------------------------


def classify_driver(participant: ParticipantRow) -> DriverType:
    """Aggressive iff any of: usual speed above 35 mph on a 30-limit road,
    self-described aggressive, frequent unnecessary lane changes."""
    missing = [
        name
        for name, value in (
            ("speed_mph", participant.speed_mph),
            ("self_described_aggressive", participant.self_described_aggressive),
            ("frequent_lane_changes", participant.frequent_lane_changes),
        )
        if value is None
    ]
    if missing:
        raise IncompleteResponseError(
            f"{participant.participant_id}: missing driver answers {missing}"
        )
    triggered = []
    if participant.speed_mph > AGGRESSIVE_SPEED_MPH:
        triggered.append("speeding")
    if participant.self_described_aggressive:
        triggered.append("self-described")
    if participant.frequent_lane_changes:
        triggered.append("frequent-lane-change")
    return DriverType(
        participant_id=participant.participant_id,
        type="aggressive" if triggered else "cautious",
        triggered_conditions=tuple(triggered),
    )


# ---------------------------------------------------------------------------
# seat transitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionMatrix:
    """Counts of seat-group moves for one condition pair."""

    pair: str
    counts: tuple[tuple[int, ...], ...]  # SEAT_ORDER x SEAT_ORDER
    movers: int
    relieved: int
    anxious: int
    other: int

    @property
    def relieved_fraction(self) -> float | None:
        return self.relieved / self.movers if self.movers else None


def _seat_group(code: str) -> str:
    if code not in SEAT_GROUPS:
        raise ValidationError(f"unknown seat code {code!r}; expected one of {sorted(SEAT_GROUPS)}")
    return SEAT_GROUPS[code]


def tag_move(origin: str, dest: str, reason: str | None) -> str:
    """Sentiment of one seat change: relieved, anxious, or other.

    Front-to-back moves split on the stated reason (comfort = relieved,
    safety = anxious); any move onto the driver seat reads as taking back
    control, hence anxious.
    """
    if dest == "front-driver":
        return "anxious"
    front = ("front-driver", "front-passenger")
    if origin in front and dest == "back":
        if reason == "comfort":
            return "relieved"
        if reason == "safety":
            return "anxious"
    return "other"


def seat_transitions(participants: Sequence[ParticipantRow]) -> dict[str, TransitionMatrix]:
    """Transition matrices over the three vehicle conditions plus
    relieved/anxious mover tallies per condition pair."""
    results: dict[str, TransitionMatrix] = {}
    seat_index = {group: i for i, group in enumerate(SEAT_ORDER)}
    for pair in CONDITION_PAIRS:
        origin_attr, dest_attr = {
            "ordinary_to_av": ("seat_ordinary", "seat_av"),
            "av_to_av_explained": ("seat_av", "seat_av_explained"),
            "ordinary_to_av_explained": ("seat_ordinary", "seat_av_explained"),
        }[pair]
        counts = [[0] * len(SEAT_ORDER) for _ in SEAT_ORDER]
        movers = relieved = anxious = other = 0
        for participant in participants:
            origin = _seat_group(getattr(participant, origin_attr))
            dest = _seat_group(getattr(participant, dest_attr))
            counts[seat_index[origin]][seat_index[dest]] += 1
            if origin == dest:
                continue
            movers += 1
            reason = participant.reasons.get(pair)
            if reason is not None and reason not in REASON_CODES:
                raise ValidationError(
                    f"{participant.participant_id}: unknown reason code {reason!r}"
                )
            tag = tag_move(origin, dest, reason)
            if tag == "relieved":
                relieved += 1
            elif tag == "anxious":
                anxious += 1
            else:
                other += 1
        results[pair] = TransitionMatrix(
            pair=pair,
            counts=tuple(tuple(row) for row in counts),
            movers=movers,
            relieved=relieved,
            anxious=anxious,
            other=other,
        )
    return results


# ---------------------------------------------------------------------------
# whole-table analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyReport:
    pearson_necessity_attention: float
    pearson_necessity_attention_centered: float
    pb_necessity_aggressive: float
    pb_necessity_motion_sickness: float
    pb_necessity_by_scenario: dict[str, float]
    friedman_by_vid: dict[str, FriedmanResult]
    n_reject: int
    n_scenarios: int
    driver_types: dict[str, DriverType]
    transitions: dict[str, TransitionMatrix]


def _centered(values: Sequence[float], owners: Sequence[str]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    out = arr.copy()
    for owner in set(owners):
        mask = np.asarray([o == owner for o in owners])
        out[mask] = arr[mask] - arr[mask].mean()
    return out


def analyze_study(table: StudyResponseTable, alpha: float = 0.05) -> StudyReport:
    """Run the full quantitative analysis over one response table."""
    ratings = table.ratings
    if not ratings:
        raise ValidationError("response table has no rating rows")
    necessity = [r.necessity for r in ratings]
    attention = [r.attention for r in ratings]
    owners = [r.participant_id for r in ratings]

    r_pooled = pearson(necessity, attention)
    r_centered = pearson(
        _centered(necessity, owners).tolist(), _centered(attention, owners).tolist()
    )

    driver_types = {p.participant_id: classify_driver(p) for p in table.participants}
    aggressive_flag = [
        1 if driver_types[r.participant_id].type == "aggressive" else 0 for r in ratings
    ]
    sickness = {p.participant_id: p.motion_sickness for p in table.participants}
    sickness_flag = [sickness[r.participant_id] for r in ratings]

    pb_aggressive = point_biserial(aggressive_flag, necessity)
    pb_sickness = point_biserial(sickness_flag, necessity)

    flag_names = sorted({name for r in ratings for name in r.scenario_flags})
    pb_scenarios: dict[str, float] = {}
    for name in flag_names:
        flags = [r.scenario_flags.get(name, 0) for r in ratings]
        if len(set(flags)) < 2:
            continue  # degenerate flag, correlation undefined
        pb_scenarios[name] = point_biserial(flags, necessity)

    by_vid: dict[str, list[RatingRow]] = {}
    for row in ratings:
        by_vid.setdefault(row.vid, []).append(row)
    friedman_by_vid: dict[str, FriedmanResult] = {}
    for vid, rows in sorted(by_vid.items()):
        rank_table = [
            [row.ranking[fmt] for fmt in CONTENT_FORMATS] for row in rows
        ]
        friedman_by_vid[vid] = friedman(rank_table, alpha=alpha)
    n_reject = sum(1 for res in friedman_by_vid.values() if res.reject)

    return StudyReport(
        pearson_necessity_attention=r_pooled,
        pearson_necessity_attention_centered=r_centered,
        pb_necessity_aggressive=pb_aggressive,
        pb_necessity_motion_sickness=pb_sickness,
        pb_necessity_by_scenario=pb_scenarios,
        friedman_by_vid=friedman_by_vid,
        n_reject=n_reject,
        n_scenarios=len(friedman_by_vid),
        driver_types=driver_types,
        transitions=seat_transitions(table.participants),
    )


# ---------------------------------------------------------------------------
# CSV loading (ratings.csv + participants.csv)
# ---------------------------------------------------------------------------


def _parse_bool(raw: str) -> bool | None:
    if raw == "":
        return None
    return raw.strip() in ("1", "true", "True", "yes")


def load_ratings(path: str | Path) -> tuple[RatingRow, ...]:
    rows: list[RatingRow] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        base = {"participant_id", "vid", "necessity", "attention"}
        rank_cols = {f"rank_{fmt}" for fmt in CONTENT_FORMATS}
        if reader.fieldnames is None or not (base | rank_cols).issubset(reader.fieldnames):
            raise ValidationError(f"{path}: ratings header must contain {sorted(base | rank_cols)}")
        for row in reader:
            ranking = {fmt: int(row[f"rank_{fmt}"]) for fmt in CONTENT_FORMATS}
            flags = {
                name[len("flag_"):]: int(value)
                for name, value in row.items()
                if name.startswith("flag_") and value != ""
            }
            rows.append(
                RatingRow(
                    participant_id=row["participant_id"],
                    vid=row["vid"],
                    necessity=float(row["necessity"]),
                    attention=float(row["attention"]),
                    ranking=ranking,
                    scenario_flags=flags,
                )
            )
    return tuple(rows)


def load_participants(path: str | Path) -> tuple[ParticipantRow, ...]:
    rows: list[ParticipantRow] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {
            "participant_id", "speed_mph", "self_aggressive", "frequent_lane_change",
            "motion_sickness", "seat_ordinary", "seat_av", "seat_av_explained",
        }
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: participants header must contain {sorted(required)}")
        for row in reader:
            reasons = {
                name[len("reason_"):]: value.strip()
                for name, value in row.items()
                if name.startswith("reason_") and value and value.strip()
            }
            rows.append(
                ParticipantRow(
                    participant_id=row["participant_id"],
                    speed_mph=float(row["speed_mph"]) if row["speed_mph"] != "" else None,
                    self_described_aggressive=_parse_bool(row["self_aggressive"]),
                    frequent_lane_changes=_parse_bool(row["frequent_lane_change"]),
                    motion_sickness=int(row["motion_sickness"]),
                    seat_ordinary=row["seat_ordinary"],
                    seat_av=row["seat_av"],
                    seat_av_explained=row["seat_av_explained"],
                    reasons=reasons,
                )
            )
    return tuple(rows)


def load_response_table(responses: str | Path, participants: str | Path | None = None) -> StudyResponseTable:
    """Load a StudyResponseTable.

    ``responses`` may be a directory containing ``ratings.csv`` and
    ``participants.csv``, or the ratings CSV itself with ``participants``
    given separately.
    """
    responses = Path(responses)
    if responses.is_dir():
        ratings_path = responses / "ratings.csv"
        participants_path = responses / "participants.csv"
    else:
        ratings_path = responses
        if participants is None:
            raise ValidationError("participants CSV required when responses is a file")
        participants_path = Path(participants)
    return StudyResponseTable(
        ratings=load_ratings(ratings_path),
        participants=load_participants(participants_path),
    )
