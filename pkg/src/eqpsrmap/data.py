"""Subject-level and aggregate data representations.

A :class:`SubjectTable` is the column-oriented workhorse: every analysis
entry point takes one table holding subjects from up to three sources
(current trial, external trial, real-world cohort).  The real-world cohort
is treatment-only by construction.  :class:`AggregateSummary` mirrors the
published-statistics JSON used to reconstruct subject-level data for case
analyses.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from math import log
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ParseError
from .numerics import RngStream

__all__ = [
    "SourceLabel",
    "Arm",
    "Subject",
    "SubjectTable",
    "BinomialSummary",
    "AggregateSummary",
    "CovariateAggregate",
    "StratifiedData",
    "load_subjects",
    "write_subjects",
    "simulate_from_aggregate",
    "summarize",
]


class SourceLabel(enum.Enum):
    """Data source with its membership-indicator encoding ``(Z1, Z2)``."""

    CURRENT = "current"
    EXTERNAL = "external"
    REAL_WORLD = "rwd"

    @property
    def indicator(self) -> tuple[int, int]:
        return _INDICATORS[self]


_INDICATORS = {
    SourceLabel.CURRENT: (0, 0),
    SourceLabel.EXTERNAL: (0, 1),
    SourceLabel.REAL_WORLD: (1, 0),
}

SOURCE_ORDER = (SourceLabel.CURRENT, SourceLabel.EXTERNAL, SourceLabel.REAL_WORLD)


class Arm(enum.Enum):
    TREATMENT = "treatment"
    CONTROL = "control"


ARM_ORDER = (Arm.TREATMENT, Arm.CONTROL)


@dataclass(frozen=True)
class Subject:
    source: SourceLabel
    arm: Arm
    covariates: tuple[float, ...]
    outcome: int
    propensity: float | None = None
    stratum: int | None = None

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.outcome}")
        if self.source is SourceLabel.REAL_WORLD and self.arm is not Arm.TREATMENT:
            raise ValueError("real-world subjects are treatment-only")


@dataclass(frozen=True)
class BinomialSummary:
    """Responder count out of a group size, with rate and log-odds views."""

    y: int
    n: int

    def __post_init__(self):
        if self.n < 0 or not 0 <= self.y <= max(self.n, 0):
            raise ValueError(f"need 0 <= y <= n, got y={self.y}, n={self.n}")

    @property
    def is_empty(self) -> bool:
        return self.n == 0

    @property
    def p(self) -> float:
        if self.n == 0:
            return float("nan")
        return self.y / self.n

    @property
    def theta(self) -> float:
        """Log-odds log(p/(1-p)); defined only for interior counts."""
        if not 0 < self.y < self.n:
            raise ValueError(f"log-odds undefined for y={self.y}, n={self.n}")
        return log(self.y / (self.n - self.y))

    def pooled(self, other: "BinomialSummary") -> "BinomialSummary":
        return BinomialSummary(self.y + other.y, self.n + other.n)


class SubjectTable:
    """Column-oriented collection of subjects.

    Columns: source / arm codes, outcomes, covariate matrix, and optional
    propensity scores and stratum assignments (stratum -1 means trimmed).
    Immutable once built; derived tables are new objects.
    """

    def __init__(
        self,
        source: np.ndarray,
        arm: np.ndarray,
        outcome: np.ndarray,
        covariates: np.ndarray,
        covariate_names: Sequence[str],
        propensity: np.ndarray | None = None,
        stratum: np.ndarray | None = None,
    ):
        self.source = np.asarray(source, dtype=np.int8)
        self.arm = np.asarray(arm, dtype=np.int8)
        self.outcome = np.asarray(outcome, dtype=np.int8)
        self.covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        self.covariate_names = tuple(covariate_names)
        self.propensity = None if propensity is None else np.asarray(propensity, dtype=float)
        self.stratum = None if stratum is None else np.asarray(stratum, dtype=np.int64)
        n = self.source.shape[0]
        if self.covariates.shape[0] != n and n > 0:
            raise ValueError("covariate row count does not match subject count")
        if self.covariates.shape[1] != len(self.covariate_names):
            raise ValueError("covariate name count does not match matrix width")
        for arr in (self.arm, self.outcome):
            if arr.shape[0] != n:
                raise ValueError("column lengths differ")
        rwd = self.source == _SOURCE_CODE[SourceLabel.REAL_WORLD]
        if np.any(self.arm[rwd] != _ARM_CODE[Arm.TREATMENT]):
            raise ValueError("real-world subjects are treatment-only")
        for arr in (self.source, self.arm, self.outcome, self.covariates):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.source.shape[0])

    def __iter__(self) -> Iterator[Subject]:
        for i in range(len(self)):
            yield Subject(
                source=_SOURCE_FROM_CODE[int(self.source[i])],
                arm=_ARM_FROM_CODE[int(self.arm[i])],
                covariates=tuple(self.covariates[i]),
                outcome=int(self.outcome[i]),
                propensity=None if self.propensity is None else float(self.propensity[i]),
                stratum=None if self.stratum is None else int(self.stratum[i]),
            )

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], covariate_names=None) -> "SubjectTable":
        if not subjects:
            return cls.empty(covariate_names or ())
        k = len(subjects[0].covariates)
        names = tuple(covariate_names) if covariate_names else tuple(f"x{i+1}" for i in range(k))
        rows = []
        for s in subjects:
            if len(s.covariates) != k:
                raise ValueError("covariate vector length varies across subjects")
            rows.append(s.covariates)
        return cls(
            source=np.array([_SOURCE_CODE[s.source] for s in subjects]),
            arm=np.array([_ARM_CODE[s.arm] for s in subjects]),
            outcome=np.array([s.outcome for s in subjects]),
            covariates=np.array(rows, dtype=float).reshape(len(subjects), k),
            covariate_names=names,
            propensity=(
                np.array([s.propensity for s in subjects], dtype=float)
                if all(s.propensity is not None for s in subjects)
                else None
            ),
        )

    @classmethod
    def empty(cls, covariate_names: Sequence[str]) -> "SubjectTable":
        k = len(tuple(covariate_names))
        return cls(
            source=np.empty(0, dtype=np.int8),
            arm=np.empty(0, dtype=np.int8),
            outcome=np.empty(0, dtype=np.int8),
            covariates=np.empty((0, k)),
            covariate_names=covariate_names,
        )

    @classmethod
    def concat(cls, tables: Sequence["SubjectTable"]) -> "SubjectTable":
        tables = [t for t in tables if len(t) > 0]
        if not tables:
            raise ValueError("nothing to concatenate")
        names = tables[0].covariate_names
        if any(t.covariate_names != names for t in tables):
            raise ValueError("covariate names differ across tables")
        return cls(
            source=np.concatenate([t.source for t in tables]),
            arm=np.concatenate([t.arm for t in tables]),
            outcome=np.concatenate([t.outcome for t in tables]),
            covariates=np.vstack([t.covariates for t in tables]),
            covariate_names=names,
        )

    def subset(self, mask: np.ndarray) -> "SubjectTable":
        return SubjectTable(
            source=self.source[mask],
            arm=self.arm[mask],
            outcome=self.outcome[mask],
            covariates=self.covariates[mask],
            covariate_names=self.covariate_names,
            propensity=None if self.propensity is None else self.propensity[mask],
            stratum=None if self.stratum is None else self.stratum[mask],
        )

    def source_mask(self, source: SourceLabel) -> np.ndarray:
        return self.source == _SOURCE_CODE[source]

    def arm_mask(self, arm: Arm) -> np.ndarray:
        return self.arm == _ARM_CODE[arm]

    def with_propensity(self, scores: np.ndarray) -> "SubjectTable":
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (len(self),):
            raise ValueError("propensity vector length mismatch")
        return SubjectTable(
            self.source, self.arm, self.outcome, self.covariates,
            self.covariate_names, propensity=scores, stratum=self.stratum,
        )

    def with_stratum(self, stratum: np.ndarray) -> "SubjectTable":
        stratum = np.asarray(stratum, dtype=np.int64)
        if stratum.shape != (len(self),):
            raise ValueError("stratum vector length mismatch")
        return SubjectTable(
            self.source, self.arm, self.outcome, self.covariates,
            self.covariate_names, propensity=self.propensity, stratum=stratum,
        )

    def counts(self) -> dict[tuple[SourceLabel, Arm], int]:
        out = {}
        for src in SOURCE_ORDER:
            for arm in ARM_ORDER:
                m = self.source_mask(src) & self.arm_mask(arm)
                n = int(m.sum())
                if n:
                    out[(src, arm)] = n
        return out


_SOURCE_CODE = {SourceLabel.CURRENT: 0, SourceLabel.EXTERNAL: 1, SourceLabel.REAL_WORLD: 2}
_SOURCE_FROM_CODE = {v: k for k, v in _SOURCE_CODE.items()}
_ARM_CODE = {Arm.CONTROL: 0, Arm.TREATMENT: 1}
_ARM_FROM_CODE = {v: k for k, v in _ARM_CODE.items()}


def summarize(
    table: SubjectTable,
    source: SourceLabel | None = None,
    arm: Arm | None = None,
    stratum: int | None = None,
) -> BinomialSummary:
    """Exact responder counts for the selected source/arm/stratum slice.

    An empty slice yields ``BinomialSummary(0, 0)`` (``is_empty`` flag set).
    """
    mask = np.ones(len(table), dtype=bool)
    if source is not None:
        mask &= table.source_mask(source)
    if arm is not None:
        mask &= table.arm_mask(arm)
    if stratum is not None:
        if table.stratum is None:
            raise ValueError("table has no stratum assignments")
        mask &= table.stratum == stratum
    return BinomialSummary(int(table.outcome[mask].sum()), int(mask.sum()))


@dataclass(frozen=True)
class CovariateAggregate:
    """Published marginal statistics of one baseline covariate, per source.

    ``stats`` maps a source to ``(mean, sd)``; sd is ``None`` for binary
    covariates, where ``mean`` is the proportion.
    """

    name: str
    kind: str  # "binary" | "continuous"
    stats: Mapping[SourceLabel, tuple[float, float | None]]

    def __post_init__(self):
        if self.kind not in ("binary", "continuous"):
            raise ValueError(f"unknown covariate kind {self.kind!r}")
        for src, (mean, sd) in self.stats.items():
            if self.kind == "binary":
                if not 0.0 <= mean <= 1.0:
                    raise ValueError(f"proportion for {self.name}/{src.value} outside [0,1]")
            elif sd is None or sd <= 0:
                raise ValueError(f"continuous covariate {self.name}/{src.value} needs sd > 0")


@dataclass(frozen=True)
class AggregateSummary:
    """Aggregate trial description: group sizes/responders and baseline stats."""

    groups: Mapping[tuple[SourceLabel, Arm], BinomialSummary]
    covariates: Sequence[CovariateAggregate]

    def __post_init__(self):
        for (src, arm), s in self.groups.items():
            if s.n <= 0:
                raise ValueError(f"group {src.value}/{arm.value} must have n > 0")
            if src is SourceLabel.REAL_WORLD and arm is not Arm.TREATMENT:
                raise ValueError("real-world cohort is treatment-only")

    def scaled(self, source: SourceLabel, factor: float) -> "AggregateSummary":
        """Return a copy with one source's group sizes scaled (rates kept)."""
        groups = dict(self.groups)
        for key, s in list(groups.items()):
            if key[0] is source:
                n = max(1, int(round(s.n * factor)))
                y = int(round(s.p * n))
                groups[key] = BinomialSummary(min(y, n), n)
        return AggregateSummary(groups=groups, covariates=self.covariates)

    def to_dict(self) -> dict:
        groups: dict = {}
        for (src, arm), s in self.groups.items():
            groups.setdefault(src.value, {})[arm.value] = {"n": s.n, "y": s.y}
        covs = []
        for c in self.covariates:
            entry: dict = {"name": c.name, "type": c.kind, "by_source": {}}
            for src, (mean, sd) in c.stats.items():
                st = {"proportion" if c.kind == "binary" else "mean": mean}
                if c.kind == "continuous":
                    st["sd"] = sd
                entry["by_source"][src.value] = st
            covs.append(entry)
        return {"groups": groups, "covariates": covs}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "AggregateSummary":
        try:
            groups = {}
            for src_name, arms in payload["groups"].items():
                src = SourceLabel(src_name)
                for arm_name, cell in arms.items():
                    groups[(src, Arm(arm_name))] = BinomialSummary(int(cell["y"]), int(cell["n"]))
            covariates = []
            for c in payload.get("covariates", []):
                kind = c["type"]
                by_source = c.get("by_source")
                if by_source is None:
                    # shorthand: one set of stats shared by every source
                    by_source = {src_name: c for src_name in payload["groups"]}
                stats = {}
                for src_name, st in by_source.items():
                    if kind == "binary":
                        stats[SourceLabel(src_name)] = (float(st["proportion"]), None)
                    else:
                        stats[SourceLabel(src_name)] = (float(st["mean"]), float(st["sd"]))
                covariates.append(CovariateAggregate(name=c["name"], kind=kind, stats=stats))
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"malformed aggregate summary: {exc}") from exc
        return cls(groups=groups, covariates=covariates)

    @classmethod
    def from_json(cls, path) -> "AggregateSummary":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class StratifiedData:
    """Propensity-stratified view of a scored subject table.

    ``table`` carries per-subject stratum assignments (1..S, or -1 for
    trimmed external/real-world subjects).  ``boundaries`` has length S+1.
    """

    table: SubjectTable
    boundaries: np.ndarray
    trimmed: Mapping[SourceLabel, int]

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        object.__setattr__(self, "boundaries", b)
        if b.ndim != 1 or b.size < 2 or not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must be strictly increasing with >= 2 entries")
        if self.table.stratum is None or self.table.propensity is None:
            raise ValueError("table must carry propensity and stratum columns")

    @property
    def n_strata(self) -> int:
        return int(self.boundaries.size - 1)

    def count(self, source: SourceLabel, stratum: int, arm: Arm | None = None) -> int:
        mask = self.table.source_mask(source) & (self.table.stratum == stratum)
        if arm is not None:
            mask &= self.table.arm_mask(arm)
        return int(mask.sum())

    def summary(self, source: SourceLabel, arm: Arm | None, stratum: int) -> BinomialSummary:
        return summarize(self.table, source=source, arm=arm, stratum=stratum)

    def scores(self, source: SourceLabel, stratum: int | None = None) -> np.ndarray:
        mask = self.table.source_mask(source)
        if stratum is not None:
            mask &= self.table.stratum == stratum
        else:
            mask &= self.table.stratum > 0
        return self.table.propensity[mask]

    def current_shares(self, arm: Arm) -> np.ndarray:
        """Per-stratum share of current-trial subjects in the given arm."""
        counts = np.array(
            [self.count(SourceLabel.CURRENT, s, arm) for s in range(1, self.n_strata + 1)],
            dtype=float,
        )
        total = counts.sum()
        if total == 0:
            raise ValueError(f"no current subjects in arm {arm.value}")
        return counts / total


_LOGICAL_COLUMNS = ("source", "arm", "outcome")


def load_subjects(path, columns: Mapping[str, str] | None = None) -> SubjectTable:
    """Read a subject CSV.

    The header must contain source/arm/outcome columns (optionally renamed
    through ``columns``); every remaining column is treated as a numeric
    covariate, in file order.  Errors cite the offending file line (header
    is line 1).
    """
    colmap = {name: name for name in _LOGICAL_COLUMNS}
    if columns:
        colmap.update(columns)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        header = [h.strip() for h in header]
        positions = {}
        for logical, actual in colmap.items():
            if actual not in header:
                raise ParseError(f"missing column {actual!r}", row=1)
            positions[logical] = header.index(actual)
        cov_idx = [i for i, h in enumerate(header) if i not in positions.values()]
        cov_names = [header[i] for i in cov_idx]
        sources, arms, outcomes, covs = [], [], [], []
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != width:
                raise ParseError(
                    f"expected {width} fields, found {len(rec)}", row=lineno
                )
            src_tok = rec[positions["source"]].strip().lower()
            arm_tok = rec[positions["arm"]].strip().lower()
            out_tok = rec[positions["outcome"]].strip()
            try:
                src = SourceLabel(src_tok)
            except ValueError:
                raise ParseError(f"unknown source {src_tok!r}", row=lineno) from None
            try:
                arm = Arm(arm_tok)
            except ValueError:
                raise ParseError(f"unknown arm {arm_tok!r}", row=lineno) from None
            if src is SourceLabel.REAL_WORLD and arm is not Arm.TREATMENT:
                raise ParseError("real-world subjects must be treatment-arm", row=lineno)
            if out_tok not in ("0", "1"):
                raise ParseError(f"outcome must be 0 or 1, got {out_tok!r}", row=lineno)
            try:
                row_cov = [float(rec[i]) for i in cov_idx]
            except ValueError:
                raise ParseError("non-numeric covariate value", row=lineno) from None
            if not all(np.isfinite(row_cov)):
                raise ParseError("covariate value not finite", row=lineno)
            sources.append(_SOURCE_CODE[src])
            arms.append(_ARM_CODE[arm])
            outcomes.append(int(out_tok))
            covs.append(row_cov)
    return SubjectTable(
        source=np.array(sources, dtype=np.int8),
        arm=np.array(arms, dtype=np.int8),
        outcome=np.array(outcomes, dtype=np.int8),
        covariates=np.array(covs, dtype=float).reshape(len(sources), len(cov_names)),
        covariate_names=cov_names,
    )


def write_subjects(table: SubjectTable, path) -> None:
    """Write a subject table in the canonical CSV layout (lossless floats)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(_LOGICAL_COLUMNS) + list(table.covariate_names))
        for i in range(len(table)):
            writer.writerow(
                [
                    _SOURCE_FROM_CODE[int(table.source[i])].value,
                    _ARM_FROM_CODE[int(table.arm[i])].value,
                    int(table.outcome[i]),
                ]
                + [repr(float(v)) for v in table.covariates[i]]
            )


def simulate_from_aggregate(agg: AggregateSummary, rng: RngStream) -> SubjectTable:
    """Reconstruct subject-level data matching aggregate statistics.

    Covariates are drawn independently (binary from the stated proportion,
    continuous from a normal with the stated mean and sd); outcomes are
    Bernoulli at each group's observed response rate.  Deterministic given
    the stream.
    """
    gen = rng.generator()
    names = [c.name for c in agg.covariates]
    sources, arms, outcomes, covs = [], [], [], []
    for src in SOURCE_ORDER:
        for arm in ARM_ORDER:
            cell = agg.groups.get((src, arm))
            if cell is None:
                continue
            n = cell.n
            block = np.empty((n, len(names)))
            for j, c in enumerate(agg.covariates):
                if src not in c.stats:
                    raise ValueError(f"covariate {c.name} lacks stats for source {src.value}")
                mean, sd = c.stats[src]
                if c.kind == "binary":
                    block[:, j] = (gen.random(n) < mean).astype(float)
                else:
                    block[:, j] = gen.normal(mean, sd, size=n)
            draws = (gen.random(n) < cell.p).astype(np.int8)
            sources.append(np.full(n, _SOURCE_CODE[src], dtype=np.int8))
            arms.append(np.full(n, _ARM_CODE[arm], dtype=np.int8))
            outcomes.append(draws)
            covs.append(block)
    return SubjectTable(
        source=np.concatenate(sources),
        arm=np.concatenate(arms),
        outcome=np.concatenate(outcomes),
        covariates=np.vstack(covs),
        covariate_names=names,
    )
