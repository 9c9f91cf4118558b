"""Schemas of the tables written by finequeue.

Every table is validated before it is written, so a file on disk always has
the documented columns in the documented order.
"""

from typing import Dict, Optional, Type

import pandas as pd
import pandera as pa
from pandera.typing import Series

from .exceptions import ValidationError


class _Strict(pa.DataFrameModel):
    class Config:
        strict = True
        ordered = True
        coerce = True


class SweepSchema(_Strict):
    """Revenue of one strategy at one point of a sweep."""

    sweep: Series[str]
    parameter: Series[str]
    value: Series[float]
    strategy: Series[str]
    revenue: Series[float] = pa.Field(ge=0)
    revenue_stderr: Series[float] = pa.Field(ge=0)
    per_round: Series[float] = pa.Field(ge=0)
    per_round_stderr: Series[float] = pa.Field(ge=0)
    per_period: Series[float] = pa.Field(ge=0)
    per_period_stderr: Series[float] = pa.Field(ge=0)
    episodes: Series[int] = pa.Field(ge=1)
    seed: Series[int] = pa.Field(ge=0)


class TrendSchema(_Strict):
    """Rank correlation of a sweep."""

    parameter: Series[str]
    strategy: Series[str]
    spearman: Series[float] = pa.Field(ge=-1, le=1, nullable=True)
    pvalue: Series[float] = pa.Field(ge=0, le=1, nullable=True)
    points: Series[int] = pa.Field(ge=1)


class SimulationSchema(_Strict):
    """Revenue of simulated episodes."""

    seed: Series[int] = pa.Field(ge=0)
    episode: Series[int] = pa.Field(ge=0)
    rounds: Series[int] = pa.Field(ge=0)
    terminals: Series[int] = pa.Field(ge=0)
    revenue: Series[float] = pa.Field(ge=0)
    per_round: Series[float] = pa.Field(ge=0)
    steady_revenue: Series[float] = pa.Field(ge=0)
    steady_per_round: Series[float] = pa.Field(ge=0)


class PositionSchema(_Strict):
    """Expected utility by initial position."""

    position: Series[int] = pa.Field(ge=1)
    utility: Series[float] = pa.Field(le=0)
    stderr: Series[float] = pa.Field(ge=0)
    episodes: Series[int] = pa.Field(ge=1)


class NashConvSchema(_Strict):
    """NashConv after every best-response iteration of one seed."""

    seed: Series[int] = pa.Field(ge=0)
    iteration: Series[int] = pa.Field(ge=1)
    nashconv: Series[float]
    stderr: Series[float] = pa.Field(ge=0)
    episodes: Series[int] = pa.Field(ge=1)
    status: Series[str] = pa.Field(isin=["complete", "diverged"])


class NashConvSummarySchema(_Strict):
    """NashConv per iteration averaged over seeds."""

    iteration: Series[int] = pa.Field(ge=1)
    mean: Series[float]
    stderr: Series[float] = pa.Field(ge=0)
    seeds: Series[int] = pa.Field(ge=1)


class AlphaScanSchema(_Strict):
    """Binomial tail against a bound on a grid."""

    p: Series[float] = pa.Field(ge=0, le=1)
    n: Series[int] = pa.Field(ge=1)
    k: Series[int] = pa.Field(ge=0)
    value: Series[float] = pa.Field(ge=0, le=1)
    bound: Series[float]
    holds: Series[bool]


class PropositionScanSchema(_Strict):
    """Small-tail regime and doubling relation on a grid."""

    p: Series[float] = pa.Field(ge=0, le=1)
    n: Series[int] = pa.Field(ge=1)
    k: Series[int] = pa.Field(ge=0)
    value: Series[float] = pa.Field(ge=0, le=1)
    bound: Series[float] = pa.Field(ge=0, le=1)
    premise: Series[bool]
    holds: Series[bool]
    doubling_holds: Series[bool]


class DoublingThresholdSchema(_Strict):
    """Smallest size above which the doubling relation holds."""

    p: Series[float] = pa.Field(ge=0, le=1)
    k: Series[int] = pa.Field(ge=0)
    n0: Series[pd.Int64Dtype] = pa.Field(ge=1, nullable=True)


class CriticalPositionScanSchema(_Strict):
    """Critical positions of the two-round game on a grid."""

    F: Series[float] = pa.Field(gt=0)
    Q: Series[float] = pa.Field(gt=0)
    p: Series[float] = pa.Field(ge=0, le=1)
    k: Series[int] = pa.Field(ge=1)
    r22: Series[int] = pa.Field(ge=1)
    r21: Series[int] = pa.Field(ge=1)
    holds: Series[bool]


#: Schema of every table kind.
SCHEMAS: Dict[str, Type[pa.DataFrameModel]] = {
    "sweep": SweepSchema,
    "trend": TrendSchema,
    "simulation": SimulationSchema,
    "positions": PositionSchema,
    "nashconv": NashConvSchema,
    "nashconv-summary": NashConvSummarySchema,
    "alpha-scan": AlphaScanSchema,
    "proposition-scan": PropositionScanSchema,
    "doubling-threshold": DoublingThresholdSchema,
    "critical-position-scan": CriticalPositionScanSchema,
}


def validate_table(table: pd.DataFrame, kind: Optional[str]) -> pd.DataFrame:
    """Validate ``table`` against the schema of ``kind``.

    Tables of kind ``None`` are returned unchanged.
    """
    if kind is None:
        return table
    if kind not in SCHEMAS:
        raise ValidationError(f"Unknown table kind {kind!r}.")
    try:
        return SCHEMAS[kind].validate(table)
    except (pa.errors.SchemaError, pa.errors.SchemaErrors) as error:
        raise ValidationError(f"Table does not match the {kind} schema: {error}") from error
