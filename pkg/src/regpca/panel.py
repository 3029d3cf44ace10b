"""Panel data container and transforms for possibly-unbalanced return panels.

A :class:`Panel` holds excess returns and asset characteristics on a fixed
``(period, asset)`` grid together with an observation mask.  Missing
observations are represented by ``mask == False`` plus exact zeros in the
data arrays, so downstream cross-sectional sums can run over full rows
without branching.  ``characteristics[t]`` holds the conditioning variables
for ``returns[t]`` (in asset-pricing use: characteristics known at the start
of period ``t``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from ._validation import as_float_array, positive_int
from .errors import DataError

DEFAULT_SCHEMA = {"period": "period", "asset_id": "asset_id", "return": "return"}


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable (T, N, M) panel of returns, characteristics, and a mask.

    Attributes
    ----------
    returns : (T, N) float array, zero-filled where unobserved.
    characteristics : (T, N, M) float array, zero-filled where unobserved.
    mask : (T, N) bool array, True iff return and all M characteristics
        are observed for that (period, asset) pair.
    period_labels, asset_labels : original identifiers, for output labeling.
    """

    returns: np.ndarray
    characteristics: np.ndarray
    mask: np.ndarray
    period_labels: tuple = field(default=())
    asset_labels: tuple = field(default=())

    def __post_init__(self):
        t, n, m = self.characteristics.shape
        if self.returns.shape != (t, n) or self.mask.shape != (t, n):
            raise DataError(
                f"inconsistent panel shapes: returns {self.returns.shape}, "
                f"characteristics {self.characteristics.shape}, mask {self.mask.shape}"
            )
        if not np.isfinite(self.returns).all() or not np.isfinite(self.characteristics).all():
            raise DataError("panel contains non-finite entries")
        off = ~self.mask
        if np.any(self.returns[off] != 0.0) or np.any(self.characteristics[off] != 0.0):
            raise DataError("masked-out panel cells must be exactly zero")
        n_obs = self.mask.sum(axis=1)
        if np.any(n_obs < 1):
            t_bad = int(np.argmin(n_obs))
            raise DataError(f"period {t_bad} has no observed assets")
        for arr in (self.returns, self.characteristics, self.mask):
            arr.setflags(write=False)

    @property
    def n_periods(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    @property
    def n_chars(self) -> int:
        return self.characteristics.shape[2]

    @property
    def n_obs(self) -> np.ndarray:
        """Number of observed assets per period, shape (T,)."""
        return self.mask.sum(axis=1)

    def window(self, start: int, stop: int) -> "Panel":
        """Sub-panel over periods ``start..stop-1`` (same asset grid)."""
        if not (0 <= start < stop <= self.n_periods):
            raise DataError(f"invalid period window [{start}, {stop})")
        return Panel(
            returns=self.returns[start:stop].copy(),
            characteristics=self.characteristics[start:stop].copy(),
            mask=self.mask[start:stop].copy(),
            period_labels=self.period_labels[start:stop],
            asset_labels=self.asset_labels,
        )


def from_arrays(returns, characteristics, mask=None, period_labels=None, asset_labels=None) -> Panel:
    """Build a validated Panel, zero-filling unobserved cells.

    ``mask=None`` means fully observed.
    """
    rets = as_float_array(returns, "returns", ndim=2).copy()
    chars = as_float_array(characteristics, "characteristics", ndim=3).copy()
    if mask is None:
        msk = np.ones(rets.shape, dtype=bool)
    else:
        msk = np.asarray(mask, dtype=bool).copy()
    rets[~msk] = 0.0
    chars[~msk] = 0.0
    t, n = rets.shape
    if period_labels is None:
        period_labels = tuple(range(t))
    if asset_labels is None:
        asset_labels = tuple(range(n))
    return Panel(rets, chars, msk, tuple(period_labels), tuple(asset_labels))


def _resolve_schema(columns, schema):
    """Map canonical column roles to actual CSV column names."""
    schema = dict(DEFAULT_SCHEMA, **(schema or {}))
    for role in ("period", "asset_id", "return"):
        if schema[role] not in columns:
            raise DataError(f"missing mandatory column {schema[role]!r} (role: {role})")
    char_cols = schema.get("chars")
    if char_cols is None:
        char_cols = sorted(
            (c for c in columns if c.startswith("char_")),
            key=lambda c: (len(c), c),
        )
    missing = [c for c in char_cols if c not in columns]
    if missing:
        raise DataError(f"missing characteristic columns: {missing}")
    if not char_cols:
        raise DataError("no characteristic columns found (expected char_1..char_M)")
    return schema["period"], schema["asset_id"], schema["return"], list(char_cols)


def load_csv(path, schema=None) -> Panel:
    """Load a long-format CSV into a Panel.

    Expected columns: period, asset_id, return, char_1..char_M (names
    overridable via ``schema``).  Rows with any missing value are dropped
    entirely and show up as unobserved cells.  Periods are indexed in sorted
    order, assets in first-appearance order; original labels are retained.
    """
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise
    except Exception as err:
        raise DataError(f"cannot parse CSV {path}: {err}") from None
    p_col, a_col, r_col, char_cols = _resolve_schema(df.columns, schema)

    value_cols = [r_col] + char_cols
    for col in value_cols:
        try:
            df[col] = pd.to_numeric(df[col], errors="raise")
        except (TypeError, ValueError) as err:
            raise DataError(f"non-numeric cell in column {col!r}: {err}") from None

    dup = df.duplicated(subset=[p_col, a_col])
    if dup.any():
        row = df.loc[dup.idxmax()]
        raise DataError(f"duplicate (period, asset_id) pair: ({row[p_col]!r}, {row[a_col]!r})")

    period_labels = sorted(pd.unique(df[p_col]))
    asset_labels = list(pd.unique(df[a_col]))
    p_index = {p: i for i, p in enumerate(period_labels)}
    a_index = {a: i for i, a in enumerate(asset_labels)}

    t, n, m = len(period_labels), len(asset_labels), len(char_cols)
    rets = np.zeros((t, n))
    chars = np.zeros((t, n, m))
    msk = np.zeros((t, n), dtype=bool)

    complete = df[value_cols].notna().all(axis=1).to_numpy()
    ti = df[p_col].map(p_index).to_numpy()[complete]
    ai = df[a_col].map(a_index).to_numpy()[complete]
    rets[ti, ai] = df.loc[complete, r_col].to_numpy(dtype=float)
    chars[ti, ai] = df.loc[complete, char_cols].to_numpy(dtype=float)
    msk[ti, ai] = True

    empty = np.flatnonzero(~msk.any(axis=1))
    if empty.size:
        raise DataError(f"period {period_labels[empty[0]]!r} has zero complete rows")
    return Panel(rets, chars, msk, tuple(period_labels), tuple(asset_labels))


def save_csv(panel: Panel, path, schema=None) -> None:
    """Write the observed rows of a Panel as long-format CSV (load_csv inverse)."""
    schema = dict(DEFAULT_SCHEMA, **(schema or {}))
    char_cols = schema.get("chars") or [f"char_{m + 1}" for m in range(panel.n_chars)]
    header = [schema["period"], schema["asset_id"], schema["return"]] + list(char_cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(panel.n_periods):
            for i in np.flatnonzero(panel.mask[t]):
                writer.writerow(
                    [panel.period_labels[t], panel.asset_labels[i], repr(float(panel.returns[t, i]))]
                    + [repr(float(v)) for v in panel.characteristics[t, i]]
                )


def rank_transform(panel: Panel) -> Panel:
    """Replace each characteristic by its cross-sectional relative rank.

    Within every (period, characteristic) cross-section of observed values,
    a value with 1-based ascending rank r maps to (r - 1)/(N_t - 1) - 0.5,
    so the observed values cover [-0.5, 0.5].  Ties get average ranks; a
    single observation maps to 0.  Returns and mask are unchanged.
    """
    chars = panel.characteristics.copy()
    for t in range(panel.n_periods):
        obs = panel.mask[t]
        n_t = int(obs.sum())
        for m in range(panel.n_chars):
            if n_t == 1:
                chars[t, obs, m] = 0.0
            else:
                ranks = rankdata(chars[t, obs, m], method="average")
                chars[t, obs, m] = (ranks - 1.0) / (n_t - 1.0) - 0.5
    return Panel(
        returns=panel.returns.copy(),
        characteristics=chars,
        mask=panel.mask.copy(),
        period_labels=panel.period_labels,
        asset_labels=panel.asset_labels,
    )


def filter_min_cross_section(panel: Panel, n_min: int) -> Panel:
    """Keep the contiguous range of periods with at least ``n_min`` observations.

    Factor extraction assumes consecutive periods, so a non-contiguous
    qualifying set is an error rather than silently re-spliced.
    """
    n_min = positive_int(n_min, "n_min")
    ok = panel.n_obs >= n_min
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise DataError(f"no period has at least {n_min} observed assets")
    if idx[-1] - idx[0] + 1 != idx.size:
        raise DataError(
            f"periods with N_t >= {n_min} are non-contiguous (indices {idx.tolist()})"
        )
    return panel.window(int(idx[0]), int(idx[-1]) + 1)
