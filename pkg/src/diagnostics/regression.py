"""Loss-gap series between two validation curves and the OLS trend test on them."""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from src.errors import EvaluationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GapSeries:
    steps: np.ndarray
    gap: np.ndarray
    labels: Tuple[str, str] = ('a', 'b')

    def __post_init__(self):
        if len(self.steps) != len(self.gap):
            raise EvaluationError('steps and gap differ in length')
        if np.any(np.diff(self.steps) <= 0):
            raise EvaluationError('steps must be strictly increasing')
        if not np.all(np.isfinite(self.gap)):
            raise EvaluationError('gap series holds non-finite values')

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'step': self.steps, 'gap': self.gap})


def gap_series(a: pd.Series, b: pd.Series, start_step: int = 0, labels: Tuple[str, str] = ('a', 'b')) -> GapSeries:
    """Elementwise a - b over steps >= start_step; both series are indexed by step."""
    a = a[a.index >= start_step].sort_index()
    b = b[b.index >= start_step].sort_index()
    if not np.array_equal(a.index.to_numpy(), b.index.to_numpy()):
        raise EvaluationError(f'step misalignment: {list(a.index)} vs {list(b.index)}')
    return GapSeries(steps=a.index.to_numpy(dtype=np.float64), gap=(a.to_numpy() - b.to_numpy()).astype(np.float64),
                     labels=labels)


@dataclass(frozen=True)
class RegressionResult:
    beta0: float
    beta1: float
    stderr: float
    t_stat: float
    p_value: float
    n_points: int

    def to_text(self) -> str:
        return ''.join(f'{key}={value!r}\n' for key, value in self.__dict__.items())


def ols(x: Sequence[float], y: Sequence[float]) -> RegressionResult:
    """y = beta0 * x + beta1 by least squares; two-sided t test of beta0 = 0 on n - 2 degrees of freedom."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n != len(y):
        raise EvaluationError(f'x and y differ in length: {n} vs {len(y)}')
    if n < 3:
        raise EvaluationError(f'regression needs at least 3 points, got {n}')

    x_bar = x.mean()
    y_bar = y.mean()
    sxx = np.sum((x - x_bar) ** 2)
    if sxx == 0:
        raise EvaluationError('degenerate x: all steps are equal')
    beta0 = np.sum((x - x_bar) * (y - y_bar)) / sxx
    beta1 = y_bar - beta0 * x_bar

    residuals = y - (beta1 + beta0 * x)
    s2 = np.sum(residuals ** 2) / (n - 2)
    stderr = np.sqrt(s2 / sxx)
    if stderr == 0:
        # Exact fit
        t_stat = 0.0 if beta0 == 0 else np.copysign(np.inf, beta0)
        p_value = 1.0 if beta0 == 0 else 0.0
    else:
        t_stat = beta0 / stderr
        p_value = float(min(1.0, 2 * stats.t.sf(abs(t_stat), df=n - 2)))
    return RegressionResult(beta0=float(beta0), beta1=float(beta1), stderr=float(stderr), t_stat=float(t_stat),
                            p_value=p_value, n_points=n)


def ols_trend_test(series: GapSeries) -> RegressionResult:
    return ols(series.steps, series.gap)


def regress_columns(frame: pd.DataFrame, x_col: str, y_col: str, start_step: float = 0) -> RegressionResult:
    for column in (x_col, y_col):
        if column not in frame.columns:
            raise EvaluationError(f'column {column} not in {list(frame.columns)}')
    frame = frame[frame[x_col] >= start_step].dropna(subset=[x_col, y_col])
    return ols(frame[x_col].to_numpy(), frame[y_col].to_numpy())
