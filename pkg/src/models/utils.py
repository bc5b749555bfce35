import re
import mlflow
import torch
import logging
import hashlib
from pathlib import Path
from typing import Dict, Any, List, Optional

import pandas as pd

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['step', 'stage', 'lr', 'l_g', 'l_rtd', 'l_sc', 'total', 'tokens_per_step', 'gflops_per_step']


def remove_wrong_characters(metric_key):
    return re.sub(r'\(|\)|\]|\[|,', '_', metric_key)


def _to_dot(config: Dict[str, Any], prefix=None) -> Dict[str, Any]:
    result = dict()
    for k, v in config.items():
        if prefix is not None:
            k = f'{prefix}.{k}'
        if isinstance(v, dict):
            v = _to_dot(v, prefix=k)
        elif hasattr(v, '__call__'):
            v = {k: v.__name__}
        else:
            v = {k: v}
        result.update(v)
    return result


def calculate_hash(params):
    # Same parameters, same hash: keys are sorted so the query does not depend on insertion order
    query = ' and '.join(f"params.{k} = '{v}'" for k, v in sorted(_to_dot(params).items()))
    logger.debug(query)
    return hashlib.md5(query.encode()).hexdigest()


class MetricsWriter(object):
    """Metrics CSV with a fixed column set; absent values are written as blanks."""

    def __init__(self, path, rows: Optional[List[Dict[str, Any]]] = None):
        self.path = Path(path)
        self.rows = list(rows or [])

    @classmethod
    def resume(cls, path, before_step: int) -> 'MetricsWriter':
        path = Path(path)
        if not path.exists():
            return cls(path)
        frame = pd.read_csv(path, keep_default_na=False, dtype=str)
        rows = [row for row in frame.to_dict('records') if int(row['step']) < before_step]
        return cls(path, [{k: (None if v == '' else _parse(v)) for k, v in row.items()} for row in rows])

    def append(self, metrics: Dict[str, Any]):
        self.rows.append({column: metrics.get(column) for column in METRIC_COLUMNS})

    def flush(self):
        frame = pd.DataFrame(self.rows, columns=METRIC_COLUMNS)
        frame.to_csv(self.path, index=False, na_rep='')


def _parse(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def read_metrics(path) -> pd.DataFrame:
    return pd.read_csv(path)


class MlflowLogger:
    log_to_mlflow = False

    @staticmethod
    def start_run(out_dir, experiment_name, run_hash):
        MlflowLogger.log_to_mlflow = True
        mlflow.set_tracking_uri(f'file:{Path(out_dir).resolve()}/mlruns')
        mlflow.set_experiment(experiment_name)
        MlflowLogger.run = mlflow.start_run()
        mlflow.set_tag('run_hash', run_hash)

    @staticmethod
    def end_run():
        if MlflowLogger.log_to_mlflow:
            mlflow.end_run()
            MlflowLogger.log_to_mlflow = False

    @staticmethod
    def log_run_params(config: Dict[str, Any]):
        if MlflowLogger.log_to_mlflow:
            mlflow.log_params({remove_wrong_characters(k): v for k, v in _to_dot(config).items()})

    @staticmethod
    def set_stage(stage):
        if MlflowLogger.log_to_mlflow:
            mlflow.set_tag('stage', stage)

    @staticmethod
    def log_metrics(metrics: Dict[str, Any], step):
        if MlflowLogger.log_to_mlflow:
            numeric = {remove_wrong_characters(k): float(v) for k, v in metrics.items()
                       if isinstance(v, (int, float)) and not isinstance(v, bool)}
            mlflow.log_metrics(numeric, step=step)


def rtd_accuracy(probs: torch.Tensor, labels: torch.Tensor, valid_mask: torch.Tensor) -> float:
    """Share of non-pad positions the RTD head classifies correctly (replaced iff p < 0.5).

    Args:
        :param probs: Probability that each token is original.
        :param labels: True where the token was replaced.
        :param valid_mask: Non-pad positions.
    """
    with torch.no_grad():
        correct = ((probs < 0.5) == labels.bool()) & valid_mask
        return (correct.float().sum() / valid_mask.float().sum().clamp(min=1)).item()
