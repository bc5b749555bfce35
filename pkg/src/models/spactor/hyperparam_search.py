"""Grid search over the hybrid loss weights and the MLM ratio.

Each grid point is pre-trained on the hybrid objective throughout (tau = inf) and scored by the clean
validation span-corruption loss of its last checkpoint; lower is better.
"""
import itertools
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from src.config import RunConfig, format_value
from src.diagnostics.evaluation import eval_sc_loss
from src.errors import ConfigError
from src.models.checkpoint import list_checkpoints
from src.models.spactor.controller import SpacTorController
from src.models.spactor.varying_tau import is_complete, run_name

logger = logging.getLogger(__name__)

SEARCH_GRID = {
    'lambda1': [1.0, 10.0, 20.0, 50.0],  # 10.0
    'lambda2': [1.0, 10.0, 20.0, 50.0],  # 10.0
    'r_mlm': [0.05, 0.10, 0.15, 0.20, 0.25],  # 0.15
}


def search_list(search_dict: Dict[str, Sequence]) -> List[Dict]:
    unknown = sorted(set(search_dict) - set(SEARCH_GRID))
    if unknown:
        raise ConfigError(f'cannot search over {unknown}: searchable keys are {sorted(SEARCH_GRID)}')
    return [dict(zip(search_dict.keys(), values)) for values in itertools.product(*search_dict.values())]


def hyperparam_search(cfg: RunConfig, out_dir: Union[str, Path], search_dict: Optional[Dict[str, Sequence]] = None,
                      max_batches: Optional[int] = None) -> pd.DataFrame:
    """Trains every grid point not already completed under `out_dir` and ranks them in `search.csv`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    search_dict = SEARCH_GRID if search_dict is None else search_dict
    runs = search_list(search_dict)
    if not runs:
        raise ConfigError('empty search grid')
    val_path = cfg.val_corpus or cfg.corpus

    rows = []
    for run_ind, params in enumerate(runs):
        label = ', '.join(f'{key}={format_value(value)}' for key, value in params.items())
        logger.info(f'================== Run {run_ind + 1}/{len(runs)}: {label} ==================')
        run_cfg = cfg.replace(tau=math.inf, **params)
        run_dir = out_dir / run_name(run_cfg, keys=tuple(search_dict))
        if is_complete(run_dir):
            logger.info('Skipping existing run.')
        else:
            SpacTorController(run_cfg).run(run_dir)
        checkpoints = list_checkpoints(run_dir)
        final_step = max(checkpoints)
        loss = eval_sc_loss(checkpoints[final_step], val_path, 'clean', seed=cfg.seed, max_batches=max_batches)
        rows.append(dict(params, run_dir=str(run_dir), config_hash=run_cfg.config_hash(), step=final_step,
                         val_sc_loss=loss))

    table = pd.DataFrame(rows).sort_values('val_sc_loss', kind='stable').reset_index(drop=True)
    table.to_csv(out_dir / 'search.csv', index=False)
    best = table.iloc[0]
    logger.info(f'Best of {len(table)}: ' + ', '.join(f'{k}={best[k]}' for k in search_dict) +
                f', val_sc_loss={best.val_sc_loss:.4f}')
    return table
