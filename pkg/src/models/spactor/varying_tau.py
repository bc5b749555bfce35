import logging
import math
from pathlib import Path
from typing import Iterable, Sequence, Union

import pandas as pd

from src.config import RunConfig, RunManifest, format_value
from src.diagnostics.flops import REFERENCE_STEPS, flops_report
from src.models.spactor.controller import SpacTorController

logger = logging.getLogger(__name__)


def run_name(cfg: RunConfig, keys: Sequence[str] = ('tau',)) -> str:
    """Swept values and the config hash, e.g. tau_inf_1a2b3c4d."""
    swept = '_'.join(f'{key}_{format_value(getattr(cfg, key))}' for key in keys)
    return f'{swept}_{cfg.config_hash()[:8]}'


def is_complete(run_dir: Path) -> bool:
    if not (run_dir / RunManifest.FILENAME).is_file():
        return False
    return RunManifest.load(run_dir).completion is not None


def sweep_tau(cfg: RunConfig, taus: Iterable[float], out_dir: Union[str, Path],
              reference_steps: int = REFERENCE_STEPS) -> pd.DataFrame:
    """Trains one run per tau (tau = inf keeps the hybrid objective throughout) and tabulates their compute.

    Run directories are named by tau and config hash; completed ones are skipped, so an interrupted sweep
    picks up where it stopped.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    taus = list(taus)
    report = flops_report(cfg.model_config(cfg.vocab_size), cfg.batch_size, cfg.input_len, cfg.r_sc, cfg.mu)

    rows = []
    for run_ind, tau in enumerate(taus):
        logger.info(f'================== Run {run_ind + 1}/{len(taus)}: tau={format_value(tau)} ==================')
        run_cfg = cfg.replace(tau=tau)
        run_dir = out_dir / run_name(run_cfg)
        if is_complete(run_dir):
            logger.info('Skipping existing run.')
        else:
            SpacTorController(run_cfg).run(run_dir)
        hybrid_steps = cfg.total_steps if math.isinf(tau) else tau
        rows.append(dict(tau=format_value(tau), run_dir=str(run_dir), config_hash=run_cfg.config_hash(),
                         hybrid_steps=hybrid_steps, total_steps=cfg.total_steps,
                         normalized_flops=report.add(tau, cfg.total_steps, reference_steps)))

    table = pd.DataFrame(rows)
    table.to_csv(out_dir / 'sweep.csv', index=False)
    return table
