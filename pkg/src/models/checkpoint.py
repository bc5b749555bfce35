"""Checkpoint directory: raw little-endian tensor bytes, one file per parameter and optimizer slot, plus
`manifest.json` listing name, shape, dtype and sha256 of each file with the config snapshot and RNG positions.

Nothing time-dependent is written, so equal runs produce byte-identical directories.
"""
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch

from src.config import RunConfig, format_value
from src.data.vocabulary import Vocabulary
from src.errors import CheckpointError, ModelError
from src.models.optimizers import build_optimizer
from src.models.spactor.model import ModelConfig, SpacTorModel
from src.models.spactor.utils import RngStreams, Stage, TrainState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = 'manifest.json'
VOCAB_FILE = 'vocab.txt'
NUMPY_DTYPES = {'float32': np.dtype('<f4'), 'float64': np.dtype('<f8'), 'uint8': np.dtype('u1')}
REQUIRED_KEYS = ('format', 'step', 'stage', 'tau', 'config_hash', 'config', 'model_config', 'has_generator',
                 'parameters', 'optimizer', 'rng', 'batches_consumed', 'torch_rng')


def checkpoint_name(step: int) -> str:
    return f'step_{step:07d}'


def _write_tensor(directory: Path, relpath: str, tensor: torch.Tensor) -> Dict:
    array = tensor.detach().cpu().contiguous().numpy()
    dtype = str(array.dtype)
    if dtype not in NUMPY_DTYPES:
        raise CheckpointError(f'cannot store tensor of dtype {dtype}')
    data = array.astype(NUMPY_DTYPES[dtype], copy=False).tobytes()
    path = directory / relpath
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return dict(shape=list(array.shape), dtype=dtype, file=relpath, sha256=hashlib.sha256(data).hexdigest())


def _read_tensor(directory: Path, entry: Dict) -> torch.Tensor:
    try:
        data = (directory / entry['file']).read_bytes()
        dtype = NUMPY_DTYPES[entry['dtype']]
        shape = tuple(entry['shape'])
    except (OSError, KeyError, TypeError) as e:
        raise CheckpointError(f'corrupt manifest: unreadable tensor entry {entry!r}: {e}') from e
    if hashlib.sha256(data).hexdigest() != entry.get('sha256'):
        raise CheckpointError(f'corrupt manifest: content hash mismatch for {entry["file"]}')
    array = np.frombuffer(data, dtype=dtype)
    if array.size != math.prod(shape):
        raise CheckpointError(f'corrupt manifest: {entry["file"]} holds {array.size} values, shape {shape}')
    return torch.from_numpy(array.reshape(shape).copy())


def save_checkpoint(state: TrainState, directory: Union[str, Path], cfg: RunConfig, vocab: Vocabulary,
                    include_generator: bool = True) -> Path:
    """Writes `state` to `directory`; without the generator the checkpoint is discriminator-only."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model = state.model
    skipped = set() if include_generator and model.has_generator else set(model.generator_parameters())

    parameters = []
    names = {}
    for name, param in model.named_parameters():
        if name in skipped:
            continue
        names[param] = name
        parameters.append(dict(name=name, **_write_tensor(directory, f'params/{name}.bin', param)))

    slots = []
    for param, name in names.items():
        for slot, value in sorted(state.optimizer.state.get(param, {}).items()):
            if not torch.is_tensor(value):
                raise CheckpointError(f'cannot store optimizer slot {name}.{slot} of type {type(value).__name__}')
            slots.append(dict(param=name, slot=slot, **_write_tensor(directory, f'optimizer/{name}.{slot}.bin', value)))

    vocab.save(directory / VOCAB_FILE)
    manifest = dict(
        format=FORMAT_VERSION,
        step=state.step,
        stage=state.stage.value,
        tau=format_value(cfg.tau),
        config_hash=cfg.config_hash(),
        config=cfg.to_dict(),
        model_config=model.cfg.to_dict(),
        has_generator=not skipped,
        batches_consumed=state.batches_consumed,
        parameters=parameters,
        optimizer=dict(name=cfg.optimizer, slots=slots),
        rng=state.rng.generator_states(),
        seeds=dict(seed=cfg.seed, data=state.rng.data, init=state.rng.init),
        torch_rng=_write_tensor(directory, 'torch_rng.bin', torch.get_rng_state()),
    )
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding='utf-8')
    logger.info(f'Saved checkpoint at step {state.step} ({state.stage.value}) to {directory}')
    return directory


def read_manifest(directory: Union[str, Path]) -> Dict:
    path = Path(directory) / MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise CheckpointError(f'corrupt manifest: cannot read {path}: {e}') from e
    missing = [key for key in REQUIRED_KEYS if not isinstance(manifest, dict) or key not in manifest]
    if missing:
        raise CheckpointError(f'corrupt manifest: {path} lacks {", ".join(missing)}')
    if manifest['format'] != FORMAT_VERSION:
        raise CheckpointError(f'corrupt manifest: unsupported format {manifest["format"]}')
    return manifest


def load_checkpoint(directory: Union[str, Path], cfg: Optional[RunConfig] = None,
                    restore_torch_rng: bool = True) -> Tuple[TrainState, Vocabulary, Dict]:
    """Rebuilds the train state; with `cfg` the stored config hash must match it."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if cfg is not None and manifest['config_hash'] != cfg.config_hash():
        raise CheckpointError(f'config hash mismatch: checkpoint {manifest["config_hash"]}, '
                              f'config {cfg.config_hash()}')

    try:
        stage = Stage(manifest['stage'])
        model = SpacTorModel(ModelConfig(**manifest['model_config']))
        stored_cfg = RunConfig.from_dict(manifest['config'])
    except (ValueError, TypeError, ModelError) as e:
        raise CheckpointError(f'corrupt manifest: {e}') from e
    model = model.to(model.cfg.torch_dtype)
    model.has_generator = bool(manifest['has_generator'])

    params = dict(model.named_parameters())
    with torch.no_grad():
        for entry in manifest['parameters']:
            name = entry.get('name')
            if name not in params or list(params[name].shape) != entry.get('shape'):
                raise CheckpointError(f'corrupt manifest: parameter {name} does not fit the model')
            params[name].copy_(_read_tensor(directory, entry))

    trainable = params
    if stage is Stage.SC_ONLY:
        for param in model.generator_parameters().values():
            param.requires_grad_(False)
        trainable = model.discriminator_parameters()
    optimizer = build_optimizer(manifest['optimizer']['name'], trainable.values(), lr=1e-2)
    for entry in manifest['optimizer']['slots']:
        if entry['param'] not in trainable:
            continue
        optimizer.state[params[entry['param']]][entry['slot']] = _read_tensor(directory, entry)

    rng = RngStreams.from_seed(stored_cfg.seed)
    rng.restore(manifest['rng'])
    if restore_torch_rng:
        torch.set_rng_state(_read_tensor(directory, manifest['torch_rng']))

    state = TrainState(step=int(manifest['step']), stage=stage, model=model, optimizer=optimizer, rng=rng,
                       batches_consumed=int(manifest['batches_consumed']))
    vocab = Vocabulary.load(directory / VOCAB_FILE)
    return state, vocab, manifest


def list_checkpoints(run_dir: Union[str, Path]) -> Dict[int, Path]:
    root = Path(run_dir) / 'checkpoints'
    found = {}
    if root.is_dir():
        for path in sorted(root.glob('step_*')):
            if (path / MANIFEST).is_file():
                found[int(path.name.split('_', 1)[1])] = path
    return found


def resolve_checkpoint(path: Union[str, Path]) -> Tuple[Path, Path]:
    """(checkpoint dir, run dir) for either a checkpoint directory or a run directory (latest checkpoint)."""
    path = Path(path)
    if path.parent.name == 'checkpoints' and (path / MANIFEST).is_file():
        return path, path.parent.parent
    checkpoints = list_checkpoints(path)
    if not checkpoints:
        raise CheckpointError(f'no checkpoint found under {path}')
    return checkpoints[max(checkpoints)], path
