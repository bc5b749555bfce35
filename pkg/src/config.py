"""Run configuration: a flat `key = value` file whose defaults are the Base pre-training setup.

Lines starting with `#` and trailing `# ...` comments are ignored. `tau` accepts `inf`.
"""
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from src import __version__
from src.data.corruption import CorruptionConfig, span_budget
from src.data.vocabulary import num_specials
from src.errors import ConfigError, ModelError
from src.models.spactor.model import DTYPES, ModelConfig
from src.models.spactor.objectives import REDUCTIONS
from src.models.utils import calculate_hash

logger = logging.getLogger(__name__)

OPTIMIZERS = ('adafactor', 'sgd')

# Run length and logging do not change what a step computes
UNHASHED_KEYS = ('total_steps', 'checkpoint_every', 'log_every', 'num_workers', 'log_to_mlflow')


@dataclass(frozen=True)
class RunConfig:
    # architecture
    d_model: int = 768
    disc_layers: int = 12
    disc_heads: int = 12
    disc_mlp: int = 3072
    gen_layers: int = 4
    gen_mlp: int = 1024
    rtd_mlp: int = 3072
    vocab_size: int = 32000
    max_len: Optional[int] = None
    dropout: float = 0.0
    dtype: str = 'float32'
    # corruption
    input_len: int = 512
    r_sc: float = 0.15
    mu: float = 3.0
    r_mlm: float = 0.15
    num_sentinels: Optional[int] = None
    # objective and schedule
    lambda1: float = 10.0
    lambda2: float = 10.0
    loss_reduction: str = 'mean'
    tau: float = 120000
    kappa: int = 10000
    total_steps: int = 500000
    batch_size: int = 2048
    optimizer: str = 'adafactor'
    seed: int = 0
    # io
    corpus: str = ''
    val_corpus: str = ''
    checkpoint_every: int = 10000
    log_every: int = 100
    num_workers: int = 0
    log_to_mlflow: bool = False

    @property
    def sentinels(self) -> int:
        if self.num_sentinels is not None:
            return self.num_sentinels
        return math.ceil(self.input_len * self.r_sc) + 1

    @property
    def positions(self) -> int:
        return self.input_len if self.max_len is None else self.max_len

    def violations(self) -> List[str]:
        errors = []

        def check(key, ok, allowed):
            if not ok:
                errors.append(f'{key}={getattr(self, key)} outside allowed range {allowed}')

        check('r_sc', 0 < self.r_sc < 1, '(0, 1)')
        check('mu', self.mu >= 1, '[1, inf)')
        check('r_mlm', 0 <= self.r_mlm < 1, '[0, 1)')
        check('lambda1', self.lambda1 >= 0, '[0, inf)')
        check('lambda2', self.lambda2 >= 0, '[0, inf)')
        check('total_steps', self.total_steps >= 1, '[1, inf)')
        check('tau', self.tau == math.inf or 0 <= self.tau <= self.total_steps, '[0, total_steps] or inf')
        check('kappa', self.kappa >= 1, '[1, inf)')
        check('batch_size', self.batch_size >= 1, '[1, inf)')
        check('input_len', self.input_len >= 8, '[8, inf)')
        check('loss_reduction', self.loss_reduction in REDUCTIONS, f'{list(REDUCTIONS)}')
        check('optimizer', self.optimizer in OPTIMIZERS, f'{list(OPTIMIZERS)}')
        check('dtype', self.dtype in DTYPES, f'{sorted(DTYPES)}')
        check('dropout', 0 <= self.dropout < 1, '[0, 1)')
        check('checkpoint_every', self.checkpoint_every >= 1, '[1, inf)')
        check('log_every', self.log_every >= 1, '[1, inf)')
        check('num_workers', self.num_workers in (0, 1), '{0, 1}')
        if not errors:
            _, max_spans = span_budget(self.input_len, self.r_sc, self.mu)
            check('num_sentinels', self.sentinels >= max_spans, f'[{max_spans}, inf) for input_len={self.input_len}')
            check('vocab_size', self.vocab_size > num_specials(self.sentinels),
                  f'[{num_specials(self.sentinels) + 1}, inf) with {self.sentinels} sentinels')
            check('max_len', self.positions >= self.input_len, f'[{self.input_len}, inf)')
        if not errors:
            try:
                self.model_config(self.vocab_size)
            except ModelError as e:
                errors.append(str(e))
        return errors

    def validate(self) -> 'RunConfig':
        errors = self.violations()
        if errors:
            raise ConfigError('\n'.join(errors))
        return self

    def model_config(self, v: int) -> ModelConfig:
        return ModelConfig(d=self.d_model, v=v, disc_layers=self.disc_layers, disc_heads=self.disc_heads,
                           disc_mlp=self.disc_mlp, gen_layers=self.gen_layers, gen_mlp=self.gen_mlp,
                           rtd_mlp=self.rtd_mlp, max_len=self.positions, dtype=self.dtype, dropout=self.dropout)

    def corruption_config(self) -> CorruptionConfig:
        return CorruptionConfig(r_sc=self.r_sc, mu=self.mu, r_mlm=self.r_mlm)

    def replace(self, **changes) -> 'RunConfig':
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> Dict[str, Any]:
        result = dataclasses.asdict(self)
        result['tau'] = format_value(self.tau)
        return result

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'RunConfig':
        return parse_lines(f'{key} = {format_value(value)}' for key, value in values.items()
                           if value is not None)

    def to_text(self) -> str:
        return ''.join(f'{key} = {format_value(value)}\n' for key, value in dataclasses.asdict(self).items()
                       if value is not None)

    def config_hash(self) -> str:
        return calculate_hash({k: v for k, v in self.to_dict().items() if k not in UNHASHED_KEYS})


def format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float) and math.isinf(value):
        return 'inf'
    return str(value)


def _field_types() -> Dict[str, str]:
    return {f.name: str(f.type) for f in fields(RunConfig)}


def _convert(key: str, raw: str, kind: str):
    if key == 'tau':
        if raw.lower() in ('inf', 'infinity'):
            return math.inf
        value = float(raw)
        if not value.is_integer():
            raise ValueError('tau must be a whole number of steps or inf')
        return int(value)
    if 'bool' in kind:
        lowered = raw.lower()
        if lowered in ('true', 'yes', '1'):
            return True
        if lowered in ('false', 'no', '0'):
            return False
        raise ValueError('expected true or false')
    if 'int' in kind:
        value = float(raw)
        if not value.is_integer():
            raise ValueError('expected an integer')
        return int(value)
    if 'float' in kind:
        return float(raw)
    return raw


def parse_lines(lines) -> RunConfig:
    kinds = _field_types()
    values = {}
    errors = []
    for number, line in enumerate(lines, start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            errors.append(f'line {number}: expected key = value, got {line!r}')
            continue
        key, raw = (part.strip() for part in line.split('=', 1))
        if key not in kinds:
            errors.append(f'{key}: unknown key')
            continue
        if key in values:
            errors.append(f'{key}: given more than once')
            continue
        try:
            values[key] = _convert(key, raw, kinds[key])
        except ValueError as e:
            errors.append(f'{key}={raw!r} is not valid: {e}')

    cfg = RunConfig(**values)
    errors.extend(cfg.violations())
    if errors:
        raise ConfigError('\n'.join(errors))
    return cfg


def parse_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'config file not found: {path}')
    return parse_lines(path.read_text(encoding='utf-8').splitlines())


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Self-description of a run directory: written at start, appended at transition and completion."""
    config: Dict[str, Any]
    config_hash: str
    seeds: Dict[str, int]
    version: str = __version__
    optimizer_slots_at_transition: str = 'preserved for retained parameters'
    transitions: List[Dict[str, Any]] = field(default_factory=list)
    completion: Optional[Dict[str, Any]] = None
    files: Dict[str, str] = field(default_factory=dict)

    FILENAME = 'manifest.json'
    SKIPPED = ('manifest.json', 'mlruns')

    @classmethod
    def start(cls, cfg: RunConfig, seeds: Dict[str, int]) -> 'RunManifest':
        return cls(config=cfg.to_dict(), config_hash=cfg.config_hash(), seeds=seeds)

    def record_transition(self, step: int):
        self.transitions.append(dict(step=step, timestamp=time.time()))

    def record_completion(self, step: int, **stats):
        self.completion = dict(step=step, timestamp=time.time(), **stats)

    def take_inventory(self, run_dir: Union[str, Path]):
        run_dir = Path(run_dir)
        self.files = {str(path.relative_to(run_dir)): sha256_file(path)
                      for path in sorted(run_dir.rglob('*'))
                      if path.is_file() and path.relative_to(run_dir).parts[0] not in self.SKIPPED}

    def verify(self, run_dir: Union[str, Path]) -> List[str]:
        """Inventory entries whose file is missing or whose content hash changed."""
        run_dir = Path(run_dir)
        return [name for name, digest in self.files.items()
                if not (run_dir / name).is_file() or sha256_file(run_dir / name) != digest]

    def write(self, run_dir: Union[str, Path]):
        body = {k: v for k, v in dataclasses.asdict(self).items()}
        (Path(run_dir) / self.FILENAME).write_text(json.dumps(body, indent=2, sort_keys=True), encoding='utf-8')

    @classmethod
    def load(cls, run_dir: Union[str, Path]) -> 'RunManifest':
        path = Path(run_dir) / cls.FILENAME
        try:
            return cls(**json.loads(path.read_text(encoding='utf-8')))
        except (OSError, ValueError, TypeError) as e:
            raise ConfigError(f'unreadable run manifest {path}: {e}') from e

