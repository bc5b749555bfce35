import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn

from src.data.vocabulary import PAD_ID
from src.errors import ModelError
from src.models.transformer import (TransformerDecoder, TransformerEncoder, padding_mask,
                                    sinusoidal_positions)

logger = logging.getLogger(__name__)

DTYPES = {'float32': torch.float32, 'float64': torch.float64}


@dataclass(frozen=True)
class ModelConfig:
    d: int
    v: int
    disc_layers: int
    disc_heads: int
    disc_mlp: int
    gen_layers: int
    gen_mlp: int
    rtd_mlp: int
    max_len: int
    dtype: str = 'float32'
    dropout: float = 0.0

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ModelError('invalid model config: ' + '; '.join(errors))

    def violations(self) -> List[str]:
        errors = []
        for key in ('d', 'v', 'disc_layers', 'disc_heads', 'disc_mlp', 'max_len'):
            if getattr(self, key) < 1:
                errors.append(f'{key} must be >= 1')
        for key in ('gen_layers', 'gen_mlp', 'rtd_mlp'):
            if getattr(self, key) < 0:
                errors.append(f'{key} must be >= 0')
        if self.disc_heads >= 1 and self.d % self.disc_heads != 0:
            errors.append(f'd={self.d} must be divisible by disc_heads={self.disc_heads}')
        if self.gen_layers > self.disc_layers or self.gen_mlp > self.disc_mlp or \
                (self.gen_layers == self.disc_layers and self.gen_mlp == self.disc_mlp):
            errors.append(f'generator ({self.gen_layers} layers, mlp {self.gen_mlp}) must be smaller than the '
                          f'discriminator encoder ({self.disc_layers} layers, mlp {self.disc_mlp})')
        if self.dtype not in DTYPES:
            errors.append(f'dtype must be one of {sorted(DTYPES)}, got {self.dtype}')
        if not 0 <= self.dropout < 1:
            errors.append(f'dropout must be in [0, 1), got {self.dropout}')
        return errors

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]

    def to_dict(self) -> Dict:
        return asdict(self)


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count of `SpacTorModel(cfg)`.

    embedder and W^G: 2vd; every LayerNorm: 2d
    encoder layer: 4d^2 (attention) + 2d*mlp (GELU FFN) + 4d (two norms)
    decoder layer: 8d^2 (self + cross attention) + 2d*mlp + 6d (three norms)
    RTD head: d*rtd + rtd + rtd + 1
    """
    d = cfg.d
    generator = cfg.gen_layers * (4 * d * d + 2 * d * cfg.gen_mlp + 4 * d) + 2 * d
    encoder = cfg.disc_layers * (4 * d * d + 2 * d * cfg.disc_mlp + 4 * d) + 2 * d
    decoder = cfg.disc_layers * (8 * d * d + 2 * d * cfg.disc_mlp + 6 * d) + 2 * d
    rtd_head = d * cfg.rtd_mlp + 2 * cfg.rtd_mlp + 1
    return 2 * cfg.v * d + generator + encoder + decoder + rtd_head


class SpacTorModel(nn.Module):
    """Generator encoder + W^G, discriminator encoder-decoder and RTD head over one shared embedder."""

    GENERATOR_MODULES = ('generator', 'gen_proj', 'rtd_head')
    DISCRIMINATOR_MODULES = ('embedder', 'encoder', 'decoder')

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.has_generator = True
        self.embedder = nn.Embedding(cfg.v, cfg.d)
        self.generator = TransformerEncoder(cfg.gen_layers, cfg.d, cfg.disc_heads, cfg.gen_mlp, cfg.dropout)
        self.gen_proj = nn.Linear(cfg.d, cfg.v, bias=False)
        self.encoder = TransformerEncoder(cfg.disc_layers, cfg.d, cfg.disc_heads, cfg.disc_mlp, cfg.dropout)
        self.decoder = TransformerDecoder(cfg.disc_layers, cfg.d, cfg.disc_heads, cfg.disc_mlp, cfg.dropout)
        self.rtd_head = nn.Sequential(
            nn.Linear(cfg.d, cfg.rtd_mlp),
            nn.GELU(),
            nn.Linear(cfg.rtd_mlp, 1),
        )
        self.register_buffer('positions', sinusoidal_positions(cfg.max_len, cfg.d), persistent=False)

    def _embed(self, tokens: torch.Tensor) -> torch.Tensor:
        n = tokens.size(1)
        if n > self.cfg.max_len:
            raise ModelError(f'length overflow: {n} positions, max_len={self.cfg.max_len}')
        if tokens.numel() and (tokens.max() >= self.cfg.v or tokens.min() < 0):
            raise ModelError(f'token id out of range for v={self.cfg.v}')
        x = self.embedder(tokens)
        return x + self.positions[:n].to(x.dtype)

    def generator_forward(self, masked_text: torch.Tensor, valid_mask: Optional[torch.Tensor] = None):
        """Logits W^G h^G over the vocabulary, [b, n, v]; softmax is left to the loss."""
        if not self.has_generator:
            raise ModelError('model was loaded without its generator')
        valid_mask = masked_text != PAD_ID if valid_mask is None else valid_mask
        hidden = self.generator(self._embed(masked_text), padding_mask(valid_mask))
        return self.gen_proj(hidden)

    def discriminator_encode(self, replaced_text: torch.Tensor, valid_mask: Optional[torch.Tensor] = None):
        valid_mask = replaced_text != PAD_ID if valid_mask is None else valid_mask
        return self.encoder(self._embed(replaced_text), padding_mask(valid_mask))

    def rtd_head_forward(self, hidden: torch.Tensor) -> torch.Tensor:
        """Probability that each position holds its original token, [b, n]."""
        return torch.sigmoid(self.rtd_head(hidden).squeeze(-1))

    def discriminator_decode(self, hidden: torch.Tensor, decoder_input: torch.Tensor,
                             memory_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Teacher-forced decoder logits [b, t, v]; the output layer is the embedder scaled by d^-1/2."""
        mask = None if memory_mask is None else padding_mask(memory_mask)
        out = self.decoder(self._embed(decoder_input), hidden, mask)
        return torch.matmul(out, self.embedder.weight.t()) * self.cfg.d ** -0.5

    def module_parameters(self, names) -> Dict[str, nn.Parameter]:
        return {name: param for name, param in self.named_parameters() if name.split('.')[0] in names}

    def generator_parameters(self) -> Dict[str, nn.Parameter]:
        return self.module_parameters(self.GENERATOR_MODULES)

    def discriminator_parameters(self) -> Dict[str, nn.Parameter]:
        return self.module_parameters(self.DISCRIMINATOR_MODULES)


def init_params(cfg: ModelConfig, seed: int) -> SpacTorModel:
    """Truncated-normal (+-2 sigma) weights with sigma = fan_in^-1/2, zero biases, unit LayerNorm gains.

    The embedder's fan-in is d.
    """
    model = SpacTorModel(cfg)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith('bias'):
                param.zero_()
            elif param.dim() == 1:
                param.fill_(1.0)
            else:
                std = param.size(1) ** -0.5
                nn.init.trunc_normal_(param, std=std, a=-2 * std, b=2 * std, generator=generator)
    return model.to(cfg.torch_dtype)


def sample_replacements(logits: torch.Tensor, mlm_mask: torch.Tensor, sc_text: torch.Tensor,
                        rng: np.random.Generator) -> torch.Tensor:
    """Fills every MLM position with a draw from Categorical(softmax(logits)) at temperature 1.

    Gumbel-max over float64 log-probabilities with uniforms taken from `rng`; other positions copy sc_text.
    """
    with torch.no_grad():
        replaced = sc_text.clone()
        positions = mlm_mask.nonzero(as_tuple=True)
        if positions[0].numel() == 0:
            return replaced
        log_probs = torch.log_softmax(logits.detach()[positions].double(), dim=-1).cpu()
        uniform = np.maximum(rng.random(tuple(log_probs.shape)), np.finfo(np.float64).tiny)
        gumbel = torch.from_numpy(-np.log(-np.log(uniform)))
        replaced[positions] = (log_probs + gumbel).argmax(dim=-1).to(replaced.device, replaced.dtype)
        return replaced
