import time
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch

from src.config import RunConfig, RunManifest
from src.data.corpus import encode_corpus, make_loader, read_corpus
from src.data.corruption import CorruptedBatch, CorruptionTransform, collate_examples, rtd_labels
from src.data.vocabulary import Vocabulary, build_vocab
from src.diagnostics.flops import flops_per_step
from src.errors import CheckpointError, DivergenceError, TransitionError
from src.models.checkpoint import checkpoint_name, load_checkpoint, resolve_checkpoint, save_checkpoint
from src.models.optimizers import build_optimizer
from src.models.spactor.model import init_params, sample_replacements
from src.models.spactor.objectives import HybridLossBreakdown, hybrid_loss, loss_generator, loss_rtd, loss_sc
from src.models.spactor.utils import InverseSqrtLRPolicy, RngStreams, Stage, TrainState
from src.models.utils import MetricsWriter, MlflowLogger, rtd_accuracy

logger = logging.getLogger(__name__)


class SpacTorController(object):
    """Two-stage pre-training: the hybrid objective until step tau, span corruption alone afterwards.

    At tau the generator and RTD head are frozen and leave the optimizer; the discriminator, the shared
    embedder and their optimizer slots carry on unchanged.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.validate()
        self.lr_policy = InverseSqrtLRPolicy(cfg.kappa)
        self.vocab = None
        self.state = None
        self.transform = None
        self.manifest = None
        self.gflops = {}

    def build(self, vocab: Vocabulary, state: Optional[TrainState] = None) -> TrainState:
        """Fresh state from the seed, or adopts a restored one. tau = 0 transitions immediately."""
        cfg = self.cfg
        self.vocab = vocab
        model_cfg = cfg.model_config(vocab.v)
        if state is None:
            rng = RngStreams.from_seed(cfg.seed)
            torch.manual_seed(rng.init)
            model = init_params(model_cfg, rng.init)
            optimizer = build_optimizer(cfg.optimizer, model.parameters(), lr=self.lr_policy(0))
            state = TrainState(step=0, stage=Stage.HYBRID, model=model, optimizer=optimizer, rng=rng)
            self.state = state
            if cfg.tau == 0:
                self.transition(state)
        self.state = state
        self.transform = CorruptionTransform(cfg.corruption_config(), vocab, state.rng.spans, state.rng.mlm)
        self.gflops = {stage: flops_per_step(model_cfg, cfg.batch_size, cfg.input_len, cfg.r_sc, cfg.mu, stage)
                       for stage in Stage}
        return state

    def routine(self, batch: CorruptedBatch, stage: Stage) -> Tuple[HybridLossBreakdown, Dict[str, float]]:
        cfg = self.cfg
        model = self.state.model
        reduction = cfg.loss_reduction

        if stage is Stage.SC_ONLY:
            hidden = model.discriminator_encode(batch.sc_text, batch.valid_mask)
            dec_logits = model.discriminator_decode(hidden, batch.decoder_input, batch.valid_mask)
            l_sc, n_sc = loss_sc(dec_logits, batch.target, batch.target_mask, reduction)
            return hybrid_loss(None, None, l_sc, 0.0, 1.0, (0, 0, n_sc)), {}

        # Generator
        gen_logits = model.generator_forward(batch.masked_text, batch.valid_mask)
        l_g, n_mlm = loss_generator(gen_logits, batch.mlm_mask, batch.sc_text, reduction)
        replaced = sample_replacements(gen_logits, batch.mlm_mask, batch.sc_text, self.state.rng.sampling)
        labels = rtd_labels(batch.masked_text, replaced, batch.sc_text, self.vocab.mlm_id)

        # Discriminator
        hidden = model.discriminator_encode(replaced, batch.valid_mask)
        probs = model.rtd_head_forward(hidden)
        if not torch.isfinite(probs).all():
            raise DivergenceError(f'divergence: non-finite RTD probabilities at step {self.state.step}',
                                  state=self.state)
        l_rtd, n_rtd = loss_rtd(probs, labels, batch.valid_mask, reduction)
        dec_logits = model.discriminator_decode(hidden, batch.decoder_input, batch.valid_mask)
        l_sc, n_sc = loss_sc(dec_logits, batch.target, batch.target_mask, reduction)

        extras = dict(rtd_accuracy=rtd_accuracy(probs, labels, batch.valid_mask),
                      replaced=int(labels.sum()), mlm_tokens=n_mlm)
        return hybrid_loss(l_g, l_rtd, l_sc, cfg.lambda1, cfg.lambda2, (n_mlm, n_rtd, n_sc)), extras

    def train_step(self, state: TrainState, rows: np.ndarray) -> Tuple[TrainState, Optional[Dict]]:
        """One optimizer update on a packed [rows x input_len] batch.

        Returns no metrics when every row was too short to corrupt; the step counter does not move then.
        """
        if rows.ndim != 2 or rows.shape[1] != self.cfg.input_len or len(rows) > self.cfg.batch_size:
            raise ValueError(f'batch shape {rows.shape} does not match batch_size={self.cfg.batch_size}, '
                             f'input_len={self.cfg.input_len}')
        self.state = state
        stage = state.stage
        corruption = self.cfg.corruption_config()
        if stage is Stage.SC_ONLY:
            corruption = corruption.without_mlm()

        examples = self.transform(rows, corruption)
        state.batches_consumed += 1
        if not examples:
            logger.warning(f'Skipping batch {state.batches_consumed - 1}: no row long enough to corrupt')
            return state, None
        batch = collate_examples(examples)

        learning_rate = self.lr_policy(state.step)
        for group in state.optimizer.param_groups:
            group['lr'] = learning_rate
        state.model.train()
        state.optimizer.zero_grad(set_to_none=True)

        breakdown, extras = self.routine(batch, stage)
        if not torch.isfinite(breakdown.total):
            raise DivergenceError(f'divergence: non-finite loss {breakdown.total.item()} at step {state.step}',
                                  state=state)
        breakdown.total.backward()
        state.optimizer.step()

        losses = breakdown.as_metrics()
        # lambda2 * l_sc in both stages
        metrics = dict(step=state.step, stage=stage.value, lr=learning_rate, **losses,
                       l_sc_weighted=self.cfg.lambda2 * losses['l_sc'],
                       tokens_per_step=int(sum(len(example.original) for example in examples)),
                       gflops_per_step=self.gflops[stage], sequences=len(examples), **extras)
        state.step += 1
        if stage is Stage.HYBRID and state.step == self.cfg.tau:
            self.transition(state)
        return state, metrics

    def transition(self, state: TrainState) -> TrainState:
        """Freezes G and the RTD head; the optimizer keeps only the discriminator and embedder slots."""
        if state.stage is not Stage.HYBRID or state.step != self.cfg.tau:
            raise TransitionError(f'transition requested at step {state.step} in stage {state.stage.value}; '
                                  f'only allowed at step tau={self.cfg.tau} in stage hybrid')
        model = state.model
        for param in model.generator_parameters().values():
            param.requires_grad_(False)
            param.grad = None

        retained = list(model.discriminator_parameters().values())
        optimizer = build_optimizer(self.cfg.optimizer, retained, lr=state.optimizer.param_groups[0]['lr'])
        for param in retained:
            if param in state.optimizer.state:
                optimizer.state[param] = state.optimizer.state[param]
        state.optimizer = optimizer
        state.stage = Stage.SC_ONLY

        logger.info(f'Transition at step {state.step}: generator and RTD head frozen, '
                    f'{len(retained)} discriminator tensors keep training')
        MlflowLogger.set_stage(state.stage.value)
        if self.manifest is not None:
            self.manifest.record_transition(state.step)
        return state

    def save(self, run_dir: Path, include_generator: bool = True) -> Path:
        directory = run_dir / 'checkpoints' / checkpoint_name(self.state.step)
        return save_checkpoint(self.state, directory, self.cfg, self.vocab, include_generator=include_generator)

    def run(self, out_dir: Union[str, Path], resume: Optional[Union[str, Path]] = None) -> Path:
        cfg = self.cfg
        out_dir = Path(out_dir)
        (out_dir / 'checkpoints').mkdir(parents=True, exist_ok=True)
        torch.use_deterministic_algorithms(True)

        documents = read_corpus(cfg.corpus)
        if resume is not None:
            checkpoint_dir, resume_dir = resolve_checkpoint(resume)
            state, vocab, _ = load_checkpoint(checkpoint_dir, cfg)
            if state.stage is Stage.HYBRID and not state.model.has_generator:
                raise CheckpointError(f'{checkpoint_dir} has no generator: cannot resume the hybrid stage')
            self.manifest = RunManifest.load(resume_dir) if (resume_dir / RunManifest.FILENAME).is_file() else \
                RunManifest.start(cfg, dict(seed=cfg.seed, data=state.rng.data, init=state.rng.init))
            self.manifest.config = cfg.to_dict()
            self.manifest.completion = None
            self.manifest.transitions = [t for t in self.manifest.transitions if t['step'] <= state.step]
            writer = MetricsWriter.resume(resume_dir / 'metrics.csv', before_step=state.step)
            writer.path = out_dir / 'metrics.csv'
            self.build(vocab, state)
            logger.info(f'Resuming from {checkpoint_dir} at step {state.step} ({state.stage.value})')
        else:
            vocab = build_vocab(documents, cfg.vocab_size, cfg.sentinels)
            rng = RngStreams.from_seed(cfg.seed)
            self.manifest = RunManifest.start(cfg, dict(seed=cfg.seed, data=rng.data, init=rng.init))
            writer = MetricsWriter(out_dir / 'metrics.csv')
            state = self.build(vocab)
        vocab.save(out_dir / 'vocab.txt')
        self.manifest.write(out_dir)

        if cfg.log_to_mlflow:
            MlflowLogger.start_run(out_dir, 'spactor', cfg.config_hash())
            MlflowLogger.log_run_params(cfg.to_dict())
            MlflowLogger.set_stage(state.stage.value)

        loader = make_loader(encode_corpus(documents, vocab), cfg.input_len, cfg.batch_size, state.rng.data, vocab,
                             skip=state.batches_consumed, num_workers=cfg.num_workers)
        timing = {stage.value: [0, 0.0] for stage in Stage}
        logger.info(f'Training {cfg.total_steps - state.step} steps, tau={cfg.tau}, v={vocab.v}, '
                    f'{sum(p.numel() for p in state.model.parameters())} parameters')

        try:
            while state.step < cfg.total_steps:
                rows = next(loader)
                start = time.perf_counter()
                state, metrics = self.train_step(state, rows)
                if metrics is None:
                    continue
                timing[metrics['stage']][0] += metrics['sequences']
                timing[metrics['stage']][1] += time.perf_counter() - start

                writer.append(metrics)
                MlflowLogger.log_metrics(metrics, step=metrics['step'])
                if state.step % cfg.log_every == 0:
                    logger.info(f"step {metrics['step']} [{metrics['stage']}] lr={metrics['lr']:.5f} "
                                f"total={metrics['total']:.4f} l_sc={metrics['l_sc']:.4f} "
                                f"lambda2*l_sc={metrics['l_sc_weighted']:.4f} "
                                f"l_g={metrics['l_g']} l_rtd={metrics['l_rtd']}")
                if state.step % cfg.checkpoint_every == 0 or state.step == cfg.total_steps:
                    self.save(out_dir)
                    writer.flush()
                    self.manifest.write(out_dir)
        finally:
            MlflowLogger.end_run()

        writer.flush()
        sequences_per_second = {stage: (count / seconds if seconds > 0 else None)
                                for stage, (count, seconds) in timing.items()}
        self.manifest.record_completion(state.step, stage=state.stage.value,
                                        sequences_per_second=sequences_per_second)
        self.manifest.take_inventory(out_dir)
        self.manifest.write(out_dir)
        logger.info(f'Finished at step {state.step}; run directory {out_dir}')
        return out_dir
