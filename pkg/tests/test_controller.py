import json
import math

import numpy as np
import pandas as pd
import pytest
import torch
import torch.nn.functional as F

from src.data.corpus import batch_stream, encode_corpus, read_corpus
from src.data.corruption import CorruptionConfig, collate_examples, corrupt_example, corruptible
from src.data.vocabulary import build_vocab
from src.errors import DivergenceError, TransitionError
from src.models.checkpoint import list_checkpoints, read_manifest
from src.models.optimizers import build_optimizer
from src.models.spactor.controller import SpacTorController
from src.models.spactor.model import init_params
from src.models.spactor.utils import RngStreams, Stage
from src.models.utils import METRIC_COLUMNS, MlflowLogger


def _setup(cfg):
    controller = SpacTorController(cfg)
    documents = read_corpus(cfg.corpus)
    vocab = build_vocab(documents, cfg.vocab_size, cfg.sentinels)
    state = controller.build(vocab)
    batches = batch_stream(encode_corpus(documents, vocab), cfg.input_len, cfg.batch_size, state.rng.data, vocab)
    return controller, state, batches


def _files(directory):
    return {path.relative_to(directory): path.read_bytes() for path in sorted(directory.rglob('*')) if path.is_file()}


def test_stage_contract(tiny_config, tmp_path):
    cfg = tiny_config(tau=50, total_steps=100, checkpoint_every=50)
    out = SpacTorController(cfg).run(tmp_path / 'run')

    metrics = pd.read_csv(out / 'metrics.csv')
    assert list(metrics.columns) == METRIC_COLUMNS
    assert metrics.step.tolist() == list(range(100))
    hybrid = metrics.step < 50
    assert metrics.l_g[hybrid].notna().all() and metrics.l_rtd[hybrid].notna().all()
    assert metrics.l_g[~hybrid].isna().all() and metrics.l_rtd[~hybrid].isna().all()
    assert (metrics.stage[hybrid] == 'hybrid').all() and (metrics.stage[~hybrid] == 'sc_only').all()
    assert metrics.gflops_per_step[hybrid].iloc[0] > metrics.gflops_per_step[~hybrid].iloc[0]

    checkpoints = list_checkpoints(out)
    assert sorted(checkpoints) == [50, 100]
    at_tau, final = read_manifest(checkpoints[50]), read_manifest(checkpoints[100])
    assert at_tau['stage'] == final['stage'] == 'sc_only'

    def digests(manifest, names):
        return {entry['name']: entry['sha256'] for entry in manifest['parameters'] if entry['name'] in names}

    model = init_params(cfg.model_config(len((out / 'vocab.txt').read_text().splitlines())), 0)
    generator, discriminator = set(model.generator_parameters()), set(model.discriminator_parameters())
    assert digests(at_tau, generator) == digests(final, generator)
    assert digests(at_tau, discriminator) != digests(final, discriminator)

    manifest = json.loads((out / 'manifest.json').read_text())
    assert [t['step'] for t in manifest['transitions']] == [50]
    assert manifest['completion']['step'] == 100


def test_generator_frozen_after_transition(tiny_config):
    controller, state, batches = _setup(tiny_config(tau=3, total_steps=20))
    stages = []
    while state.step < 3:
        state, metrics = controller.train_step(state, next(batches))
        stages.append(metrics['stage'])
    assert state.stage is Stage.SC_ONLY
    assert stages == ['hybrid'] * 3

    frozen = {name: p.detach().clone() for name, p in state.model.generator_parameters().items()}
    embedder = state.model.embedder.weight.detach().clone()
    while state.step < 10:
        state, metrics = controller.train_step(state, next(batches))
        assert metrics['stage'] == 'sc_only' and metrics['l_g'] is None and metrics['l_rtd'] is None
    for name, param in state.model.generator_parameters().items():
        assert torch.equal(param, frozen[name]), name
        assert not param.requires_grad
    assert not torch.equal(state.model.embedder.weight, embedder)


def test_weighted_sc_loss_in_both_stages(tiny_config, tmp_path, monkeypatch):
    cfg = tiny_config(tau=3, total_steps=6, lambda1=2.0, lambda2=5.0)
    controller, state, batches = _setup(cfg)
    seen = []
    while state.step < 6:
        state, metrics = controller.train_step(state, next(batches))
        seen.append(metrics)
        assert metrics['l_sc_weighted'] == pytest.approx(5.0 * metrics['l_sc'])
    for metrics in seen[:3]:
        assert metrics['total'] == pytest.approx(metrics['l_g'] + 2.0 * metrics['l_rtd'] + metrics['l_sc_weighted'],
                                                rel=1e-5)
    for metrics in seen[3:]:
        assert metrics['stage'] == 'sc_only' and metrics['total'] == metrics['l_sc']

    logged = []
    monkeypatch.setattr(MlflowLogger, 'log_metrics', lambda metrics, step: logged.append(metrics))
    SpacTorController(cfg).run(tmp_path / 'run')
    assert len(logged) == 6
    assert all(metrics['l_sc_weighted'] == pytest.approx(5.0 * metrics['l_sc']) for metrics in logged)


def test_transition_continuity(tiny_config):
    controller, state, batches = _setup(tiny_config(tau=5, total_steps=10))
    for _ in range(3):
        state, _ = controller.train_step(state, next(batches))
    discriminator = {name: p.detach().clone() for name, p in state.model.discriminator_parameters().items()}
    slots = {name: {slot: value.clone() if torch.is_tensor(value) else value
                    for slot, value in state.optimizer.state[p].items()}
             for name, p in state.model.discriminator_parameters().items()}

    state.step = 5
    controller.transition(state)

    assert state.stage is Stage.SC_ONLY
    retained = state.model.discriminator_parameters()
    for name, param in retained.items():
        assert torch.equal(param, discriminator[name]), name
        for slot, value in slots[name].items():
            restored = state.optimizer.state[param][slot]
            assert torch.equal(restored, value) if torch.is_tensor(value) else restored == value
    assert [id(p) for group in state.optimizer.param_groups for p in group['params']] == \
        [id(p) for p in retained.values()]
    assert not any(p.requires_grad for p in state.model.generator_parameters().values())

    with pytest.raises(TransitionError):
        controller.transition(state)


def test_transition_at_wrong_step(tiny_config):
    controller, state, _ = _setup(tiny_config(tau=5, total_steps=10))
    with pytest.raises(TransitionError, match='only allowed at step tau=5'):
        controller.transition(state)
    assert state.stage is Stage.HYBRID


def test_tau_zero_starts_with_span_corruption_only(tiny_config):
    _, state, _ = _setup(tiny_config(tau=0))
    assert state.stage is Stage.SC_ONLY
    assert state.step == 0


def _pure_span_corruption_losses(cfg, steps):
    """Encoder-decoder trained on span corruption alone, written without the controller or objectives."""
    documents = read_corpus(cfg.corpus)
    vocab = build_vocab(documents, cfg.vocab_size, cfg.sentinels)
    rng = RngStreams.from_seed(cfg.seed)
    torch.manual_seed(rng.init)
    model = init_params(cfg.model_config(vocab.v), rng.init)
    params = [p for name, p in model.named_parameters() if name.split('.')[0] in ('embedder', 'encoder', 'decoder')]
    optimizer = build_optimizer('adafactor', params)
    corruption = CorruptionConfig(cfg.r_sc, cfg.mu, 0.0)

    losses = []
    for rows in batch_stream(encode_corpus(documents, vocab), cfg.input_len, cfg.batch_size, rng.data, vocab):
        if len(losses) == steps:
            break
        examples = []
        for row in rows:
            x = row[row != vocab.pad_id]
            if corruptible(len(x), cfg.r_sc, cfg.mu):
                examples.append(corrupt_example(x, corruption, rng.spans, vocab, mlm_rng=rng.mlm))
        if not examples:
            continue
        batch = collate_examples(examples)
        for group in optimizer.param_groups:
            group['lr'] = 1 / math.sqrt(max(len(losses), cfg.kappa))
        optimizer.zero_grad(set_to_none=True)
        hidden = model.discriminator_encode(batch.sc_text, batch.valid_mask)
        logits = model.discriminator_decode(hidden, batch.decoder_input, batch.valid_mask)
        count = int(batch.target_mask.sum())
        loss = F.cross_entropy(logits[batch.target_mask], batch.target[batch.target_mask], reduction='sum') / count
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    return losses


def test_tau_zero_equals_pure_span_corruption(tiny_config):
    cfg = tiny_config(tau=0, total_steps=12)
    controller, state, batches = _setup(cfg)
    losses = []
    while state.step < 12:
        state, metrics = controller.train_step(state, next(batches))
        if metrics is not None:
            losses.append(metrics['total'])
            assert metrics['total'] == metrics['l_sc']
    assert losses == _pure_span_corruption_losses(cfg, 12)


def test_runs_are_deterministic(tiny_config, tmp_path):
    cfg = tiny_config(tau=6, total_steps=12, checkpoint_every=6)
    a = SpacTorController(cfg).run(tmp_path / 'a')
    b = SpacTorController(cfg).run(tmp_path / 'b')
    assert (a / 'metrics.csv').read_bytes() == (b / 'metrics.csv').read_bytes()
    assert _files(a / 'checkpoints') == _files(b / 'checkpoints')


@pytest.mark.parametrize('tau, transitions', [(8, [8]), (math.inf, [])])
def test_resume_matches_uninterrupted_run(tiny_config, tmp_path, tau, transitions):
    cfg = tiny_config(tau=tau, total_steps=20, checkpoint_every=10)
    full = SpacTorController(cfg).run(tmp_path / 'full')
    SpacTorController(cfg.replace(total_steps=10)).run(tmp_path / 'short')
    resumed = SpacTorController(cfg).run(tmp_path / 'resumed', resume=tmp_path / 'short')

    assert (full / 'metrics.csv').read_bytes() == (resumed / 'metrics.csv').read_bytes()
    final = 'checkpoints/step_0000020'
    assert _files(full / final) == _files(resumed / final)
    manifest = json.loads((resumed / 'manifest.json').read_text())
    assert manifest['config']['total_steps'] == 20
    assert [t['step'] for t in manifest['transitions']] == transitions


@pytest.mark.parametrize('tau', [0, math.inf])
def test_divergence(tiny_config, tau):
    controller, state, batches = _setup(tiny_config(tau=tau))
    with torch.no_grad():
        state.model.embedder.weight.fill_(float('nan'))
    with pytest.raises(DivergenceError, match='divergence') as excinfo:
        controller.train_step(state, next(batches))
    assert excinfo.value.state is state
    assert state.step == 0


def test_rejects_wrong_batch_shape(tiny_config):
    controller, state, _ = _setup(tiny_config())
    with pytest.raises(ValueError):
        controller.train_step(state, np.full((2, 7), 9))
    with pytest.raises(ValueError):
        controller.train_step(state, np.full((5, 16), 9))


def test_batch_of_short_rows_is_skipped(tiny_config):
    controller, state, _ = _setup(tiny_config())
    rows = np.zeros((4, 16), dtype=np.int64)
    rows[:, :3] = 9
    state, metrics = controller.train_step(state, rows)
    assert metrics is None
    assert state.step == 0 and state.batches_consumed == 1


def test_overfits_a_repeated_batch(tiny_config):
    controller, state, batches = _setup(tiny_config(tau=math.inf, total_steps=200))
    rows = next(batches)
    totals = []
    for _ in range(150):
        state, metrics = controller.train_step(state, rows)
        totals.append(metrics['total'])
    assert all(np.isfinite(totals))
    assert np.mean(totals[-20:]) < np.mean(totals[20:40])
