import json

import numpy as np
import pytest
import torch

from src.data.corpus import batch_stream, encode_corpus, read_corpus
from src.data.vocabulary import build_vocab
from src.errors import CheckpointError
from src.models.checkpoint import (MANIFEST, list_checkpoints, load_checkpoint, read_manifest, resolve_checkpoint,
                                   save_checkpoint)
from src.models.spactor.controller import SpacTorController
from src.models.spactor.utils import Stage


def _trained(cfg, steps=3):
    controller = SpacTorController(cfg)
    documents = read_corpus(cfg.corpus)
    vocab = build_vocab(documents, cfg.vocab_size, cfg.sentinels)
    state = controller.build(vocab)
    batches = batch_stream(encode_corpus(documents, vocab), cfg.input_len, cfg.batch_size, state.rng.data, vocab)
    while state.step < steps:
        state, _ = controller.train_step(state, next(batches))
    return controller, state


def _files(directory):
    return {path.relative_to(directory): path.read_bytes() for path in sorted(directory.rglob('*')) if path.is_file()}


def test_save_load_restores_everything(tiny_config, tmp_path):
    cfg = tiny_config()
    controller, state = _trained(cfg)
    directory = controller.save(tmp_path)
    rng_before = state.rng.generator_states()

    restored, vocab, manifest = load_checkpoint(directory, cfg)
    assert restored.step == state.step == manifest['step']
    assert restored.stage is Stage.HYBRID
    assert restored.batches_consumed == state.batches_consumed
    assert vocab == controller.vocab
    for (name, p), q in zip(state.model.named_parameters(), restored.model.parameters()):
        assert torch.equal(p, q), name
    params = dict(restored.model.named_parameters())
    for name, param in state.model.named_parameters():
        expected = state.optimizer.state[param]
        actual = restored.optimizer.state[params[name]]
        assert set(actual) == set(expected), name
        for slot, value in expected.items():
            assert torch.equal(actual[slot], value) if torch.is_tensor(value) else actual[slot] == value
    assert restored.rng.generator_states() == rng_before
    assert restored.rng.data == state.rng.data and restored.rng.init == state.rng.init


def test_saves_are_byte_identical(tiny_config, tmp_path):
    controller, state = _trained(tiny_config())
    a = save_checkpoint(state, tmp_path / 'a', controller.cfg, controller.vocab)
    b = save_checkpoint(state, tmp_path / 'b', controller.cfg, controller.vocab)
    assert _files(a) == _files(b)


def test_corrupt_manifest(tiny_config, tmp_path):
    controller, _ = _trained(tiny_config(), steps=1)
    directory = controller.save(tmp_path)
    (directory / MANIFEST).write_text('{"format": 1', encoding='utf-8')
    with pytest.raises(CheckpointError, match='corrupt manifest'):
        load_checkpoint(directory)


def test_missing_manifest_keys(tiny_config, tmp_path):
    controller, _ = _trained(tiny_config(), steps=1)
    directory = controller.save(tmp_path)
    manifest = json.loads((directory / MANIFEST).read_text())
    del manifest['rng']
    (directory / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match='corrupt manifest'):
        read_manifest(directory)


def test_tampered_parameter_file(tiny_config, tmp_path):
    controller, _ = _trained(tiny_config(), steps=1)
    directory = controller.save(tmp_path)
    path = directory / 'params' / 'embedder.weight.bin'
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match='corrupt manifest'):
        load_checkpoint(directory)


def test_config_hash_mismatch(tiny_config, tmp_path):
    controller, _ = _trained(tiny_config(), steps=1)
    directory = controller.save(tmp_path)
    with pytest.raises(CheckpointError, match='config hash mismatch'):
        load_checkpoint(directory, tiny_config(seed=1))
    load_checkpoint(directory, tiny_config(total_steps=99))


def test_discriminator_only_checkpoint(tiny_config, tmp_path):
    controller, state = _trained(tiny_config(), steps=2)
    directory = controller.save(tmp_path, include_generator=False)
    manifest = read_manifest(directory)
    assert manifest['has_generator'] is False
    stored = {entry['name'] for entry in manifest['parameters']}
    assert stored == set(state.model.discriminator_parameters())

    restored, _, _ = load_checkpoint(directory)
    assert not restored.model.has_generator
    assert torch.equal(restored.model.embedder.weight, state.model.embedder.weight)


def test_sc_only_checkpoint_drops_generator_slots(tiny_config, tmp_path):
    controller, state = _trained(tiny_config(tau=2, total_steps=10), steps=4)
    assert state.stage is Stage.SC_ONLY
    restored, _, _ = load_checkpoint(controller.save(tmp_path))
    assert restored.stage is Stage.SC_ONLY
    trainable = {id(p) for group in restored.optimizer.param_groups for p in group['params']}
    assert trainable == {id(p) for p in restored.model.discriminator_parameters().values()}
    assert not any(p.requires_grad for p in restored.model.generator_parameters().values())


def test_list_and_resolve(tiny_config, tmp_path):
    controller, state = _trained(tiny_config(), steps=1)
    first = controller.save(tmp_path)
    batches = batch_stream(encode_corpus(read_corpus(controller.cfg.corpus), controller.vocab),
                           controller.cfg.input_len, controller.cfg.batch_size, state.rng.data, controller.vocab,
                           skip=state.batches_consumed)
    while state.step < 3:
        state, _ = controller.train_step(state, next(batches))
    latest = controller.save(tmp_path)

    assert list_checkpoints(tmp_path) == {1: first, 3: latest}
    assert resolve_checkpoint(tmp_path) == (latest, tmp_path)
    assert resolve_checkpoint(first) == (first, tmp_path)
    with pytest.raises(CheckpointError, match='no checkpoint'):
        resolve_checkpoint(tmp_path / 'empty')


def test_restored_model_gives_same_outputs(tiny_config, tmp_path):
    controller, state = _trained(tiny_config(), steps=2)
    restored, _, _ = load_checkpoint(controller.save(tmp_path))
    tokens = torch.from_numpy(np.arange(8, 24).reshape(1, 16))
    state.model.eval()
    restored.model.eval()
    assert torch.equal(restored.model.discriminator_encode(tokens), state.model.discriminator_encode(tokens))
