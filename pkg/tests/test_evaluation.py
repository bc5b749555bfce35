import math

import pytest

from src.data.corpus import read_corpus
from src.data.vocabulary import build_vocab
from src.diagnostics.evaluation import eval_run, eval_sc_loss
from src.errors import EvaluationError
from src.models.spactor.controller import SpacTorController


def _untrained_checkpoint(cfg, run_dir, include_generator=True):
    controller = SpacTorController(cfg)
    controller.build(build_vocab(read_corpus(cfg.corpus), cfg.vocab_size, cfg.sentinels))
    return controller.save(run_dir, include_generator=include_generator), controller.vocab


def test_untrained_clean_loss_is_near_uniform(tiny_config, tmp_path):
    cfg = tiny_config()
    checkpoint, vocab = _untrained_checkpoint(cfg, tmp_path)
    loss = eval_sc_loss(checkpoint, cfg.val_corpus, 'clean', max_batches=20)
    assert loss == pytest.approx(math.log(vocab.v), rel=0.05)


def test_perfect_generator_gives_clean_loss(tiny_config, tmp_path):
    cfg = tiny_config()
    checkpoint, _ = _untrained_checkpoint(cfg, tmp_path)
    clean = eval_sc_loss(checkpoint, cfg.val_corpus, 'clean', max_batches=10)
    noisy = eval_sc_loss(checkpoint, cfg.val_corpus, 'noisy', max_batches=10,
                         sampler=lambda logits, mask, sc_text, rng: sc_text.clone())
    assert noisy == clean


def test_sampled_noise_changes_the_loss(tiny_config, tmp_path):
    cfg = tiny_config()
    checkpoint, _ = _untrained_checkpoint(cfg, tmp_path)
    clean = eval_sc_loss(checkpoint, cfg.val_corpus, 'clean', max_batches=10)
    assert eval_sc_loss(checkpoint, cfg.val_corpus, 'noisy', max_batches=10) != clean


def test_evaluation_is_deterministic(tiny_config, tmp_path):
    cfg = tiny_config()
    checkpoint, _ = _untrained_checkpoint(cfg, tmp_path)
    for mode in ('clean', 'noisy'):
        assert eval_sc_loss(checkpoint, cfg.val_corpus, mode, seed=3, max_batches=5) == \
            eval_sc_loss(checkpoint, cfg.val_corpus, mode, seed=3, max_batches=5)


def test_noisy_needs_generator(tiny_config, tmp_path):
    cfg = tiny_config()
    checkpoint, _ = _untrained_checkpoint(cfg, tmp_path, include_generator=False)
    eval_sc_loss(checkpoint, cfg.val_corpus, 'clean', max_batches=2)
    with pytest.raises(EvaluationError, match='needs a generator'):
        eval_sc_loss(checkpoint, cfg.val_corpus, 'noisy', max_batches=2)


def test_invalid_mode(tiny_config, tmp_path):
    cfg = tiny_config()
    checkpoint, _ = _untrained_checkpoint(cfg, tmp_path)
    with pytest.raises(EvaluationError, match='mode'):
        eval_sc_loss(checkpoint, cfg.val_corpus, 'dirty')


def test_no_corruptible_rows(tiny_config, tmp_path):
    cfg = tiny_config()
    checkpoint, _ = _untrained_checkpoint(cfg, tmp_path)
    val = tmp_path / 'short.txt'
    val.write_text('t1\n', encoding='utf-8')
    with pytest.raises(EvaluationError, match='no sequence'):
        eval_sc_loss(checkpoint, val, 'clean')


def test_eval_run(tiny_config, tmp_path):
    cfg = tiny_config(tau=5, total_steps=10, checkpoint_every=5)
    run_dir = SpacTorController(cfg).run(tmp_path / 'run')
    series = eval_run(run_dir, cfg.val_corpus, 'clean', max_batches=3)
    assert series.index.tolist() == [5, 10]
    assert series.notna().all()
    assert eval_run(run_dir, cfg.val_corpus, 'clean', start_step=6, max_batches=3).index.tolist() == [10]
    with pytest.raises(EvaluationError, match='no checkpoint'):
        eval_run(run_dir, cfg.val_corpus, 'clean', start_step=11)
