import sys
import logging
from pathlib import Path

import click
import numpy as np
import pandas as pd

from src.config import parse_config, format_value
from src.errors import SpactorError

logger = logging.getLogger('spactor')


def _parse_tau(value: str) -> float:
    if value.strip().lower() in ('inf', 'infinity'):
        return float('inf')
    try:
        return int(value)
    except ValueError:
        raise click.BadParameter(f'{value!r} is neither an integer step nor inf')


class TauType(click.ParamType):
    name = 'tau'

    def convert(self, value, param, ctx):
        if isinstance(value, (int, float)):
            return value
        try:
            return _parse_tau(value)
        except click.BadParameter as e:
            self.fail(e.message, param, ctx)


@click.group()
def cli():
    """Hybrid span-corruption + replaced-token-detection pre-training."""


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--resume', type=click.Path(exists=True, file_okay=False), default=None,
              help='Run directory or checkpoint directory to continue from')
def pretrain(config_path, out, resume):
    """Runs the two-stage pre-training into OUT."""
    from src.models.spactor.controller import SpacTorController
    cfg = parse_config(config_path)
    click.echo(SpacTorController(cfg).run(out, resume=resume))


@cli.command('eval-gap')
@click.option('--run-a', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--run-b', default=None, type=click.Path(exists=True, file_okay=False),
              help='Defaults to --run-a, for comparing two context modes on one run')
@click.option('--mode', type=click.Choice(['clean', 'noisy']), default='clean')
@click.option('--mode-b', type=click.Choice(['clean', 'noisy']), default=None, help='Defaults to --mode')
@click.option('--start-step', type=int, default=0)
@click.option('--val', 'val_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help="Defaults to run A's val_corpus, then its corpus")
@click.option('--seed', type=int, default=0)
@click.option('--out', 'out_csv', type=click.Path(dir_okay=False), default=None)
def eval_gap(run_a, run_b, mode, mode_b, start_step, val_path, seed, out_csv):
    """Validation SC loss gap (A - B) per checkpoint step and its OLS trend test."""
    from src.config import RunManifest
    from src.diagnostics.evaluation import eval_run
    from src.diagnostics.regression import gap_series, ols_trend_test

    run_b = run_a if run_b is None else run_b
    mode_b = mode if mode_b is None else mode_b
    if val_path is None:
        config = RunManifest.load(run_a).config
        val_path = config.get('val_corpus') or config.get('corpus')
    loss_a = eval_run(run_a, val_path, mode, seed, start_step)
    loss_b = eval_run(run_b, val_path, mode_b, seed, start_step)
    series = gap_series(loss_a, loss_b, start_step, labels=(loss_a.name, loss_b.name))

    frame = pd.DataFrame({'step': series.steps.astype(np.int64), 'loss_a': loss_a.to_numpy(),
                          'loss_b': loss_b.to_numpy(), 'gap': series.gap})
    if out_csv is None:
        click.echo(frame.to_csv(index=False), nl=False)
    else:
        frame.to_csv(out_csv, index=False)
        logger.info(f'Wrote {len(frame)} gap points to {out_csv}')
    if len(frame) >= 3:
        click.echo(ols_trend_test(series).to_text(), nl=False)
    else:
        logger.warning(f'{len(frame)} gap points: at least 3 are needed for the trend test')


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--tau', required=True, type=TauType())
@click.option('--steps', required=True, type=int)
@click.option('--reference-steps', type=int, default=500000, show_default=True)
def flops(config_path, tau, steps, reference_steps):
    """Per-step GFLOPs of both stages and the run's normalized cumulative FLOPs, as CSV."""
    from src.diagnostics.flops import flops_report
    cfg = parse_config(config_path)
    report = flops_report(cfg.model_config(cfg.vocab_size), cfg.batch_size, cfg.input_len, cfg.r_sc, cfg.mu)
    try:
        report.add(tau, steps, reference_steps)
    except ValueError as e:
        raise click.BadParameter(str(e))
    frame = report.to_frame()
    frame['tau'] = frame['tau'].map(format_value)
    click.echo(frame.to_csv(index=False, float_format='%.6g'), nl=False)


@cli.command()
@click.option('--csv', 'csv_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--x-col', default='step', show_default=True)
@click.option('--y-col', default='gap', show_default=True)
@click.option('--start-step', type=float, default=0)
def regress(csv_path, x_col, y_col, start_step):
    """OLS slope of Y-COL on X-COL with a two-sided t test, as key=value text."""
    from src.diagnostics.regression import regress_columns
    click.echo(regress_columns(pd.read_csv(csv_path), x_col, y_col, start_step).to_text(), nl=False)


@cli.command('dump-examples')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--count', type=int, default=5, show_default=True)
@click.option('--corpus', 'corpus_path', type=click.Path(exists=True, dir_okay=False), default=None)
def dump_examples(config_path, count, corpus_path):
    """Corrupted examples as tab-separated original / sc_text / masked_text / target."""
    from src.data.corpus import encode_corpus, pack_batches, read_corpus
    from src.data.corruption import CorruptionTransform, format_example
    from src.data.vocabulary import build_vocab
    from src.models.spactor.utils import RngStreams

    cfg = parse_config(config_path)
    documents = read_corpus(corpus_path or cfg.corpus)
    vocab = build_vocab(documents, cfg.vocab_size, cfg.sentinels)
    rng = RngStreams.from_seed(cfg.seed)
    transform = CorruptionTransform(cfg.corruption_config(), vocab, rng.spans, rng.mlm)
    shown = 0
    for rows in pack_batches(encode_corpus(documents, vocab), cfg.input_len, cfg.batch_size, rng.data, vocab):
        for example in transform(rows):
            click.echo(format_example(example, vocab))
            shown += 1
            if shown == count:
                return


@cli.command('make-corpus')
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@click.option('--size-bytes', type=int, default=1000000, show_default=True)
@click.option('--num-words', type=int, default=2000, show_default=True)
@click.option('--seed', type=int, default=0)
def make_corpus(out, size_bytes, num_words, seed):
    """Writes a deterministic synthetic corpus, one document per line."""
    from src.data.synthetic import make_synthetic_corpus
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    make_synthetic_corpus(out, size_bytes, num_words=num_words, seed=seed)
    click.echo(out)


@cli.command('sweep-tau')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--taus', required=True, help='Comma-separated transition steps, e.g. 0,50,100,inf')
@click.option('--reference-steps', type=int, default=None, help="Defaults to the config's total_steps")
def sweep_tau(config_path, out, taus, reference_steps):
    """One pre-training run per tau, with each run's normalized FLOPs."""
    from src.models.spactor.varying_tau import sweep_tau as run_sweep
    cfg = parse_config(config_path)
    try:
        values = [_parse_tau(value) for value in taus.split(',') if value.strip()]
    except click.BadParameter as e:
        raise click.BadParameter(e.message, param_hint='--taus')
    table = run_sweep(cfg, values, out, reference_steps or cfg.total_steps)
    click.echo(table.to_csv(index=False, float_format='%.6g'), nl=False)


def _parse_floats(value: str, option: str) -> list:
    try:
        return [float(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise click.BadParameter(f'{value!r} is not a comma-separated list of numbers', param_hint=option)


@cli.command('hparam-search')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--lambda1', 'lambda1', default=None, help='Comma-separated values, default 1,10,20,50')
@click.option('--lambda2', 'lambda2', default=None, help='Comma-separated values, default 1,10,20,50')
@click.option('--r-mlm', 'r_mlm', default=None, help='Comma-separated values, default 0.05,0.1,0.15,0.2,0.25')
@click.option('--max-batches', type=int, default=None, help='Validation batches scored per run')
def hparam_search(config_path, out, lambda1, lambda2, r_mlm, max_batches):
    """Grid search over the loss weights and MLM ratio, ranked by validation SC loss."""
    from src.models.spactor.hyperparam_search import SEARCH_GRID, hyperparam_search
    cfg = parse_config(config_path)
    search_dict = dict(SEARCH_GRID)
    for key, option, value in (('lambda1', '--lambda1', lambda1), ('lambda2', '--lambda2', lambda2),
                               ('r_mlm', '--r-mlm', r_mlm)):
        if value is not None:
            search_dict[key] = _parse_floats(value, option)
    table = hyperparam_search(cfg, out, search_dict, max_batches)
    click.echo(table.to_csv(index=False, float_format='%.6g'), nl=False)


def dispatch(argv) -> int:
    """Runs one command; 0 on success, 1 on a run failure, 2 on a usage error."""
    argv = list(argv)
    if not argv:
        with click.Context(cli, info_name='spactor') as ctx:
            click.echo(cli.get_help(ctx), err=True)
        return 2
    try:
        cli.main(args=argv, prog_name='spactor', standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except (SpactorError, OSError, ValueError) as e:
        click.echo(f'spactor: error: {" ; ".join(str(e).splitlines())}', err=True)
        return 1
    return 0


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
