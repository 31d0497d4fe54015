"""
Command-line entry point: ``backbone-nas <command>``.

The pipeline runs as ``pretrain`` -> ``finetune`` -> ``search``; ``retrain``,
``eval``, ``flops`` and ``report-patterns`` inspect its products. Every
command writes the resolved configuration as ``run.cfg`` next to its
outputs.

Exit codes: 0 on success, 2 for configuration, validation, phase-order and
file errors, 3 for numerical failures.
"""

import argparse
import os
import sys
import warnings

import numpy as np

from astropy import log
from astropy.table import Table

from .config import RunConfig
from .evolution import run_search, _check_feasible
from .flops import architecture_flops, flops_range, sample_flops
from .patterns import pattern_report
from .reporting import (loss_curve_table, flops_histogram_table, metrics_table,
                        write_table, best_so_far_svg, write_svg)
from .search_space import (cardinality, parse_architecture, baseline_architecture,
                           NUM_CHOICES)
from .supernet import (SupernetWeights, SupernetEvaluator, train_supernet,
                       train_standalone, evaluate_path)
from .utils import (NumericalError, InvalidConfigurationError, InvalidArchitectureError,
                    PhaseOrderError, ConstrainedSamplingError, ConstraintWarning)

__all__ = ['main', 'cmd_pretrain', 'cmd_finetune', 'cmd_search', 'cmd_retrain',
           'cmd_eval', 'cmd_flops', 'cmd_report_patterns']

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

PRETRAINED_CHECKPOINT = 'supernet_pretrained.dnas'
FINETUNED_CHECKPOINT = 'supernet_finetuned.dnas'


def _output_dir(config):
    path = config['output_dir']
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError("Output directory {0} is not writable".format(path))
    return path


def _finish(config, out):
    config.write(os.path.join(out, 'run.cfg'))


def _read_checkpoint(path, space):
    return SupernetWeights.read(path, format='dnas', space=space)


def cmd_pretrain(config):
    """
    Pretrain a fresh supernet on the classification task.

    Writes ``supernet_pretrained.dnas`` and ``pretrain_loss.csv``.
    """
    out = _output_dir(config)
    space = config.space()
    task = config.classification_task()
    data = config.task_data('classification')

    weights = SupernetWeights.initialize(space, seed=config['seed'],
                                         num_classes=task.num_classes)
    train_supernet(space, weights, config.schedule(), 'pretrain', task, data.train,
                   rng=config.rng('pretrain'))

    path = os.path.join(out, PRETRAINED_CHECKPOINT)
    weights.write(path, format='dnas', overwrite=True)
    write_table(loss_curve_table(weights.history['pretrain']),
                os.path.join(out, 'pretrain_loss.csv'))
    _finish(config, out)
    log.info("Wrote pretrained supernet to {0}".format(path))
    return path


def cmd_finetune(config, checkpoint=None, from_scratch=False):
    """
    Fine-tune a pretrained supernet on the localization task.

    With ``from_scratch`` the supernet starts from random weights and the
    fine-tuning iterations are doubled. Writes ``supernet_finetuned.dnas``
    and ``finetune_loss.csv``.
    """
    out = _output_dir(config)
    space = config.space()
    schedule = config.schedule()
    task = config.localization_task()

    if from_scratch:
        weights = SupernetWeights.initialize(space, seed=config['seed'],
                                             num_classes=config['task.num_classes'])
        schedule = schedule.from_scratch()
    else:
        if checkpoint is None:
            raise InvalidConfigurationError("finetune needs --checkpoint unless "
                                            "--from-scratch is given")
        weights = _read_checkpoint(checkpoint, space)
        if weights.phase != 'pretrained':
            raise PhaseOrderError("finetune needs a checkpoint tagged 'pretrained', "
                                  "{0} is tagged {1!r}".format(checkpoint, weights.phase))

    data = config.task_data('localization')
    train_supernet(space, weights, schedule, 'finetune', task, data.train,
                   rng=config.rng('finetune'), from_scratch=from_scratch)

    path = os.path.join(out, FINETUNED_CHECKPOINT)
    weights.write(path, format='dnas', overwrite=True)
    write_table(loss_curve_table(weights.history['finetune']),
                os.path.join(out, 'finetune_loss.csv'))
    _finish(config, out)
    log.info("Wrote fine-tuned supernet to {0}".format(path))
    return path


def cmd_search(config, checkpoint, controller=None):
    """
    Search a fine-tuned supernet.

    Writes one ``search_log_<controller>.csv`` and
    ``search_summary_<controller>.txt`` per controller and
    ``search_curve.svg`` with the best-so-far curve of each.

    Returns
    -------
    results : list of `~backbone_nas.evolution.SearchResult`
    """
    if controller is not None:
        config['search.controller'] = controller
    controller = config['search.controller']
    controllers = ('evolution', 'random') if controller == 'both' else (controller,)

    out = _output_dir(config)
    space = config.space()
    evolution_config = config.evolution_config()
    _check_feasible(space, evolution_config.constraint)

    task = config.search_task()
    weights = _read_checkpoint(checkpoint, space)
    required = 'finetuned' if task.kind == 'localization' else 'pretrained'
    if weights.phase not in (required, 'finetuned'):
        raise PhaseOrderError("Searching on the {0} task needs a checkpoint tagged "
                              "{1!r}, {2} is tagged {3!r}"
                              .format(task.kind, required, checkpoint, weights.phase))

    data = config.task_data(task.kind)
    evaluator = SupernetEvaluator(weights, task, data.calibration, data.validation)

    results = []
    for name in controllers:
        result = run_search(evaluator, space, evolution_config, controller=name,
                            rng=config.rng('search'), num_cores=config['search.num_cores'],
                            log_path=os.path.join(out, 'search_log_{0}.csv'.format(name)))
        result.write_summary(os.path.join(out, 'search_summary_{0}.txt'.format(name)))
        print(result.summary(), end='')
        results.append(result)

    write_svg(best_so_far_svg(results), os.path.join(out, 'search_curve.svg'))
    _finish(config, out)
    return results


def cmd_retrain(config, architecture=None, baseline=False):
    """
    Train one architecture stand-alone through both phases and report its
    test metrics in ``retrain_metrics.csv``.
    """
    space = config.space()
    if baseline:
        arch = baseline_architecture(space)
    elif architecture is None:
        raise InvalidConfigurationError("retrain needs --arch or --baseline")
    else:
        arch = parse_architecture(architecture, space)

    flops = architecture_flops(arch, space)
    constraint = config.constraint()
    if not constraint.satisfies_flops(flops):
        warnings.warn("Architecture {0} ({1} MACs) violates {2}; retraining anyway"
                      .format(arch, flops, constraint), ConstraintWarning)

    out = _output_dir(config)
    cls_task, loc_task = config.classification_task(), config.localization_task()
    cls_data, loc_data = config.task_data('classification'), config.task_data('localization')

    weights = train_standalone(space, arch, config.schedule(), cls_task, cls_data.train,
                               loc_task, loc_data.train, seed=config['seed'])

    metrics = {
        'architecture': str(arch),
        'architecture_symbolic': arch.to_symbolic(),
        'flops': int(flops),
        'flops_task_resolution': architecture_flops(arch, space,
                                                    resolution=cls_task.resolution),
        'accuracy': evaluate_path(weights, arch, cls_task, cls_data.calibration,
                                  cls_data.test),
        'iou': evaluate_path(weights, arch, loc_task, loc_data.calibration,
                             loc_data.test),
    }
    write_table(metrics_table(metrics), os.path.join(out, 'retrain_metrics.csv'))
    _finish(config, out)
    log.info("Retrained {0}: accuracy {1:.4f}, IoU {2:.4f}"
             .format(arch.to_symbolic(), metrics['accuracy'], metrics['iou']))
    return metrics


def cmd_eval(config, checkpoint, architecture):
    """
    Recalibrate and evaluate one architecture on a trained supernet.
    """
    space = config.space()
    out = _output_dir(config)
    arch = parse_architecture(architecture, space)
    task = config.search_task()
    weights = _read_checkpoint(checkpoint, space)
    data = config.task_data(task.kind)
    fitness = evaluate_path(weights, arch, task, data.calibration, data.validation)
    _finish(config, out)
    print("architecture = {0}".format(arch))
    print("architecture_symbolic = {0}".format(arch.to_symbolic()))
    print("flops = {0:d}".format(architecture_flops(arch, space)))
    print("fitness = {0:.6f}".format(fitness))
    return fitness


def format_cardinality(space):
    """
    ``4^20 ≈ 1.100e12`` style line for the size of a space.
    """
    mantissa, exponent = "{0:.3e}".format(cardinality(space)).split('e')
    return "{0}^{1} ≈ {2}e{3:d}".format(NUM_CHOICES, space.num_blocks, mantissa,
                                        int(exponent))


def cmd_flops(config, architecture=None, samples=10000):
    """
    FLOPs report of one architecture or of the whole space.

    Without an architecture a histogram of ``samples`` random
    architectures is written to ``flops_histogram.csv``.
    """
    space = config.space()
    out = _output_dir(config)
    lines = []
    if architecture is not None:
        arch = parse_architecture(architecture, space)
        report = {'architecture': str(arch),
                  'flops': architecture_flops(arch, space),
                  'flops_task_resolution': architecture_flops(
                      arch, space, resolution=config['task.resolution'])}
        lines.append("architecture = {0}".format(arch))
        lines.append("flops = {0:d} ({1}x{2})".format(report['flops'],
                                                      *space.input_resolution))
        lines.append("flops_task_resolution = {0:d} ({1}x{2})"
                     .format(report['flops_task_resolution'], *config['task.resolution']))
    else:
        low, high = flops_range(space)
        report = {'cardinality': cardinality(space), 'min_flops': low, 'max_flops': high}
        lines.append(str(space))
        lines.append("cardinality = {0}".format(format_cardinality(space)))
        lines.append("min_flops = {0:d}".format(low))
        lines.append("max_flops = {0:d}".format(high))
        flops = sample_flops(space, samples, rng=config.rng('flops_sampling'))
        write_table(flops_histogram_table(flops), os.path.join(out, 'flops_histogram.csv'))
    _finish(config, out)
    print("\n".join(lines))
    return report


def _read_architectures(filename, space, top=None):
    """
    Architectures from a search log CSV (optionally its ``top`` best rows)
    or from a text file with one architecture per line.
    """
    with open(filename) as fh:
        first_line = fh.readline()
    if first_line.startswith('iteration') and 'architecture' in first_line:
        table = Table.read(filename, format='ascii.csv')
        if top is not None:
            order = np.lexsort((np.asarray(table['index']),
                                np.asarray(table['iteration']),
                                -np.asarray(table['fitness'])))
            seen, rows = set(), []
            for row in order:
                text = str(table['architecture'][row])
                if text not in seen:
                    seen.add(text)
                    rows.append(text)
            texts = rows[:top]
        else:
            texts = [str(value) for value in table['architecture']]
    else:
        with open(filename) as fh:
            texts = [line.strip() for line in fh if line.strip() and not line.startswith('#')]
    return [parse_architecture(text, space) for text in texts]


def cmd_report_patterns(config, sources, top=None):
    """
    Per-stage choice histogram of the architectures in ``sources``; writes
    ``patterns.csv`` and ``patterns.txt``.
    """
    space = config.space()
    archs, labels = [], []
    for source in sources:
        found = _read_architectures(source, space, top=top)
        base = os.path.splitext(os.path.basename(source))[0]
        archs += found
        labels += ["{0}[{1}]".format(base, i) for i in range(len(found))]

    report = pattern_report(archs, space, labels=labels)
    out = _output_dir(config)
    report.write_csv(os.path.join(out, 'patterns.csv'))
    with open(os.path.join(out, 'patterns.txt'), 'w') as fh:
        fh.write(report.diagram())
    _finish(config, out)
    print(report.diagram(), end='')
    return report


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="run configuration file")
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help="override one configuration value (repeatable)")
    common.add_argument('--output-dir', help="output directory (output_dir)")
    common.add_argument('--seed', type=int, help="run seed (seed)")
    common.add_argument('--num-cores', type=int,
                        help="joblib workers for candidate evaluation")
    common.add_argument('--progress', action='store_true', help="show progress bars")
    common.add_argument('-v', '--verbose', action='store_true', help="debug logging")

    parser = argparse.ArgumentParser(prog='backbone-nas',
                                     description="One-shot backbone architecture "
                                                 "search at desk scale")
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('pretrain', parents=[common],
                        help="pretrain the supernet on the classification task")

    finetune = commands.add_parser('finetune', parents=[common],
                                   help="fine-tune a pretrained supernet")
    finetune.add_argument('--checkpoint', help="pretrained checkpoint")
    finetune.add_argument('--from-scratch', action='store_true',
                          help="start from random weights with doubled iterations")

    search = commands.add_parser('search', parents=[common],
                                 help="search a fine-tuned supernet")
    search.add_argument('--checkpoint', required=True, help="fine-tuned checkpoint")
    search.add_argument('--controller', choices=('evolution', 'random', 'both'))

    retrain = commands.add_parser('retrain', parents=[common],
                                  help="train one architecture stand-alone")
    group = retrain.add_mutually_exclusive_group(required=True)
    group.add_argument('--arch', help="architecture, integer or symbolic form")
    group.add_argument('--baseline', action='store_true',
                       help="retrain the all-3x3 ShuffleNetv2 baseline")

    evaluate = commands.add_parser('eval', parents=[common],
                                   help="evaluate one architecture on a supernet")
    evaluate.add_argument('--checkpoint', required=True)
    evaluate.add_argument('--arch', required=True)

    flops = commands.add_parser('flops', parents=[common], help="FLOPs report")
    flops.add_argument('--arch', help="architecture to cost")
    flops.add_argument('--samples', type=int, default=10000,
                       help="random architectures in the histogram")

    patterns = commands.add_parser('report-patterns', parents=[common],
                                   help="per-stage choice histogram")
    patterns.add_argument('sources', nargs='+',
                          help="search log CSVs or architecture list files")
    patterns.add_argument('--top', type=int, help="use the k best rows of each log")

    return parser


def load_config(args, environ=None):
    config = RunConfig.read(args.config) if args.config else RunConfig()
    config.apply_environment(environ)
    for assignment in args.set:
        config.set_override(assignment)
    if args.output_dir is not None:
        config['output_dir'] = args.output_dir
    if args.seed is not None:
        config['seed'] = args.seed
    if args.num_cores is not None:
        config['search.num_cores'] = args.num_cores
    return config.validate()


def _dispatch(args, config):
    if args.command == 'pretrain':
        cmd_pretrain(config)
    elif args.command == 'finetune':
        cmd_finetune(config, args.checkpoint, from_scratch=args.from_scratch)
    elif args.command == 'search':
        cmd_search(config, args.checkpoint, controller=args.controller)
    elif args.command == 'retrain':
        cmd_retrain(config, args.arch, baseline=args.baseline)
    elif args.command == 'eval':
        cmd_eval(config, args.checkpoint, args.arch)
    elif args.command == 'flops':
        cmd_flops(config, args.arch, samples=args.samples)
    elif args.command == 'report-patterns':
        cmd_report_patterns(config, args.sources, top=args.top)


def main(argv=None):
    from . import conf

    args = build_parser().parse_args(argv)
    if args.verbose:
        log.setLevel('DEBUG')

    try:
        config = load_config(args)
        with conf.set_temp('show_progress', args.progress or conf.show_progress):
            _dispatch(args, config)
    except NumericalError as ex:
        log.error(str(ex))
        return EXIT_NUMERIC
    except (InvalidConfigurationError, InvalidArchitectureError, PhaseOrderError,
            ConstrainedSamplingError, ValueError, OSError) as ex:
        log.error(str(ex))
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
