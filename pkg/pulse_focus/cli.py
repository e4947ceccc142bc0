# ABOUTME: Command-line interface for PulseFocus
# ABOUTME: Runs scripted or sampled episodes, validates transcripts and analyzes trace files

import logging
import os
import sys

import click

from pulse_focus.config import MODEL_PRESETS, MODES, Config, RunSpec, load_config_file
from pulse_focus.exceptions import PulseFocusError
from pulse_focus.grammar.validation import validate_transcript
from pulse_focus.main import PulseFocusApp
from pulse_focus.services.analytics import GROUPINGS
from pulse_focus.traces.reports import ANALYSES, summary_text, write_reports
from pulse_focus.traces.trace_io import TRACE_SUFFIX

EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_GRAMMAR = 3

logger = logging.getLogger(__name__)


def _fail(message, code=EXIT_USAGE):
    click.echo(f"Error: {message}", err=True)
    sys.exit(code)


def _stem(path):
    name = os.path.basename(path)
    if name.endswith(TRACE_SUFFIX):
        return name[:-len(TRACE_SUFFIX)]
    return os.path.splitext(name)[0]


def _heads(value):
    if not value:
        return None
    try:
        return [int(part) for part in value.split(",")]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated head indices, got '{value}'")


def _lambdas(value):
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'")


@click.group()
@click.option('--debug/--no-debug', default=False, help='Enable debug logging')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              help='key=value file of <subcommand>.<option> defaults')
@click.pass_context
def cli(ctx, debug, config_path):
    """PulseFocus - plan/focus decoding with soft attention gating and attention analytics."""
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )
    config = Config()
    config.debug = debug

    if config_path:
        commands = {name: {p.name for p in command.params} for name, command in cli.commands.items()}
        try:
            ctx.default_map = load_config_file(config_path, commands)
        except PulseFocusError as e:
            _fail(str(e))

    ctx.ensure_object(dict)
    ctx.obj['config'] = config
    ctx.obj['app'] = PulseFocusApp(config)


def _run_options(command):
    options = [
        click.option('--preset', type=click.Choice(sorted(MODEL_PRESETS)), default=RunSpec.preset,
                     help='Model preset'),
        click.option('--mode', type=click.Choice(MODES), default=RunSpec.mode, help='Decoding mode'),
        click.option('--lambda', 'gate_lambda', type=float, default=RunSpec.gate_lambda,
                     help='Gate strength (>= 0)'),
        click.option('--plan-max-tokens', type=int, default=RunSpec.plan_max_tokens,
                     help='Token cap per plan block'),
        click.option('--focus-max-tokens', type=int, default=RunSpec.focus_max_tokens,
                     help='Token cap per focus block'),
        click.option('--max-cycles', type=int, default=RunSpec.max_cycles, help='Plan/focus cycle cap'),
        click.option('--total-token-cap', type=int, default=None, help='Total generated-token cap'),
        click.option('--num-images', type=int, default=RunSpec.num_images, help='Images in the prompt'),
        click.option('--image-tokens', type=int, default=RunSpec.image_tokens, help='Visual tokens per image'),
        click.option('--seed', type=int, default=0, help='Model weight seed'),
        click.option('--prompt-seed', type=int, default=0, help='Visual token seed'),
        click.option('--sample-seed', type=int, default=0, help='Sampling / script generation seed'),
        click.option('--temperature', type=float, default=0.0, help='Sampling temperature (0 = greedy)'),
        click.option('--template', 'template_path', type=click.Path(exists=True, dir_okay=False),
                     help='Prompt template text file'),
        click.option('--scripted', 'scripted_path', type=click.Path(exists=True, dir_okay=False),
                     help='Transcript whose tokens drive the episode instead of the model'),
        click.option('--output-dir', type=click.Path(file_okay=False), help='Output directory'),
        click.option('--tag', help='Free-form tag stored in the trace header'),
        click.option('--retain-raw/--no-retain-raw', default=False, help='Keep per-layer, per-head rows'),
        click.option('--diagnostic-heads', help='Comma-separated head subset for the reduced row'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _run_spec(params):
    params = dict(params)
    params['diagnostic_heads'] = _heads(params.get('diagnostic_heads'))
    return RunSpec(**params)


@cli.command('run')
@_run_options
@click.option('--name', help='Output file stem (default <mode>-seed<seed>)')
@click.pass_context
def run_episode(ctx, **params):
    """Run one episode and write its trace and transcript."""
    app = ctx.obj['app']
    try:
        spec = _run_spec(params)
        result, alignment, paths = app.run(spec)
    except (PulseFocusError, OSError) as e:
        _fail(str(e))

    for path in paths:
        logger.info(f"Wrote {path}")
    alignment_text = "nan" if alignment is None else f"{alignment:.6f}"
    click.echo(
        f"steps={result.steps} cycles={result.budget_state.cycles_completed} "
        f"reason={result.budget_state.terminated_reason.value} mean_alignment={alignment_text}"
    )
    if result.error is not None:
        click.echo(f"Grammar error: {result.error}", err=True)
        sys.exit(EXIT_GRAMMAR)


@cli.command('sweep')
@_run_options
@click.option('--lambdas', default='0,0.5,1,2,4', help='Comma-separated gate strengths')
@click.option('--episodes', type=int, default=8, help='Seeded episodes per gate strength')
@click.pass_context
def sweep(ctx, lambdas, episodes, **params):
    """Mean focus alignment and lift over lambda 0 for a grid of gate strengths."""
    app = ctx.obj['app']
    try:
        spec = _run_spec(params)
        report = app.sweep(spec, _lambdas(lambdas), episodes)
        out_dir = spec.output_dir or ctx.obj['config'].output_dir
        paths = write_reports({"sweep": report}, out_dir, "sweep", title="lambda sweep")
    except (PulseFocusError, OSError) as e:
        _fail(str(e))

    for path in paths:
        logger.info(f"Wrote {path}")
    click.echo(report.to_csv(), nl=False)


@cli.command('analyze')
@click.argument('trace_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--pulse', is_flag=True, help='Per-step attention mass per image')
@click.option('--colouring', is_flag=True, help='Dominant image per step')
@click.option('--alignment', is_flag=True, help='Focus alignment per focus block')
@click.option('--pulses', is_flag=True, help='Attention spikes and their dominant image')
@click.option('--verify', is_flag=True, help='Check the stored reduction against raw rows')
@click.option('--baseline', 'baseline_path', type=click.Path(exists=True, dir_okay=False),
              help='Ungated trace to compare alignment against')
@click.option('--diffuse-threshold', type=float, default=None, help='Dominance ratio below which a step is diffuse')
@click.option('--pulse-z', type=float, default=None,
              help='Standard deviations above the mean that count as a pulse')
@click.option('--output-dir', type=click.Path(file_okay=False), help='Output directory')
@click.pass_context
def analyze(ctx, trace_path, pulse, colouring, alignment, pulses, verify, baseline_path,
            diffuse_threshold, pulse_z, output_dir):
    """Analyze a trace file into CSV reports and a text summary."""
    app = ctx.obj['app']
    flags = {"pulse": pulse, "colouring": colouring, "alignment": alignment, "pulses": pulses, "verify": verify}
    analyses = [name for name in ANALYSES if flags[name]] or ["pulse"]
    try:
        reports = app.analyze(
            trace_path, analyses, threshold=diffuse_threshold, baseline_path=baseline_path, pulse_z=pulse_z,
        )
        paths = write_reports(
            reports, output_dir or ctx.obj['config'].output_dir, _stem(trace_path), title=trace_path,
        )
    except (PulseFocusError, OSError) as e:
        _fail(str(e))

    for path in paths:
        logger.info(f"Wrote {path}")
    click.echo(summary_text(reports, title=trace_path), nl=False)


@cli.command('bias')
@click.argument('patterns', nargs=-1, required=True)
@click.option('--group-by', type=click.Choice(sorted(GROUPINGS)), default='none', help='Aggregate per group first')
@click.option('--workers', type=int, default=1, help='Threads for loading and averaging traces')
@click.option('--output', type=click.Path(dir_okay=False), help='CSV path (stdout when omitted)')
@click.pass_context
def bias(ctx, patterns, group_by, workers, output):
    """Mean attention mass per image position across traces (glob patterns)."""
    app = ctx.obj['app']
    try:
        report, paths = app.bias(patterns, grouping=group_by, workers=workers)
        if output:
            report.write_csv(output)
    except (PulseFocusError, OSError) as e:
        _fail(str(e))

    logger.info(f"Aggregated {len(paths)} traces")
    if output:
        logger.info(f"Wrote {output}")
    else:
        click.echo(report.to_csv(), nl=False)


@cli.command('validate')
@click.argument('transcript_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--num-images', type=int, required=True, help='Images the transcript may reference')
@click.option('--strict/--no-strict', default=False, help='Treat warnings as findings')
def validate(transcript_path, num_images, strict):
    """Check a transcript against the plan/focus grammar."""
    if num_images < 0:
        _fail(f"--num-images must be non-negative, got {num_images}")
    try:
        with open(transcript_path, "r", encoding="utf-8") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as e:
        _fail(str(e))

    report = validate_transcript(text, num_images)
    for finding in report.findings:
        click.echo(str(finding))
    if report.has_findings(strict):
        sys.exit(EXIT_FINDINGS)
    click.echo("valid")


@cli.command('plot-data')
@click.argument('trace_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--output', type=click.Path(dir_okay=False), help='CSV path (stdout when omitted)')
@click.pass_context
def plot_data(ctx, trace_path, output):
    """Long-format per-step, per-image attention mass for plotting."""
    app = ctx.obj['app']
    try:
        report = app.plot_data(trace_path)
        if output:
            report.write_csv(output)
    except (PulseFocusError, OSError) as e:
        _fail(str(e))

    if output:
        logger.info(f"Wrote {output}")
    else:
        click.echo(report.to_csv(), nl=False)


if __name__ == '__main__':
    cli(obj={})
