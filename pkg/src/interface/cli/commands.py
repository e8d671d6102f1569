import functools
import json

import click
from pydantic import ValidationError

from src.application.services.experiments import ExperimentService
from src.domain.errors import ConfigError
from . import cli_group

config_argument = click.argument('config_path', type=click.Path(dir_okay=False))
output_option = click.option('--output', '-o', 'output_dir', default=None,
                             help='Output directory (overrides the config and RSP_OUTPUT_DIR).')


def handle_errors(command):
    """Maps failures to exit codes: 1 for configuration problems, 2 for anything else."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ConfigError, ValidationError, FileNotFoundError) as e:
            click.echo(f"Configuration error: {e}", err=True)
            raise SystemExit(1)
        except click.ClickException:
            raise
        except Exception as e:
            click.echo(f"Error ({type(e).__name__}): {e}", err=True)
            raise SystemExit(2)
    return wrapper


@cli_group.command('simulate')
@config_argument
@output_option
@handle_errors
def simulate(config_path, output_dir):
    """Simulates S replications and writes checkpoint rows."""
    config = ExperimentService.load_config(config_path)
    frame = ExperimentService.cmd_simulate(config, output_dir)
    click.echo(f"Wrote {len(frame)} checkpoint row(s)")


@cli_group.command('regime')
@config_argument
@output_option
@handle_errors
def regime(config_path, output_dir):
    """Classifies synchronization and polarization for the configured sequence."""
    config = ExperimentService.load_config(config_path)
    report = ExperimentService.cmd_regime(config, output_dir)
    click.echo(report.model_dump_json(indent=2))


@cli_group.command('estimate')
@config_argument
@output_option
@handle_errors
def estimate(config_path, output_dir):
    """Estimates polarization probabilities and intervals at the configured n."""
    config = ExperimentService.load_config(config_path)
    frame = ExperimentService.cmd_estimate(config, output_dir)
    click.echo(f"Wrote {len(frame)} estimate row(s)")


@cli_group.command('interval')
@config_argument
@click.option('--estimates', 'estimates_path', required=True, type=click.Path(dir_okay=False))
@click.option('--records', 'records_path', required=True, type=click.Path(dir_okay=False))
@click.option('--alpha', type=float, default=None, help='Overrides the configured alpha.')
@output_option
@handle_errors
def interval(config_path, estimates_path, records_path, alpha, output_dir):
    """Rebuilds composite intervals from exported estimates and replication records."""
    config = ExperimentService.load_config(config_path)
    frame = ExperimentService.cmd_interval(config, estimates_path, records_path, alpha, output_dir)
    click.echo(f"Wrote {len(frame)} interval row(s)")


@cli_group.command('figure1')
@config_argument
@output_option
@handle_errors
def figure1(config_path, output_dir):
    """Estimates against the refined long-horizon target for every figure n."""
    config = ExperimentService.load_config(config_path)
    frame = ExperimentService.cmd_figure1(config, output_dir)
    click.echo(f"Wrote {len(frame)} row(s)")


@cli_group.command('figure2')
@config_argument
@output_option
@handle_errors
def figure2(config_path, output_dir):
    """Interval parts against the long-horizon proxy for every figure n."""
    config = ExperimentService.load_config(config_path)
    frame = ExperimentService.cmd_figure2(config, output_dir)
    click.echo(f"Wrote {len(frame)} row(s)")


@cli_group.command('coverage')
@config_argument
@output_option
@handle_errors
def coverage(config_path, output_dir):
    """Empirical coverage of the intervals per figure n."""
    config = ExperimentService.load_config(config_path)
    summary = ExperimentService.cmd_coverage(config, output_dir)
    click.echo(summary.to_string(index=False))


@cli_group.command('horizon')
@config_argument
@handle_errors
def horizon(config_path):
    """Smallest t whose tail sum of squares is below 2 eta^2 / ln(1/eps)."""
    config = ExperimentService.load_config(config_path)
    click.echo(json.dumps(ExperimentService.cmd_horizon(config), indent=2))


@cli_group.command('diagnose')
@config_argument
@click.option('--horizon', 'scan_horizon', type=int, default=100_000, show_default=True)
@handle_errors
def diagnose(config_path, scan_horizon):
    """Numeric evidence for the series that govern the regime."""
    config = ExperimentService.load_config(config_path)
    click.echo(ExperimentService.cmd_diagnose(config, scan_horizon).model_dump_json(indent=2))
