"""Command-line entry point (``chaintest``)."""

import logging
import sys

import click

from . import pipeline
from .paths import TraversalConfig


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Generate path-guided unit tests from a program-model dump."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("dump", type=click.Path(dir_okay=False))
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--max-occurrences", default=2, show_default=True, help="Evaluations allowed per branch site.")
@click.option("--max-paths", default=4096, show_default=True)
def analyze(dump, out_dir, max_occurrences, max_paths):
    """Write the condition chains of every function in DUMP."""
    sys.exit(pipeline.cmd_analyze(dump, out_dir, TraversalConfig(max_occurrences, max_paths)))


@main.command()
@click.argument("chains", type=click.Path(dir_okay=False))
@click.option("-o", "--out", "out_file", required=True, type=click.Path(dir_okay=False))
def minimize(chains, out_file):
    """Reduce an `analyze` chains file to a covering subset."""
    sys.exit(pipeline.cmd_minimize(chains, out_file))


@main.command()
@click.argument("dump", type=click.Path(dir_okay=False))
@click.option("-c", "--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--parallel", default=4, show_default=True, help="Focal functions processed concurrently.")
@click.option("--template", type=click.Path(exists=True, dir_okay=False), help="Prompt template override.")
@click.option("--mock-script", type=click.Path(exists=True, dir_okay=False), help="Use the scripted mock provider.")
@click.option("--stub-runner", type=click.Path(exists=True, dir_okay=False), help="Use the scripted stub toolchain.")
def generate(dump, config_path, out_dir, parallel, template, mock_script, stub_runner):
    """Run the whole pipeline and write a resumable session directory."""
    sys.exit(pipeline.cmd_generate(dump, config_path, out_dir, parallel=parallel, template=template,
                                   mock_script=mock_script, stub_runner=stub_runner))


@main.command()
@click.argument("session_dir", type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["json", "md"]), default="json", show_default=True)
def report(session_dir, fmt):
    """Rebuild report.json / report.md for a session directory."""
    sys.exit(pipeline.cmd_report(session_dir, fmt))


if __name__ == "__main__":
    main()
