"""
Terminal UI components for Portrait Lab
"""

import math
from typing import List, Dict, Any, Optional

import torch
from rich.console import Console
from rich.table import Table
from rich.panel import Panel
from rich import box

from .config import Colors, config
from .models import MetricReport, StyleCode, ViewCode


console = Console()


def print_header():
    console.print(f"\n[bold white]{config.APP_NAME}[/] [cyan]v{config.VERSION}[/]", justify="center")
    console.print("[dim]3D-aware portrait inversion and editing[/]", justify="center")


def print_error(message: str):
    """Print an error message"""
    console.print(f"[{Colors.ERROR}]ERROR: {message}[/]")


def print_success(message: str):
    """Print a success message"""
    console.print(f"[{Colors.SUCCESS}]{message}[/]")


def print_warning(message: str):
    """Print a warning message"""
    console.print(f"[{Colors.WARNING}]{message}[/]")


def print_info(message: str):
    """Print an info message"""
    console.print(f"[{Colors.INFO}]{message}[/]")


def _format(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "N/A"
    return f"{value:.4f}"


def display_metric_report(report: MetricReport, title: str = "Metric Report"):
    """Aggregates table plus a provenance panel"""
    if not report.aggregates:
        console.print(Panel("No metrics were computed.", title=title, border_style="yellow"))
        return

    table = Table(title=title, box=box.ROUNDED)
    table.add_column("Metric", style="cyan", no_wrap=True)
    table.add_column("Mean", style="white bold")
    table.add_column("Min", style="dim")
    table.add_column("Max", style="dim")
    table.add_column("Samples", style="green")

    for metric, mean in report.aggregates.items():
        values = report.per_sample.get(metric, [])
        table.add_row(
            metric,
            _format(mean),
            _format(min(values)) if values else "N/A",
            _format(max(values)) if values else "N/A",
            str(len(values)),
        )

    console.print(table)

    meta = report.metadata
    hashes = "\n".join(f"  {name}: {digest[:16]}" for name, digest in meta.get("checkpoint_hashes", {}).items())
    console.print(Panel(
        f"[cyan]Config hash:[/] {str(meta.get('config_hash', 'N/A'))[:16]}\n"
        f"[cyan]Seed:[/] {meta.get('seed', 'N/A')}\n"
        f"[cyan]Code version:[/] {meta.get('code_version', 'N/A')}\n"
        f"[cyan]Checkpoints:[/]\n{hashes or '  none'}",
        title="Provenance",
        border_style="cyan"
    ))


def display_codes(style: StyleCode, view: ViewCode, coeffs: Optional[Dict[str, Any]] = None):
    """Norms and leading entries of an encoded code triple"""
    table = Table(title="Encoded Codes", box=box.ROUNDED)
    table.add_column("Code", style="cyan", no_wrap=True)
    table.add_column("Dim", style="white")
    table.add_column("Norm", style="white")
    table.add_column("Leading values", style="dim")

    rows = (("w_geo", style.w_geo, Colors.GEOMETRY), ("w_tex", style.w_tex, Colors.TEXTURE),
            ("d", view.d, Colors.VIEW))
    for name, tensor, colour in rows:
        flat = tensor.detach().reshape(-1).double()
        leading = ", ".join(f"{v:+.3f}" for v in flat[:4].tolist())
        table.add_row(f"[{colour}]{name}[/]", str(flat.numel()), f"{float(torch.linalg.vector_norm(flat)):.4f}",
                      leading)

    console.print(table)
    if coeffs:
        lines = "\n".join(f"[cyan]{name}:[/] {', '.join(f'{v:.3f}' for v in values[:6])}"
                          for name, values in coeffs.items())
        console.print(Panel(lines, title="Morphable coefficients", border_style="cyan"))


def display_training_summary(name: str, steps: int, summary: Dict[str, Dict[str, float]],
                             extra: Optional[Dict[str, Any]] = None):
    """First/last value of each logged loss"""
    table = Table(title=f"{name} ({steps} steps)", box=box.ROUNDED)
    table.add_column("Loss", style="cyan", no_wrap=True)
    table.add_column("First", style="white")
    table.add_column("Last", style="white bold")
    table.add_column("Change", style="white")

    for loss, values in summary.items():
        first, last = values["first"], values["last"]
        change = (last - first) / abs(first) if first else float("nan")
        colour = Colors.IMPROVED if last <= first else Colors.REGRESSED
        table.add_row(loss, _format(first), _format(last),
                      f"[{colour}]{change:+.1%}[/]" if not math.isnan(change) else "N/A")

    console.print(table)
    for key, value in (extra or {}).items():
        console.print(f"[cyan]{key}:[/] {value}")


def display_artifacts(artifacts: List[Dict[str, Any]]):
    """Display a table of registered artifacts"""
    if not artifacts:
        console.print(Panel("No artifacts registered yet.", title="Artifacts", border_style="cyan"))
        return

    table = Table(title="Registered Artifacts", box=box.ROUNDED)
    table.add_column("ID", style="cyan", no_wrap=True)
    table.add_column("Kind", style="yellow")
    table.add_column("Path", style="white")
    table.add_column("SHA-256", style="green")
    table.add_column("Config", style="dim")
    table.add_column("Created", style="dim")

    for artifact in artifacts:
        table.add_row(
            str(artifact['id']),
            artifact['kind'],
            artifact['path'],
            (artifact['sha256'] or "N/A")[:12],
            (artifact['config_hash'] or "N/A")[:12],
            str(artifact['created_at']).split('.')[0],
        )

    console.print(table)


def display_reports(reports: List[Dict[str, Any]]):
    if not reports:
        return
    table = Table(title="Metric Reports", box=box.ROUNDED)
    table.add_column("ID", style="cyan", no_wrap=True)
    table.add_column("Name", style="yellow")
    table.add_column("Aggregates", style="white")
    table.add_column("Created", style="dim")
    for report in reports:
        aggregates = ", ".join(f"{k}={_format(v)}" for k, v in sorted(report['aggregates'].items()))
        table.add_row(str(report['id']), report['name'], aggregates, str(report['created_at']).split('.')[0])
    console.print(table)
