"""Markdown rendering of evaluation reports."""

from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from .sim import EvaluationReport

TEMPLATES_DIR = Path(__file__).parent / "templates"


def _pct(value: float | None, digits: int = 1) -> str:
    return "NA" if value is None else f"{value:.{digits}%}"


def _num(value: float | None, digits: int = 1) -> str:
    return "NA" if value is None else f"{value:,.{digits}f}"


class ReportRenderer:
    """Renders Jinja2 report templates.

    Usage:
        renderer = ReportRenderer()
        text = renderer.render_report("aa_clustered_jackknife", reports, settings)
    """

    def __init__(self, templates_dir: Path = TEMPLATES_DIR):
        """Initialize the renderer.

        Args:
            templates_dir: Directory containing REPORT.md.jinja

        Raises:
            FileNotFoundError: If the report template doesn't exist
        """
        if not (templates_dir / "REPORT.md.jinja").exists():
            raise FileNotFoundError(f"Report template not found in {templates_dir}")
        self.env = Environment(
            loader=FileSystemLoader(templates_dir),
            undefined=StrictUndefined,
            keep_trailing_newline=True,
        )
        self.env.filters["pct"] = _pct
        self.env.filters["num"] = _num

    def render_report(
        self,
        name: str,
        reports: list[EvaluationReport],
        settings: dict[str, Any],
    ) -> str:
        """Render the Markdown summary of a simulation run.

        Args:
            name: Run name (the config name)
            reports: One report per scenario, in config order
            settings: Run-level settings (replications, seed, version)

        Returns:
            Markdown text
        """
        template = self.env.get_template("REPORT.md.jinja")
        return template.render(name=name, reports=reports, settings=settings)
