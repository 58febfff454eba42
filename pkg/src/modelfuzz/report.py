"""Campaign reporting: history tables, coverage summaries, and figures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)

from .errors import MissingArtifact
from .graph import canonical_json

HISTORY_COLUMNS = (
    "iteration",
    "scenario",
    "assembled",
    "valid",
    "valid_rate",
    "bugs",
    "operator_coverage",
    "component_coverage",
    "repository_size",
)

_FLOAT_COLUMNS = {"valid_rate", "operator_coverage", "component_coverage"}
_INT_COLUMNS = {"iteration", "assembled", "valid", "bugs", "repository_size"}


@dataclass(frozen=True)
class CoverageReport:
    """Operator and component coverage at a point in a campaign."""

    operator_coverage: float
    component_coverage: float
    covered_operators: tuple[str, ...]
    covered_components: tuple[str, ...]
    repository_size: int

    def to_doc(self) -> dict:
        return {
            "operator_coverage": self.operator_coverage,
            "component_coverage": self.component_coverage,
            "covered_operators": list(self.covered_operators),
            "covered_components": list(self.covered_components),
            "repository_size": self.repository_size,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "CoverageReport":
        return cls(
            operator_coverage=float(doc["operator_coverage"]),
            component_coverage=float(doc["component_coverage"]),
            covered_operators=tuple(doc["covered_operators"]),
            covered_components=tuple(doc["covered_components"]),
            repository_size=int(doc["repository_size"]),
        )


def _fmt(column: str, value) -> str:
    if column in _FLOAT_COLUMNS:
        return f"{float(value):.10g}"
    return str(value)


def write_history(path: str | Path, rows: list[dict]) -> None:
    """Write per-iteration campaign history as a fixed-column CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(c, row[c]) for c in HISTORY_COLUMNS])


def read_history(path: str | Path) -> list[dict]:
    """Read a history CSV back into typed rows."""
    p = Path(path)
    if not p.is_file():
        raise MissingArtifact(f"history file not found: {p}")
    rows: list[dict] = []
    with open(p, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict = {}
            for column, value in raw.items():
                if column in _FLOAT_COLUMNS:
                    row[column] = float(value)
                elif column in _INT_COLUMNS:
                    row[column] = int(value)
                else:
                    row[column] = value
            rows.append(row)
    return rows


def write_json_report(path: str | Path, doc: dict) -> None:
    """Write a report document as canonical JSON."""
    Path(path).write_text(canonical_json(doc))


def render_figures(
    out_dir: str | Path,
    history: list[dict],
    bug_records: list[dict],
    component_scores: dict[str, float],
) -> list[Path]:
    """Render the campaign figures as PNG files and return their paths.

    Four panels: cumulative distinct bugs, coverage curves, running valid
    rate, and the top component contribution scores.
    """
    fig_dir = Path(out_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    iterations = [row["iteration"] for row in history]
    paths: list[Path] = []

    def _save(fig: plt.Figure, name: str) -> None:
        target = fig_dir / name
        fig.tight_layout()
        fig.savefig(target, dpi=120)
        plt.close(fig)
        paths.append(target)

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    if iterations:
        ax.step(iterations, [row["bugs"] for row in history], where="post", color="#b23333")
    for record in bug_records:
        ax.axvline(record["iteration"], color="#b23333", alpha=0.15, linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("distinct bugs")
    ax.set_title("Distinct bugs over the campaign")
    _save(fig, "bugs_timeline.png")

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    if iterations:
        ax.plot(iterations, [row["operator_coverage"] for row in history], label="operator")
        ax.plot(iterations, [row["component_coverage"] for row in history], label="component")
    ax.set_xlabel("iteration")
    ax.set_ylabel("coverage")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    ax.set_title("Operator and component coverage")
    _save(fig, "coverage.png")

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    if iterations:
        ax.plot(iterations, [row["valid_rate"] for row in history], color="#336f9e")
    ax.axhline(0.8, color="#888888", linestyle="--", linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("valid-model rate")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Running valid-model rate")
    _save(fig, "valid_rate.png")

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    top = sorted(component_scores.items(), key=lambda kv: (-kv[1], kv[0]))[:12]
    if top:
        names = [k for k, _ in reversed(top)]
        scores = [v for _, v in reversed(top)]
        ax.barh(names, scores, color="#55a868")
    ax.set_xlabel("contribution score")
    ax.set_title("Top component contributions")
    _save(fig, "contributions.png")

    return paths
