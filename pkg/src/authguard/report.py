"""Static tables and curves for finished runs."""

# Import built-in modules
import json
from pathlib import Path
from typing import Any

# Import third-party modules
from loguru import logger
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Import local modules
from authguard.errors import AuthGuardError  # noqa: E402
from authguard.errors import ErrorCode  # noqa: E402
from authguard.utils import read_jsonl  # noqa: E402

ABLATION_COLUMNS = ("preset", "use_contrastive", "use_uncertainty", "use_adapter", "val_auc", "test_auc")


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "yes" if value else "-"
    if isinstance(value, float):
        return f"{100 * value:.2f}"
    return "n/a" if value is None else str(value)


def ablation_markdown(rows: list[dict[str, Any]]) -> str:
    """Markdown comparison table; AUC columns in percent."""
    lines = ["| " + " | ".join(ABLATION_COLUMNS) + " |", "|" + "---|" * len(ABLATION_COLUMNS)]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(row.get(column)) for column in ABLATION_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def plot_ablation(rows: list[dict[str, Any]], out_png: Path) -> Path:
    presets = [row["preset"] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.38
    positions = range(len(rows))
    for offset, key in ((-width / 2, "val_auc"), (width / 2, "test_auc")):
        values = [row.get(key) or 0.0 for row in rows]
        ax.bar([p + offset for p in positions], values, width=width, label=key)
    ax.set_xticks(list(positions), presets)
    ax.set_ylabel("AUC")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    ax.set_title("Ablation")
    fig.tight_layout()
    fig.savefig(out_png, dpi=160)
    plt.close(fig)
    return out_png


def plot_stage1_curves(metrics_path: Path, out_png: Path) -> Path:
    """Training loss per step and validation AUC per epoch."""
    rows = list(read_jsonl(metrics_path))
    steps = [row for row in rows if "loss_total" in row]
    epochs = [row for row in rows if "epoch" in row and row.get("val_auc") is not None]
    fig, (loss_ax, auc_ax) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("loss_total", "loss_cls", "loss_cst"):
        loss_ax.plot([row["step"] for row in steps], [row[key] for row in steps], label=key)
    loss_ax.set_xlabel("step")
    loss_ax.set_ylabel("loss")
    loss_ax.legend()
    auc_ax.plot([row["epoch"] for row in epochs], [row["val_auc"] for row in epochs], marker="o")
    auc_ax.set_xlabel("epoch")
    auc_ax.set_ylabel("val AUC")
    fig.tight_layout()
    fig.savefig(out_png, dpi=160)
    plt.close(fig)
    return out_png


def plot_stage2_curve(metrics_path: Path, out_png: Path) -> Path:
    rows = list(read_jsonl(metrics_path))
    fig, ax = plt.subplots(figsize=(6, 4))
    offset = 0
    for substep in ("projector", "finetune"):
        losses = [row["loss"] for row in rows if row["substep"] == substep]
        ax.plot(range(offset + 1, offset + len(losses) + 1), losses, label=substep)
        offset += len(losses)
    ax.set_xlabel("step")
    ax.set_ylabel("autoregressive loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=160)
    plt.close(fig)
    return out_png


def render_report(run_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Render every table and curve found under ``run_dir``.

    Looks for ``ablation.json``, stage-1 ``metrics.jsonl`` files and stage-2
    ``stage2_metrics.jsonl`` files anywhere below ``run_dir``.

    Returns:
        list[Path]: Written artifacts.

    Raises:
        AuthGuardError: If nothing renderable is found.

    """
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    if not run_dir.is_dir():
        raise AuthGuardError(f"Run directory not found: {run_dir}", ErrorCode.FILE_ERROR)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []

    for table in sorted(run_dir.rglob("ablation.json")):
        rows = json.loads(table.read_text(encoding="utf-8"))["rows"]
        stem = "ablation" if table.parent == run_dir else f"ablation_{table.parent.name}"
        markdown = out_dir / f"{stem}.md"
        markdown.write_text(ablation_markdown(rows), encoding="utf-8")
        artifacts += [markdown, plot_ablation(rows, out_dir / f"{stem}.png")]
    for metrics in sorted(run_dir.rglob("metrics.jsonl")):
        name = metrics.parent.relative_to(run_dir).as_posix().replace("/", "_") or "run"
        artifacts.append(plot_stage1_curves(metrics, out_dir / f"stage1_{name}.png"))
    for metrics in sorted(run_dir.rglob("stage2_metrics.jsonl")):
        name = metrics.parent.relative_to(run_dir).as_posix().replace("/", "_") or "run"
        artifacts.append(plot_stage2_curve(metrics, out_dir / f"stage2_{name}.png"))

    if not artifacts:
        raise AuthGuardError(f"No ablation tables or metrics logs under {run_dir}", ErrorCode.EMPTY_INPUT)
    logger.info(f"Rendered {len(artifacts)} report artifact(s) to {out_dir}")
    return artifacts
