"""Figure rendering for optimization results.

Reads the documents the optimize command writes (pareto.json,
candidates.json, objectives.csv) and renders matplotlib figures next to
them: objective-space scatter, per-generation convergence, and a candidate
comparison chart.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 140


def _objective_labels(doc: dict) -> List[str]:
    kinds = doc.get("metadata", {}).get("objectives")
    if kinds:
        return [str(k) for k in kinds]
    m = len(doc["individuals"][0]["objectives"]) if doc.get("individuals") else 0
    return [f"f{i + 1}" for i in range(m)]


def render_pareto_scatter(pareto_doc: dict, out_path: Path) -> Path:
    """Pairwise objective scatter; single panel when only two objectives."""
    F = np.array([ind["objectives"] for ind in pareto_doc["individuals"]])
    labels = _objective_labels(pareto_doc)
    m = F.shape[1]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    n = len(pairs)
    cols = min(3, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4.2 * cols, 3.6 * rows), squeeze=False)
    feasible = np.array([ind["feasible"] for ind in pareto_doc["individuals"]])
    for k, (i, j) in enumerate(pairs):
        ax = axes[k // cols][k % cols]
        ax.scatter(F[feasible, i], F[feasible, j], s=16, c="tab:blue", label="feasible")
        if np.any(~feasible):
            ax.scatter(F[~feasible, i], F[~feasible, j], s=16, c="tab:red", label="infeasible")
        ax.set_xlabel(labels[i])
        ax.set_ylabel(labels[j])
        ax.grid(alpha=0.3)
    for k in range(n, rows * cols):
        axes[k // cols][k % cols].axis("off")
    if np.any(~feasible):
        axes[0][0].legend(fontsize=8)
    fig.suptitle("Pareto front (objective space)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def render_convergence(pareto_doc: dict, out_path: Path) -> Path:
    gens = pareto_doc.get("generations", [])
    if not gens:
        raise ValueError("pareto document carries no generation log")
    g = [e["generation"] for e in gens]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(g, [e["best_cv"] for e in gens], label="best violation")
    ax1.plot(g, [e["mean_cv"] for e in gens], label="mean violation", linestyle="--")
    ax1.set_xlabel("generation")
    ax1.set_ylabel("constraint violation")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(g, [e["hv_proxy"] for e in gens], color="tab:green")
    ax2.set_xlabel("generation")
    ax2.set_ylabel("dominated-volume proxy")
    ax2.grid(alpha=0.3)
    fig.suptitle("Solver convergence")
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def render_candidates(candidates_doc: dict, out_path: Path) -> Path:
    cands = candidates_doc["candidates"]
    if not cands:
        raise ValueError("candidate document is empty")
    F = np.array([c["objectives"] for c in cands])
    labels = _objective_labels({"individuals": [{"objectives": cands[0]["objectives"]}],
                                "metadata": candidates_doc.get("metadata", {})})
    span = F.max(axis=0) - F.min(axis=0)
    span[span < 1e-12] = 1.0
    norm = (F - F.min(axis=0)) / span
    n, m = norm.shape
    width = 0.8 / m
    fig, ax = plt.subplots(figsize=(1.8 * n + 2.5, 3.6))
    x = np.arange(n)
    for j in range(m):
        ax.bar(x + j * width, norm[:, j], width=width, label=labels[j])
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([f"candidate {i}" for i in range(n)])
    ax.set_ylabel("objective value (normalized)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.suptitle("Reduced candidate set")
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def render_report(result_dir: Union[str, Path], out_dir: Optional[Union[str, Path]] = None) -> List[Path]:
    """Render all figures for an optimize-output directory; returns the paths."""
    result_dir = Path(result_dir)
    out_dir = Path(out_dir) if out_dir else result_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    pareto_doc = json.loads((result_dir / "pareto.json").read_text(encoding="utf-8"))
    written = [
        render_pareto_scatter(pareto_doc, out_dir / "pareto_scatter.png"),
        render_convergence(pareto_doc, out_dir / "convergence.png"),
    ]
    candidates_path = result_dir / "candidates.json"
    if candidates_path.exists():
        candidates_doc = json.loads(candidates_path.read_text(encoding="utf-8"))
        written.append(render_candidates(candidates_doc, out_dir / "candidates.png"))
    return written
