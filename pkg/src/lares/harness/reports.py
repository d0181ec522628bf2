"""Run-report emission: CSV curve helpers, metrics JSON, and static
plots (metric vs epoch, metric vs depth, latency vs depth)."""

import csv
import io
import json
import os
import shutil

from ..ioutil import atomic_write_json, atomic_write_text


class ReportError(RuntimeError):
    pass


def format_cell(value):
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_csv(path, rows, fieldnames=None):
    """Deterministic CSV: repr-formatted floats, \n newlines, atomic."""
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([format_cell(row.get(name)) for name in fieldnames])
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def _plot(fig_path, series, xlabel, ylabel, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def _floats(rows, key):
    return [float(r[key]) for r in rows if r.get(key) not in (None, "")]


def emit_report(run_dir, out_dir=None):
    """Collate a run directory into report/: summary JSON, copied
    curves, and plots for whatever artifacts are present."""
    run_dir = os.fspath(run_dir)
    out_dir = out_dir or os.path.join(run_dir, "report")
    sources = {
        "curves.csv": os.path.join(run_dir, "curves.csv"),
        "rpt_curves.csv": os.path.join(run_dir, "rpt_curves.csv"),
        "depth_sweep.csv": os.path.join(run_dir, "depth_sweep.csv"),
        "bench.csv": os.path.join(run_dir, "bench.csv"),
    }
    metrics_files = sorted(
        f for f in (os.listdir(run_dir) if os.path.isdir(run_dir) else [])
        if f.startswith("metrics") and f.endswith(".json")
    )
    present = {name: path for name, path in sources.items() if os.path.exists(path)}
    if not present and not metrics_files:
        raise ReportError(
            f"no run artifacts under {run_dir}; looked for "
            + ", ".join(sorted(sources)) + ", metrics*.json"
        )

    os.makedirs(out_dir, exist_ok=True)
    written = []
    summary = {}

    if "curves.csv" in present:
        rows = read_csv(present["curves.csv"])
        epochs = _floats(rows, "epoch")
        fig = os.path.join(out_dir, "spt_curves.png")
        _plot(
            fig,
            {
                "train loss": (epochs, _floats(rows, "loss")),
                "valid NDCG@10": (epochs, _floats(rows, "valid_ndcg10")),
            },
            "epoch", "value", "pre-training",
        )
        written.append(fig)
        summary["spt"] = {
            "epochs": len(rows),
            "best_valid_ndcg10": max(_floats(rows, "valid_ndcg10"), default=None),
        }

    if "rpt_curves.csv" in present:
        rows = read_csv(present["rpt_curves.csv"])
        its = _floats(rows, "iteration")
        fig = os.path.join(out_dir, "rpt_curves.png")
        eval_rows = [r for r in rows if r.get("valid_ndcg10") not in (None, "")]
        _plot(
            fig,
            {
                "mean reward": (its, _floats(rows, "mean_reward")),
                "valid NDCG@10": (_floats(eval_rows, "iteration"), _floats(eval_rows, "valid_ndcg10")),
            },
            "iteration", "value", "post-training",
        )
        written.append(fig)
        summary["rpt"] = {
            "iterations": len(rows),
            "best_valid_ndcg10": max(_floats(rows, "valid_ndcg10"), default=None),
        }

    if "depth_sweep.csv" in present:
        rows = read_csv(present["depth_sweep.csv"])
        depths = _floats(rows, "depth")
        metric_cols = [c for c in rows[0] if c != "depth"]
        fig = os.path.join(out_dir, "metric_vs_depth.png")
        _plot(
            fig,
            {c: (depths, _floats(rows, c)) for c in metric_cols},
            "reasoning depth", "metric", "metric vs depth",
        )
        written.append(fig)
        summary["depth_sweep"] = {"depths": depths}

    if "bench.csv" in present:
        rows = read_csv(present["bench.csv"])
        depths = _floats(rows, "depth")
        fig = os.path.join(out_dir, "latency_vs_depth.png")
        _plot(
            fig,
            {"forward seconds": (depths, _floats(rows, "seconds_mean"))},
            "reasoning depth", "seconds", "latency vs depth",
        )
        written.append(fig)
        summary["bench"] = {"depths": depths}

    for name in metrics_files:
        with open(os.path.join(run_dir, name), "r", encoding="utf-8") as f:
            summary.setdefault("metrics", {})[name] = json.load(f)

    for name, path in present.items():
        dst = os.path.join(out_dir, name)
        shutil.copyfile(path, dst)
        written.append(dst)

    summary_path = os.path.join(out_dir, "summary.json")
    atomic_write_json(summary_path, summary)
    written.append(summary_path)
    return written
