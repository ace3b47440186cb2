"""Command line entry point: ``hahi <command>``."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .config import check_disable, hierarchical_ablations
from .harness import (Dataset, ablate, collect_report, compute_features, dump_json, evaluate, load_dataset,
                      load_manifest_and_config, run_cv, save_run, train, write_metrics_csv)


def _parse_ints(text: str) -> set[int]:
    try:
        return {int(t) for t in text.split(",") if t.strip()}
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from exc


def _load(manifest, config_path=None):
    try:
        return load_manifest_and_config(manifest, config_path)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc


def _parse_names(text: str) -> list[str]:
    return [t.strip().upper() for t in text.split(",") if t.strip()]


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-epoch progress.")
def main(verbose):
    """Dual-modal connectivity/regional classifier toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def synth(config_path, out):
    """Generate a synthetic cohort and its manifest."""
    from .synthetic import SyntheticConfig, generate_synthetic_cohort

    m = generate_synthetic_cohort(SyntheticConfig.from_json(config_path), out)
    click.echo(f"wrote {len(m.rows)} subjects to {Path(out) / 'manifest.csv'}")


@main.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), required=True)
def features(manifest, config_path, out):
    """Precompute DFC/SFC/ALFF/FA inputs into a feature manifest."""
    m, cfg = _load(manifest, config_path)
    fm = compute_features(m, cfg, out)
    click.echo(f"wrote features for {len(fm.rows)} subjects to {Path(out) / 'features.csv'}")


def _train_and_save(manifest, config_path, out, fold, **updates):
    m, cfg = _load(manifest, config_path)
    if fold is not None:
        updates["fold"] = fold
    cfg = cfg.with_updates(**updates) if updates else cfg
    result = train(m, cfg)
    result.split["manifest"] = str(Path(manifest).resolve())
    save_run(result, out)
    return result


@main.command("train")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Checkpoint directory.")
@click.option("--fold", type=int, default=None, help="Override the config's fold.")
def train_cmd(manifest, config_path, out, fold):
    """Train one fold and write checkpoint, losses.csv and metrics.csv."""
    r = _train_and_save(manifest, config_path, out, fold)
    m = r.metrics
    click.echo(f"fold {r.split['fold']}: accuracy {m.accuracy:.4f} recall {m.recall:.4f} "
               f"precision {m.precision:.4f} f1 {m.f1:.4f}")


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--positive-classes", default=None, help="Comma-separated labels counted as positive.")
@click.option("--split", "which", type=click.Choice(["test", "all"]), default="test",
              help="Score the checkpoint's held-out subjects or every manifest row.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Optional metrics CSV.")
def eval_cmd(ckpt, manifest, positive_classes, which, out):
    """Score a checkpoint on a manifest."""
    from .estimator import HAHIClassifier
    from .harness import default_positive_classes

    est = HAHIClassifier.load(ckpt)
    m, _ = _load(manifest)
    data = Dataset(*load_dataset(m, est.config_))
    split = est.state_.get("split", {})
    if which == "test":
        if not split.get("test"):
            raise click.UsageError("checkpoint records no test split; use --split all")
        data = data.subset(split["test"])
    pos = _parse_ints(positive_classes) if positive_classes else default_positive_classes(m.n_classes)
    metrics = evaluate(est, data, pos)
    if out:
        write_metrics_csv(out, [(split.get("fold", 0), metrics)])
    click.echo("accuracy,recall,precision,f1")
    click.echo(f"{metrics.accuracy:.6f},{metrics.recall:.6f},{metrics.precision:.6f},{metrics.f1:.6f}")


@main.command()
@click.option("--ckpt", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--subject", required=True)
@click.option("--class", "class_index", type=int, required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Defaults to the manifest recorded at training time.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--top", type=int, default=5, show_default=True)
@click.option("--images/--no-images", default=True, show_default=True)
def explain(ckpt, subject, class_index, manifest, out, top, images):
    """Write synergistic activation maps and rankings for one subject."""
    from .estimator import HAHIClassifier
    from .sam import explain_subject, save_report

    est = HAHIClassifier.load(ckpt)
    manifest = manifest or est.state_.get("split", {}).get("manifest")
    if not manifest:
        raise click.UsageError("no manifest recorded in the checkpoint; pass --manifest")
    m, _ = _load(manifest)
    if not 0 <= class_index < est.n_classes_:
        raise click.BadParameter(f"class must lie in 0..{est.n_classes_ - 1}")
    try:
        m.row(subject)
    except KeyError as exc:
        raise click.BadParameter(f"unknown subject {subject!r}") from exc
    m = m.subset([subject])
    X, _, _ = load_dataset(m, est.config_)
    rep = explain_subject(est, {k: v[0] for k, v in X.items()}, class_index, m.atlas, top)
    path = save_report(rep, out, images=images)
    click.echo(f"wrote {path}")


@main.command("ablate")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--disable", default=None, help="Comma-separated components (GI,FI,FSA,DSA,TSA).")
@click.option("--all", "run_all", is_flag=True, help="Run every hierarchical removal configuration.")
@click.option("--free-order", is_flag=True, help="Allow sets outside the removal order.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def ablate_cmd(manifest, config_path, disable, run_all, free_order, out):
    """Train with components removed; each run gets its own sub-directory."""
    if run_all == (disable is not None):
        raise click.UsageError("pass exactly one of --disable or --all")
    sets = hierarchical_ablations() if run_all else [_parse_names(disable)]
    try:
        for chosen in sets:
            check_disable(chosen, free_order)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--disable") from exc
    m, cfg = _load(manifest, config_path)
    dataset = Dataset(*load_dataset(m, cfg))
    for chosen in sets:
        r = ablate(m, cfg, chosen, free_order, dataset)
        name = "full" if not chosen else "no-" + "-".join(sorted(chosen)).lower()
        r.split["manifest"] = str(Path(manifest).resolve())
        save_run(r, Path(out) / name)
        click.echo(f"{name}: accuracy {r.metrics.accuracy:.4f} final loss {r.estimator.loss_curve_[-1]:.4f}")


@main.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--folds", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def cv(manifest, config_path, folds, out):
    """Cross-validate: one metrics row per fold plus a summary."""
    m, cfg = _load(manifest, config_path)
    rows, summary = run_cv(m, cfg, folds)
    Path(out).mkdir(parents=True, exist_ok=True)
    write_metrics_csv(Path(out) / "metrics.csv", list(enumerate(rows)))
    dump_json(Path(out) / "summary.json", summary)
    click.echo(f"accuracy {summary['accuracy']['mean']:.4f} +- {summary['accuracy']['std']:.4f}")


@main.command()
@click.option("--runs", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def report(runs, out):
    """Collect every run's metrics.csv into one table."""
    table = collect_report(runs, out)
    click.echo(f"wrote {len(table)} rows to {out}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
