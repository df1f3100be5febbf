"""Command line entry point: ingest -> filter -> serve/annotate -> aggregate
-> cluster -> stats -> windows -> train -> eval/sweep.

Stages communicate only through documented file artifacts; every command
prints the paths it wrote and is deterministic given (inputs, seed).
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click

from . import aggregate as agg
from . import cluster as clu
from . import corpus as cor
from . import fixture as fix
from . import studystats as stats_mod
from . import trainer as trn
from . import windows as win
from .errors import XnecError
from .model import ModelConfig, load_checkpoint, save_checkpoint


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except XnecError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group(context_settings={"auto_envvar_prefix": "XNEC"})
@click.option("--config", "config_file", type=click.Path(exists=True), default=None,
              help="JSON file of per-subcommand option defaults")
@click.pass_context
def main(ctx: click.Context, config_file: str | None) -> None:
    """Explanation-necessity pipeline tools."""
    if config_file:
        with open(config_file, encoding="utf-8") as handle:
            ctx.default_map = json.load(handle)


@main.command()
@click.option("--video", type=click.Path(exists=True), help="single clip: driving video")
@click.option("--gaze", type=click.Path(exists=True), help="single clip: gaze video")
@click.option("--telemetry", type=click.Path(exists=True), help="single clip: telemetry CSV")
@click.option("--vid", default=None, help="clip id (defaults to the video stem)")
@click.option("--batch", type=click.Path(exists=True), help="CSV vid,video,gaze,telemetry")
@click.option("--out-dir", required=True, type=click.Path(), help="resampled media directory")
@click.option("--manifest", required=True, type=click.Path(), help="output manifest path")
@_fail_cleanly
def ingest(video, gaze, telemetry, vid, batch, out_dir, manifest) -> None:
    """Resample clips to 10 Hz and write an unlabeled corpus manifest."""
    jobs: list[tuple[str | None, str, str, str]] = []
    if batch:
        with open(batch, newline="", encoding="utf-8") as handle:
            for row in csv.DictReader(handle):
                jobs.append((row["vid"], row["video"], row["gaze"], row["telemetry"]))
    elif video and gaze and telemetry:
        jobs.append((vid, video, gaze, telemetry))
    else:
        raise click.UsageError("provide --batch, or all of --video/--gaze/--telemetry")
    clips = [
        cor.ingest_clip(v, g, t, out_dir, vid=j_vid) for j_vid, v, g, t in jobs
    ]
    cor.save_manifest(clips, manifest)
    click.echo(f"ingested {len(clips)} clips")
    click.echo(f"wrote {manifest}")


@main.command("filter")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--flags", required=True, type=click.Path(exists=True), help="CSV vid,violation")
@click.option("--out", required=True, type=click.Path())
@click.option("--report", type=click.Path(), default=None, help="per-clip review report CSV")
@_fail_cleanly
def filter_cmd(manifest, flags, out, report) -> None:
    """Drop clips flagged by the human assumption review."""
    clips = cor.load_manifest(manifest)
    kept, reports = cor.filter_corpus(clips, cor.load_assumption_flags(flags))
    cor.save_manifest(kept, out)
    click.echo(f"kept {len(kept)} of {len(clips)} clips")
    click.echo(f"wrote {out}")
    if report:
        with open(report, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["vid", "passed", "violations"])
            for r in reports:
                writer.writerow([r.vid, int(r.passed), ";".join(r.violated_assumptions)])
        click.echo(f"wrote {report}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--annotations", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@_fail_cleanly
def aggregate(manifest, annotations, out) -> None:
    """Fuse annotator events into clip labels (truncated mean + interval)."""
    clips = cor.load_manifest(manifest)
    grouped = agg.group_events(agg.load_annotations(annotations))
    labeled = []
    skipped = 0
    for clip in clips:
        events = grouped.get(clip.vid, [])
        if len(events) < 3:
            skipped += 1
            labeled.append(clip)
            continue
        label = agg.aggregate_clip(events)
        labeled.append(clip.with_label(label.message, label.necessity_score, label.interval))
    cor.save_manifest(labeled, out)
    click.echo(f"labeled {len(labeled) - skipped} clips ({skipped} lacked >= 3 events)")
    click.echo(f"wrote {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--k", default=38, show_default=True, help="number of cluster centers")
@click.option("--out", required=True, type=click.Path())
@_fail_cleanly
def cluster(manifest, k, out) -> None:
    """Cluster explanation texts and emit medoid representatives."""
    clips = cor.load_manifest(manifest)
    messages = {c.vid: c.message for c in clips if c.message}
    vectors = clu.vectorize(messages)
    _, assignment = clu.agglomerate(vectors, k)
    centers = clu.medoids_with_distance(assignment, vectors)
    with open(out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["cluster", "vid", "medoid_distance"])
        for label in sorted(centers):
            center_vid, dist = centers[label]
            writer.writerow([label, center_vid, repr(dist)])
    click.echo(f"{len(centers)} cluster centers from {len(messages)} messages")
    click.echo(f"wrote {out}")


@main.command()
@click.option("--responses", required=True, type=click.Path(exists=True),
              help="directory with ratings.csv and participants.csv (or ratings CSV)")
@click.option("--participants", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path(), help="markdown report")
@click.option("--results", type=click.Path(), default=None, help="machine-readable JSON")
@click.option("--alpha", default=0.05, show_default=True)
@_fail_cleanly
def stats(responses, participants, out, results, alpha) -> None:
    """Reproduce the user-study quantitative analysis on a response table."""
    table = stats_mod.load_response_table(responses, participants)
    report = stats_mod.analyze_study(table, alpha=alpha)
    lines = [
        "# Study analysis",
        "",
        f"- Pearson necessity vs attention (pooled): {report.pearson_necessity_attention:.4f}",
        f"- Pearson necessity vs attention (participant-centered): "
        f"{report.pearson_necessity_attention_centered:.4f}",
        f"- Point-biserial necessity vs aggressive driver: {report.pb_necessity_aggressive:.4f}",
        f"- Point-biserial necessity vs motion sickness: {report.pb_necessity_motion_sickness:.4f}",
        "",
        "## Necessity vs scenario flags",
        "",
    ]
    for name, value in sorted(report.pb_necessity_by_scenario.items()):
        lines.append(f"- {name}: {value:.4f}")
    lines += [
        "",
        "## Content-format preference (Friedman)",
        "",
        f"- {report.n_reject} of {report.n_scenarios} scenarios reject at alpha={alpha}",
        "",
        "## Driver types",
        "",
    ]
    n_aggressive = sum(1 for d in report.driver_types.values() if d.type == "aggressive")
    lines.append(f"- {n_aggressive} aggressive / {len(report.driver_types)} participants")
    lines += ["", "## Seat transitions", ""]
    for pair, matrix in report.transitions.items():
        frac = matrix.relieved_fraction
        frac_text = f"{frac:.1%}" if frac is not None else "n/a"
        lines.append(
            f"- {pair}: {matrix.movers} movers, {matrix.relieved} relieved "
            f"({frac_text}), {matrix.anxious} anxious"
        )
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"wrote {out}")
    if results:
        payload = {
            "pearson_necessity_attention": report.pearson_necessity_attention,
            "pearson_necessity_attention_centered": report.pearson_necessity_attention_centered,
            "pb_necessity_aggressive": report.pb_necessity_aggressive,
            "pb_necessity_motion_sickness": report.pb_necessity_motion_sickness,
            "pb_necessity_by_scenario": report.pb_necessity_by_scenario,
            "friedman": {
                vid: {"statistic": r.statistic, "dof": r.dof, "p_value": r.p_value,
                      "reject": r.reject}
                for vid, r in report.friedman_by_vid.items()
            },
            "driver_types": {pid: d.type for pid, d in report.driver_types.items()},
            "transitions": {
                pair: {"counts": m.counts, "movers": m.movers, "relieved": m.relieved,
                       "anxious": m.anxious}
                for pair, m in report.transitions.items()
            },
        }
        Path(results).write_text(json.dumps(payload, indent=1), encoding="utf-8")
        click.echo(f"wrote {results}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--p0", default=0.5, show_default=True)
@click.option("--negatives", default=1, show_default=True, help="negatives per below-threshold clip")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_fail_cleanly
def windows(manifest, p0, negatives, seed, out) -> None:
    """Extract the 40-frame window index with class-balancing weights."""
    clips = cor.load_manifest(manifest)
    policy = win.LabelingPolicy(p0=p0, negatives_per_clip=negatives, seed=seed)
    built = win.build_windows(clips, policy)
    win.verify_windows(built, clips, policy)
    weights = win.class_weights(built) if len({w.label for w in built}) == 2 else None
    win.save_window_index(built, weights, out)
    n_pos = sum(w.label for w in built)
    click.echo(f"{len(built)} windows ({n_pos} positive)")
    click.echo(f"wrote {out}")


def _train_config(p0, seed, epochs, negatives, early_stop, batch_size=None) -> trn.TrainConfig:
    return trn.TrainConfig(
        p0=p0, seed=seed, epochs=epochs, negatives_per_clip=negatives,
        early_stop_train_auc=early_stop, batch_size=batch_size,
    )


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--p0", default=0.5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=300, show_default=True)
@click.option("--negatives", default=1, show_default=True)
@click.option("--early-stop-train-auc", type=float, default=None)
@click.option("--input-size", default=32, show_default=True)
@click.option("--batch-size", type=int, default=None,
              help="mini-batch size (deviates from the full-batch protocol)")
@click.option("--plain", is_flag=True, help="disable gaze gating (ablation)")
@click.option("--weighted-sum", is_flag=True, help="spatial weighted-sum ablation")
@click.option("--out", required=True, type=click.Path(), help="checkpoint directory")
@_fail_cleanly
def train(manifest, p0, seed, epochs, negatives, early_stop_train_auc, input_size,
          batch_size, plain, weighted_sum, out) -> None:
    """Train at one threshold and save the best-validation checkpoint."""
    clips = cor.load_manifest(manifest)
    config = _train_config(p0, seed, epochs, negatives, early_stop_train_auc, batch_size)
    model_config = ModelConfig(
        input_size=input_size,
        gaze_gating=not plain,
        spatial_transform="weighted_sum" if weighted_sum else "flatten",
    )
    result, model, history = trn.train_and_eval(clips, config, model_config)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.pt"
    save_checkpoint(
        model, ckpt_path,
        extra={"p0": p0, "seed": seed, "epochs": epochs, "negatives_per_clip": negatives,
               "early_stop_train_auc": early_stop_train_auc},
    )
    history_path = out_dir / "history.json"
    history_path.write_text(json.dumps(history, indent=1), encoding="utf-8")
    click.echo(f"test AUC {result.auc_model:.4f} (baseline {result.auc_baseline:.4f})")
    click.echo(f"wrote {ckpt_path}")
    click.echo(f"wrote {history_path}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--report", required=True, type=click.Path())
@_fail_cleanly
def eval_cmd(ckpt, manifest, split, report) -> None:
    """Score a checkpoint on a corpus split and write the eval CSV."""
    model, extra = load_checkpoint(ckpt)
    clips = cor.load_manifest(manifest)
    config = _train_config(
        extra["p0"], extra["seed"], extra.get("epochs", 300),
        extra.get("negatives_per_clip", 1), extra.get("early_stop_train_auc"),
    )
    parts = dict(zip(("train", "val", "test"), trn.split_corpus(clips, config)))
    policy = win.LabelingPolicy(
        p0=config.p0, negatives_per_clip=config.negatives_per_clip, seed=config.seed
    )
    chosen = win.build_windows(parts[split], policy)
    if not chosen:
        raise XnecError(f"split {split!r} produced no windows")
    data = trn.WindowTensors(chosen, model.config.input_size)
    labels = data.labels.numpy().astype(int)
    auc_model = trn.roc_auc(trn.evaluate_scores(model, data), labels)
    auc_base = trn.roc_auc(trn.baseline_scores(len(chosen), config.seed), labels)
    result = trn.EvalResult(
        p0=config.p0, auc_model=float(auc_model), auc_baseline=float(auc_base),
        n_test_windows=len(chosen), seed=config.seed,
    )
    trn.save_eval_results([result], report)
    click.echo(f"{split} AUC {result.auc_model:.4f} (baseline {result.auc_baseline:.4f})")
    click.echo(f"wrote {report}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--p0", default="0.5,0.6,0.7", show_default=True, help="comma-separated thresholds")
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=300, show_default=True)
@click.option("--negatives", default=1, show_default=True)
@click.option("--early-stop-train-auc", type=float, default=None)
@click.option("--input-size", default=32, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_fail_cleanly
def sweep(manifest, p0, seed, epochs, negatives, early_stop_train_auc, input_size, out) -> None:
    """Train and evaluate once per threshold; emit one eval row per p0."""
    clips = cor.load_manifest(manifest)
    p0_values = [float(v) for v in p0.split(",") if v]
    config = _train_config(p0_values[0], seed, epochs, negatives, early_stop_train_auc)
    results = trn.threshold_sweep(clips, p0_values, config, ModelConfig(input_size=input_size))
    trn.save_eval_results(results, out)
    for r in results:
        click.echo(f"p0={r.p0}: model {r.auc_model:.4f}, baseline {r.auc_baseline:.4f}")
    click.echo(f"wrote {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--log", required=True, type=click.Path(), help="append-only event log")
@click.option("--port", default=8319, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--annotators", default=None, help="comma-separated allowed annotator ids")
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None,
              help="static front-end directory to mount at /ui")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None)
@_fail_cleanly
def serve(manifest, log, port, seed, annotators, ui_dir, config_file) -> None:
    """Run the annotation HTTP service."""
    from .service import ServiceConfig, run_service

    config = ServiceConfig.from_sources(
        config_file,
        corpus_path=manifest,
        log_path=log,
        port=port,
        seed=seed,
        annotators=tuple(annotators.split(",")) if annotators else None,
        ui_dir=ui_dir,
    )
    click.echo(f"serving {config.corpus_path} on 127.0.0.1:{config.port}")
    run_service(config)


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--mode", default="raw", show_default=True, type=click.Choice(["raw", "labeled"]))
@click.option("--high", default=7, show_default=True, help="clips with a planted event")
@click.option("--low", default=5, show_default=True, help="clips without an event")
@click.option("--flagged", default=2, show_default=True, help="extra clips to be filtered (raw mode)")
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=32, show_default=True, help="frame resolution")
@_fail_cleanly
def fixture(out, mode, high, low, flagged, seed, size) -> None:
    """Generate the synthetic test corpus with a planted necessity signal."""
    if mode == "raw":
        fix.generate_raw_fixture(
            out, n_high=high, n_low=low, n_flagged=flagged, seed=seed, size=size
        )
        click.echo(f"wrote {Path(out) / 'fixture.json'}")
        click.echo(f"wrote {Path(out) / 'ingest.csv'}")
        click.echo(f"wrote {Path(out) / 'annotations.csv'}")
        click.echo(f"wrote {Path(out) / 'flags.csv'}")
        click.echo(f"wrote {Path(out) / 'responses'}")
    else:
        manifest_path = fix.generate_labeled_manifest(
            out, n_high=high, n_low=low, seed=seed, size=size
        )
        click.echo(f"wrote {manifest_path}")


if __name__ == "__main__":
    main()
