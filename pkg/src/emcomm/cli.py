"""Command-line entry point tying the modules into reproducible runs.

Subcommands: gen-data, train, analyze, interop, report. One JSON config
(sections "data" and "train") plus a single --seed flag drive every
named rng stream. Each command writes its artifacts atomically into the
output root (flag --out, else $EMCOMM_OUT, else ./runs) together with a
manifest listing every produced file.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure
(training divergence included).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .agents import AgentSystem
from .analysis import (
    FLIP_SPECS,
    classify_bits,
    collect_messages,
    cross_consistency,
    class_consistency,
    grounding_experiment,
    length_sweep,
    pair_source,
    perturb_and_eval,
    tsne_project,
    within_between_gap,
    write_efficiency_csv,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, RunManifest, config_hash, load_config
from .errors import ConfigError, DivergenceError, UsageError
from .fsio import read_csv, write_csv, write_json
from .game import EpisodeSource
from .interop import finetune, pair_systems, per_timestep_accuracy
from .optim import RmsProp
from .rng import derive
from .svg import heatmap_svg, line_svg, scatter_svg, write_svg
from .training import TrainConfig, make_optimizer, train, train_config_dict
from .worldgen import build_dataset, generate_shape_audio, generate_shape_image, save_embeddings, write_manifest

OUT_ENV = "EMCOMM_OUT"
DEFAULT_ANALYSES = ("consistency", "bits", "perturbation", "grounding", "projection")


def _out_root(args) -> str:
    return args.out or os.environ.get(OUT_ENV, "runs")


def _make_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory not writable: {path}")
    return path


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg


def _parse_int_list(text, flag) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError as e:
        raise UsageError(f"{flag} expects comma-separated integers: {e}") from e


def _parse_k_range(text) -> list:
    """Accept "0..5" or a comma list."""
    text = str(text)
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo, hi = int(lo), int(hi)
        except ValueError as e:
            raise UsageError(f"--k expects INT..INT or a comma list: {e}") from e
        if hi < lo:
            raise UsageError("--k range end must be >= start")
        return list(range(lo, hi + 1))
    return _parse_int_list(text, "--k")


def _source_for(modality, audio_ds, image_ds) -> EpisodeSource:
    return pair_source(audio_ds, image_ds, modality)


def _modality_of(system: AgentSystem) -> str:
    return "unimodal" if system.receiver_modality == "audio" else "multimodal"


def _load_ckpt(path):
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ------------------------------------------------------------ subcommands

def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    if args.seed is not None:
        cfg.data = dataclasses.replace(cfg.data, seed=args.seed)
    out = _make_dir(os.path.join(_out_root(args), "data"))
    manifest = RunManifest("gen-data", config_hash(cfg), cfg.data.seed)

    audio_ds, image_ds = build_dataset(cfg.data)
    produced = []
    for ds, name in ((audio_ds, "audio"), (image_ds, "image")):
        emb_path = os.path.join(out, f"{name}_embeddings.tsv")
        man_path = os.path.join(out, f"{name}_manifest.json")
        save_embeddings(ds, emb_path)
        write_manifest(ds, man_path)
        produced += [emb_path, man_path]

    if not args.no_raw:
        # regenerate raw signals from the same per-item streams the
        # builders consumed, so raw files match the embeddings exactly
        n_cls = len(audio_ds.class_names)
        n_samples = int(round(cfg.data.sample_rate * cfg.data.clip_seconds))
        clips = np.empty((n_cls * cfg.data.clips_per_class, n_samples),
                         dtype=np.float32)
        for k in range(n_cls):
            for i in range(cfg.data.clips_per_class):
                clip = generate_shape_audio(
                    k, derive(cfg.data.seed, "data", "audio", k, i),
                    sample_rate=cfg.data.sample_rate, duration=cfg.data.clip_seconds,
                    noise_sigma=cfg.data.noise_sigma, freq_range=cfg.data.freq_range,
                    amp_range=cfg.data.amp_range)
                clips[k * cfg.data.clips_per_class + i] = clip.samples
        clip_path = os.path.join(out, "clips.npz")
        np.savez_compressed(clip_path, clips=clips, class_ids=audio_ds.class_ids())
        del clips

        probe = generate_shape_image(0, derive(cfg.data.seed, "data", "image", 0, 0))
        images = np.empty((n_cls * cfg.data.images_per_class,) + probe.pixels.shape,
                          dtype=np.uint8)
        for k in range(n_cls):
            for i in range(cfg.data.images_per_class):
                img = generate_shape_image(k, derive(cfg.data.seed, "data", "image", k, i))
                images[k * cfg.data.images_per_class + i] = img.pixels
        image_path = os.path.join(out, "images.npz")
        np.savez_compressed(image_path, images=images, class_ids=image_ds.class_ids())
        del images
        produced += [clip_path, image_path]

    for path in produced:
        manifest.record(path, out)
    manifest.extra = {"n_images": len(image_ds.items), "n_clips": len(audio_ds.items)}
    manifest.write(os.path.join(out, "manifest.json"))
    print(f"gen-data: {len(audio_ds.items)} clips, {len(image_ds.items)} images -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    tc = cfg.train
    if args.seed is not None:
        tc = dataclasses.replace(tc, seed=args.seed)
    if args.msg_len is not None:
        tc = dataclasses.replace(tc, msg_len=args.msg_len)
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)

    system = optimizer = None
    start_epoch = 0
    modality = args.modality
    if args.resume:
        ckpt = _load_ckpt(args.resume)
        tc = TrainConfig(**ckpt.config)
        if args.epochs is not None:
            tc = dataclasses.replace(tc, epochs=args.epochs)
        system = ckpt.system
        optimizer = make_optimizer(system, tc)
        optimizer.load_state(ckpt.optimizer_sq)
        start_epoch = ckpt.epoch
        modality = _modality_of(system)

    audio_ds, image_ds = build_dataset(cfg.data)
    source = _source_for(modality, audio_ds, image_ds)

    label = args.label or f"{modality}-d{tc.msg_len}-s{tc.seed}"
    out = _make_dir(os.path.join(_out_root(args), "train", label))
    metrics_path = os.path.join(out, "metrics.csv")
    meta = {"modality": modality, "msg_len": tc.msg_len, "seed": tc.seed}

    def progress(row):
        if row["epoch"] % max(1, args.log_every) == 0:
            print(f"epoch {row['epoch']:>4}  loss {row['train_loss']:.4f}  "
                  f"acc {row['test_accuracy']:.3f}", flush=True)

    result = train(tc, source, system=system, optimizer=optimizer,
                   start_epoch=start_epoch, metrics_path=metrics_path, meta=meta,
                   log=progress)
    ckpt_path = os.path.join(out, "checkpoint.bin")
    last_epoch = result.metrics[-1]["epoch"] + 1 if result.metrics else start_epoch
    save_checkpoint(ckpt_path, result.system, result.optimizer, epoch=last_epoch,
                    config=train_config_dict(tc), rng={"seed": tc.seed})

    manifest = RunManifest("train", config_hash(cfg), tc.seed)
    for path in (metrics_path, ckpt_path):
        manifest.record(path, out)
    manifest.extra = {"label": label, "epochs_run": last_epoch,
                      "final_accuracy": result.metrics[-1]["test_accuracy"]
                      if result.metrics else float("nan")}
    manifest.write(os.path.join(out, "manifest.json"))
    if result.metrics:
        print(f"train: {label} epoch {last_epoch} "
              f"acc {result.metrics[-1]['test_accuracy']:.3f} -> {out}")
    return 0


def _consistency_outputs(msgs, source, out, produced):
    for role, bits in (("sender", msgs.bits), ("reply", msgs.reply_bits)):
        sim = class_consistency(bits, msgs.class_ids, source.sender_ds.class_names, role)
        path = os.path.join(out, f"consistency_{role}.csv")
        rows = [{"class_a": sim.class_names[a], "class_b": sim.class_names[b],
                 "mean_cosine": sim.matrix[a, b]}
                for a in range(len(sim.class_names)) for b in range(len(sim.class_names))]
        write_csv(path, ["class_a", "class_b", "mean_cosine"], rows,
                  meta={"role": role, "within_between_gap": within_between_gap(sim)})
        svg_path = os.path.join(out, f"consistency_{role}.svg")
        write_svg(svg_path, heatmap_svg(sim.matrix, sim.class_names, sim.class_names,
                                        title=f"{role} message cosine by class pair"))
        produced += [path, svg_path]
    cross = cross_consistency(msgs.bits, msgs.reply_bits, msgs.class_ids,
                              source.sender_ds.class_names)
    path = os.path.join(out, "cross_consistency.csv")
    write_csv(path, ["class", "mean_cosine", "freq_correlation"], list(cross.rows()))
    produced.append(path)


def _projection_outputs(msgs, grounding, out, produced, perplexity, seed):
    rows = []
    coords = tsne_project(msgs.bits, perplexity=perplexity,
                          rng=derive(seed, "analyze", "tsne")).coords
    for (x, y), cid in zip(coords, msgs.class_ids):
        rows.append({"x": x, "y": y, "class": int(cid), "band": "", "amplitude": ""})
    svg_path = os.path.join(out, "projection_classes.svg")
    write_svg(svg_path, scatter_svg(coords, msgs.class_ids,
                                    title="message map by class (t-SNE)"))
    produced.append(svg_path)
    if grounding is not None:
        for factor, column in (("frequency", "band"), ("amplitude", "amplitude")):
            gf = grounding.get("system", factor)
            bins = sorted(set(gf.labels.tolist()))
            names = {b: f"bin{b}" for b in bins}
            for (x, y), b in zip(gf.pca_coords, gf.labels):
                row = {"x": x, "y": y, "class": "", "band": "", "amplitude": ""}
                row[column] = int(b)
                rows.append(row)
            svg_path = os.path.join(out, f"grounding_{factor}.svg")
            write_svg(svg_path, scatter_svg(gf.pca_coords, gf.labels, names,
                                            title=f"messages by {factor} bin (PCA)"))
            produced.append(svg_path)
    path = os.path.join(out, "projection.csv")
    write_csv(path, ["x", "y", "class", "band", "amplitude"], rows)
    produced.append(path)


def cmd_analyze(args) -> int:
    cfg = _run_config(args)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    seed = cfg.train.seed
    analyses = [a.strip() for a in args.analyses.split(",") if a.strip()]
    unknown = set(analyses) - set(DEFAULT_ANALYSES)
    if unknown:
        raise UsageError(f"unknown analyses: {', '.join(sorted(unknown))}")

    ckpt = _load_ckpt(args.checkpoint)
    system = ckpt.system
    if "grounding" in analyses and system.sender_modality != "audio":
        raise UsageError("grounding analysis needs an audio sender; "
                         f"checkpoint sender modality is {system.sender_modality!r}")

    audio_ds, image_ds = build_dataset(cfg.data)
    source = _source_for(_modality_of(system), audio_ds, image_ds)
    label = args.label or os.path.splitext(os.path.basename(args.checkpoint))[0]
    out = _make_dir(os.path.join(_out_root(args), "analyze", label))
    produced = []

    msgs = None
    if {"consistency", "bits", "perturbation", "projection"} & set(analyses):
        msgs = collect_messages(system, source, args.n_per_class,
                                derive(seed, "analyze", "messages"))
    if "consistency" in analyses:
        _consistency_outputs(msgs, source, out, produced)

    profile = None
    if "bits" in analyses or "perturbation" in analyses:
        profile = classify_bits(msgs.bits, msgs.class_ids, source.sender_ds.class_names)
        path = os.path.join(out, "bits.csv")
        write_csv(path, ["class", "bit", "frequency", "label"], list(profile.rows()))
        produced.append(path)

    if "perturbation" in analyses:
        k_range = _parse_k_range(args.k)
        specs = [s.strip() for s in args.perturb.split(",") if s.strip()]
        bad = set(specs) - set(FLIP_SPECS)
        if bad:
            raise UsageError(f"unknown flip specs: {', '.join(sorted(bad))}")
        rows = []
        series = {}
        for spec in specs:
            res = perturb_and_eval(system, source, profile, spec, k_range, seed,
                                   n_trials=args.perturb_trials)
            for r in res.rows:
                rows.append({"flip_spec": spec, **r})
            means = []
            for k in k_range:
                vals = [r["mean_accuracy"] for r in res.rows
                        if r["k"] == k and not r["skipped"]]
                means.append(float(np.mean(vals)) if vals else float("nan"))
            series[spec] = means
        path = os.path.join(out, "perturbation.csv")
        write_csv(path, ["flip_spec", "class", "k", "mean_accuracy",
                         "accuracy_variance", "skipped", "pool_size"], rows)
        svg_path = os.path.join(out, "perturbation.svg")
        write_svg(svg_path, line_svg(k_range, series, title="accuracy vs flipped bits",
                                     xlabel="k flipped", ylabel="accuracy"))
        produced += [path, svg_path]

    grounding = None
    if "grounding" in analyses:
        grounding = grounding_experiment({"system": system}, audio_ds.pipeline,
                                         seed=seed, n_per_bin=args.n_per_class)
        path = os.path.join(out, "grounding.csv")
        write_csv(path, ["system", "factor", "silhouette", "null_95",
                         "exceeds_null", "degenerate", "n_messages"],
                  grounding.summaries())
        produced.append(path)

    if "projection" in analyses:
        _projection_outputs(msgs, grounding, out, produced, args.perplexity, seed)

    if args.sweep_lengths:
        lengths = _parse_int_list(args.sweep_lengths, "--sweep-lengths")
        seeds = _parse_int_list(args.sweep_seeds, "--sweep-seeds")
        base = cfg.train
        if args.sweep_epochs:
            base = dataclasses.replace(base, epochs=args.sweep_epochs)
        rows = length_sweep(audio_ds, image_ds, base, lengths=lengths, seeds=seeds,
                            log=lambda r: print(f"sweep {r}", flush=True))
        path = os.path.join(out, "efficiency.csv")
        write_efficiency_csv(path, rows)
        series = {}
        for modality in sorted({r.modality for r in rows}):
            series[modality] = [float(np.mean([r.accuracy_pct for r in rows
                                               if r.modality == modality and r.msg_len == d]))
                                for d in lengths]
        svg_path = os.path.join(out, "efficiency.svg")
        write_svg(svg_path, line_svg(lengths, series, title="accuracy vs message length",
                                     xlabel="message bits", ylabel="accuracy %"))
        produced += [path, svg_path]

    manifest = RunManifest("analyze", config_hash(cfg), seed)
    for path in produced:
        manifest.record(path, out)
    manifest.extra = {"checkpoint": args.checkpoint, "analyses": analyses}
    manifest.write(os.path.join(out, "manifest.json"))
    print(f"analyze: {len(produced)} artifacts -> {out}")
    return 0


def cmd_interop(args) -> int:
    cfg = _run_config(args)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    ckpt_a = _load_ckpt(args.ckpt_a)
    ckpt_b = _load_ckpt(args.ckpt_b)
    hybrid = pair_systems(ckpt_a.system, ckpt_b.system)

    audio_ds, image_ds = build_dataset(cfg.data)
    new_source = _source_for(_modality_of(hybrid.new_system), audio_ds, image_ds)
    original_source = _source_for(_modality_of(hybrid.original_system), audio_ds, image_ds)
    checkpoints = _parse_int_list(args.epochs, "--epochs")

    out = _make_dir(os.path.join(_out_root(args), "interop"))
    report = finetune(hybrid, new_source, original_source, cfg.train,
                      epoch_checkpoints=checkpoints, n_eval=args.eval_episodes,
                      log=lambda row: print(f"interop {row}", flush=True))
    csv_path = os.path.join(out, "interop.csv")
    report.write_csv(csv_path, meta={"ckpt_a": os.path.basename(args.ckpt_a),
                                     "ckpt_b": os.path.basename(args.ckpt_b)})
    epochs = [r["epochs"] for r in report.rows]
    svg_path = os.path.join(out, "interop.svg")
    write_svg(svg_path, line_svg(
        epochs, {"new pairing": [r["new_accuracy_pct"] for r in report.rows],
                 "original pairing": [r["original_accuracy_pct"] for r in report.rows]},
        title="fine-tuning a hybrid pairing", xlabel="fine-tune epochs",
        ylabel="accuracy %"))

    t_max = cfg.train.t_max
    for name, system, source in (("new", hybrid.new_system, new_source),
                                 ("original", hybrid.original_system, original_source)):
        report.timestep_curves[name] = per_timestep_accuracy(
            system, source, args.eval_episodes,
            derive(cfg.train.seed, "interop-timestep", name), t_max).tolist()
    ts_csv = os.path.join(out, "timestep.csv")
    report.write_timestep_csv(ts_csv)
    ts_svg = os.path.join(out, "timestep.svg")
    write_svg(ts_svg, line_svg(list(range(1, t_max + 1)), report.timestep_curves,
                               title="accuracy by conversation step",
                               xlabel="step", ylabel="accuracy %"))

    manifest = RunManifest("interop", config_hash(cfg), cfg.train.seed)
    for path in (csv_path, svg_path, ts_csv, ts_svg):
        manifest.record(path, out)
    manifest.write(os.path.join(out, "manifest.json"))
    final = report.rows[-1]
    print(f"interop: zero-shot {report.rows[0]['new_accuracy_pct']:.1f}% "
          f"final {final['new_accuracy_pct']:.1f}% / {final['original_accuracy_pct']:.1f}% "
          f"-> {out}")
    return 0


def cmd_report(args) -> int:
    run_dir = args.run or _out_root(args)
    if not os.path.isdir(run_dir):
        raise UsageError(f"run directory not found: {run_dir}")
    csvs, svgs = [], []
    for base, _, names in sorted(os.walk(run_dir)):
        for name in sorted(names):
            path = os.path.join(base, name)
            if name.endswith(".csv"):
                csvs.append(path)
            elif name.endswith(".svg") and name != "gallery.svg":
                svgs.append(path)
    if not csvs and not svgs:
        raise UsageError(f"no metric or plot files under {run_dir}")

    summary = {"run_dir": os.path.abspath(run_dir), "n_sources": len(csvs),
               "sources": [], "plots": [os.path.relpath(p, run_dir) for p in svgs]}
    for path in csvs:
        meta, columns, rows = read_csv(path)
        summary["sources"].append({
            "path": os.path.relpath(path, run_dir),
            "columns": columns, "n_rows": len(rows), "meta": meta,
            "last_row": rows[-1] if rows else None,
        })
    report_path = os.path.join(run_dir, "report.json")
    write_json(report_path, summary)

    # gallery: an SVG index listing every plot in the run
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="640" '
             f'height="{40 + 18 * max(1, len(svgs))}">',
             '<text x="20" y="24" font-size="14" font-family="monospace">'
             f'plots under {os.path.basename(os.path.abspath(run_dir))}/</text>']
    for i, path in enumerate(svgs):
        rel = os.path.relpath(path, run_dir)
        lines.append(f'<text x="32" y="{46 + 18 * i}" font-size="12" '
                     f'font-family="monospace">{rel}</text>')
    if not svgs:
        lines.append('<text x="32" y="46" font-size="12" font-family="monospace">'
                     '(none)</text>')
    lines.append("</svg>")
    gallery_path = os.path.join(run_dir, "gallery.svg")
    write_svg(gallery_path, "\n".join(lines) + "\n")

    manifest = RunManifest("report", config_hash({"run_dir": summary["run_dir"]}),
                           args.seed if args.seed is not None else 0)
    manifest.record(report_path, run_dir)
    manifest.record(gallery_path, run_dir)
    manifest.write(os.path.join(run_dir, "report_manifest.json"))
    print(f"report: {len(csvs)} metric files, {len(svgs)} plots -> {report_path}")
    return 0


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emcomm",
        description="referential-game emergent communication laboratory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed (data seed for gen-data, "
                             "train seed elsewhere)")
    parser.add_argument("--out", default=None,
                        help=f"output root (default ${OUT_ENV} or ./runs)")
    parser.add_argument("--config", default=None, help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic world")
    p.add_argument("--no-raw", action="store_true",
                   help="skip writing raw clips.npz/images.npz")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a sender/receiver system")
    p.add_argument("--modality", choices=("unimodal", "multimodal"),
                   default="unimodal")
    p.add_argument("--msg-len", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--label", default=None, help="run subdirectory name")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="protocol analyses on a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--label", default=None)
    p.add_argument("--analyses", default=",".join(DEFAULT_ANALYSES))
    p.add_argument("--n-per-class", type=int, default=60)
    p.add_argument("--perturb", default="constant,variable",
                   help="comma list of flip pools")
    p.add_argument("--k", default="0..5", help="flip counts, INT..INT or comma list")
    p.add_argument("--perturb-trials", type=int, default=30)
    p.add_argument("--perplexity", type=float, default=20.0)
    p.add_argument("--sweep-lengths", default="",
                   help="train a message-length sweep, e.g. 1,5,10,30,50")
    p.add_argument("--sweep-seeds", default="1")
    p.add_argument("--sweep-epochs", type=int, default=0,
                   help="epoch budget per sweep run (0 = config epochs)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("interop", help="cross-pair two checkpoints and fine-tune")
    p.add_argument("--ckpt-a", required=True, help="sender-side checkpoint")
    p.add_argument("--ckpt-b", required=True, help="receiver-side checkpoint")
    p.add_argument("--epochs", default="0,2,15,20,100",
                   help="fine-tune epoch checkpoints")
    p.add_argument("--eval-episodes", type=int, default=500)
    p.set_defaults(func=cmd_interop)

    p = sub.add_parser("report", help="aggregate a run directory")
    p.add_argument("--run", default=None, help="directory to aggregate (default --out)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return 2
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime contract: anything else is exit 2
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
