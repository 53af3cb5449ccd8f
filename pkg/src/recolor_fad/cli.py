"""Command-line entry points: synth-data, pretrain, train, eval, grid, visualize."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from recolor_fad.audio import (ManifestError, ProtocolError, fix_length, load_waveform,
                               manifest_from_dir, parse_protocol, resolve_root)
from recolor_fad.config import ConfigError, RunConfig, load_config
from recolor_fad.evaluation import (ScoreError, compute_eer, det_points, write_det_csv,
                                    write_scores)
from recolor_fad.features import featurize
from recolor_fad.recolor import CheckpointError, load_recolor
from recolor_fad.toy import synth_toy_corpus
from recolor_fad.training import (FeatureSet, TrainingError, fad_train, load_detector, pretrain,
                                  score_features)

log = logging.getLogger("recolor_fad")

EXPECTED_ERRORS = (ConfigError, ProtocolError, ManifestError, CheckpointError, ScoreError,
                   TrainingError, ValueError, OSError)


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _manifest(cfg: RunConfig, partition: str):
    protocol = getattr(cfg, f"{partition}_protocol")
    audio = getattr(cfg, f"{partition}_audio")
    if partition == "pretrain" and not protocol:
        if not cfg.pretrain_dir:
            raise CliError("pretraining needs --pretrain-protocol or --pretrain-dir")
        return manifest_from_dir(resolve_root(cfg.pretrain_dir))
    if not protocol:
        raise CliError(f"missing --{partition}-protocol")
    protocol = resolve_root(protocol)
    if not protocol.exists():
        raise CliError(f"protocol file not found: {protocol}")
    return parse_protocol(protocol, partition, resolve_root(audio) if audio else None, cfg.audio_ext)


def _run_config(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return load_config(args.config, **overrides)


def _add_config_flags(p, skip=()):
    p.add_argument("--config", help="key = value config file; flags override it")
    for f in fields(RunConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        names = [flag, "--out"] if f.name == "out_dir" else [flag]
        if f.type in ("bool", bool):
            p.add_argument(*names, dest=f.name, default=None,
                           type=lambda s: s, metavar="{true,false}")
        else:
            p.add_argument(*names, dest=f.name, default=None, metavar=f.name.upper())
    return p


def _start_run(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_synth_data(args):
    if args.n < 1:
        args.parser.error("--n must be >= 1")
    m = synth_toy_corpus(args.n, args.seed, args.out, args.partition)
    c = m.counts()
    print(f"wrote {len(m)} utterances ({c['bonafide']} bonafide, {c['spoof']} spoof) "
          f"to {Path(args.out) / 'wav'}; protocol {Path(args.out) / (args.partition + '.txt')}")


def cmd_pretrain(args):
    cfg = _run_config(args)
    manifest = _manifest(cfg, "pretrain")
    out = _start_run(cfg)
    res = pretrain(manifest, cfg.recolor(), cfg.hyper(), out)
    print(f"pretrain: {len(manifest)} utterances, K={cfg.colors}, temperature={cfg.temperature}")
    print(f"reconstruction MSE {res.eval_before:.6f} -> {res.eval_after:.6f}")
    print(f"checkpoint {res.checkpoint}")


def cmd_train(args):
    cfg = _run_config(args)
    train, dev = _manifest(cfg, "train"), _manifest(cfg, "dev")
    out = _start_run(cfg)
    state = fad_train(train, dev, cfg.recolor(), cfg.classifier, cfg.fusion, cfg.loss(),
                      cfg.hyper(), cfg.init, cfg.classifier_width or None, out)
    print(f"best dev EER {100 * state.best_dev_eer:.2f}% at epoch {state.best_epoch}")
    print(f"checkpoint {state.best_checkpoint}")
    return state


def cmd_eval(args):
    cfg = _run_config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CliError(f"checkpoint not found: {ckpt}")
    recolor, clf, fusion, _ = load_detector(ckpt)
    manifest = _manifest(cfg, "eval")
    counts = manifest.counts()
    if min(counts.values()) == 0:
        raise CliError(f"eval manifest must contain both classes, got {counts}")
    out = _start_run(cfg)
    entries = score_features(recolor, clf, fusion, FeatureSet(manifest), cfg.eval_path)
    write_scores(entries, out / "scores.txt")
    res = compute_eer(entries)
    pts = det_points(entries)
    write_det_csv(pts, out / "det.csv")
    from recolor_fad.plotting import plot_det
    plot_det(pts, out / "det.png", res.eer)
    print(f"EER: {res.percent} (threshold {res.threshold:.6g}, "
          f"{res.n_bona} bonafide / {res.n_spoof} spoof)")
    return res


def _axis(raw, typ=str):
    vals = [typ(v) for v in str(raw).split(",") if v.strip()]
    if not vals:
        raise CliError("grid axes must not be empty")
    return vals


def cmd_grid(args):
    base = _run_config(args)
    colors = _axis(args.colors_axis, int)
    temps = _axis(args.temperature_axis, float)
    fusions = _axis(args.fusion_axis)
    classifiers = _axis(args.classifier_axis)
    rec_modes = _axis(args.rec_mode_axis)
    inits = _axis(args.init_axis)
    for i in inits:
        if i not in ("scratch", "pre"):
            raise CliError(f"--init-axis values are scratch or pre, got {i!r}")
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, dev = _manifest(base, "train"), _manifest(base, "dev")

    pretrained = {}
    if "pre" in inits:
        pre_manifest = _manifest(base, "pretrain")
        for k, tau in itertools.product(colors, temps):
            cell = base.updated(colors=k, temperature=tau,
                                out_dir=str(out / "pretrain" / f"K{k}_T{tau:g}"))
            path = Path(cell.out_dir) / "recolor.pt"
            if not path.exists():
                _start_run(cell)
                pretrain(pre_manifest, cell.recolor(), cell.hyper(), cell.out_dir)
            pretrained[(k, tau)] = path

    rows = []
    for clf, fusion, mode, k, tau, init in itertools.product(
            classifiers, fusions, rec_modes, colors, temps, inits):
        name = f"{clf}_{fusion}_{mode}_K{k}_T{tau:g}_{init}"
        init_spec = "scratch" if init == "scratch" else f"pretrained:{pretrained[(k, tau)].resolve()}"
        cell = base.updated(classifier=clf, fusion=fusion, rec_mode=mode, colors=k,
                            temperature=tau, init=init_spec, out_dir=str(out / "cells" / name)).validate()
        _start_run(cell)
        state = fad_train(train, dev, cell.recolor(), clf, fusion, cell.loss(), cell.hyper(),
                          cell.init, cell.classifier_width or None, cell.out_dir)
        rows.append({"classifier": clf, "fusion": fusion, "rec_mode": mode, "colors": k,
                     "temperature": tau, "init": "TFS" if init == "scratch" else "Pre",
                     "dev_eer": state.best_dev_eer, "cell": cell.out_dir})
        print(f"{name}: dev EER {100 * state.best_dev_eer:.2f}%")

    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({**r, "dev_eer": repr(r["dev_eer"])})
    table = format_table(rows)
    (out / "table.txt").write_text(table)
    from recolor_fad.plotting import plot_grid_results
    plot_grid_results(rows, out / "results.png")
    print(table)
    return rows


def format_table(rows) -> str:
    """Wide table: one row per (classifier, fusion), one column per (rec mode, K, T, init)."""
    col_keys = sorted({(r["rec_mode"], r["colors"], r["temperature"], r["init"]) for r in rows},
                      key=lambda c: (c[0] != "true_rec", c[1], c[2], c[3] != "TFS"))
    row_keys = list(dict.fromkeys((r["classifier"], r["fusion"]) for r in rows))
    cell = {(r["classifier"], r["fusion"], r["rec_mode"], r["colors"], r["temperature"], r["init"]):
            r["dev_eer"] for r in rows}
    mode_name = {"true_rec": "True Rec", "all_rec": "All Rec"}
    head1 = ["", ""] + [mode_name.get(c[0], c[0]) for c in col_keys]
    head2 = ["", ""] + [f"color={c[1]} T={c[2]:g}" for c in col_keys]
    head3 = ["Classifier", "Process"] + [c[3] for c in col_keys]
    fusion_name = {"only_rec": "Only rec", "add": "Add", "sub": "Sub", "original": "Original"}
    body = []
    for clf, fusion in row_keys:
        vals = [cell.get((clf, fusion) + c) for c in col_keys]
        body.append([clf, fusion_name.get(fusion, fusion)] +
                    ["-" if v is None else f"{100 * v:.2f}" for v in vals])
    lines = [head1, head2, head3] + body
    widths = [max(len(line[i]) for line in lines) for i in range(len(head1))]
    return "".join(" | ".join(s.ljust(w) for s, w in zip(line, widths)).rstrip() + "\n"
                   for line in lines)


def cmd_visualize(args):
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    waves = [load_waveform(resolve_root(a)) for a in args.audio]
    from recolor_fad.plotting import reconstruction_rows, save_grid
    rows, labels = [], []
    for ckpt in args.checkpoint:
        model = load_recolor(ckpt)
        temps = [float(t) for t in args.temperature.split(",")] if args.temperature else [model.cfg.temperature]
        segments = [fix_length(w, mode="crop_random" if args.segments > 1 else "crop_fixed", seed=rng)
                    for w in waves for _ in range(args.segments)]
        images = torch.stack([torch.from_numpy(featurize(s)).float() for s in segments])
        for tau in temps:
            rows += reconstruction_rows(model, images, tau)
            labels += [f"K={model.num_colors} T={tau:g} seg{i}" for i in range(len(segments))]
    path = save_grid(rows, out / "recon_grid.png", labels)
    print(f"wrote {len(rows)}-row grid to {path}")
    return path


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="recolor-fad", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic two-class toy corpus")
    p.add_argument("--n", type=int, required=True, help="utterances per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--partition", default="train", choices=("train", "dev", "eval", "pretrain"))
    p.set_defaults(func=cmd_synth_data, parser=p)

    p = _add_config_flags(sub.add_parser("pretrain", help="reconstruction pretraining of the recolor net"))
    p.set_defaults(func=cmd_pretrain)

    p = _add_config_flags(sub.add_parser("train", help="joint FAD training with dev-EER model selection"))
    p.set_defaults(func=cmd_train)

    p = _add_config_flags(sub.add_parser("eval", help="score an eval set and print the EER"))
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = _add_config_flags(sub.add_parser("grid", help="run an experiment matrix at toy scale"))
    p.add_argument("--colors-axis", "--colors-list", default="2,8,16")
    p.add_argument("--temperature-axis", default="0.01")
    p.add_argument("--fusion-axis", default="only_rec,add,sub")
    p.add_argument("--classifier-axis", default="lcnn")
    p.add_argument("--rec-mode-axis", default="true_rec")
    p.add_argument("--init-axis", default="scratch")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("visualize", help="original | train-path | test-path reconstruction grid")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--audio", action="append", required=True)
    p.add_argument("--segments", type=int, default=1)
    p.add_argument("--temperature", default=None, help="comma-separated temperatures")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, *EXPECTED_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
