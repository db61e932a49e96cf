"""Command surface: synth, pretrain, train-kin, eval-kin, encode, fuse,
metrics.

Exit codes: 0 success, 2 validation / usage error, 3 runtime error. Every
artifact is written atomically, so error paths leave nothing partial. With
the same config and seed every command produces byte-identical outputs;
FCDBN_THREADS > 1 parallelizes fold evaluation without changing results
(fold seeds are fixed as seed + fold index).
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .deepnet import mlp_predict
from .evaluation import (
    ConfusionCounts,
    dprime,
    gen_negatives,
    information_entropy,
    make_folds,
    roc,
    stimulus_entropy,
    ztest_proportions,
)
from .fusion import (
    boost_decision,
    fit_fusion,
    synth_score_records,
)
from .kvrl import (
    encode_face,
    extract_regions,
    pair_feature,
    pretrain_stages,
    train_kvrl,
    train_pair_classifier,
)
from .storage import (
    atomic_write_text,
    load_model,
    load_pgm,
    read_manifest,
    save_model,
    save_pgm,
    write_manifest,
)
from .synth import synth_kin


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, str) else _fmt(c)
                              for c in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _ensure_outdir(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _load_pair_images(cfg, pairs):
    cache = {}

    def image(path):
        if path not in cache:
            cache[path] = load_pgm(os.path.join(cfg.images_dir, path))
        return cache[path]

    return [(image(p.path_a), image(p.path_b), 1 if p.label == "kin" else 0)
            for p in pairs], image


def _load_corpus(cfg):
    if not cfg.corpus_dir:
        raise CliError("config needs corpus_dir", 2)
    names = sorted(n for n in os.listdir(cfg.corpus_dir) if n.endswith(".pgm"))
    if not names:
        raise CliError(f"no .pgm files in {cfg.corpus_dir}", 3)
    return [load_pgm(os.path.join(cfg.corpus_dir, n)) for n in names]


def cmd_synth(cfg):
    out = _ensure_outdir(cfg)
    images_dir = os.path.join(out, "images")
    corpus_dir = os.path.join(out, "corpus")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(corpus_dir, exist_ok=True)
    images, pairs = synth_kin(cfg.seed, cfg.families, cfg.members_per_family,
                              cfg.separability)
    for subject, img in images.items():
        save_pgm(os.path.join(images_dir, f"{subject}.pgm"), img)
    corpus_images, _ = synth_kin(cfg.seed + 1, cfg.corpus_families,
                                 cfg.members_per_family, cfg.separability)
    for subject, img in corpus_images.items():
        save_pgm(os.path.join(corpus_dir, f"{subject}.pgm"), img)
    write_manifest(os.path.join(out, "manifest.csv"), pairs)
    print(f"synth: {len(images)} pair-pool images, {len(corpus_images)} "
          f"corpus images, {len(pairs)} manifest rows -> {out}")
    return 0


def cmd_pretrain(cfg):
    out = _ensure_outdir(cfg)
    corpus = _load_corpus(cfg)
    model = pretrain_stages(corpus, cfg)
    path = cfg.model_out or os.path.join(out, "model.json")
    save_model(model, path)
    print(f"pretrain: stages trained on {len(corpus)} images -> {path}")
    return 0


def cmd_train_kin(cfg):
    out = _ensure_outdir(cfg)
    if not cfg.manifest or not cfg.images_dir:
        raise CliError("config needs manifest and images_dir", 2)
    corpus = _load_corpus(cfg)
    pairs = read_manifest(cfg.manifest)
    pair_images, _ = _load_pair_images(cfg, pairs)
    model = train_kvrl(corpus, pair_images, cfg)
    path = cfg.model_out or os.path.join(out, "model.json")
    save_model(model, path)
    print(f"train-kin: {len(pair_images)} pairs -> {path}")
    return 0


def _eval_fold(cfg, model, fold_idx, train_pos, test_pos, image):
    """Retrain the pair classifier on one fold and score the held-out fold."""
    fold_seed = cfg.seed + fold_idx
    train_neg = gen_negatives(train_pos, seed=fold_seed)
    test_neg = gen_negatives(test_pos, seed=fold_seed + 5000)

    embeddings = {}

    def embed(path):
        if path not in embeddings:
            embeddings[path] = encode_face(model, extract_regions(
                image(path), model.fractions, model.region_size))
        return embeddings[path]

    feats, labels = [], []
    for p in train_pos:
        ea, eb = embed(p.path_a), embed(p.path_b)
        feats += [pair_feature(ea, eb), pair_feature(eb, ea)]
        labels += [1.0, 1.0]
    for a, b in train_neg:
        ea, eb = embed(a), embed(b)
        feats += [pair_feature(ea, eb), pair_feature(eb, ea)]
        labels += [0.0, 0.0]
    arch = [len(feats[0])] + list(cfg.classifier_hidden) + [1]
    fold_cfg = replace(cfg, seed=cfg.seed + fold_idx)
    clf = train_pair_classifier(np.stack(feats), np.array(labels), arch,
                                fold_cfg)

    scores, truths, relations = [], [], []
    for p in test_pos:
        ea, eb = embed(p.path_a), embed(p.path_b)
        s = (mlp_predict(clf, pair_feature(ea, eb))
             + mlp_predict(clf, pair_feature(eb, ea))) / 2.0
        scores.append(s)
        truths.append(1)
        relations.append(p.relation)
    for idx, (a, b) in enumerate(test_neg):
        ea, eb = embed(a), embed(b)
        s = (mlp_predict(clf, pair_feature(ea, eb))
             + mlp_predict(clf, pair_feature(eb, ea))) / 2.0
        scores.append(s)
        truths.append(0)
        relations.append(test_pos[idx % len(test_pos)].relation)
    return scores, truths, relations


def cmd_eval_kin(cfg):
    out = _ensure_outdir(cfg)
    if not cfg.manifest or not cfg.images_dir or not cfg.model_in:
        raise CliError("config needs manifest, images_dir, model_in", 2)
    model = load_model(cfg.model_in)
    pairs = read_manifest(cfg.manifest)
    positives = [p for p in pairs if p.label == "kin"]
    plan = make_folds(positives, seed=cfg.seed)
    _, image = _load_pair_images(cfg, pairs)

    jobs = []
    for fold_idx in range(len(plan.folds)):
        test_pos = plan.folds[fold_idx]
        train_pos = [p for j, fold in enumerate(plan.folds) if j != fold_idx
                     for p in fold]
        jobs.append((fold_idx, train_pos, test_pos))

    workers = int(os.environ.get("FCDBN_THREADS", "1") or "1")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda j: _eval_fold(cfg, model, j[0], j[1], j[2], image), jobs))
    else:
        results = [_eval_fold(cfg, model, j[0], j[1], j[2], image)
                   for j in jobs]

    fold_rows, all_scores, all_truths, all_relations = [], [], [], []
    for fold_idx, (scores, truths, relations) in enumerate(results):
        correct = sum(1 for s, t in zip(scores, truths)
                      if (s >= 0.5) == (t == 1))
        fold_rows.append((fold_idx, correct / len(scores)))
        all_scores += scores
        all_truths += truths
        all_relations += relations

    mean_acc = float(np.mean([acc for _, acc in fold_rows]))
    rel_rows = []
    for rel in sorted(set(all_relations)):
        idx = [i for i, r in enumerate(all_relations) if r == rel]
        correct = sum(1 for i in idx
                      if (all_scores[i] >= 0.5) == (all_truths[i] == 1))
        rel_rows.append((rel, correct / len(idx), len(idx)))
    curve = roc(all_scores, all_truths)

    _write_csv(os.path.join(out, "folds.csv"), ("fold", "accuracy"), fold_rows)
    _write_csv(os.path.join(out, "relations.csv"),
               ("relation", "accuracy", "pairs"), rel_rows)
    _write_csv(os.path.join(out, "roc.csv"), ("fpr", "tpr", "threshold"),
               list(zip(curve.fpr, curve.tpr, curve.thresholds)))
    print(f"eval-kin: mean accuracy {mean_acc:.4f} over {len(fold_rows)} folds, "
          f"auc {curve.auc:.4f}")
    for rel, acc, count in rel_rows:
        print(f"  {rel}: accuracy {acc:.4f} ({count} pairs)")
    return 0


def cmd_encode(cfg):
    out = _ensure_outdir(cfg)
    if not cfg.model_in or not cfg.image:
        raise CliError("config needs model_in and image", 2)
    model = load_model(cfg.model_in)
    img = load_pgm(cfg.image)
    code = encode_face(model, extract_regions(img, model.fractions,
                                              model.region_size))
    path = os.path.join(out, "encoding.csv")
    _write_csv(path, tuple(f"f{i}" for i in range(len(code))), [tuple(code)])
    print(f"encode: wrote {len(code)}-dim encoding -> {path}")
    return 0


def cmd_fuse(cfg):
    out = _ensure_outdir(cfg)
    records = synth_score_records(cfg.seed, cfg.n_genuine, cfg.n_impostor,
                                  face_shift=cfg.face_shift,
                                  kin_shift=cfg.kin_shift, n_kin=cfg.n_kin)
    holdout = synth_score_records(cfg.seed + 1, cfg.n_genuine, cfg.n_impostor,
                                  face_shift=cfg.face_shift,
                                  kin_shift=cfg.kin_shift, n_kin=cfg.n_kin)
    models = fit_fusion(records, n_components=cfg.gmm_components, seed=cfg.seed)
    labels = [r.label for r in holdout]
    face_scores = [r.s for r in holdout]
    curves = {"face": roc(face_scores, labels)}
    methods = ("plr", "svm") if cfg.fusion_method == "both" else (cfg.fusion_method,)
    for method in methods:
        fused = [boost_decision(r, method, 0.0, models)[1] for r in holdout]
        curves[method] = roc(fused, labels)
    for name, curve in curves.items():
        _write_csv(os.path.join(out, f"roc_{name}.csv"),
                   ("fpr", "tpr", "threshold"),
                   list(zip(curve.fpr, curve.tpr, curve.thresholds)))
        tprs = " ".join(f"tpr@{t}={curve.tpr_at_fpr[t]:.4f}"
                        for t in sorted(curve.tpr_at_fpr))
        print(f"fuse[{name}]: auc {curve.auc:.4f} {tprs}")
    return 0


def _read_counts_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    rows = []
    for ln in lines:
        cells = [c.strip() for c in ln.split(",")]
        try:
            rows.append([int(c) for c in cells])
        except ValueError:
            continue  # header line
    if len(rows) != 2 or any(len(r) != 2 for r in rows):
        raise ValueError(f"counts file must hold a 2x2 integer table: {path}")
    return ConfusionCounts(np.array(rows, dtype=float))


def cmd_metrics(cfg):
    if not cfg.counts_csv:
        raise CliError("config needs counts_csv", 2)
    counts = _read_counts_csv(cfg.counts_csv)
    c = counts.counts
    hit = c[0, 0] / c[0].sum()
    fa = c[1, 0] / c[1].sum()
    d = dprime(hit, fa, n_signal=int(c[0].sum()), n_noise=int(c[1].sum()))
    h_s = stimulus_entropy(counts)
    info = information_entropy(counts)
    z, significant = ztest_proportions(hit, int(c[0].sum()), fa, int(c[1].sum()))
    print(f"hit_rate={hit:.6f} fa_rate={fa:.6f}")
    print(f"dprime={d:.6f}")
    print(f"H(S)={h_s:.6f} bits")
    print(f"I(S|r)={info:.6f} bits")
    print(f"z={z:.6f} significant_95={'yes' if significant else 'no'}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train-kin": cmd_train_kin,
    "eval-kin": cmd_eval_kin,
    "encode": cmd_encode,
    "fuse": cmd_fuse,
    "metrics": cmd_metrics,
}


def run_command(argv):
    """Parse argv and run one command; returns the process exit code."""
    parser = argparse.ArgumentParser(
        prog="fcdbn",
        description="filtered contractive DBN kin verification toolkit")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="JSON config path")
    parser.add_argument("--seed", type=int, default=None)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # runtime failures map to exit 3
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    raise SystemExit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
