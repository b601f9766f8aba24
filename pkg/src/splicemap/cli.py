"""Command-line pipeline: synth / extract / train / score / evaluate / roc / gradcheck.

Configuration precedence is flags > config file > defaults. The config file
is plain ``key = value`` lines ('#' comments allowed) using the same names as
the long flags. Every command writes a manifest of its fully resolved
configuration next to its artifacts.

Exit codes: 0 success, 1 validation/usage error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import detector, evaluation, features, neural, report, synth
from .errors import InvalidParameter, SplicemapError
from .frames import load_frame_sequence, load_mask

log = logging.getLogger("splicemap")


@dataclass
class RunConfig:
    frames: str = ""
    masks: str = ""
    out: str = "out"
    pattern: str = "frame_%04d.pgm"
    mask_pattern: str = "mask_%04d.pgm"
    train_first: int = 0
    train_last: int = 49
    test_first: int = 50
    test_last: int = 149
    patch: int = 128
    stride: int = 8
    q: float = 3.0
    trunc: int = 2
    symmetry: str = "sign+reversal"
    model: str = "dense"
    hidden: int = 100
    unroll: int = 25
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch: int = 0  # 0 resolves to the model default: 128 dense, 64 recurrent
    init_scale: float = 1.0
    seed: int = 0
    workers: int = 1
    tau: float = 0.0
    n_thresholds: int = 200

    def validate(self):
        positive = ("patch", "stride", "trunc", "hidden", "unroll", "workers")
        for name in positive:
            if getattr(self, name) < 1:
                raise InvalidParameter(f"{name} must be positive, got {getattr(self, name)}")
        if self.q <= 0:
            raise InvalidParameter(f"q must be positive, got {self.q}")
        if self.epochs < 0:
            raise InvalidParameter(f"epochs must be >= 0, got {self.epochs}")
        if self.batch < 0:
            raise InvalidParameter(f"batch must be >= 0, got {self.batch}")
        if self.model not in ("dense", "recurrent"):
            raise InvalidParameter(f"model must be dense or recurrent, got {self.model!r}")
        if self.symmetry not in features.SYMMETRY_OPTIONS:
            raise InvalidParameter(f"unknown symmetry {self.symmetry!r}")
        if self.n_thresholds < 2:
            raise InvalidParameter(f"n_thresholds must be >= 2, got {self.n_thresholds}")
        if self.train_last < self.train_first or self.test_last < self.test_first:
            raise InvalidParameter("frame ranges must satisfy first <= last")
        if not (self.train_last < self.test_first or self.test_last < self.train_first):
            raise InvalidParameter(
                f"train range [{self.train_first}, {self.train_last}] overlaps "
                f"test range [{self.test_first}, {self.test_last}]"
            )

    @property
    def batch_size(self) -> int:
        if self.batch > 0:
            return self.batch
        return 64 if self.model == "recurrent" else 128

    def train_config(self) -> neural.TrainConfig:
        return neural.TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                                  seed=self.seed, unroll=self.unroll,
                                  init_scale=self.init_scale)

    def adam_config(self) -> neural.AdamConfig:
        return neural.AdamConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                                 eps=self.eps)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Parse ``key = value`` lines into typed RunConfig overrides."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameter(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _FIELD_TYPES:
            raise InvalidParameter(f"{path}:{lineno}: unknown option {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind in ("int", int):
                values[key] = int(val.strip())
            elif kind in ("float", float):
                values[key] = float(val.strip())
            else:
                values[key] = val.strip()
        except ValueError as err:
            raise InvalidParameter(f"{path}:{lineno}: {err}") from err
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, val in parse_config_file(args.config).items():
            setattr(cfg, key, val)
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            setattr(cfg, name, flag)
    cfg.validate()
    return cfg


def write_manifest(cfg: RunConfig, command: str, out_dir, extra: dict | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": dataclasses.asdict(cfg)}
    if extra:
        doc.update(extra)
    (out_dir / f"{command}_manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1))


def cmd_synth(cfg: RunConfig, args) -> int:
    manifest = synth.write_synthetic_dataset(
        cfg.out, seed=cfg.seed, dims=(args.height, args.width),
        n_train=args.n_train, n_test=args.n_test,
    )
    write_manifest(cfg, "synth", cfg.out, {"dataset": manifest})
    log.info("wrote %d frames to %s", args.n_train + args.n_test, cfg.out)
    return 0


def cmd_extract(cfg: RunConfig, args) -> int:
    if not cfg.frames:
        raise InvalidParameter("frames directory not set (frames)")
    if args.split == "train":
        first, last = cfg.train_first, cfg.train_last
    else:
        first, last = cfg.test_first, cfg.test_last
    if args.first is not None:
        first = args.first
    if args.last is not None:
        last = args.last
    seq = load_frame_sequence(cfg.frames, cfg.pattern, first, last,
                              workers=cfg.workers)
    field = features.extract_sequence_features(
        seq, cfg.patch, cfg.stride, q=cfg.q, trunc=cfg.trunc,
        symmetry=cfg.symmetry, workers=cfg.workers,
    )
    out = Path(args.features_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    features.save_feature_field(field, out)
    if args.csv:
        features.feature_field_to_csv(field, args.csv)
    write_manifest(cfg, "extract", out.parent, {
        "features_out": str(out),
        "frame_range": [first, last],
        "grid": {"rows": field.rows, "cols": field.cols, "dim": field.dim},
    })
    log.info("extracted %dx%dx%d features (dim %d) -> %s",
             field.n_frames, field.rows, field.cols, field.dim, out)
    return 0


def _provenance(field: features.FeatureField) -> dict:
    return {"q": field.q, "trunc": field.trunc, "symmetry": field.symmetry,
            "dim": field.dim, "patch": field.patch, "stride": field.stride}


def cmd_train(cfg: RunConfig, args) -> int:
    field = features.load_feature_field(args.features)
    tc = cfg.train_config()
    ac = cfg.adam_config()
    if cfg.model == "dense":
        data = field.features.reshape(-1, field.dim)
        model, losses = neural.train_dense(data, cfg.hidden, tc, ac)
    else:
        seqs = neural.build_training_sequences(
            np.asarray(field.features, dtype=np.float64), cfg.unroll
        )
        model, losses = neural.train_recurrent(seqs, cfg.hidden, tc, ac)
    out = Path(args.checkpoint_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    neural.save_checkpoint(model, out, _provenance(field))
    write_manifest(cfg, "train", out.parent, {
        "checkpoint_out": str(out), "epoch_losses": losses,
    })
    if losses:
        log.info("trained %s model: epoch loss %.3e -> %.3e",
                 cfg.model, losses[0], losses[-1])
    return 0


def cmd_score(cfg: RunConfig, args) -> int:
    model, provenance = neural.load_checkpoint(args.checkpoint)
    field = features.load_feature_field(args.features)
    for key in ("q", "trunc", "symmetry"):
        have = _provenance(field)[key]
        want = provenance.get(key)
        if want is not None and want != have:
            log.warning("checkpoint was trained with %s=%r, features use %r",
                        key, want, have)
    scores = detector.score_patches(model, field, workers=cfg.workers)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = field.grid
    for t in range(field.n_frames):
        idx = field.first_frame_index + t
        heatmap = detector.aggregate_heatmap(scores[t], grid)
        detector.save_heatmap(heatmap, out_dir / f"heatmap_{idx:04d}.smh", frame_index=idx)
        detector.heatmap_to_png(heatmap, out_dir / f"heatmap_{idx:04d}.png")
        if args.figures:
            report.save_heatmap_figure(heatmap, out_dir / f"heatmap_{idx:04d}_fig.png",
                                       title=f"frame {idx}")
    write_manifest(cfg, "score", out_dir, {
        "checkpoint": str(args.checkpoint), "features": str(args.features),
        "n_frames": field.n_frames,
    })
    log.info("scored %d frames -> %s", field.n_frames, out_dir)
    return 0


def _heatmap_files(directory):
    files = sorted(Path(directory).glob("heatmap_*.smh"))
    if not files:
        raise InvalidParameter(f"no heatmap_*.smh files in {directory}")
    return files


def cmd_evaluate(cfg: RunConfig, args) -> int:
    if not cfg.masks:
        raise InvalidParameter("ground-truth directory not set (masks)")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = np.zeros(4, dtype=np.int64)  # tp, fp, fn, tn
    for path in _heatmap_files(args.heatmaps):
        heatmap, idx = detector.load_heatmap(path)
        gt = load_mask(Path(cfg.masks) / (cfg.mask_pattern % idx),
                       expected_shape=heatmap.values.shape)
        det = detector.threshold_map(heatmap, cfg.tau)
        detector.save_detection_mask(det, out_dir / f"detmask_{idx:04d}.pgm")
        pred = det.mask.astype(bool)[heatmap.coverage]
        truth = gt.labels.astype(bool)[heatmap.coverage]
        counts += (
            np.sum(pred & truth), np.sum(pred & ~truth),
            np.sum(~pred & truth), np.sum(~pred & ~truth),
        )
    tp, fp, fn, tn = (int(v) for v in counts)
    metrics = {
        "tau": cfg.tau, "tp": tp, "fp": fp, "fn": fn, "tn": tn,
        "tpr": tp / (tp + fn) if tp + fn else None,
        "fpr": fp / (fp + tn) if fp + tn else None,
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=1))
    write_manifest(cfg, "evaluate", out_dir, {"heatmaps": str(args.heatmaps)})
    log.info("tau %.4g: TPR %s FPR %s", cfg.tau, metrics["tpr"], metrics["fpr"])
    return 0


def _load_video_scores(heat_dir, mask_dir, mask_pattern):
    pos_parts, neg_parts = [], []
    for path in _heatmap_files(heat_dir):
        heatmap, idx = detector.load_heatmap(path)
        gt = load_mask(Path(mask_dir) / (mask_pattern % idx),
                       expected_shape=heatmap.values.shape)
        pos, neg = evaluation.collect_scores(heatmap, gt)
        pos_parts.append(pos)
        neg_parts.append(neg)
    return np.concatenate(pos_parts), np.concatenate(neg_parts)


def cmd_roc(cfg: RunConfig, args) -> int:
    videos = []
    specs = args.video or []
    if not specs:
        if not (args.heatmaps and cfg.masks):
            raise InvalidParameter("provide --video HEATDIR:MASKDIR or --heatmaps with --masks")
        specs = [f"{args.heatmaps}:{cfg.masks}"]
    for spec in specs:
        heat_dir, _, mask_dir = spec.partition(":")
        if not mask_dir:
            raise InvalidParameter(f"--video expects HEATDIR:MASKDIR, got {spec!r}")
        videos.append(_load_video_scores(heat_dir, mask_dir, cfg.mask_pattern))
    curve = evaluation.roc_from_scores(videos, n_thresholds=cfg.n_thresholds)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out_dir / "roc.csv")
    curve.write_summary(out_dir / "roc_summary.json")
    report.save_roc_plot(curve, out_dir / "roc.svg")
    write_manifest(cfg, "roc", out_dir, {"videos": specs, "auc": curve.auc})
    log.info("ROC over %d video(s): AUC %.4f", len(videos), curve.auc)
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    results = []
    worst = 0.0
    for seed in range(args.seeds):
        for kind in ("dense", "recurrent"):
            err = neural.gradcheck(kind, input_dim=args.input_dim,
                                   hidden_dim=args.hidden_dim, seed=seed,
                                   eps=args.eps, seq_len=args.seq_len)
            results.append({"model": kind, "seed": seed, "max_rel_error": err})
            worst = max(worst, err)
            print(f"gradcheck {kind:9s} seed {seed}: max rel error {err:.3e}")
    ok = bool(worst < args.tolerance)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "gradcheck_report.json").write_text(json.dumps({
        "results": results, "max_rel_error": worst,
        "tolerance": args.tolerance, "passed": ok,
    }, sort_keys=True, indent=1))
    write_manifest(cfg, "gradcheck", out_dir)
    print(f"overall max rel error {worst:.3e} ({'PASS' if ok else 'FAIL'})")
    return 0 if ok else 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--workers", type=int)


def _add_geometry(sub: argparse.ArgumentParser):
    sub.add_argument("--patch", type=int)
    sub.add_argument("--stride", type=int)
    sub.add_argument("--q", type=float)
    sub.add_argument("--trunc", type=int)
    sub.add_argument("--symmetry", choices=features.SYMMETRY_OPTIONS)


def build_parser() -> _Parser:
    parser = _Parser(prog="splicemap",
                     description="Video splicing localization by autoencoder anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("synth", help="generate a synthetic train/test dataset")
    _add_common(p)
    p.add_argument("--height", type=int, default=synth.DESK_DIMS[0])
    p.add_argument("--width", type=int, default=synth.DESK_DIMS[1])
    p.add_argument("--n-train", type=int, default=synth.DESK_TRAIN_FRAMES)
    p.add_argument("--n-test", type=int, default=synth.DESK_TEST_FRAMES)
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser("extract", help="extract patch features from frames")
    _add_common(p)
    _add_geometry(p)
    p.add_argument("--frames", required=False)
    p.add_argument("--pattern")
    p.add_argument("--split", choices=("train", "test"), default="train",
                   help="which configured frame range to extract")
    p.add_argument("--first", type=int, help="override the range start")
    p.add_argument("--last", type=int, help="override the range end")
    p.add_argument("--train-first", dest="train_first", type=int)
    p.add_argument("--train-last", dest="train_last", type=int)
    p.add_argument("--test-first", dest="test_first", type=int)
    p.add_argument("--test-last", dest="test_last", type=int)
    p.add_argument("--features-out", required=True)
    p.add_argument("--csv", help="optional CSV debug export")
    p.set_defaults(func=cmd_extract)

    p = commands.add_parser("train", help="train an autoencoder on pristine features")
    _add_common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--model", choices=("dense", "recurrent"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--unroll", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps", type=float)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("score", help="score features and write heat maps")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--figures", action="store_true",
                   help="also render matplotlib heat-map figures")
    p.set_defaults(func=cmd_score)

    p = commands.add_parser("evaluate", help="threshold heat maps and report rates")
    _add_common(p)
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--masks")
    p.add_argument("--mask-pattern", dest="mask_pattern")
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser("roc", help="sweep thresholds into a ROC curve")
    _add_common(p)
    p.add_argument("--video", action="append",
                   help="HEATDIR:MASKDIR, repeat for multiple videos")
    p.add_argument("--heatmaps")
    p.add_argument("--masks")
    p.add_argument("--mask-pattern", dest="mask_pattern")
    p.add_argument("--n-thresholds", dest="n_thresholds", type=int)
    p.set_defaults(func=cmd_roc)

    p = commands.add_parser("gradcheck", help="verify analytic gradients")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--input-dim", type=int, default=10)
    p.add_argument("--hidden-dim", type=int, default=4)
    p.add_argument("--seq-len", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except InvalidParameter as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SplicemapError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
