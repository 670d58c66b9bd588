"""``ecgsal`` command line: synth, ingest, train, eval, cam, mask.

All commands share one workspace directory (``--out``)::

    data/{train,test}/     window datasets (see ``ecgsal.dataset``)
    model/<kind>.npz       trained parameters, plus <kind>.json with the model config
    eval/                  metrics and confusion matrix CSVs
    cam/, mask/            per-window overlay CSV and SVG, summaries, loss histories
    manifests/<cmd>.json   run manifest of the last invocation of each command

Exit codes: 0 success, 1 usage or configuration error, 2 data error (including
partial evaluation results), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import load_checkpoint, save_checkpoint
from .autodiff.checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import SPLITS, Split, read_split, write_split
from .models import (
    PAPER_CAMNET,
    PAPER_CLASSIFIER,
    CamNetConfig,
    ClassifierConfig,
    ConfigurationError,
    LstmNetConfig,
    build_model,
    config_dict,
)
from .saliency import (
    Convention,
    MaskConfig,
    cam_for_window,
    most_confident_correct,
    optimize_masks,
    saliency_from_mask,
    top_fraction_mass_inside,
)
from .signal_io import (
    WINDOW_FS,
    RhythmClass,
    SignalIOError,
    balance_classes,
    extract_windows,
    read_record,
    resample_linear,
    select_lead,
)
from .svg import overlay_svg
from .synth import synth_dataset
from .training import TrainConfig, evaluate, predict_proba, train

log = logging.getLogger("ecgsal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def derived_seed(seed: int, purpose: str) -> int:
    """Independent stream per purpose (data split, model init, shuffling)."""
    key = int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([seed, key]).generate_state(1)[0])


class Run:
    """Collects timings and outputs of one command, then writes its manifest."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.timings: dict[str, float] = {}
        self.outputs: list[Path] = []
        self.seeds: dict[str, int] = {"seed": cfg.seed}
        self.notes: dict[str, object] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def add(self, *paths: Path) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def write_manifest(self) -> Path:
        inventory = []
        for p in sorted(set(self.outputs)):
            data = p.read_bytes()
            inventory.append({"path": p.relative_to(self.out).as_posix(), "bytes": len(data),
                              "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "command": self.command,
            "code_version": __version__,
            "config_hash": self.cfg.digest(),
            "config": self.cfg.to_text().splitlines(),
            "seeds": self.seeds,
            "timings": self.timings,
            "outputs": inventory,
            "notes": self.notes,
        }
        path = self.out / "manifests" / f"{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# helpers


def _dataset_dir(cfg: ExperimentConfig, out: Path) -> Path:
    return Path(cfg.dataset_dir) if cfg.dataset_dir else out / "data"


def _model_config(kind: str, scale: str):
    if scale == "paper":
        return {"classifier": PAPER_CLASSIFIER, "camnet": PAPER_CAMNET, "lstmnet": LstmNetConfig()}[kind]
    return {"classifier": ClassifierConfig(), "camnet": CamNetConfig(), "lstmnet": LstmNetConfig()}[kind]


def _load_model(out: Path, kind: str):
    meta_path = out / "model" / f"{kind}.json"
    ckpt = out / "model" / f"{kind}.npz"
    if not meta_path.exists() or not ckpt.exists():
        raise CheckpointError(f"no trained {kind} in {out / 'model'}; run `ecgsal train` with model = {kind}")
    meta = json.loads(meta_path.read_text())
    model = build_model(kind, 0, **meta["config"])
    model.load_state_dict(load_checkpoint(ckpt))
    model.eval()
    return model


def _fmt(v: float) -> str:
    return "undefined" if isinstance(v, float) and math.isnan(v) else f"{v:.6f}"


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _selected_classes(cfg: ExperimentConfig) -> list[RhythmClass]:
    if not cfg.cam_class:
        return list(RhythmClass)
    try:
        return [RhythmClass.parse(cfg.cam_class)]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown class {cfg.cam_class!r}") from None


def _overlay_rows(x: np.ndarray, overlay: np.ndarray):
    return ([t, f"{x[t]:.9g}", f"{overlay[t]:.9g}"] for t in range(len(x)))


def _inside_score(split: Split, wid: str, overlay: np.ndarray) -> str:
    truth = split.truths.get(wid)
    if truth is None or not truth.intervals:
        return ""
    return _fmt(top_fraction_mass_inside(overlay, truth.mask(overlay.size)))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: ExperimentConfig, out: Path, run: Run) -> int:
    root = _dataset_dir(cfg, out)
    counts = {"train": cfg.train_per_class, "test": cfg.test_per_class}
    for split in SPLITS:
        seed = derived_seed(cfg.seed, f"synth-{split}")
        run.seeds[f"synth_{split}"] = seed
        with run.stage(f"synth_{split}"):
            items = synth_dataset(counts[split], seed)
            if not items:
                (root / split).mkdir(parents=True, exist_ok=True)
                continue
            for label in RhythmClass:
                mine = [s for s in items if s.window.label is label]
                run.add(*write_split(root / split, label, [s.raw for s in mine], [s.truth for s in mine]))
    run.notes["windows"] = {split: n * len(RhythmClass) for split, n in counts.items()}
    return EXIT_OK


def _ingest_records(cfg: ExperimentConfig):
    src = Path(cfg.input_dir)
    if not cfg.input_dir or not src.is_dir():
        raise ConfigError("ingest needs input_dir pointing at a directory of records")
    if cfg.source == "physionet-dir":
        names = sorted(p.with_suffix("") for p in src.glob("*.hea"))
    else:
        names = sorted(p.with_suffix("") for p in src.glob("*.csv") if not p.name.endswith((".ann.csv", ".truth.csv")))
    if not names:
        raise SignalIOError(f"no records found in {src}")
    lead: str | int = int(cfg.lead) if cfg.lead.isdigit() else cfg.lead
    for base in names:
        rec = read_record(base, fs=cfg.input_fs)
        yield resample_linear(select_lead(rec, lead), WINDOW_FS)


def cmd_ingest(cfg: ExperimentConfig, out: Path, run: Run) -> int:
    if cfg.source == "synthetic":
        raise ConfigError("ingest reads csv-dir or physionet-dir sources; use `synth` for synthetic data")
    windows, skipped, n_records = [], 0, 0
    with run.stage("read"):
        for rec in _ingest_records(cfg):
            ext = extract_windows(rec)
            windows.extend(ext.windows)
            skipped += ext.skipped
            n_records += 1
    present = sorted({w.label for w in windows})
    seed = derived_seed(cfg.seed, "ingest-split")
    run.seeds["ingest_split"] = seed
    with run.stage("split"):
        tr, te = balance_classes(windows, cfg.train_per_class, seed, classes=present)
    root = _dataset_dir(cfg, out)
    with run.stage("write"):
        for name, part in (("train", tr), ("test", te)):
            (root / name).mkdir(parents=True, exist_ok=True)
            for label in present:
                segs = [w.samples for w in part if w.label is label]
                if segs:
                    run.add(*write_split(root / name, label, segs))
    run.notes.update(records=n_records, windows=len(windows), skipped_annotations=skipped,
                     classes=[c.name for c in present], train=len(tr), test=len(te))
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, run: Run) -> int:
    with run.stage("load"):
        data = read_split(_dataset_dir(cfg, out) / "train")
        X, y = data.arrays()
    if len(X) == 0:
        raise SignalIOError("training split is empty")
    mcfg = _model_config(cfg.model, cfg.scale)
    init_seed = derived_seed(cfg.seed, "model-init")
    shuffle_seed = derived_seed(cfg.seed, "shuffle")
    run.seeds.update(model_init=init_seed, shuffle=shuffle_seed)
    model = build_model(cfg.model, init_seed, **config_dict(mcfg))
    tcfg = TrainConfig(lr=cfg.lr, momentum=cfg.momentum, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=shuffle_seed)
    mdir = out / "model"
    with run.stage("train"):
        result = train(model, X, y, tcfg, checkpoint_dir=mdir / f"{cfg.model}_checkpoints",
                       on_epoch=lambda e, loss: log.info("epoch %d loss %.6f", e + 1, loss))
    run.add(*result.checkpoints)
    run.add(save_checkpoint(mdir / f"{cfg.model}.npz", model.state_dict()))
    meta = mdir / f"{cfg.model}.json"
    meta.write_text(json.dumps({"kind": cfg.model, "scale": cfg.scale, "config": config_dict(mcfg)},
                               indent=2, sort_keys=True) + "\n")
    run.add(meta)
    run.add(_write_csv(mdir / f"{cfg.model}_loss.csv", ["epoch", "loss"],
                       ([e + 1, f"{v:.9g}"] for e, v in enumerate(result.loss_curve))))
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, out: Path, run: Run) -> int:
    with run.stage("load"):
        data = read_split(_dataset_dir(cfg, out) / "test")
        X, y = data.arrays()
        model = _load_model(out, cfg.model)
    if len(X) == 0:
        raise SignalIOError("test split is empty")
    with run.stage("evaluate"):
        m = evaluate(model, X, y)
    edir = out / "eval"
    rows = [[name, _fmt(p), _fmt(r), _fmt(f), n] for name, p, r, f, n in m.rows()]
    rows.append(["accuracy", "", "", _fmt(m.accuracy), int(m.confusion.sum())])
    run.add(_write_csv(edir / f"{cfg.model}_metrics.csv", ["class", "precision", "recall", "f1", "support"], rows))
    names = [c.name for c in RhythmClass][: len(m.confusion)]
    run.add(_write_csv(edir / f"{cfg.model}_confusion.csv", ["true\\pred", *names],
                       ([names[i], *m.confusion[i].tolist()] for i in range(len(names)))))
    undefined = [c.name for c in m.undefined_classes]
    run.notes.update(macro_f1=m.macro_f1, accuracy=m.accuracy, undefined_classes=undefined)
    if undefined:
        log.warning("classes absent from the test set: %s (metrics marked undefined)", ", ".join(undefined))
        return EXIT_DATA
    return EXIT_OK


def _select(cfg: ExperimentConfig, model, data: Split, run: Run):
    X, y = data.arrays()
    probs = predict_proba(model, X)
    chosen = most_confident_correct(probs, y, cfg.top_k, _selected_classes(cfg))
    missing = [c.name for c, idx in chosen.items() if not idx]
    if missing:
        log.warning("no correctly classified test window for: %s", ", ".join(missing))
    run.notes["no_correct_window"] = missing
    picks = [(c, i) for c, idx in chosen.items() for i in idx]
    return X, probs, picks


def cmd_cam(cfg: ExperimentConfig, out: Path, run: Run) -> int:
    with run.stage("load"):
        data = read_split(_dataset_dir(cfg, out) / "test")
        model = _load_model(out, "camnet")
    with run.stage("select"):
        X, probs, picks = _select(cfg, model, data, run)
    cdir = out / "cam"
    summary = []
    with run.stage("cam"):
        for label, i in picks:
            wid = data.ids[i]
            cam = cam_for_window(model, X[i], int(label))
            run.add(_write_csv(cdir / f"{wid}.csv", ["t", "x", "overlay"], _overlay_rows(X[i], cam.overlay)))
            svg = cdir / f"{wid}.svg"
            svg.write_text(overlay_svg(X[i], cam.overlay, f"{wid} CAM ({label.name})"))
            run.add(svg)
            summary.append([wid, label.name, f"{probs[i, label]:.9g}", _inside_score(data, wid, cam.overlay)])
    run.add(_write_csv(cdir / "summary.csv", ["window_id", "class", "confidence", "top_decile_inside"], summary))
    return EXIT_OK


def cmd_mask(cfg: ExperimentConfig, out: Path, run: Run) -> int:
    with run.stage("load"):
        data = read_split(_dataset_dir(cfg, out) / "test")
        model = _load_model(out, cfg.mask_model)
    with run.stage("select"):
        X, probs, picks = _select(cfg, model, data, run)
    mcfg = MaskConfig(cfg.lambda1, cfg.lambda2, cfg.mask_lr, cfg.mask_iterations, cfg.mask_k, Convention(cfg.convention))
    mdir = out / "mask"
    summary = []
    with run.stage("optimize"):
        idx = [i for _, i in picks]
        states = optimize_masks(model, X[idx], [int(c) for c, _ in picks], mcfg) if picks else []
    for (label, i), st in zip(picks, states):
        wid = data.ids[i]
        overlay = saliency_from_mask(st, mcfg.convention)
        run.add(_write_csv(mdir / f"{wid}.csv", ["t", "x", "overlay"], _overlay_rows(X[i], overlay)))
        run.add(_write_csv(mdir / f"{wid}_loss.csv", ["iteration", "total", "sparsity", "smoothness", "target_prob"],
                           ([it, *(f"{v:.9g}" for v in row)] for it, row in enumerate(st.history))))
        svg = mdir / f"{wid}.svg"
        svg.write_text(overlay_svg(X[i], overlay, f"{wid} mask ({label.name}, {mcfg.convention.value})"))
        run.add(svg)
        summary.append([wid, label.name, f"{st.history[0, 3]:.9g}", f"{st.final[3]:.9g}",
                        f"{st.history[0, 0]:.9g}", f"{st.final[0]:.9g}", _inside_score(data, wid, overlay)])
    run.add(_write_csv(mdir / "summary.csv", ["window_id", "class", "initial_prob", "final_prob", "initial_loss",
                                              "final_loss", "top_decile_inside"], summary))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval,
            "cam": cmd_cam, "mask": cmd_mask}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecgsal", description="ECG rhythm classification and saliency maps")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR", required=True)
        p.add_argument("--class", dest="cam_class", metavar="NAME")
        p.add_argument("--top-k", dest="top_k", type=int, metavar="N")
        p.add_argument("--convention", choices=[c.value for c in Convention])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config, overrides={"seed": args.seed, "cam_class": args.cam_class,
                                                   "top_k": args.top_k, "convention": args.convention})
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out)
        code = COMMANDS[args.command](cfg, out, run)
        run.write_manifest()
        return code
    except (ConfigError, ConfigurationError) as exc:
        print(f"ecgsal: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"ecgsal: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SignalIOError, CheckpointError, OSError) as exc:
        print(f"ecgsal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
