"""Command-line entry point: synth, train, diarize, score, export-embeddings.

Settings resolve as dataclass defaults < ``--config`` file < flags. Every
command that writes an output directory drops the resolved configuration
there as ``config.txt``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .clustergan import ClusterGanConfig, ClusterGanModel, ConfigError, TrainingDiverged, encode, train
from .numeric import DimensionError, DivergenceError
from .pipeline import (
    AlignmentError,
    DiarizeConfig,
    EmbeddingSet,
    FormatError,
    diarize,
    generate_synthetic_corpus,
    read_embeddings,
    read_sad,
    read_segments,
    speaker_centroids,
    timeline_from_subsegments,
    write_embeddings,
    write_sad,
    write_segments,
)
from .scoring import RttmParseError, UndefinedDerError, format_rttm, read_rttm, score_sessions, write_rttm

log = logging.getLogger("clusterdiar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


@dataclass
class RunConfig:
    # ClusterGAN
    d_n: int = 30
    embedding_dim: int = 512
    hidden: int = 512
    sigma: float = 0.1
    lambda_gp: float = 10.0
    batch_size: int = 64
    n_critic: int = 5
    iterations: int = 30000
    a: float = 1.0
    b: float = 2.0
    c: float = 10.0
    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epsilon: float = 1e-8
    seed: int = 0
    # clustering / diarization
    num_speakers: int = 0  # 0 = estimate
    max_speakers: int = 10
    p_binarize: float = 0.2
    restarts: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    fuse: bool = False
    collar: float = 0.25
    # synthetic corpus
    speakers: int = 4
    segments_per_speaker: int = 200
    separation: float = 8.0
    noise: float = 1.0
    sessions: int = 1

    def gan_config(self, d_c: int) -> ClusterGanConfig:
        names = {f.name for f in fields(ClusterGanConfig)}
        return ClusterGanConfig(d_c=d_c, **{k: v for k, v in asdict(self).items() if k in names})

    def diarize_config(self) -> DiarizeConfig:
        return DiarizeConfig(
            fuse=self.fuse,
            max_speakers=self.max_speakers,
            p_binarize=self.p_binarize,
            restarts=self.restarts,
            max_iter=self.max_iter,
            tol=self.tol,
            seed=self.seed,
        )

    def dump(self) -> str:
        lines = [f"# clusterdiar {__version__}"]
        lines += [f"{k} = {v}" for k, v in asdict(self).items()]
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if kind in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: not a boolean: {raw!r}")
    return (int if kind in ("int", int) else float)(raw)


def load_config_file(path) -> dict:
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


class JsonLogFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name, "msg": record.getMessage()})


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump())
    return out


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def read_labels(path) -> list[str]:
    return [ln.strip() for ln in _require(path).read_text().splitlines() if ln.strip()]


# --------------------------------------------------------------- commands


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    centroids = speaker_centroids(cfg.speakers, cfg.embedding_dim, cfg.separation, rng)
    train_c = generate_synthetic_corpus(
        cfg.speakers, cfg.segments_per_speaker, cfg.embedding_dim, cfg.separation,
        cfg.noise, seed=cfg.seed + 1, session_id="train", centroids=centroids,
    )
    write_embeddings(out / "train.emb", train_c.embeddings)
    write_segments(out / "train.segments", train_c.timeline)
    (out / "train.labels").write_text("".join(train_c.speakers[i] + "\n" for i in train_c.labels))
    write_rttm(out / "train.rttm", train_c.reference)

    sess_dir = out / "sessions"
    sess_dir.mkdir(exist_ok=True)
    sad, refs = {}, []
    for j in range(cfg.sessions):
        sid = f"session{j:02d}"
        corp = generate_synthetic_corpus(
            cfg.speakers, cfg.segments_per_speaker, cfg.embedding_dim, cfg.separation,
            cfg.noise, seed=cfg.seed + 1000 + j, session_id=sid, centroids=centroids,
        )
        write_embeddings(sess_dir / f"{sid}.emb", corp.embeddings)
        write_segments(sess_dir / f"{sid}.segments", corp.timeline)
        sad[sid] = corp.timeline.segments
        refs.extend(corp.reference)
    write_sad(out / "sad.txt", sad)
    write_rttm(out / "ref.rttm", refs)
    log.info("wrote synthetic corpus to %s", out)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    emb = read_embeddings(_require(args.embeddings))
    names = read_labels(args.labels)
    if len(names) != len(emb):
        raise AlignmentError(f"{len(names)} labels for {len(emb)} embeddings")
    table = sorted(set(names))
    index = {s: i for i, s in enumerate(table)}
    labels = np.array([index[s] for s in names])
    cfg.embedding_dim = emb.dim
    out = _out_dir(args, cfg)
    gan_cfg = cfg.gan_config(len(table))
    with open(out / "train_log.jsonl", "w") as fh:
        def on_iteration(rec):
            fh.write(json.dumps(rec) + "\n")

        try:
            model, _ = train(gan_cfg, emb.matrix, labels, table, on_iteration)
        except TrainingDiverged as exc:
            exc.model.save(out / "model.ckpt")
            log.error("%s; last good state saved", exc)
            return EXIT_DIVERGED
    model.save(out / "model.ckpt")
    log.info("trained %d iterations; checkpoint %s", model.iteration, out / "model.ckpt")
    return EXIT_OK


def _load_sessions(args) -> list[tuple[EmbeddingSet, list]]:
    sad = read_sad(_require(args.sad)) if args.sad else {}
    sessions = []
    for path in args.embeddings:
        emb = read_embeddings(_require(path))
        seg_path = Path(path).with_suffix(".segments")
        windows = read_segments(_require(seg_path))
        timeline = timeline_from_subsegments(emb.session_id, windows, sad.get(emb.session_id))
        sessions.append((emb, timeline))
    return sessions


def cmd_diarize(args, cfg: RunConfig) -> int:
    model = ClusterGanModel.load(_require(args.checkpoint)) if args.checkpoint else None
    out = _out_dir(args, cfg)
    dcfg = cfg.diarize_config()
    k = cfg.num_speakers or None
    all_records = []
    for emb, timeline in _load_sessions(args):
        labeling = diarize(model, timeline, emb, k, dcfg)
        records = labeling.to_rttm()
        write_rttm(out / f"{emb.session_id}.rttm", records)
        sidecar = {
            "session": emb.session_id,
            "num_speakers": labeling.num_speakers,
            "estimated": labeling.estimated,
            "eigengap": labeling.eigengap,
        }
        (out / f"{emb.session_id}.json").write_text(json.dumps(sidecar, indent=1) + "\n")
        all_records.extend(records)
    write_rttm(out / "hyp.rttm", all_records)
    sys.stdout.write(format_rttm(all_records))
    return EXIT_OK


def cmd_score(args, cfg: RunConfig) -> int:
    ref = read_rttm(_require(args.ref))
    hyp = read_rttm(_require(args.hyp))
    total, per = score_sessions(ref, hyp, cfg.collar)
    lines = [f"{'session':<16} {'DER%':>7} {'conf':>9} {'miss':>9} {'fa':>9} {'scored':>9}"]
    for sid, r in [*per.items(), ("ALL", total)]:
        lines.append(
            f"{sid:<16} {r.der:7.2f} {r.confusion_time:9.3f} {r.missed_time:9.3f} "
            f"{r.false_alarm_time:9.3f} {r.scored_time:9.3f}"
        )
    report = {"collar": cfg.collar, "total": total.as_dict(),
              "sessions": {sid: r.as_dict() for sid, r in per.items()}}
    if args.out_dir:
        out = _out_dir(args, cfg)
        (out / "der.json").write_text(json.dumps(report, indent=1) + "\n")
    sys.stdout.write("\n".join(lines) + "\n")
    if not args.out_dir:
        sys.stdout.write(json.dumps(report) + "\n")
    return EXIT_OK


def cmd_export(args, cfg: RunConfig) -> int:
    model = ClusterGanModel.load(_require(args.checkpoint))
    out = _out_dir(args, cfg)
    for path in args.embeddings:
        emb = read_embeddings(_require(path))
        latent = EmbeddingSet(emb.session_id, encode(model, emb.matrix))
        write_embeddings(out / f"{emb.session_id}.latent", latent)
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    gan = argparse.ArgumentParser(add_help=False)
    gan.add_argument("--iterations", type=int)
    gan.add_argument("--d-n", dest="d_n", type=int)
    gan.add_argument("--sigma", type=float)
    gan.add_argument("--lambda-gp", dest="lambda_gp", type=float)
    gan.add_argument("--a", type=float)
    gan.add_argument("--b", type=float)
    gan.add_argument("--c", type=float)
    gan.add_argument("--batch-size", dest="batch_size", type=int)
    gan.add_argument("--n-critic", dest="n_critic", type=int)
    gan.add_argument("--hidden", type=int)
    gan.add_argument("--alpha", type=float)

    clus = argparse.ArgumentParser(add_help=False)
    clus.add_argument("--num-speakers", dest="num_speakers", type=int)
    clus.add_argument("--max-speakers", dest="max_speakers", type=int)
    clus.add_argument("--p-binarize", dest="p_binarize", type=float)
    clus.add_argument("--fuse", action="store_const", const=True, default=None)

    parser = argparse.ArgumentParser(prog="clusterdiar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--speakers", type=int)
    p.add_argument("--segments-per-speaker", dest="segments_per_speaker", type=int)
    p.add_argument("--dim", dest="embedding_dim", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--sessions", type=int)
    p.set_defaults(func=cmd_synth, needs_out=True)

    p = sub.add_parser("train", parents=[common, gan], help="train ClusterGAN")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_train, needs_out=True)

    p = sub.add_parser("diarize", parents=[common, clus], help="diarize sessions")
    p.add_argument("--checkpoint", help="omit to cluster raw embeddings")
    p.add_argument("--embeddings", nargs="+", required=True,
                   help="session embedding files; windows read from <name>.segments")
    p.add_argument("--sad", help="'session start end' speech segments")
    p.set_defaults(func=cmd_diarize, needs_out=True)

    p = sub.add_parser("score", parents=[common], help="DER of hypothesis vs reference RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float)
    p.set_defaults(func=cmd_score, needs_out=False)

    p = sub.add_parser("export-embeddings", parents=[common], help="write encoder latents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", nargs="+", required=True)
    p.set_defaults(func=cmd_export, needs_out=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    if args.needs_out and not args.out_dir:
        parser.error(f"{args.command} requires --out-dir")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (DivergenceError, TrainingDiverged) as exc:
        log.error("numerical divergence: %s", exc)
        return EXIT_DIVERGED
    except (
        FileNotFoundError, FormatError, RttmParseError, AlignmentError, ConfigError,
        DimensionError, UndefinedDerError, ValueError, KeyError,
    ) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
