"""``sasv`` command line: gen, score, train, det, eval.

Any long option may also be given in a ``key=value`` file passed with
``--config``; options on the command line take precedence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from sasvkit.embedding import (
    EmbeddingError,
    MissingEmbeddingError,
    load_cm_logits,
    load_store,
    save_cm_logits,
    save_store,
)
from sasvkit.fusion import (
    FusionError,
    TrainConfig,
    TrainingDivergedError,
    load_model,
    mlp_train,
    save_model,
)
from sasvkit.metrics import Metric, all_eers, det_csv, det_svg, scored_from_protocol, sweep
from sasvkit.protocol import ProtocolError, parse_protocol
from sasvkit.scoring import BACKENDS, ScoreFileError, format_scores, parse_scores, score_protocol
from sasvkit.synthgen import CohortSpec, generate

GEN_FILES = {
    "protocol": "protocol.txt",
    "spk": "spk.emb",
    "cm": "cm.emb",
    "cm_logits": "cm_logits.cml",
}


class CliError(Exception):
    pass


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def read_config(path: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _read(path, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {what} {path}: {exc.strerror}") from None


def _write(path: Path, data: bytes | str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            data = data.encode("utf-8")
        path.write_bytes(data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}") from None
    return path


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise CliError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def cmd_gen(args) -> int:
    spec_args = {f.name: getattr(args, f.name) for f in fields(CohortSpec)
                 if getattr(args, f.name, None) is not None}
    try:
        spec = CohortSpec(**spec_args)
    except ValueError as exc:
        args.parser.error(str(exc))
    cohort = generate(spec)
    out = Path(args.out)
    paths = [
        _write(out / GEN_FILES["protocol"], cohort.protocol.serialize()),
        _write(out / GEN_FILES["spk"], save_store(cohort.spk)),
        _write(out / GEN_FILES["cm"], save_store(cohort.cm)),
        _write(out / GEN_FILES["cm_logits"], save_cm_logits(cohort.cm_logits)),
    ]
    for p in paths:
        print(p)
    return 0


def _train_config(args) -> TrainConfig:
    kwargs = {}
    for f in fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            kwargs[f.name] = tuple(value) if f.name == "hidden" else value
    return TrainConfig(**kwargs)


def cmd_score(args) -> int:
    _require(args, "protocol", "spk_emb")
    protocol = parse_protocol(_read(args.protocol, "protocol"))
    spk = load_store(_read(args.spk_emb, "speaker embeddings"))
    cm_logits = load_cm_logits(_read(args.cm_logits, "CM logits")) if args.cm_logits else None
    cm = load_store(_read(args.cm_emb, "CM embeddings")) if args.cm_emb else None
    model = None
    if args.backend in ("b1", "b1v2"):
        _require(args, "cm_logits")
    elif args.backend == "b2":
        _require(args, "cm_emb", "model")
        model = load_model(_read(args.model, "model"))
    scores = score_protocol(protocol, args.backend, spk, cm_logits=cm_logits, cm=cm, model=model)
    scored = scored_from_protocol(protocol, scores)
    data = format_scores(scored)
    if args.out:
        print(_write(Path(args.out), data), file=sys.stderr)
    else:
        sys.stdout.write(data.decode("utf-8"))
    print(all_eers(scored).format())
    return 0


def cmd_train(args) -> int:
    _require(args, "protocol", "spk_emb", "cm_emb", "model")
    protocol = parse_protocol(_read(args.protocol, "protocol"))
    spk = load_store(_read(args.spk_emb, "speaker embeddings"))
    cm = load_store(_read(args.cm_emb, "CM embeddings"))
    data = []
    for t in protocol:
        try:
            data.append((spk[t.enroll_id], spk[t.test_id], cm[t.test_id], t.cls))
        except MissingEmbeddingError as exc:
            exc.store = "speaker store" if exc.key not in spk else "CM store"
            raise
    cfg = _train_config(args)
    model, losses = mlp_train(data, cfg)
    model_path = _write(Path(args.model), save_model(model))
    loss_path = Path(args.out) if args.out else model_path.with_name(model_path.name + ".loss.csv")
    lines = ["epoch,loss"] + [f"{i},{loss:.9g}" for i, loss in enumerate(losses, start=1)]
    _write(loss_path, "\n".join(lines) + "\n")
    print(model_path)
    print(loss_path)
    print(f"final loss: {losses[-1]:.6g}")
    return 0


def cmd_det(args) -> int:
    metric = Metric(args.metric)
    out = Path(args.out or ".")
    curves = {}
    for path in args.scores:
        name = Path(path).stem
        if name in curves:
            raise CliError(f"duplicate system name {name!r}")
        try:
            scored = parse_scores(_read(path, "score file"))
        except ProtocolError as exc:
            raise CliError(f"{path}: {exc}") from None
        points = sweep(scored, metric)
        curves[name] = points
        print(_write(out / f"{name}.det.csv", det_csv(points)))
        print(_write(out / f"{name}.det.svg", det_svg({name: points}, title=f"{metric.value} DET")))
    if len(curves) > 1:
        print(_write(out / "det_overlay.svg", det_svg(curves, title=f"{metric.value} DET")))
    return 0


def cmd_eval(args) -> int:
    for path in args.scores:
        try:
            scored = parse_scores(_read(path, "score file"))
        except ProtocolError as exc:
            raise CliError(f"{path}: {exc}") from None
        report = all_eers(scored).format()
        print(f"{path}\t{report}" if len(args.scores) > 1 else report)
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file supplying option defaults")
    p.add_argument("--protocol")
    p.add_argument("--spk-emb")
    p.add_argument("--cm-emb")
    p.add_argument("--cm-logits")
    p.add_argument("--backend", choices=BACKENDS, default="b1v2")
    p.add_argument("--model")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sasv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic cohort")
    _common(p)
    p.set_defaults(func=cmd_gen, out="synthetic")
    p.add_argument("--n-speakers", type=positive_int)
    p.add_argument("--utts-per-speaker", type=positive_int)
    p.add_argument("--enroll-per-speaker", type=positive_int)
    p.add_argument("--d-spk", type=positive_int)
    p.add_argument("--d-cm", type=positive_int)
    for name in ("sigma-between", "sigma-within", "artifact-strength",
                 "spoof-ratio", "cm-margin", "cm-noise"):
        p.add_argument("--" + name, type=float)

    p = sub.add_parser("score", help="score a protocol with a fusion back-end")
    _common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train the B2 embedding-fusion MLP")
    _common(p)
    p.set_defaults(func=cmd_train)
    p.add_argument("--learning-rate", "--lr", type=float)
    p.add_argument("--batch-size", type=positive_int)
    p.add_argument("--epochs", type=positive_int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden", type=positive_int, nargs="+")
    p.add_argument("--slope", type=float)

    p = sub.add_parser("det", help="DET curves (CSV + SVG) from score files")
    _common(p)
    p.set_defaults(func=cmd_det)
    p.add_argument("scores", nargs="+")
    p.add_argument("--metric", choices=[m.value for m in Metric], default="SASV")

    p = sub.add_parser("eval", help="print SV/SPF/SASV EERs of score files")
    _common(p)
    p.set_defaults(func=cmd_eval)
    p.add_argument("scores", nargs="+")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = read_config(args.config)
        except (OSError, CliError) as exc:
            print(f"sasv: error: {exc}", file=sys.stderr)
            return 1
        sub = parser._subparsers._group_actions[0].choices[args.command]
        aliases = {opt.lstrip("-").replace("-", "_"): a.dest
                   for a in sub._actions for opt in a.option_strings if opt.startswith("--")}
        unknown = sorted(set(config) - set(aliases))
        if unknown:
            sub.error("unknown config key(s): " + ", ".join(unknown))
        config = {aliases[k]: v for k, v in config.items()}
        if "hidden" in config:
            config["hidden"] = [positive_int(v) for v in config["hidden"].replace(",", " ").split()]
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    args.parser = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args)
    except (CliError, ProtocolError, EmbeddingError, FusionError, ScoreFileError,
            TrainingDivergedError, MissingEmbeddingError, ValueError) as exc:
        print(f"sasv: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
