"""glyphsmith command line.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .car import CarModel, iterative_compose
from .decomp import (
    TableParseError,
    component_frequency,
    coverage_curve,
    expand_nested,
    layout_stats,
    leaves,
    parse_layout,
    read_table,
    validate,
)
from .diffops.losses import LossWeights
from .metrics import evaluate
from .raster import render, write_pgm
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    generate_synthetic,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    split,
    train,
)
from .vector import content_to_editor_params, glyph_svg, load_glyph_source

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_PATH_KEYS = {"table", "glyphs", "checkpoint", "data", "init_checkpoint"}
_OTHER_KEYS = {"out", "split_ratio"}


def load_config(path: Optional[str]) -> Dict:
    """Flat TOML config; unknown keys and missing input paths are errors.

    Per-layout compose models use keys ``checkpoint_<LAYOUT>``, for example
    ``checkpoint_NL01``.
    """
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    base = Path(path).resolve().parent
    out = {}
    for key, value in cfg.items():
        if isinstance(value, dict):
            raise UsageError(f"{path}: config is flat, found table [{key}]")
        layout_ckpt = key.startswith("checkpoint_")
        if key not in _TRAIN_KEYS | _PATH_KEYS | _OTHER_KEYS and not layout_ckpt:
            raise UsageError(f"{path}: unknown key {key!r}")
        if layout_ckpt:
            try:
                parse_layout(key[len("checkpoint_"):])
            except ValueError as exc:
                raise UsageError(f"{path}: {exc}") from None
        if key in _PATH_KEYS or layout_ckpt or key == "out":
            p = Path(value)
            value = str(p if p.is_absolute() else base / p)
            if key != "out" and not Path(value).exists():
                raise UsageError(f"{path}: {key} path {value} does not exist")
        out[key] = value
    return out


def train_config_from(cfg: Dict, args) -> TrainConfig:
    kw = {k: v for k, v in cfg.items() if k in _TRAIN_KEYS}
    if args.seed is not None:
        kw["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        kw["epochs"] = args.epochs
    if getattr(args, "layout", None):
        kw["layout"] = args.layout
    if "weights" in kw:
        w = kw["weights"]
        kw["weights"] = LossWeights(**w) if isinstance(w, dict) else LossWeights(*w)
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from None


def _pick(args, cfg, name, required=True):
    value = getattr(args, name, None) or cfg.get(name)
    if required and not value:
        raise UsageError(f"--{name} (or `{name}` in the config) is required")
    return value


def _out_dir(args, cfg) -> Path:
    out = Path(_pick(args, cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_table(path):
    try:
        return read_table(path)
    except FileNotFoundError:
        raise DataError(f"table {path} not found") from None
    except TableParseError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_glyphs(path):
    try:
        return load_glyph_source(path)
    except FileNotFoundError:
        raise DataError(f"glyph source {path} not found") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_model(path) -> CarModel:
    try:
        return load_checkpoint(path).model
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None
    except CheckpointError as exc:
        raise DataError(str(exc)) from None


def parse_chars(spec: Optional[str]) -> Optional[List[str]]:
    """Characters from a file or an inline list.

    Accepts literal characters and ``U+XXXX`` tokens separated by commas
    or whitespace; a bare run like ``媒妹`` yields each character.
    """
    if not spec:
        return None
    p = Path(spec)
    text = p.read_text(encoding="utf-8") if p.is_file() else spec
    chars: List[str] = []
    for token in text.replace(",", " ").split():
        if token.upper().startswith("U+"):
            try:
                chars.append(chr(int(token[2:], 16)))
            except ValueError:
                raise UsageError(f"bad codepoint {token!r}") from None
        else:
            chars.extend(token)
    return list(dict.fromkeys(chars))


# ---------------------------------------------------------------------------
# commands


def cmd_stats(args, cfg) -> int:
    entries = _load_table(_pick(args, cfg, "table"))
    report = validate(entries)
    stats = layout_stats(entries)
    freq = component_frequency(entries)
    flat = coverage_curve(entries)
    rec = coverage_curve(entries, recursive=True)
    print(f"entries       {len(entries)}")
    print(f"unannotated   {stats.unannotated}")
    for kind, n in sorted(stats.layouts.items()):
        print(f"layout {kind:<6} {n}")
    for var, n in sorted(stats.variations.items()):
        print(f"NL03-{var:<7} {n}")
    for kind, n in sorted(stats.nested.items()):
        print(f"nested {kind:<6} {n}")
    print("top components " + " ".join(f"{c}:{n}" for c, n in freq[:10]))
    print(f"coverage      {flat[-1][1]} chars from {flat[-1][0]} components ({rec[-1][1]} recursive)")
    print(f"validation    {'ok' if report.ok else f'{len(report.violations)} violations'}")
    if not report.ok:
        sys.stdout.write(report.to_text())
    out = getattr(args, "out", None) or cfg.get("out")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        doc = {
            "entries": len(entries),
            "unannotated": stats.unannotated,
            "layouts": dict(sorted(stats.layouts.items())),
            "variations": {str(k): v for k, v in sorted(stats.variations.items())},
            "nested": dict(sorted(stats.nested.items())),
            "component_frequency": freq,
            "coverage": flat,
            "coverage_recursive": rec,
        }
        Path(out, "stats.json").write_text(json.dumps(doc, ensure_ascii=False, indent=1), encoding="utf-8")
        Path(out, "validation.json").write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_render(args, cfg) -> int:
    glyphs = _load_glyphs(_pick(args, cfg, "glyphs"))
    chars = parse_chars(args.chars) or sorted(glyphs)
    out = _out_dir(args, cfg)
    missing = [c for c in chars if c not in glyphs]
    for c in chars:
        if c in glyphs:
            write_pgm(out / f"U+{ord(c):04X}.pgm", render(glyphs[c], args.size, center=True).image)
    print(f"rendered {len(chars) - len(missing)} glyphs at {args.size}px to {out}")
    if missing:
        print("missing: " + " ".join(missing))
    return EXIT_OK


def _dataset(cfg, args):
    path = _pick(args, cfg, "data")
    try:
        samples = load_dataset(path)
    except FileNotFoundError:
        raise DataError(f"dataset {path} not found") from None
    except (ValueError, KeyError, OSError) as exc:
        raise DataError(f"{path}: {exc}") from None
    ratio = float(cfg.get("split_ratio", 0.8))
    try:
        tr, va = split(list(range(len(samples))), ratio, cfg.get("seed", 30) if args.seed is None else args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return samples, tr, va


def cmd_train(args, cfg) -> int:
    config = train_config_from(cfg, args)
    samples, tr, va = _dataset(cfg, args)
    out = _out_dir(args, cfg)
    (out / "split.json").write_text(json.dumps({"train": tr, "val": va}), encoding="utf-8")

    def progress(entry):
        val = "-" if entry.val_mae is None else f"{entry.val_mae:.5f}"
        print(f"epoch {entry.epoch:3d} lr={entry.lr:.2e} train_loss={entry.train_loss:.5f} val_mae={val}", flush=True)

    try:
        result = train(
            config, [samples[i] for i in tr], [samples[i] for i in va],
            log_path=out / "train_log.jsonl", dump_dir=out, progress=progress,
        )
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        raise DataError(str(exc)) from None
    save_checkpoint(result.checkpoint, out / "model.ckpt")
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    given = _pick(args, cfg, "checkpoint")
    if isinstance(given, list):
        if len(given) != 1:
            raise UsageError("eval takes a single --checkpoint")
        given = given[0].split("=", 1)[-1]
    model = _load_model(given)
    samples, _, va = _dataset(cfg, args)
    subset = samples if args.all else [samples[i] for i in va]
    try:
        report = evaluate(model, subset)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    print(report.to_text())
    out = getattr(args, "out", None) or cfg.get("out")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        Path(out, "eval.json").write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def _model_registry(args, cfg) -> Dict[str, CarModel]:
    """Layout -> model; a bare checkpoint serves every layout it is not overridden for."""
    registry: Dict[str, CarModel] = {}
    for key, value in cfg.items():
        if key.startswith("checkpoint_"):
            registry[key[len("checkpoint_"):]] = _load_model(value)
    for spec in args.checkpoint or []:
        if "=" in spec:
            layout, path = spec.split("=", 1)
            parse_layout(layout)
            registry[layout] = _load_model(path)
        else:
            registry["*"] = _load_model(spec)
    if "*" not in registry and cfg.get("checkpoint"):
        registry["*"] = _load_model(cfg["checkpoint"])
    if not registry:
        raise UsageError("compose needs --checkpoint (PATH or LAYOUT=PATH) or checkpoint_<LAYOUT> keys")
    return registry


def _registry_lookup(registry, layout):
    for key in (str(layout), layout.kind, "*"):
        if key in registry:
            return registry[key]
    return None


def _compose_chars(args, cfg, glyphs, chars, out: Path) -> int:
    entries = _load_table(_pick(args, cfg, "table"))
    registry = _model_registry(args, cfg)
    by_char = {}
    for e in entries:
        by_char.setdefault(e.hanzi, e)
    manifest, skipped = [], []
    for ch in chars:
        entry = by_char.get(ch)
        if entry is None:
            skipped.append({"char": ch, "reason": "not in table"})
            continue
        if not entry.layout.annotated or entry.layout.kind == "NL00":
            skipped.append({"char": ch, "reason": f"layout {entry.layout} is not composable"})
            continue
        plan = expand_nested(entry)
        absent = sorted({c for c in leaves(entry) if c not in glyphs})
        if absent:
            skipped.append({"char": ch, "reason": "missing components", "components": absent})
            continue
        models = {}
        for step in plan.steps:
            m = _registry_lookup(registry, step.layout)
            if m is None:
                break
            models[str(step.layout)] = m
        else:
            comp = iterative_compose(models, plan, glyphs)
            name = f"U+{ord(ch):04X}"
            (out / f"{name}.svg").write_text(glyph_svg(comp.glyph, ch), encoding="utf-8")
            parts = []
            for leaf, affine in zip(comp.leaves, comp.affines):
                bbox = glyphs[leaf].bbox()
                origin = (bbox[0], bbox[1]) if bbox else (0.0, 0.0)
                parts.append(
                    {
                        "component": leaf,
                        "origin": list(origin),
                        "transform": content_to_editor_params(affine, origin),
                        "affine": affine[:2].tolist(),
                    }
                )
            manifest.append({"char": ch, "codepoint": name, "layout": str(entry.layout), "file": f"{name}.svg", "components": parts})
            continue
        skipped.append({"char": ch, "reason": "no model for a step layout"})
    (out / "manifest.json").write_text(json.dumps(manifest, ensure_ascii=False, indent=1), encoding="utf-8")
    (out / "skipped.json").write_text(json.dumps(skipped, ensure_ascii=False, indent=1), encoding="utf-8")
    print(f"composed {len(manifest)} characters into {out}")
    for s in skipped:
        extra = " " + "".join(s["components"]) if "components" in s else ""
        print(f"skipped {s['char']}: {s['reason']}{extra}")
    return EXIT_OK


def cmd_compose(args, cfg) -> int:
    glyphs = _load_glyphs(_pick(args, cfg, "glyphs"))
    chars = parse_chars(args.chars)
    if not chars:
        raise UsageError("compose needs --chars")
    return _compose_chars(args, cfg, glyphs, chars, _out_dir(args, cfg))


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_extend(args, cfg) -> int:
    """Compose characters a glyph set lacks, from its own components, without training."""
    glyphs = _load_glyphs(_pick(args, cfg, "glyphs"))
    chars = parse_chars(args.chars)
    if chars is None:
        entries = _load_table(_pick(args, cfg, "table"))
        chars = [e.hanzi for e in entries if e.layout.annotated and e.layout.kind != "NL00" and e.hanzi not in glyphs]
    paths = [v for k, v in cfg.items() if k.startswith("checkpoint_") or k == "checkpoint"]
    paths += [s.split("=", 1)[-1] for s in args.checkpoint or []]
    before = {p: _digest(p) for p in paths if Path(p).exists()}
    code = _compose_chars(args, cfg, glyphs, chars, _out_dir(args, cfg))
    if any(_digest(p) != d for p, d in before.items()):
        print("error: a checkpoint changed during extension", file=sys.stderr)
        return EXIT_DATA
    return code


def cmd_gradcheck(args, cfg) -> int:
    from .gradsuite import run_suite

    result = run_suite(seeds=args.seeds)
    for line in result.lines():
        print(line)
    print(f"{'all checks passed' if result.passed else 'gradient check FAILED'} in {result.seconds:.1f}s")
    return EXIT_OK if result.passed else EXIT_NUMERIC


def cmd_synth(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 30)
    try:
        samples = generate_synthetic(seed, args.n, args.layout or cfg.get("layout", "NL01"), size=args.size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not samples:
        raise UsageError("n must be positive")
    out = _out_dir(args, cfg)
    save_dataset(samples, out / "dataset.npz")
    print(f"wrote {len(samples)} {samples[0].layout} samples at {args.size}px to {out / 'dataset.npz'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


COMMANDS = {
    "stats": cmd_stats,
    "render": cmd_render,
    "train": cmd_train,
    "eval": cmd_eval,
    "compose": cmd_compose,
    "extend": cmd_extend,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML run config")
    common.add_argument("--table", help="decomposition table (TSV)")
    common.add_argument("--glyphs", help="glyph source: JSON set, SVG file, or directory of SVGs")
    common.add_argument("--checkpoint", action="append", help="model checkpoint, PATH or LAYOUT=PATH (repeatable)")
    common.add_argument("--chars", help="characters: a file, or an inline list (chars or U+XXXX)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (default 30)")

    parser = _Parser(prog="glyphsmith", description="Compose vector glyphs from components with a learned affine regressor.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("stats", parents=[common], help="layout statistics, component frequency, coverage")
    p = sub.add_parser("render", parents=[common], help="render glyphs to PGM")
    p.add_argument("--size", type=int, default=256)
    p = sub.add_parser("train", parents=[common], help="train a regressor on a dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--layout")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the validation split")
    p.add_argument("--all", action="store_true", help="evaluate every sample, not just the validation split")
    sub.add_parser("compose", parents=[common], help="compose characters into SVG plus an affine manifest")
    sub.add_parser("extend", parents=[common], help="compose characters missing from a glyph set (zero-shot)")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every backward pass")
    p.add_argument("--seeds", type=int, default=20)
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic layout dataset")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--layout")
    p.add_argument("--size", type=int, default=64)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
