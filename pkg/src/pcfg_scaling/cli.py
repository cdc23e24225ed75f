"""Command-line interface.

Every subcommand writes its machine-readable payload (JSON or CSV) to stdout
and diagnostics to stderr. Exit codes: 0 success, 1 invalid input,
2 numerical or domain error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import secrets
import sys
from importlib.resources import files
from pathlib import Path
from typing import Sequence

from . import __version__
from .complexity import (
    DEFAULT_LEVEL,
    DEFAULT_MAX_SAMPLE,
    SerializationMode,
    corpus_compressibility,
    read_raw_documents,
)
from .datadep import (
    PARAMS,
    BlendConfig,
    ChinchillaConstants,
    DomainError,
    ParamRegressions,
    blended_law,
    frontier_exponent,
    regress_params,
    regression_lines_csv,
)
from .grammar import Corpus, GrammarSpec, build_grammar, sample_corpus
from .lawfit import (
    GRID_D,
    GRID_N,
    FitConfig,
    FlopsModel,
    ScalingLaw,
    fit_law,
    frontier_rows,
    synth_runs,
)
from .rng import RNG_ID
from .runstore import (
    DatasetManifest,
    ExperimentBundle,
    canonical_json,
    fit_to_dict,
    format_runs,
    ingest_runs,
    load_law,
    load_manifest,
    resolve_corpus,
    save_manifest,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def preset_path(name: str) -> Path:
    """Resolve ``name`` as a file, falling back to the shipped presets."""
    p = Path(name)
    if p.exists():
        return p
    shipped = files("pcfg_scaling") / "presets" / (name if name.endswith(".json") else f"{name}.json")
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"{name}: no such file or preset")


def _seed(value: int | None, label: str = "seed") -> int:
    if value is not None:
        return value
    seed = secrets.randbits(63)
    print(f"{label}={seed}", file=sys.stderr)
    return seed


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValueError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# -- subcommands -------------------------------------------------------------

def cmd_gen(args) -> int:
    raw = json.loads(preset_path(args.spec_file).read_text())
    if "rows" in raw:
        if args.row is None:
            raise ValueError("spec file is a suite; choose a row with --row")
        raw = raw["rows"][args.row]["spec"]
    spec = GrammarSpec.from_dict(raw)
    if args.context_length is not None:
        spec = GrammarSpec.from_dict({**spec.to_dict(), "context_length": args.context_length})
    dataset_id = args.dataset_id or Path(args.spec_file).stem + (f"-row{args.row}" if args.row is not None else "")
    base_seed = spec.seed if args.seed is None else args.seed

    bundle = ExperimentBundle(Path(args.out)) if args.out else ExperimentBundle.from_env()
    bundle.create()
    pcfg = build_grammar(spec)
    corpus = sample_corpus(pcfg, args.docs, base_seed, workers=args.workers)
    corpus_file = bundle.corpus_path(dataset_id)
    from .runstore import atomic_write

    atomic_write(corpus_file, corpus.to_bytes())
    report = None
    if not args.no_measure:
        report = corpus_compressibility(corpus, args.mode, args.sample, base_seed).to_dict()
    manifest = DatasetManifest(
        dataset_id=dataset_id,
        grammar_spec=spec,
        corpus_path=str(Path("..") / "corpora" / corpus_file.name),
        compressibility=report,
        extra={"num_docs": args.docs, "corpus_seed": base_seed, "rng": RNG_ID},
    )
    path = save_manifest(manifest, bundle.manifest_path(dataset_id))
    print(f"wrote {corpus_file} and {path}", file=sys.stderr)
    _emit(canonical_json(manifest.to_dict()))
    return EXIT_OK


def cmd_measure(args) -> int:
    mode = SerializationMode(args.mode)
    seed = _seed(args.seed)
    if mode is SerializationMode.RAW_BYTES:
        docs = read_raw_documents(args.paths)
    else:
        if len(args.paths) != 1:
            raise ValueError("token modes take exactly one corpus or manifest path")
        path = Path(args.paths[0])
        if path.suffix == ".json":
            path = resolve_corpus(load_manifest(path), path)
        docs = Corpus.load(path)
    report = corpus_compressibility(docs, mode, args.sample, seed, args.level)
    if args.ratios_csv:
        Path(args.ratios_csv).write_text(report.ratios_csv())
    _emit(canonical_json(report.to_dict(include_ratios=not args.summary)))
    return EXIT_OK


def cmd_fit(args) -> int:
    config = FitConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else FitConfig()
    runs = ingest_runs(args.runs_file, args.format, allow_nonpositive_loss=args.allow_nonpositive_loss)
    result = fit_law(runs, config)
    if not result.converged:
        print("warning: best start stopped at the iteration limit", file=sys.stderr)
    payload = canonical_json(fit_to_dict(result, config, args.runs_file))
    if args.out:
        from .runstore import atomic_write

        atomic_write(args.out, payload)
    _emit(payload)
    return EXIT_OK


def _frontier_csv(law: ScalingLaw, budgets: Sequence[float], coeff: float) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["C", "N_opt", "D_opt", "predicted_loss"])
    for row in frontier_rows(law, budgets, FlopsModel(coeff)):
        writer.writerow([repr(row[k]) for k in ("C", "N_opt", "D_opt", "predicted_loss")])
    return buf.getvalue()


def cmd_frontier(args) -> int:
    law = load_law(preset_path(args.fit_file))
    _emit(_frontier_csv(law, _floats(args.budgets), args.coeff))
    return EXIT_OK


def _load_pairs(path: Path) -> tuple[list[tuple[float, ScalingLaw]], dict[str, list[int]]]:
    if path.suffix == ".csv":
        rows = list(csv.DictReader(io.StringIO(path.read_text())))
        entries = [{"h": r["h"], "fit": r["fit"]} for r in rows]
        exclude: dict[str, list[int]] = {}
    else:
        data = json.loads(path.read_text())
        entries = data["points"] if isinstance(data, dict) else data
        exclude = {k: list(v) for k, v in (data.get("exclude", {}) if isinstance(data, dict) else {}).items()}
    points = []
    for entry in entries:
        if "law" in entry:
            law = ScalingLaw.from_dict(entry["law"])
        else:
            fit = Path(entry["fit"])
            law = load_law(fit if fit.is_absolute() else path.parent / fit)
        points.append((float(entry["h"]), law))
    return points, exclude


def _parse_exclusions(items: Sequence[str]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for item in items:
        name, sep, idx = item.partition(":")
        if not sep or name not in PARAMS:
            raise ValueError(f"--exclude expects PARAM:INDEX with PARAM in {PARAMS}, got {item!r}")
        try:
            out.setdefault(name, []).append(int(idx))
        except ValueError:
            raise ValueError(f"--exclude index must be an integer, got {idx!r}") from None
    return out


def cmd_regress(args) -> int:
    points, exclude = _load_pairs(preset_path(args.pairs_file))
    if args.no_file_exclusions:
        exclude = {}
    for name, idx in _parse_exclusions(args.exclude).items():
        exclude.setdefault(name, []).extend(idx)
    regs = regress_params(points, exclude)
    _emit(canonical_json(regs.to_dict()))
    return EXIT_OK


def cmd_predict(args) -> int:
    regs = ParamRegressions.from_dict(json.loads(Path(args.regressions_file).read_text()))
    primes = ChinchillaConstants()
    if args.primes_file:
        primes = ChinchillaConstants.from_dict(json.loads(preset_path(args.primes_file).read_text()))
    law = blended_law(args.h, BlendConfig(args.epsilon), primes, regs)
    bn, bd = frontier_exponent(law)
    out = {
        "h": args.h,
        "epsilon": args.epsilon,
        "law": law.to_dict(),
        "frontier_exponents": {"n_opt": bn, "d_opt": bd},
    }
    if args.budgets:
        out["frontier"] = frontier_rows(law, _floats(args.budgets), FlopsModel(args.coeff))
    _emit(canonical_json(out))
    return EXIT_OK


def cmd_synth(args) -> int:
    law = load_law(preset_path(args.law_file))
    if args.grid == "standard":
        n_grid, d_grid = GRID_N, GRID_D
    else:
        n_part, sep, d_part = args.grid.partition(";")
        if not sep:
            raise ValueError("--grid expects 'standard' or 'N1,N2,...;D1,D2,...'")
        n_grid, d_grid = _floats(n_part), _floats(d_part)
    seed = _seed(args.seed) if args.noise > 0 else (args.seed or 0)
    runs = synth_runs(law, n_grid, d_grid, args.noise, seed, args.dataset_id)
    _emit(format_runs(runs, args.format))
    return EXIT_OK


def cmd_lines(args) -> int:
    regs = ParamRegressions.from_dict(json.loads(Path(args.regressions_file).read_text()))
    _emit(regression_lines_csv(regs, args.h_min, args.h_max, args.steps))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcfg-scaling", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="build a grammar, sample a corpus and write its manifest")
    p.add_argument("spec_file", help="grammar spec JSON, suite JSON (with --row) or preset name")
    p.add_argument("--row", type=int, help="row of a suite file")
    p.add_argument("--docs", type=int, default=1000)
    p.add_argument("--out", help="bundle directory (default: $PCFG_SCALING_BUNDLE or ./bundle)")
    p.add_argument("--dataset-id")
    p.add_argument("--seed", type=int, help="corpus base seed (default: the grammar seed)")
    p.add_argument("--context-length", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--mode", default=SerializationMode.TOKENS_U16LE.value, choices=[m.value for m in SerializationMode])
    p.add_argument("--sample", type=int, default=DEFAULT_MAX_SAMPLE)
    p.add_argument("--no-measure", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("measure", help="gzip-compressibility report")
    p.add_argument("paths", nargs="+", help="corpus .gsc, manifest .json, or files/dirs for RAW_BYTES")
    p.add_argument("--mode", default=SerializationMode.TOKENS_U16LE.value, choices=[m.value for m in SerializationMode])
    p.add_argument("--sample", type=int, default=DEFAULT_MAX_SAMPLE)
    p.add_argument("--seed", type=int)
    p.add_argument("--level", type=int, default=DEFAULT_LEVEL)
    p.add_argument("--ratios-csv", help="also write per-document ratios here")
    p.add_argument("--summary", action="store_true", help="omit per-document ratios from the JSON")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("fit", help="fit L(N, D) to run records")
    p.add_argument("runs_file")
    p.add_argument("--config", help="FitConfig JSON")
    p.add_argument("--format", choices=["CSV", "JSONL"])
    p.add_argument("--allow-nonpositive-loss", action="store_true")
    p.add_argument("--out", help="also write the fit JSON here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("frontier", help="compute-optimal allocation per budget (CSV)")
    p.add_argument("fit_file", help="fit result or law JSON")
    p.add_argument("--budgets", required=True, help="comma-separated FLOPs budgets")
    p.add_argument("--coeff", type=float, default=6.0)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("regress", help="regress law parameters on compressibility")
    p.add_argument("pairs_file", help="JSON {points: [{h, law|fit}], exclude}, CSV h,fit, or preset")
    p.add_argument("--exclude", action="append", default=[], metavar="PARAM:INDEX")
    p.add_argument("--no-file-exclusions", action="store_true")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("predict", help="data-dependent law at compressibility h")
    p.add_argument("regressions_file")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--primes-file", help="reference constants JSON (default: Chinchilla)")
    p.add_argument("--budgets", help="comma-separated FLOPs budgets for frontier rows")
    p.add_argument("--coeff", type=float, default=6.0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="synthetic run records from a law")
    p.add_argument("law_file")
    p.add_argument("--grid", default="standard", help="'standard' (6x6 reference grid) or 'N1,N2,...;D1,D2,...'")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", default="CSV", choices=["CSV", "JSONL"])
    p.add_argument("--dataset-id", default="synthetic")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("lines", help="regression lines sampled over h (CSV)")
    p.add_argument("regressions_file")
    p.add_argument("--h-min", type=float, default=0.0)
    p.add_argument("--h-max", type=float, default=0.7)
    p.add_argument("--steps", type=int, default=71)
    p.set_defaults(func=cmd_lines)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (DomainError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
