"""On-disk artifacts and the experiment bundle layout.

Bundle layout::

    bundle/manifests/<dataset_id>.json
    bundle/corpora/<dataset_id>.gsc
    bundle/runs/<name>.csv | <name>.jsonl
    bundle/fits/<name>.json
    bundle/regressions/<name>.json
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .complexity import CompressibilityReport
from .datadep import ParamRegressions
from .grammar import GrammarSpec
from .lawfit import FitConfig, FitResult, RunRecord, ScalingLaw

BUNDLE_ENV = "PCFG_SCALING_BUNDLE"
RUN_FIELDS = ("dataset_id", "params_n", "tokens_d", "final_loss")
EXTERNAL = "external"


class ManifestError(ValueError):
    pass


class RunIngestError(ValueError):
    """All validation failures of one run-record file, with line numbers."""

    def __init__(self, path, errors: list[tuple[int, str]]):
        self.path = str(path)
        self.errors = errors
        lines = "\n".join(f"  line {ln}: {msg}" for ln, msg in errors)
        super().__init__(f"{self.path}: {len(errors)} invalid record(s)\n{lines}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def atomic_write(path: str | Path, data: str | bytes) -> Path:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


# -- manifests ---------------------------------------------------------------

_MANIFEST_FIELDS = ("dataset_id", "grammar_spec", "compressibility", "corpus_path", "created_at", "tool_version")


@dataclass
class DatasetManifest:
    dataset_id: str
    grammar_spec: GrammarSpec | str
    corpus_path: str
    compressibility: dict | None = None
    created_at: str = field(default_factory=utc_now)
    tool_version: str = __version__
    extra: dict = field(default_factory=dict)
    # Set by load_manifest when corpus_path does not resolve; never saved.
    corpus_missing: bool = field(default=False, compare=False)

    def __post_init__(self):
        if isinstance(self.grammar_spec, str) and self.grammar_spec != EXTERNAL:
            raise ManifestError(f"grammar_spec must be a spec object or {EXTERNAL!r}")

    @property
    def is_external(self) -> bool:
        return self.grammar_spec == EXTERNAL

    def report(self) -> CompressibilityReport | None:
        return None if self.compressibility is None else CompressibilityReport.from_dict(self.compressibility)

    def to_dict(self) -> dict:
        out = dict(self.extra)
        out.update(
            dataset_id=self.dataset_id,
            grammar_spec=EXTERNAL if self.is_external else self.grammar_spec.to_dict(),
            compressibility=self.compressibility,
            corpus_path=self.corpus_path,
            created_at=self.created_at,
            tool_version=self.tool_version,
        )
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        missing = [k for k in ("dataset_id", "grammar_spec", "corpus_path") if k not in data]
        if missing:
            raise ManifestError(f"manifest missing required fields: {missing}")
        spec = data["grammar_spec"]
        try:
            spec = spec if spec == EXTERNAL else GrammarSpec.from_dict(spec)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"invalid grammar_spec: {exc}") from exc
        return cls(
            dataset_id=data["dataset_id"],
            grammar_spec=spec,
            corpus_path=data["corpus_path"],
            compressibility=data.get("compressibility"),
            created_at=data.get("created_at", ""),
            tool_version=data.get("tool_version", ""),
            extra={k: v for k, v in data.items() if k not in _MANIFEST_FIELDS},
        )


def resolve_corpus(manifest: DatasetManifest, manifest_path: str | Path) -> Path:
    p = Path(manifest.corpus_path)
    return p if p.is_absolute() else (Path(manifest_path).parent / p)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    return atomic_write(path, canonical_json(manifest.to_dict()))


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a manifest; a missing corpus only sets ``corpus_missing``."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    manifest = DatasetManifest.from_dict(data)
    manifest.corpus_missing = not resolve_corpus(manifest, path).exists()
    return manifest


def validate_manifest(manifest: DatasetManifest, manifest_path: str | Path) -> None:
    corpus = resolve_corpus(manifest, manifest_path)
    if not corpus.exists():
        raise ManifestError(f"corpus file {corpus} referenced by {manifest.dataset_id!r} does not exist")
    if manifest.compressibility is not None:
        try:
            manifest.report()
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"invalid compressibility report: {exc}") from exc


# -- run records -------------------------------------------------------------

def _parse_record(raw: dict, allow_nonpositive_loss: bool) -> RunRecord:
    missing = [k for k in RUN_FIELDS if raw.get(k) in (None, "")]
    if missing:
        raise ValueError(f"missing field(s) {missing}")
    try:
        n, d, loss = (float(raw[k]) for k in ("params_n", "tokens_d", "final_loss"))
    except (TypeError, ValueError):
        raise ValueError("params_n, tokens_d and final_loss must be numbers") from None
    problems = []
    if not (math.isfinite(n) and n > 0):
        problems.append(f"params_n={raw['params_n']} must be positive")
    if not (math.isfinite(d) and d > 0):
        problems.append(f"tokens_d={raw['tokens_d']} must be positive")
    if not math.isfinite(loss) or (loss <= 0 and not allow_nonpositive_loss):
        problems.append(f"final_loss={raw['final_loss']} must be positive and finite")
    if problems:
        raise ValueError("; ".join(problems))
    return RunRecord(str(raw["dataset_id"]), n, d, loss)


def _detect_format(path: Path, fmt: str | None) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).upper()
    if fmt not in ("CSV", "JSONL"):
        raise ValueError(f"unknown run-record format {fmt!r}; use CSV or JSONL")
    return fmt


def parse_runs(text: str, fmt: str, source: str = "<string>", allow_nonpositive_loss: bool = False) -> list[RunRecord]:
    fmt = fmt.upper()
    rows: list[tuple[int, dict | None, str | None]] = []
    if fmt == "CSV":
        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        absent = [k for k in RUN_FIELDS if k not in header]
        if absent:
            raise RunIngestError(source, [(1, f"header lacks column(s) {absent}")])
        for row in reader:
            rows.append((reader.line_num, row, None))
    elif fmt == "JSONL":
        for ln, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                rows.append((ln, None, f"malformed JSON: {exc.msg}"))
                continue
            if not isinstance(obj, dict):
                rows.append((ln, None, "record must be a JSON object"))
                continue
            rows.append((ln, obj, None))
    else:
        raise ValueError(f"unknown run-record format {fmt!r}")

    records: list[RunRecord] = []
    errors: list[tuple[int, str]] = []
    for ln, raw, err in rows:
        if err is not None:
            errors.append((ln, err))
            continue
        try:
            records.append(_parse_record(raw, allow_nonpositive_loss))
        except ValueError as exc:
            errors.append((ln, str(exc)))
    if errors:
        raise RunIngestError(source, errors)
    return records


def ingest_runs(path: str | Path, fmt: str | None = None, allow_nonpositive_loss: bool = False) -> list[RunRecord]:
    """Read and validate a CSV or JSONL run-record file, all or nothing.

    Training losses must be positive unless ``allow_nonpositive_loss`` is
    set (synthetic records from laws with negative E).
    """
    path = Path(path)
    return parse_runs(path.read_text(), _detect_format(path, fmt), str(path), allow_nonpositive_loss)


def format_runs(runs: Sequence[RunRecord], fmt: str = "CSV") -> str:
    fmt = fmt.upper()
    if fmt == "CSV":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RUN_FIELDS)
        for r in runs:
            writer.writerow([r.dataset_id, repr(r.params_n), repr(r.tokens_d), repr(r.final_loss)])
        return buf.getvalue()
    if fmt == "JSONL":
        return "".join(
            json.dumps({k: getattr(r, k) for k in RUN_FIELDS}, sort_keys=True) + "\n" for r in runs
        )
    raise ValueError(f"unknown run-record format {fmt!r}")


def write_runs(runs: Sequence[RunRecord], path: str | Path, fmt: str | None = None) -> Path:
    path = Path(path)
    return atomic_write(path, format_runs(runs, _detect_format(path, fmt)))


# -- fits and regressions ----------------------------------------------------

def fit_to_dict(result: FitResult, config: FitConfig, runs_file: str | Path | None = None) -> dict:
    out = result.to_dict()
    out["config"] = config.to_dict()
    if runs_file is not None:
        out["provenance"] = {"runs_file": str(runs_file), "sha256": sha256_file(runs_file)}
    return out


def load_law(path: str | Path) -> ScalingLaw:
    """Read a law from a fit result (``{"law": ...}``) or a bare law object."""
    data = json.loads(Path(path).read_text())
    return ScalingLaw.from_dict(data["law"] if "law" in data else data)


@dataclass
class ExperimentBundle:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @classmethod
    def from_env(cls, default: str | Path = "bundle") -> "ExperimentBundle":
        return cls(Path(os.environ.get(BUNDLE_ENV, default)))

    def dir(self, kind: str) -> Path:
        if kind not in ("manifests", "corpora", "runs", "fits", "regressions"):
            raise ValueError(f"unknown bundle directory {kind!r}")
        return self.root / kind

    def create(self) -> "ExperimentBundle":
        for kind in ("manifests", "corpora", "runs", "fits", "regressions"):
            self.dir(kind).mkdir(parents=True, exist_ok=True)
        return self

    def manifest_path(self, dataset_id: str) -> Path:
        return self.dir("manifests") / f"{dataset_id}.json"

    def corpus_path(self, dataset_id: str) -> Path:
        return self.dir("corpora") / f"{dataset_id}.gsc"

    def save_runs(self, name: str, runs: Sequence[RunRecord], fmt: str = "CSV") -> Path:
        return write_runs(runs, self.dir("runs") / f"{name}.{fmt.lower()}", fmt)

    def save_fit(self, name: str, result: FitResult, config: FitConfig, runs_file: str | Path) -> Path:
        runs_file = Path(runs_file)
        if not runs_file.exists():
            raise ManifestError(f"fit {name!r} references missing run file {runs_file}")
        rel = os.path.relpath(runs_file, self.dir("fits"))
        data = fit_to_dict(result, config, runs_file)
        data["provenance"]["runs_file"] = rel
        return atomic_write(self.dir("fits") / f"{name}.json", canonical_json(data))

    def save_regression(self, name: str, regs: ParamRegressions, sources: Sequence[tuple[float, str | Path]]) -> Path:
        missing = [str(p) for _, p in sources if not Path(p).exists()]
        if missing:
            raise ManifestError(f"regression {name!r} references missing fit files {missing}")
        data = regs.to_dict()
        data["sources"] = [
            {"h": h, "fit": os.path.relpath(p, self.dir("regressions"))} for h, p in sources
        ]
        return atomic_write(self.dir("regressions") / f"{name}.json", canonical_json(data))

    def validate(self) -> list[str]:
        """Dangling references across the bundle; empty when consistent."""
        problems = []
        for path in sorted(self.dir("manifests").glob("*.json")):
            try:
                validate_manifest(load_manifest(path), path)
            except ManifestError as exc:
                problems.append(f"{path}: {exc}")
        for path in sorted(self.dir("fits").glob("*.json")):
            prov = json.loads(path.read_text()).get("provenance", {})
            runs = prov.get("runs_file")
            if runs is None or not (path.parent / runs).exists():
                problems.append(f"{path}: run file {runs!r} not found")
        for path in sorted(self.dir("regressions").glob("*.json")):
            for src in json.loads(path.read_text()).get("sources", []):
                if not (path.parent / src["fit"]).exists():
                    problems.append(f"{path}: fit file {src['fit']!r} not found")
        return problems
