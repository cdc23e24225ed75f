"""gzip-compressibility of token corpora and raw files."""

from __future__ import annotations

import enum
import gzip
import json
import statistics
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grammar import Corpus
from .rng import generator

DEFAULT_LEVEL = 6
DEFAULT_MAX_SAMPLE = 1000


class SerializationMode(str, enum.Enum):
    TOKENS_U16LE = "TOKENS_U16LE"
    DECIMAL_TEXT = "DECIMAL_TEXT"
    RAW_BYTES = "RAW_BYTES"


def compressor_id(level: int = DEFAULT_LEVEL) -> str:
    return f"deflate-gzip-l{level}-zlib{zlib.ZLIB_RUNTIME_VERSION}"


def serialize_doc(doc, mode: SerializationMode | str = SerializationMode.TOKENS_U16LE) -> bytes:
    mode = SerializationMode(mode)
    if mode is SerializationMode.RAW_BYTES:
        if not isinstance(doc, (bytes, bytearray, memoryview)):
            raise TypeError("RAW_BYTES documents must already be bytes")
        return bytes(doc)
    ids = np.asarray(doc)
    if ids.size and (ids.min() < 0):
        raise ValueError("token IDs must be non-negative")
    if mode is SerializationMode.TOKENS_U16LE:
        if ids.size and ids.max() > 0xFFFF:
            raise ValueError(f"token ID {int(ids.max())} does not fit 16 bits")
        return ids.astype("<u2").tobytes()
    return " ".join(str(int(t)) for t in ids).encode("ascii")


def gzip_bytes(payload: bytes, level: int = DEFAULT_LEVEL) -> bytes:
    # mtime=0 keeps the header free of timestamps.
    return gzip.compress(payload, compresslevel=level, mtime=0)


def doc_ratio(payload: bytes, level: int = DEFAULT_LEVEL) -> float:
    """Compressed size over original size; framing overhead is not removed."""
    if not payload:
        raise ValueError("cannot compute the ratio of an empty payload")
    return len(gzip_bytes(payload, level)) / len(payload)


@dataclass
class CompressibilityReport:
    ratios: list[float]
    mode: SerializationMode
    compressor_id: str
    indices: list[int] = field(default_factory=list)
    median: float = field(init=False)
    mean: float = field(init=False)
    stddev: float = field(init=False)

    def __post_init__(self):
        if not self.ratios:
            raise ValueError("report needs at least one ratio")
        self.mode = SerializationMode(self.mode)
        self.median = statistics.median(sorted(self.ratios))
        self.mean = statistics.fmean(self.ratios)
        self.stddev = statistics.pstdev(self.ratios)

    @property
    def sample_size(self) -> int:
        return len(self.ratios)

    @property
    def h(self) -> float:
        """Headline compressibility (mean of per-document ratios)."""
        return self.mean

    def to_dict(self, include_ratios: bool = True) -> dict:
        out = {
            "compressor_id": self.compressor_id,
            "mean": self.mean,
            "median": self.median,
            "mode": self.mode.value,
            "sample_size": self.sample_size,
            "stddev": self.stddev,
        }
        if include_ratios:
            out["ratios"] = list(self.ratios)
            out["indices"] = list(self.indices)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CompressibilityReport":
        report = cls(list(data["ratios"]), data["mode"], data["compressor_id"], list(data.get("indices", [])))
        for key in ("mean", "median", "stddev"):
            if key in data and not np.isclose(data[key], getattr(report, key), rtol=0, atol=1e-12):
                raise ValueError(f"stored {key} does not match the stored ratios")
        return report

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def ratios_csv(self) -> str:
        rows = ["doc_index,ratio"]
        idx = self.indices or range(len(self.ratios))
        rows += [f"{i},{r!r}" for i, r in zip(idx, self.ratios)]
        return "\n".join(rows) + "\n"


def sample_indices(num_docs: int, max_sample: int, seed: int) -> list[int]:
    """Seeded uniform sample without replacement, returned in ascending order."""
    if num_docs < 1:
        raise ValueError("corpus is empty")
    if max_sample >= num_docs:
        return list(range(num_docs))
    picked = generator(seed).choice(num_docs, size=max_sample, replace=False)
    return sorted(int(i) for i in picked)


def corpus_compressibility(
    corpus: Corpus | Sequence,
    mode: SerializationMode | str = SerializationMode.TOKENS_U16LE,
    max_sample: int = DEFAULT_MAX_SAMPLE,
    seed: int = 0,
    level: int = DEFAULT_LEVEL,
    workers: int | None = None,
) -> CompressibilityReport:
    """Per-document gzip ratios over a seeded sample of ``corpus``.

    ``corpus`` is a :class:`Corpus` or any sequence of documents (token
    sequences, or bytes in RAW_BYTES mode).
    """
    mode = SerializationMode(mode)
    n = len(corpus)
    idx = sample_indices(n, max_sample, seed)

    def ratio(i: int) -> float:
        return doc_ratio(serialize_doc(corpus[i], mode), level)

    if workers and workers > 1:
        # zlib releases the GIL while compressing.
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            ratios = list(pool.map(ratio, idx))
    else:
        ratios = [ratio(i) for i in idx]
    return CompressibilityReport(ratios, mode, compressor_id(level), idx)


def read_raw_documents(paths: Iterable[str | Path]) -> list[bytes]:
    """Load files as RAW_BYTES documents; directories contribute every file inside, sorted."""
    docs = []
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        for f in files:
            data = f.read_bytes()
            if data:
                docs.append(data)
    if not docs:
        raise ValueError("no non-empty files found")
    return docs
