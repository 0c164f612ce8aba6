"""File formats, embedding cache and service client, and run persistence.

Every line-delimited file starts with a header record
``{"schema": "scatterkit/<kind>", "version": 1}`` followed by one JSON object
per line. Formats:

samples
    ``{"id", "question", "ground_truth": [str], "context", "cutoff_date",
    "ground_truth_embeddings": [[float]] | null}``
hypotheses
    ``{"sample_id", "round", "hypotheses": [str], "provenance",
    "embeddings": [[float]] | null}``; rounds start at 1 and are contiguous.
verdicts
    ``{"sample_id", "verdicts": [bool, ...]}``, one verdict per round.

Inline embeddings are optional; when absent, texts go through the embedding
service and cache.
"""

import hashlib
import json
import logging
import os
import shutil
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from .exceptions import (
    CacheMissError,
    FingerprintMismatchError,
    InputError,
    IntegrityError,
    RunExistsError,
    TransportError,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENDPOINT_ENV = "SCATTERKIT_EMBEDDER_URL"


def canonical_json(obj):
    """Deterministic JSON text: sorted keys, no whitespace, floats in shortest repr."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "value") and hasattr(obj, "name"):  # enums
        return obj.value
    return obj


def config_fingerprint(config):
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def _header(kind):
    return {"schema": f"scatterkit/{kind}", "version": SCHEMA_VERSION}


def _read_jsonl(path, kind):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise InputError(f"{path}:{lineno}: expected a JSON object")
            if "schema" in rec:
                if rec["schema"] != f"scatterkit/{kind}":
                    raise InputError(f"{path}:{lineno}: expected schema scatterkit/{kind}, got {rec['schema']}")
                if rec.get("version") != SCHEMA_VERSION:
                    raise InputError(f"{path}:{lineno}: unsupported {kind} version {rec.get('version')}")
                continue
            records.append((lineno, rec))
    return records


def _write_jsonl(path, kind, rows):
    lines = [canonical_json(_header(kind))] + [canonical_json(r) for r in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass
class SampleRecord:
    id: str
    question: str
    ground_truth: list
    context: str = ""
    cutoff_date: str = None
    ground_truth_embeddings: list = None

    def __post_init__(self):
        if not self.id or not str(self.id).strip():
            raise InputError("sample id must be non-empty")
        if not self.question:
            raise InputError(f"sample {self.id!r}: question must be non-empty")
        if not self.ground_truth:
            raise InputError(f"sample {self.id!r}: needs at least one ground-truth event")
        if self.ground_truth_embeddings is not None and len(self.ground_truth_embeddings) != len(self.ground_truth):
            raise InputError(f"sample {self.id!r}: ground-truth embeddings do not match texts")
        self.id = str(self.id)


@dataclass
class HypothesisBatch:
    sample_id: str
    round: int
    hypotheses: list
    provenance: str = ""
    embeddings: list = None

    def __post_init__(self):
        self.sample_id = str(self.sample_id)
        if int(self.round) < 1:
            raise InputError(f"sample {self.sample_id!r}: round indices start at 1")
        self.round = int(self.round)
        if self.embeddings is not None and len(self.embeddings) != len(self.hypotheses):
            raise InputError(f"sample {self.sample_id!r} round {self.round}: embeddings do not match texts")


def _build(cls, path, lineno, rec):
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(rec) - known
    if unknown:
        raise InputError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
    try:
        return cls(**rec)
    except TypeError as exc:
        raise InputError(f"{path}:{lineno}: {exc}") from None
    except InputError as exc:
        raise InputError(f"{path}:{lineno}: {exc}") from None


def load_samples(path):
    samples = [_build(SampleRecord, path, n, rec) for n, rec in _read_jsonl(path, "samples")]
    seen, dupes = set(), set()
    for s in samples:
        (dupes if s.id in seen else seen).add(s.id)
    if dupes:
        raise InputError(f"{path}: duplicate sample ids {sorted(dupes)}")
    return samples


def save_samples(path, samples):
    _write_jsonl(path, "samples", [_drop_none(asdict(s)) for s in samples])


def load_hypotheses(path):
    """Hypothesis batches grouped by sample id, each list sorted by round."""
    out = {}
    for n, rec in _read_jsonl(path, "hypotheses"):
        b = _build(HypothesisBatch, path, n, rec)
        out.setdefault(b.sample_id, []).append(b)
    for sid, batches in out.items():
        batches.sort(key=lambda b: b.round)
        rounds = [b.round for b in batches]
        if rounds != list(range(1, len(rounds) + 1)):
            raise InputError(f"{path}: sample {sid!r} rounds {rounds} are not contiguous from 1")
    return out


def save_hypotheses(path, batches):
    flat = [b for group in (batches.values() if isinstance(batches, dict) else [batches]) for b in group]
    _write_jsonl(path, "hypotheses", [_drop_none(asdict(b)) for b in flat])


def load_verdicts(path):
    rows = []
    for n, rec in _read_jsonl(path, "verdicts"):
        if "sample_id" not in rec or not isinstance(rec.get("verdicts"), list):
            raise InputError(f"{path}:{n}: verdict records need sample_id and a verdicts list")
        rows.append(rec)
    return rows


def save_verdicts(path, rows):
    _write_jsonl(path, "verdicts", rows)


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


class EmbeddingCache:
    """Content-addressed on-disk vector store, one directory per embedder id.

    ``<root>/<embedder>/vectors.f64`` holds little-endian float64 vectors back
    to back; ``index.tsv`` maps ``sha256(text)`` to the vector's offset and
    dimension. Writers serialize on a per-embedder file lock; readers pick up
    new entries whenever the index file grows.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._index = {}
        self._index_size = {}
        self._mutex = threading.Lock()

    @staticmethod
    def key(text):
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def _dir(self, embedder):
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in embedder)
        return self.root / safe

    def _refresh(self, embedder):
        index_path = self._dir(embedder) / "index.tsv"
        size = index_path.stat().st_size if index_path.exists() else 0
        if self._index_size.get(embedder) == size:
            return self._index.setdefault(embedder, {})
        index = {}
        if size:
            with open(index_path, encoding="utf-8") as fh:
                for line in fh:
                    parts = line.rstrip("\n").split("\t")
                    if len(parts) == 3:
                        index[parts[0]] = (int(parts[1]), int(parts[2]))
        self._index[embedder] = index
        self._index_size[embedder] = size
        return index

    def dimension(self, embedder):
        with self._mutex:
            index = self._refresh(embedder)
        return next(iter(index.values()))[1] if index else None

    def get_many(self, embedder, texts):
        """Cached vectors for ``texts``; ``None`` where missing."""
        with self._mutex:
            index = self._refresh(embedder)
        out = []
        path = self._dir(embedder) / "vectors.f64"
        with (open(path, "rb") if path.exists() else _NullFile()) as fh:
            for t in texts:
                entry = index.get(self.key(t))
                if entry is None:
                    out.append(None)
                    continue
                offset, dim = entry
                fh.seek(offset)
                out.append(np.frombuffer(fh.read(8 * dim), dtype="<f8").astype(np.float64))
        return out

    def put_many(self, embedder, texts, vectors):
        d = self._dir(embedder)
        d.mkdir(parents=True, exist_ok=True)
        with FileLock(str(d / ".lock")):
            with self._mutex:
                index = self._refresh(embedder)
            known_dim = next(iter(index.values()))[1] if index else None
            rows = []
            vec_path = d / "vectors.f64"
            with open(vec_path, "ab") as vf:
                offset = vf.tell()
                for t, v in zip(texts, vectors):
                    v = np.asarray(v, dtype="<f8")
                    if known_dim is None:
                        known_dim = v.shape[0]
                    if v.ndim != 1 or v.shape[0] != known_dim:
                        raise IntegrityError(f"embedder {embedder!r} returned dimension {v.shape} , expected {known_dim}")
                    k = self.key(t)
                    if k in index:
                        continue
                    vf.write(v.tobytes())
                    rows.append(f"{k}\t{offset}\t{v.shape[0]}\n")
                    index[k] = (offset, v.shape[0])
                    offset += 8 * v.shape[0]
                vf.flush()
                os.fsync(vf.fileno())
            with open(d / "index.tsv", "a", encoding="utf-8") as fh:
                fh.writelines(rows)


class _NullFile:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def http_transport(endpoint, timeout=30.0):
    """Transport posting ``{"embedder", "texts"}`` as JSON and expecting ``{"vectors"}``."""
    import httpx

    def send(request):
        try:
            resp = httpx.post(endpoint, json=request, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise TransportError(f"embedding request to {endpoint} failed: {exc}") from exc

    return send


@dataclass
class EmbeddingClient:
    """Batched, retrying client for the minimal embedding-service contract."""

    embedder: str
    transport: object = None
    batch_size: int = 64
    max_retries: int = 4
    backoff: float = 0.5
    sleep: object = field(default=time.sleep, repr=False)

    @classmethod
    def from_endpoint(cls, embedder, endpoint=None, **kw):
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise InputError(f"no embedding endpoint given (flag or {ENDPOINT_ENV})")
        return cls(embedder, http_transport(endpoint), **kw)

    def embed(self, texts):
        vectors = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            vectors.extend(self._request(batch))
        return vectors

    def _request(self, batch):
        for attempt in range(self.max_retries + 1):
            try:
                resp = self.transport({"embedder": self.embedder, "texts": batch})
                vectors = resp["vectors"]
                if len(vectors) != len(batch):
                    raise IntegrityError(f"embedder returned {len(vectors)} vectors for {len(batch)} texts")
                return [np.asarray(v, dtype=np.float64) for v in vectors]
            except TransportError:
                if attempt == self.max_retries:
                    raise
                delay = self.backoff * 2**attempt
                log.warning("embedding request failed (attempt %d), retrying in %.2fs", attempt + 1, delay)
                self.sleep(delay)


def embed_texts(texts, cache, client=None, embedder=None, offline=False):
    """Embeddings for ``texts`` as a ``(n, d)`` array, serving from ``cache`` first.

    Each distinct uncached text is requested once; results are cached before
    returning. In offline mode the client is never called.
    """
    embedder = embedder or (client.embedder if client else None)
    if embedder is None:
        raise InputError("an embedder id is required")
    texts = list(texts)
    if not texts:
        return np.zeros((0, cache.dimension(embedder) or 0))
    cached = cache.get_many(embedder, texts)
    missing = list(dict.fromkeys(t for t, v in zip(texts, cached) if v is None))
    if missing:
        if offline or client is None:
            raise CacheMissError(missing)
        fresh = client.embed(missing)
        known = cache.dimension(embedder)
        for v in fresh:
            if v.ndim != 1 or (known is not None and v.shape[0] != known):
                raise IntegrityError(f"embedder {embedder!r} returned dimension {v.shape[-1]}, expected {known}")
            known = v.shape[0]
        cache.put_many(embedder, missing, fresh)
        cached = cache.get_many(embedder, texts)
    dims = {v.shape[0] for v in cached}
    if len(dims) != 1:
        raise IntegrityError(f"embedder {embedder!r} has mixed dimensions {sorted(dims)}")
    return np.vstack(cached)


class RunStore:
    """Directory of immutable runs plus an append-only results log.

    A run is written into a hidden temporary directory and renamed into place
    only once complete, so readers never observe a partial run.
    """

    MANIFEST = "manifest.json"
    RESULTS = "results.jsonl"

    def __init__(self, root):
        self.root = Path(root)

    def path(self, run_id):
        if not run_id or "/" in run_id or run_id.startswith("."):
            raise InputError(f"invalid run id {run_id!r}")
        return self.root / run_id

    def exists(self, run_id):
        return (self.path(run_id) / self.MANIFEST).exists()

    def persist(self, run_id, artifacts, config, overwrite=False):
        """Write ``artifacts`` (file name -> str, bytes, or JSON-able object)."""
        final = self.path(run_id)
        if final.exists() and not overwrite:
            raise RunExistsError(f"run {run_id!r} already exists; pass overwrite to replace it")
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=self.root, prefix=f".{run_id}.", suffix=".tmp"))
        try:
            names = sorted(artifacts)
            for name in names:
                _write_artifact(tmp / name, artifacts[name])
            manifest = {
                "version": SCHEMA_VERSION,
                "run_id": run_id,
                "fingerprint": config_fingerprint(config),
                "config": config,
                "artifacts": names,
            }
            _write_artifact(tmp / self.MANIFEST, manifest)
            if final.exists():
                trash = Path(tempfile.mkdtemp(dir=self.root, prefix=f".{run_id}.", suffix=".old"))
                os.replace(final, trash / "run")
                os.replace(tmp, final)
                shutil.rmtree(trash, ignore_errors=True)
            else:
                os.replace(tmp, final)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        return final

    def manifest(self, run_id):
        path = self.path(run_id) / self.MANIFEST
        if not path.exists():
            raise InputError(f"no run {run_id!r} in {self.root}")
        return json.loads(path.read_text(encoding="utf-8"))

    def check_fingerprint(self, run_id, config):
        stored = self.manifest(run_id)["fingerprint"]
        current = config_fingerprint(config)
        if stored != current:
            raise FingerprintMismatchError(stored, current)
        return stored

    def load(self, run_id, config=None):
        """Artifacts of ``run_id``; JSON files parsed, others as text."""
        if config is not None:
            self.check_fingerprint(run_id, config)
        out = {}
        for name in self.manifest(run_id)["artifacts"]:
            text = (self.path(run_id) / name).read_text(encoding="utf-8")
            if name.endswith(".json"):
                out[name] = json.loads(text)
            elif name.endswith(".jsonl"):
                out[name] = [json.loads(line) for line in text.splitlines() if line]
            else:
                out[name] = text
        return out

    def append_result(self, record):
        self.root.mkdir(parents=True, exist_ok=True)
        with FileLock(str(self.root / ".results.lock")):
            with open(self.root / self.RESULTS, "a", encoding="utf-8") as fh:
                fh.write(canonical_json(record) + "\n")

    def results(self):
        path = self.root / self.RESULTS
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


def _write_artifact(path, content):
    if isinstance(content, bytes):
        path.write_bytes(content)
        return
    if isinstance(content, str):
        text = content
    elif path.suffix == ".jsonl":
        text = "".join(canonical_json(r) + "\n" for r in content)
    else:
        text = canonical_json(content) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def checkpoint_dict(logits, config):
    """Versioned parameter checkpoint for a toy policy."""
    logits = np.asarray(logits, dtype=np.float64)
    return {
        "format": "scatterkit/checkpoint",
        "version": SCHEMA_VERSION,
        "config_fingerprint": config_fingerprint(config),
        "params": {"logits": {"shape": list(logits.shape), "data": logits.tolist()}},
    }


def logits_from_checkpoint(ckpt, config=None):
    if ckpt.get("format") != "scatterkit/checkpoint" or ckpt.get("version") != SCHEMA_VERSION:
        raise InputError("not a version-1 scatterkit checkpoint")
    if config is not None and ckpt["config_fingerprint"] != config_fingerprint(config):
        raise FingerprintMismatchError(ckpt["config_fingerprint"], config_fingerprint(config))
    p = ckpt["params"]["logits"]
    arr = np.asarray(p["data"], dtype=np.float64)
    if list(arr.shape) != p["shape"]:
        raise IntegrityError("checkpoint shape does not match its data")
    return arr
