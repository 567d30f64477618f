"""Unify heterogeneous node attributes by rendering them to text and embedding.

Two embedders share one interface (``embedder(texts) -> EmbeddingBatch``):
:class:`RemoteEmbedder` speaks a small JSON-over-HTTP protocol, and
:class:`FallbackEmbedder` is a deterministic signed token-hashing embedder
for offline use and tests.

Wire protocol::

    POST {endpoint}/embed
    {"model": str, "max_tokens": int, "texts": [str, ...]}
    -> {"dim": int, "embeddings": [[float, ...], ...]}
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import string
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .graphstore import AttributedGraph

log = logging.getLogger(__name__)

DEFAULT_MODEL = "bert-base-multilingual-cased"
DEFAULT_MAX_TOKENS = 512


class TemplateError(KeyError):
    pass


class EmbeddingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TextTemplate:
    pattern: str
    field_order: tuple[str, ...] = ()

    def __post_init__(self):
        names = tuple(f for _, f, _, _ in string.Formatter().parse(self.pattern) if f)
        if not self.field_order:
            object.__setattr__(self, "field_order", tuple(dict.fromkeys(names)))
        elif set(names) != set(self.field_order):
            raise ValueError(f"placeholders {names} do not match field_order {self.field_order}")


WORKER_TEMPLATE = TextTemplate(
    "A worker whose approval rate is {approved_rate}, skipped rate is {skipped_rate}, "
    "expired rate is {expired_rate}, and rejection rate is {rejected_rate}."
)


def _render(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def textualize(record: dict, template: TextTemplate) -> str:
    """Fill the template from `record`; floats use their shortest round-trip form."""
    missing = [f for f in template.field_order if f not in record]
    if missing:
        raise TemplateError(f"record is missing attribute {missing[0]!r}")
    return template.pattern.format(**{f: _render(record[f]) for f in template.field_order})


@dataclass
class EmbeddingBatch:
    vectors: np.ndarray
    source: str

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 1:
            raise EmbeddingError(f"embedding batch must be M x d with d >= 1, got {v.shape}")
        self.vectors = v

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


_TOKEN = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def embed_fallback(texts, dim: int, seed: int = 0) -> EmbeddingBatch:
    """Signed token hashing into `dim` buckets, L2-normalized; empty text -> zeros."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    key = int(seed).to_bytes(8, "little", signed=True)
    out = np.zeros((len(texts), dim))
    for row, text in enumerate(texts):
        for tok in tokenize(text):
            h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8, key=key).digest(), "little")
            out[row, (h >> 1) % dim] += 1.0 if h & 1 else -1.0
        norm = np.linalg.norm(out[row])
        if norm > 0:
            out[row] /= norm
    return EmbeddingBatch(out, "fallback")


@dataclass
class FallbackEmbedder:
    dim: int = 64
    seed: int = 0

    def __call__(self, texts) -> EmbeddingBatch:
        return embed_fallback(list(texts), self.dim, self.seed)


@dataclass
class RemoteEmbedder:
    endpoint: str
    model_name: str = DEFAULT_MODEL
    max_tokens: int = DEFAULT_MAX_TOKENS
    batch_size: int = 32
    retries: int = 3
    backoff: float = 0.5
    timeout: float = 30.0

    def __call__(self, texts) -> EmbeddingBatch:
        return embed_remote(list(texts), self.endpoint, self.model_name, self.max_tokens,
                            self.batch_size, self.retries, self.backoff, self.timeout)


def _post_batch(url, payload, retries, backoff, timeout, session):
    last = None
    for attempt in range(retries):
        try:
            resp = session.post(url, json=payload, timeout=timeout)
            if resp.status_code != 200:
                raise EmbeddingError(f"embedding server returned HTTP {resp.status_code}")
            body = resp.json()
            if not isinstance(body, dict) or "embeddings" not in body or "dim" not in body:
                raise EmbeddingError("malformed embedding response")
            return body
        except (requests.RequestException, ValueError, EmbeddingError) as exc:
            last = exc
            if attempt + 1 < retries:
                time.sleep(backoff * 2**attempt)
    raise EmbeddingError(f"embedding request failed after {retries} attempts: {last}") from last


def embed_remote(texts, endpoint: str, model_name: str = DEFAULT_MODEL, max_tokens: int = DEFAULT_MAX_TOKENS,
                 batch_size: int = 32, retries: int = 3, backoff: float = 0.5,
                 timeout: float = 30.0) -> EmbeddingBatch:
    """Embed `texts` through the HTTP protocol, `batch_size` texts per request."""
    if not texts:
        raise ValueError("texts must be nonempty")
    url = endpoint.rstrip("/") + "/embed"
    rows, dim = [], None
    with requests.Session() as session:
        for start in range(0, len(texts), batch_size):
            chunk = texts[start:start + batch_size]
            body = _post_batch(url, {"model": model_name, "max_tokens": max_tokens, "texts": chunk},
                               retries, backoff, timeout, session)
            vecs = body["embeddings"]
            if len(vecs) != len(chunk):
                raise EmbeddingError(f"server returned {len(vecs)} embeddings for {len(chunk)} texts")
            d = int(body["dim"])
            if dim is None:
                dim = d
            if d != dim or any(len(v) != dim for v in vecs):
                raise EmbeddingError("inconsistent embedding dims in response")
            rows.extend(vecs)
    return EmbeddingBatch(np.asarray(rows, dtype=np.float64), "remote")


# ---------------------------------------------------------------- graph alignment


def load_node_attributes(path) -> dict[int, dict]:
    """Read a JSON-lines sidecar: one object per node with a "node_id" key."""
    table = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            table[int(rec.pop("node_id"))] = rec
    return table


def _node_texts(graph: AttributedGraph, mode: str, attributes, template) -> list[list[str]]:
    n = graph.num_nodes
    if isinstance(attributes, dict):
        missing = [i for i in range(n) if i not in attributes]
        if missing:
            raise ValueError(f"attribute table has no entry for node {missing[0]}")
        rows = [attributes[i] for i in range(n)]
    else:
        rows = list(attributes)
        if len(rows) != n:
            raise ValueError(f"attribute table has {len(rows)} rows for {n} nodes")
    if mode == "tabular":
        if template is None:
            raise ValueError("tabular mode requires a TextTemplate")
        return [[textualize(r, template)] for r in rows]
    if mode == "text":
        out = []
        for r in rows:
            t = r.get("text", "") if isinstance(r, dict) else r
            out.append([t] if isinstance(t, str) else list(t))
        return out
    raise ValueError(f"unknown mode {mode!r} (expected 'text' or 'tabular')")


def align_graph_features(graph: AttributedGraph, attributes, mode: str = "text",
                         template: TextTemplate | None = None, embedder=None) -> AttributedGraph:
    """Replace the feature matrix by text embeddings, one row per node.

    `attributes` maps node id -> record (tabular mode) or -> {"text": str or
    [str, ...]} / plain text (text mode); a list in node order also works.
    Nodes with several texts get the re-normalized mean of their vectors.
    """
    embedder = embedder or FallbackEmbedder()
    per_node = _node_texts(graph, mode, attributes, template)
    flat = [t for texts in per_node for t in texts]
    if not flat:
        raise ValueError("no texts to embed")
    batch = embedder(flat)
    if len(batch.vectors) != len(flat):
        raise EmbeddingError("embedder returned the wrong number of vectors")
    X = np.zeros((graph.num_nodes, batch.dim))
    pos = 0
    for i, texts in enumerate(per_node):
        k = len(texts)
        if k == 1:
            X[i] = batch.vectors[pos]
        elif k > 1:
            v = batch.vectors[pos:pos + k].mean(axis=0)
            norm = np.linalg.norm(v)
            X[i] = v / norm if norm > 0 else v
        pos += k
    prov = {**graph.provenance, "features": {"aligned": mode, "source": batch.source, "dim": batch.dim}}
    return graph.replace(features=X, provenance=prov)


def check_corpus_dims(graphs) -> int:
    """Common feature dim of a corpus; raises if graphs disagree."""
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ValueError(f"candidate corpus mixes embedding dims {sorted(dims)}")
    return dims.pop()
