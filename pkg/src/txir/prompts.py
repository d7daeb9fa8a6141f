"""Fuzzy region/scene prompt grammar and embedding providers.

A prompt names the region where targets should be found and the scene they
sit in, instead of a concrete target class:

    "A photo of a <region> target in the <scene> background"

Two providers turn the rendered string into a fixed-length unit vector: a
deterministic hashed bag-of-words embedder (no pretrained weights needed)
and a loader for the TXEMB interchange file produced by an external
pretrained text encoder.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64, fnv1a64
from .tensor import TxirError

_TOKEN_RE = re.compile(r"^[a-z0-9][a-z0-9-]*$")
_TEMPLATE = "A photo of a {region} target in the {scene} background"
_PARSE_RE = re.compile(r"^A photo of a (.+?) target in the (.+) background$")


class PromptError(TxirError, ValueError):
    """Invalid prompt field or unparsable prompt string."""


def _normalize_words(text: str, field: str) -> str:
    words = text.split()
    if not words:
        raise PromptError(f"{field} must be a non-empty word sequence")
    for word in words:
        if not _TOKEN_RE.match(word):
            raise PromptError(f"{field} word {word!r} must be lowercase [a-z0-9-]")
    return " ".join(words)


@dataclass(frozen=True)
class PromptSpec:
    """Region of interest and scene, each a lowercase word sequence."""

    interested_region: str
    scene: str

    def __post_init__(self):
        region = _normalize_words(self.interested_region, "interested_region")
        scene = _normalize_words(self.scene, "scene")
        # "target" inside the region would collide with the template's own
        # delimiter and break the render/parse inverse.
        if "target" in region.split():
            raise PromptError("interested_region may not contain the word 'target'")
        object.__setattr__(self, "interested_region", region)
        object.__setattr__(self, "scene", scene)


def render_prompt(spec: PromptSpec) -> str:
    return _TEMPLATE.format(region=spec.interested_region, scene=spec.scene)


def parse_prompt(text: str) -> PromptSpec:
    """Inverse of render_prompt; internal whitespace is normalized first."""
    normalized = " ".join(text.split())
    m = _PARSE_RE.match(normalized)
    if not m:
        prefix = "A photo of a "
        if not normalized.startswith(prefix):
            raise PromptError(f"prompt does not start with {prefix!r}: {normalized!r}")
        raise PromptError(f"prompt does not fill the region/scene template: {normalized!r}")
    return PromptSpec(interested_region=m.group(1), scene=m.group(2))


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TextEmbedding:
    """Unit-norm embedding of one exact prompt string."""

    vector: np.ndarray          # float64, L2 norm 1 within 1e-6
    source: str                 # "toy" or "file"
    prompt: str


def toy_embed(prompt: str, d_t: int = 512, seed: int = 0) -> TextEmbedding:
    """Deterministic hashed bag-of-words embedding.

    Each whitespace token is lowercased and hashed with 64-bit FNV-1a, the
    hash is XORed with ``seed``, and a splitmix64 stream keyed by the result
    emits ``d_t`` uniform(-1, 1) components. Token vectors are summed and the
    sum is L2-normalized, so prompts sharing tokens get correlated vectors
    and token order does not matter.
    """
    if d_t < 8:
        raise PromptError(f"embedding dimension must be >= 8, got {d_t}")
    tokens = prompt.lower().split()
    if not tokens:
        raise PromptError("cannot embed an empty prompt")
    acc = np.zeros(d_t, dtype=np.float64)
    for token in tokens:
        stream = SplitMix64(fnv1a64(token.encode("utf-8")) ^ seed)
        acc += [stream.next_symmetric() for _ in range(d_t)]
    norm = float(np.linalg.norm(acc))
    if norm < 1e-12:
        raise PromptError(f"degenerate embedding for prompt {prompt!r}")
    return TextEmbedding(vector=acc / norm, source="toy", prompt=prompt)


# --------------------------------------------------------------------------
# TXEMB interchange file
#
#   TXEMB 1 <d_t>\n
#   <exact prompt string>\n
#   <d_t space-separated decimal floats>\n
#   ... repeated per entry
# --------------------------------------------------------------------------

TXEMB_VERSION = 1


def write_embeddings(path, embeddings: dict[str, np.ndarray]) -> None:
    if not embeddings:
        raise TxirError("refusing to write an empty embedding file")
    dims = {len(v) for v in embeddings.values()}
    if len(dims) != 1:
        raise TxirError(f"inconsistent embedding dimensions {sorted(dims)}")
    d_t = dims.pop()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"TXEMB {TXEMB_VERSION} {d_t}\n")
        for prompt, vec in embeddings.items():
            if "\n" in prompt:
                raise TxirError(f"prompt may not contain newlines: {prompt!r}")
            fh.write(prompt + "\n")
            fh.write(" ".join(repr(float(x)) for x in vec) + "\n")


def load_embeddings(path) -> dict[str, TextEmbedding]:
    """Load a TXEMB file keyed by exact prompt string; vectors unit-normalized."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TxirError(f"{path}: empty embedding file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "TXEMB":
        raise TxirError(f"{path}: bad header {lines[0]!r}, expected 'TXEMB 1 <dim>'")
    if int(header[1]) != TXEMB_VERSION:
        raise TxirError(f"{path}: unsupported version {header[1]}")
    d_t = int(header[2])
    if d_t <= 0:
        raise TxirError(f"{path}: non-positive dimension {d_t}")
    if (len(lines) - 1) % 2 != 0:
        raise TxirError(f"{path}: dangling entry (prompt without vector)")
    out: dict[str, TextEmbedding] = {}
    for i in range(1, len(lines), 2):
        prompt = lines[i]
        values = lines[i + 1].split()
        if len(values) != d_t:
            raise TxirError(f"{path}: entry {prompt!r} has {len(values)} values, expected {d_t}")
        vec = np.array([float(v) for v in values], dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            raise TxirError(f"{path}: zero-norm vector for {prompt!r}")
        # Leave already-unit vectors untouched so write->read round-trips
        # bit-exactly; renormalize anything else.
        if abs(norm - 1.0) > 1e-9:
            vec = vec / norm
        out[prompt] = TextEmbedding(vector=vec, source="file", prompt=prompt)
    return out


# --------------------------------------------------------------------------
# providers: read-only after construction, safe for concurrent lookup
# --------------------------------------------------------------------------

class ToyEmbeddingProvider:
    """Computes toy embeddings on demand; deterministic in (d_t, seed)."""

    source = "toy"

    def __init__(self, d_t: int = 512, seed: int = 0):
        if d_t < 8:
            raise PromptError(f"embedding dimension must be >= 8, got {d_t}")
        self.d_t = d_t
        self.seed = seed

    def get(self, prompt: str) -> TextEmbedding:
        return toy_embed(prompt, self.d_t, self.seed)


class FileEmbeddingProvider:
    """Serves embeddings loaded from a TXEMB file; unknown prompts are errors."""

    source = "file"

    def __init__(self, path):
        self._table = load_embeddings(path)
        self.d_t = len(next(iter(self._table.values())).vector)
        self.path = str(path)

    def get(self, prompt: str) -> TextEmbedding:
        try:
            return self._table[prompt]
        except KeyError:
            near = difflib.get_close_matches(prompt, self._table.keys(), n=1, cutoff=0.0)
            hint = f"; nearest known prompt: {near[0]!r}" if near else ""
            raise TxirError(f"unknown prompt {prompt!r} in {self.path}{hint}") from None

    def prompts(self) -> list[str]:
        return list(self._table.keys())
