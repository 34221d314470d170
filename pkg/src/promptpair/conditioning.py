"""Tokenization, the frozen base embedding table, and learnable pseudo-words.

The "text encoder" of this toy stack is a frozen embedding lookup; all
text-image interaction happens in the denoiser's cross-attention. Pseudo-words
are polarity-tagged blocks of k learnable vectors addressed by reserved token
ids, substituted into the conditioning matrix in place of their token names.
Gradients flow only into pseudo-word vectors, never into the base table.
"""

from __future__ import annotations

import base64
import json
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .errors import ArtifactError

__all__ = [
    "Vocabulary",
    "PseudoWord",
    "Conditioner",
    "PromptPair",
    "tokenize",
    "embed",
    "save_embeddings",
    "load_embeddings",
]

PAD_ID = 0
UNK_ID = 1
PSEUDO_ID_BASE = 1000
PSEUDO_ID_CAPACITY = 1024
DEFAULT_SEQ_LEN = 16

_TOKEN_RE = re.compile(r"[a-z0-9*][a-z0-9*\-]*")

EMBEDDING_FORMAT_VERSION = 1


@dataclass
class Vocabulary:
    """Base word -> id map plus the reserved id range for pseudo-words."""

    word_to_id: dict[str, int]

    @classmethod
    def from_words(cls, words: list[str]) -> "Vocabulary":
        mapping = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        for w in sorted(set(words)):
            wl = w.lower()
            if wl in mapping:
                continue
            nid = len(mapping)
            if nid >= PSEUDO_ID_BASE:
                raise ValueError("base vocabulary overflows the reserved pseudo-word range")
            mapping[wl] = nid
        return cls(word_to_id=mapping)

    @property
    def size(self) -> int:
        return len(self.word_to_id)

    def to_dict(self) -> dict:
        return dict(self.word_to_id)

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(word_to_id={str(k): int(v) for k, v in d.items()})


@dataclass
class PseudoWord:
    """A named block of k learnable embedding vectors with fixed polarity."""

    name: str
    polarity: str  # 'positive' | 'negative'
    vectors: torch.Tensor  # (k, d)
    id_start: int
    steps_trained: int = 0

    @property
    def k(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass
class PromptPair:
    positive: str
    negative: str


def tokenize(
    text: str,
    vocab: Vocabulary,
    registry: dict[str, PseudoWord] | None = None,
    length: int = DEFAULT_SEQ_LEN,
) -> torch.Tensor:
    """Lowercased split on whitespace/punctuation; unknown words map to UNK;
    a registered pseudo-word name expands to its k consecutive reserved ids.
    Always returns a LongTensor of exactly `length` ids (padded/truncated)."""
    registry = registry or {}
    ids: list[int] = []
    for tok in _TOKEN_RE.findall(text.lower()):
        pw = registry.get(tok)
        if pw is not None:
            ids.extend(range(pw.id_start, pw.id_start + pw.k))
        else:
            ids.append(vocab.word_to_id.get(tok, UNK_ID))
    ids = ids[:length]
    ids += [PAD_ID] * (length - len(ids))
    return torch.tensor(ids, dtype=torch.long)


def embed(
    tokens: torch.Tensor,
    table: torch.Tensor,
    registry: dict[str, PseudoWord],
) -> torch.Tensor:
    """Conditioning matrix for a (L,) or (B, L) id tensor.

    Base rows are gathered from the (detached) frozen table; pseudo rows come
    from the registry's current vectors, so gradients reach only those."""
    squeeze = tokens.ndim == 1
    ids = tokens.unsqueeze(0) if squeeze else tokens
    is_pseudo = ids >= PSEUDO_ID_BASE
    base_ids = torch.where(is_pseudo, torch.zeros_like(ids), ids)
    if (base_ids >= table.shape[0]).any():
        raise ValueError("token id exceeds base table size")
    out = table.detach()[base_ids].clone()

    covered = torch.zeros_like(ids, dtype=torch.bool)
    for pw in registry.values():
        mask = (ids >= pw.id_start) & (ids < pw.id_start + pw.k)
        if mask.any():
            rows = (ids[mask] - pw.id_start).long()
            out = out.to(pw.vectors.dtype) if out.dtype != pw.vectors.dtype else out
            out[mask] = pw.vectors[rows]
            covered |= mask
    if (is_pseudo & ~covered).any():
        bad = ids[is_pseudo & ~covered].unique().tolist()
        raise ValueError(f"unresolvable pseudo-word ids: {bad}")
    return out[0] if squeeze else out


class Conditioner:
    """Bundles vocabulary, frozen base table, and the pseudo-word registry."""

    def __init__(self, vocab: Vocabulary, table: torch.Tensor, seq_len: int = DEFAULT_SEQ_LEN):
        if table.shape[0] != vocab.size:
            raise ValueError(f"table rows {table.shape[0]} != vocab size {vocab.size}")
        self.vocab = vocab
        self.table = table.detach().clone()
        self.table.requires_grad_(False)
        self.seq_len = seq_len
        self.registry: dict[str, PseudoWord] = {}
        self._next_pseudo_id = PSEUDO_ID_BASE

    @property
    def dim(self) -> int:
        return int(self.table.shape[1])

    def tokenize(self, text: str) -> torch.Tensor:
        return tokenize(text, self.vocab, self.registry, self.seq_len)

    def embed_text(self, text: str) -> torch.Tensor:
        return embed(self.tokenize(text), self.table, self.registry)

    def register_pseudo_word(
        self,
        name: str,
        polarity: str,
        k: int,
        init: str = "word-mean",
        sigma: float = 0.01,
        word: str | None = None,
        generator: torch.Generator | None = None,
    ) -> PseudoWord:
        """Allocate a reserved id block and initialize k x d vectors.

        init: 'word-mean' (rows = mean of the frozen table), 'gaussian'
        (N(0, sigma^2)), or 'word' (copy a base word's embedding row)."""
        name = name.lower()
        if polarity not in ("positive", "negative"):
            raise ValueError(f"polarity must be 'positive' or 'negative', got {polarity!r}")
        if name in self.registry:
            raise ValueError(f"pseudo-word {name!r} already registered")
        if name in self.vocab.word_to_id:
            raise ValueError(f"{name!r} collides with a base vocabulary word")
        if k < 1:
            raise ValueError("k must be >= 1")
        if self._next_pseudo_id + k > PSEUDO_ID_BASE + PSEUDO_ID_CAPACITY:
            raise ValueError("k exceeds remaining reserved pseudo-word capacity")
        if not _TOKEN_RE.fullmatch(name):
            raise ValueError(f"pseudo-word name {name!r} does not survive tokenization")

        if init == "word-mean":
            vecs = self.table.mean(dim=0, keepdim=True).repeat(k, 1).clone()
        elif init == "gaussian":
            vecs = torch.empty(k, self.dim, dtype=self.table.dtype)
            vecs.normal_(0.0, sigma, generator=generator)
        elif init == "word":
            if word is None or word.lower() not in self.vocab.word_to_id:
                raise ValueError(f"init='word' needs a known base word, got {word!r}")
            row = self.table[self.vocab.word_to_id[word.lower()]]
            vecs = row.unsqueeze(0).repeat(k, 1).clone()
        else:
            raise ValueError(f"unknown init policy {init!r}")

        pw = PseudoWord(name=name, polarity=polarity, vectors=vecs, id_start=self._next_pseudo_id)
        self._next_pseudo_id += k
        self.registry[name] = pw
        return pw

    def install(self, entries: list[PseudoWord]) -> list[PseudoWord]:
        """Register loaded pseudo-words (fresh id blocks, vectors as given)."""
        out = []
        for e in entries:
            if e.dim != self.dim:
                raise ArtifactError(f"embedding dim {e.dim} != conditioner dim {self.dim}")
            if e.name in self.registry:
                raise ValueError(f"pseudo-word {e.name!r} already registered")
            if self._next_pseudo_id + e.k > PSEUDO_ID_BASE + PSEUDO_ID_CAPACITY:
                raise ValueError("k exceeds remaining reserved pseudo-word capacity")
            pw = PseudoWord(
                name=e.name,
                polarity=e.polarity,
                vectors=e.vectors.clone(),
                id_start=self._next_pseudo_id,
                steps_trained=e.steps_trained,
            )
            self._next_pseudo_id += e.k
            self.registry[pw.name] = pw
            out.append(pw)
        return out

    def table_fingerprint(self) -> str:
        from .fingerprint import tensor_fingerprint

        return tensor_fingerprint(self.table)


def compose_prompts(
    concepts: list[tuple[PseudoWord, PseudoWord]],
    template_pos: str,
    template_neg: str = "",
) -> PromptPair:
    """Build a positive/negative prompt pair referencing several concepts.

    Composition is token concatenation: each concept contributes its positive
    name into `template_pos` ('{}' slots, in order) and its negative name into
    `template_neg` (or a plain space-joined list when no template is given)."""
    if not concepts:
        raise ValueError("need at least one concept")
    pos_names, neg_names = [], []
    for i, pair in enumerate(concepts):
        pos, neg = pair
        if pos is None or pos.polarity != "positive":
            raise ValueError(f"concept {i}: missing or mispolarized positive pseudo-word")
        if neg is None or neg.polarity != "negative":
            raise ValueError(f"concept {i}: missing or mispolarized negative pseudo-word")
        pos_names.append(pos.name)
        neg_names.append(neg.name)
    try:
        positive = template_pos.format(*pos_names) if "{" in template_pos else (
            template_pos + " " + " ".join(pos_names) if template_pos else " ".join(pos_names)
        )
        negative = template_neg.format(*neg_names) if "{" in template_neg else (
            template_neg + " " + " ".join(neg_names) if template_neg else " ".join(neg_names)
        )
    except (IndexError, KeyError) as exc:
        raise ValueError(f"template does not match the number of concepts: {exc}") from exc
    return PromptPair(positive=positive.strip(), negative=negative.strip())


def sum_embeddings(concepts: list[tuple[PseudoWord, PseudoWord]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Experimental alternative to concatenation: element-wise sum of the
    concepts' vectors per polarity. Requires equal k. Not used by default."""
    ks = {p.k for pair in concepts for p in pair}
    if len(ks) != 1:
        raise ValueError("summation composition requires equal k across concepts")
    pos = torch.stack([pair[0].vectors for pair in concepts]).sum(dim=0)
    neg = torch.stack([pair[1].vectors for pair in concepts]).sum(dim=0)
    return pos, neg


def save_embeddings(registry: dict[str, PseudoWord], path: str | Path, names: list[str] | None = None) -> None:
    """Write pseudo-words as a versioned JSON artifact.

    vectors are base64 of little-endian float32, row-major; checksum is CRC32
    of the concatenated decoded payload across entries in file order."""
    entries = []
    payload = b""
    selected = names if names is not None else list(registry.keys())
    dim = None
    for name in selected:
        pw = registry[name.lower()]
        dim = pw.dim if dim is None else dim
        if pw.dim != dim:
            raise ValueError("mixed embedding dimensions in one artifact")
        raw = pw.vectors.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        payload += raw
        entries.append(
            {
                "name": pw.name,
                "polarity": pw.polarity,
                "k": pw.k,
                "steps_trained": pw.steps_trained,
                "vectors": base64.b64encode(raw).decode("ascii"),
            }
        )
    doc = {
        "format_version": EMBEDDING_FORMAT_VERSION,
        "dim": int(dim if dim is not None else 0),
        "entries": entries,
        "checksum": zlib.crc32(payload),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_embeddings(path: str | Path) -> list[PseudoWord]:
    """Read an embedding artifact; verifies version and CRC32 checksum.

    Returned entries carry vectors but no id block; install them into a
    Conditioner before use."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read embedding artifact {path}: {exc}") from exc
    if doc.get("format_version") != EMBEDDING_FORMAT_VERSION:
        raise ArtifactError(
            f"embedding artifact version {doc.get('format_version')!r} unsupported "
            f"(expected {EMBEDDING_FORMAT_VERSION})"
        )
    dim = int(doc["dim"])
    payload = b""
    out: list[PseudoWord] = []
    import numpy as np

    for e in doc["entries"]:
        raw = base64.b64decode(e["vectors"])
        payload += raw
        arr = np.frombuffer(raw, dtype="<f4").reshape(int(e["k"]), dim).copy()
        out.append(
            PseudoWord(
                name=str(e["name"]).lower(),
                polarity=str(e["polarity"]),
                vectors=torch.from_numpy(arr),
                id_start=-1,
                steps_trained=int(e.get("steps_trained", 0)),
            )
        )
    if zlib.crc32(payload) != int(doc["checksum"]):
        raise ArtifactError(f"embedding artifact {path} failed its checksum (corrupt payload)")
    return out
