"""Guessed semantics: per-token encodings and name-based vector guesses.

``tokenize`` splits source on Python lexical boundaries, then splits
identifiers on underscores and case transitions, so ``celsius_to_fahrenheit``
contributes the subwords ``celsius``, ``to``, ``fahrenheit``.  ``Guesser``
runs a small attention encoder over the (truncated) token sequence once per
script and answers vector guesses for tree nodes by max-pooling the token
rows under a donor span:

  1. constants pool their own tokens,
  2. composite expressions pool their own tokens,
  3. bare names pool their name tokens,
  4. assignments pool the right-hand side,
  5. function definitions pool the body,
  6. for-statement iterator variables pool the iterable.

A node-kind type embedding is added after pooling.  Nodes whose tokens fell
beyond the truncation limit fall back to a learned default row.
"""

from __future__ import annotations

import bisect
import hashlib
import re
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import Config
from .nets import encoder_forward, init_encoder
from .parser import AstNode, NodeKind, SyntaxTree

_TOKEN_RE = re.compile(
    rb"(?P<string>(?:[rRbBuUfF]{1,2})?(?:'''(?:\\.|[^\\])*?'''|\"\"\"(?:\\.|[^\\])*?\"\"\""
    rb"|'(?:\\.|[^'\\\n])*'|\"(?:\\.|[^\"\\\n])*\"))"
    rb"|(?P<number>0[xXoObB][0-9A-Fa-f_]+"
    rb"|\d[\d_]*\.\d*(?:[eE][+-]?\d+)?[jJ]?"
    rb"|\.\d[\d_]*(?:[eE][+-]?\d+)?[jJ]?"
    rb"|\d[\d_]*(?:[eE][+-]?\d+)?[jJ]?)"
    rb"|(?P<ident>[A-Za-z_\x80-\xff][A-Za-z0-9_\x80-\xff]*)"
    rb"|(?P<op>\*\*=|//=|<<=|>>=|!=|>=|<=|==|->|:=|\+=|-=|\*=|/=|%=|&=|\|=|\^=|\*\*|//|<<|>>"
    rb"|[+\-*/%@&|^~<>=()\[\]{},:;.])"
    rb"|(?P<comment>#[^\n]*)"
    rb"|(?P<ws>\s+)"
    rb"|(?P<other>.)",
    re.DOTALL,
)

_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")
_STRING_PREFIX_RE = re.compile(r"^[rRbBuUfF]{1,2}")


@dataclass(frozen=True)
class Token:
    text: str
    span: tuple[int, int]


def _clean(text: str) -> str:
    return text.replace("\n", "\\n").replace("\t", "\\t")


def _split_identifier(raw: str, start: int) -> list[Token]:
    out = []
    cursor = start
    for chunk in raw.split("_"):
        for piece in _CAMEL_RE.split(chunk):
            if piece:
                width = len(piece.encode("utf-8"))
                out.append(Token(piece.lower(), (cursor, cursor + width)))
                cursor += width
        cursor += 1  # the underscore
    return out


def tokenize(source: str) -> list[Token]:
    """Lexical tokens with byte spans; comments and whitespace are dropped."""
    data = source.encode("utf-8")
    tokens: list[Token] = []
    for match in _TOKEN_RE.finditer(data):
        kind = match.lastgroup
        if kind in ("comment", "ws"):
            continue
        raw = match.group()
        span = (match.start(), match.end())
        if kind == "ident":
            text = raw.decode("utf-8", errors="replace")
            tokens.extend(_split_identifier(text, span[0]))
        elif kind == "string":
            text = raw.decode("utf-8", errors="replace")
            text = _STRING_PREFIX_RE.sub("", text)
            if len(text) >= 6 and text[:3] in ("'''", '"""'):
                text = text[3:-3]
            elif len(text) >= 2 and text[0] in "'\"":
                text = text[1:-1]
            tokens.append(Token(_clean(text[:32]), span))
        else:
            tokens.append(Token(_clean(raw.decode("utf-8", errors="replace")), span))
    return tokens


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    HEADER = "NIVOCAB v1"

    def __init__(self, tokens: list[str], oov_buckets: int):
        self.tokens = list(tokens)
        self.oov_buckets = oov_buckets
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def total_rows(self) -> int:
        return len(self.tokens) + self.oov_buckets

    def id_of(self, token: str) -> int:
        hit = self._index.get(token)
        if hit is not None:
            return hit
        return len(self.tokens) + zlib.crc32(token.encode("utf-8")) % self.oov_buckets

    @classmethod
    def build(cls, sources, max_size: int, oov_buckets: int) -> "Vocabulary":
        counts: dict[str, int] = {}
        for source in sources:
            for tok in tokenize(source):
                counts[tok.text] = counts.get(tok.text, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([t for t, _ in ranked[:max_size]], oov_buckets)

    def dump(self) -> str:
        lines = [f"{self.HEADER} {self.size} {self.oov_buckets}"]
        lines.extend(self.tokens)
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dump())

    @classmethod
    def loads(cls, text: str, origin: str = "<string>") -> "Vocabulary":
        lines = text.split("\n")
        head = lines[0].split()
        if len(head) != 4 or " ".join(head[:2]) != cls.HEADER:
            raise ValueError(f"{origin}: not a vocabulary file")
        size, buckets = int(head[2]), int(head[3])
        tokens = lines[1:1 + size]
        if len(tokens) != size:
            raise ValueError(f"{origin}: truncated vocabulary")
        return cls(tokens, buckets)

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read(), origin=path)

    def content_hash(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# encoding and pooling
# ---------------------------------------------------------------------------


@dataclass
class TokenEncoding:
    tokens: list[Token]        # the encoded (possibly truncated) prefix
    ids: np.ndarray
    vectors: ad.Tensor         # (L, H) rows aligned with tokens
    starts: list[int]

    def rows_in_span(self, span: tuple[int, int]) -> list[int]:
        lo = bisect.bisect_left(self.starts, span[0])
        rows = []
        for i in range(lo, len(self.tokens)):
            tok = self.tokens[i]
            if tok.span[0] >= span[1]:
                break
            if tok.span[1] <= span[1]:
                rows.append(i)
        return rows


class Guesser:
    """Per-script token encoder plus the pooling rules for vector guesses."""

    PREFIX = "guesser"

    def __init__(self, store: ad.ParameterStore, vocab: Vocabulary, config: Config,
                 fallback_row=None):
        self.store = store
        self.vocab = vocab
        self.config = config
        # zero-arg callable giving the row used when a node has no encoded tokens
        self.fallback_row = fallback_row
        self._kind_index = {kind: i for i, kind in enumerate(NodeKind)}

    @classmethod
    def init_params(cls, store: ad.ParameterStore, rng, vocab: Vocabulary, config: Config):
        store.add(f"{cls.PREFIX}.token_emb", rng.normal(0.0, 0.02, size=(vocab.total_rows, config.h)))
        store.add(f"{cls.PREFIX}.pos_emb", rng.normal(0.0, 0.02, size=(config.max_tokens, config.h)))
        store.add(f"{cls.PREFIX}.type_emb", rng.normal(0.0, 0.02, size=(len(NodeKind), config.h)))
        init_encoder(store, rng, cls.PREFIX, config.encoder_layers, config.h, config.ffn_mult)

    def encode(self, source: str) -> TokenEncoding:
        tokens = tokenize(source)[: self.config.max_tokens]
        ids = np.array([self.vocab.id_of(t.text) for t in tokens], dtype=np.int64)
        if len(tokens) == 0:
            vectors = ad.Tensor(np.zeros((0, self.config.h)))
        else:
            emb = ad.embedding_lookup(self.store[f"{self.PREFIX}.token_emb"], ids)
            pos = ad.slice_rows(self.store[f"{self.PREFIX}.pos_emb"], 0, len(tokens))
            vectors = encoder_forward(self.store, self.PREFIX, self.config.encoder_layers,
                                      self.config.encoder_heads, ad.add(emb, pos))
        return TokenEncoding(tokens=tokens, ids=ids, vectors=vectors,
                             starts=[t.span[0] for t in tokens])

    def donor_span(self, node: AstNode) -> tuple[int, int]:
        if node.kind is NodeKind.FunctionDefinition:
            return node.children[2].span          # body block
        if node.kind in (NodeKind.Assignment, NodeKind.AugmentedAssignment):
            return node.children[-1].span         # right-hand side
        if node.kind is NodeKind.For:
            return node.children[1].span          # iterable
        return node.span

    def guess_vector(self, node: AstNode, enc: TokenEncoding) -> ad.Tensor:
        """Pooled guess for ``node``: donor-token max-pool plus type embedding."""
        rows = enc.rows_in_span(self.donor_span(node))
        type_row = ad.row(self.store[f"{self.PREFIX}.type_emb"], self._kind_index[node.kind])
        if rows:
            lo, hi = rows[0], rows[-1] + 1
            if rows == list(range(lo, hi)):
                pooled = ad.max_pool_rows(ad.slice_rows(enc.vectors, lo, hi))
            else:
                pooled = ad.max_pool_rows(ad.concat([ad.row(enc.vectors, i) for i in rows], axis=0))
        elif self.fallback_row is not None:
            pooled = self.fallback_row()
        else:
            pooled = ad.tensor(np.zeros((1, self.config.h)))
        return ad.add(pooled, type_row)
