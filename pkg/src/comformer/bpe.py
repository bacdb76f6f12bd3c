"""Byte-level BPE with one vocabulary shared by code, AST and comment streams.

Id layout: reserved specials first (``PAD=0, SOS=1, EOS=2, SEP=3``, the two
literal tags, then any extra atomic symbols such as AST labels), then the
256 single-byte tokens, then merge products in learned order.

Text is pre-segmented GPT-2 style into words carrying at most one leading
space (``" ?\\S+"``) and whitespace runs. Merges never cross these
boundaries. Words equal to an atomic special map to that special's id.
"""

from __future__ import annotations

import functools
import heapq
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .java.normalize import NUM_TAG, STR_TAG

CONTROL_SPECIALS = ("<pad>", "<sos>", "<eos>", "<sep>")
PAD, SOS, EOS, SEP = range(4)
DEFAULT_SPECIALS: tuple[str, ...] = CONTROL_SPECIALS + (NUM_TAG, STR_TAG)

_PRETOKEN_RE = re.compile(rb" ?\S+|\s+(?!\S)|\s+")

MERGES_FILE = "merges.txt"
VOCAB_FILE = "vocab.txt"


class VocabTooSmall(ValueError):
    pass


class UnknownId(ValueError):
    pass


@functools.lru_cache(maxsize=None)
def byte_to_char() -> tuple[str, ...]:
    """Printable stand-in character for every byte (GPT-2 convention), used
    only for the text serialization of byte tokens."""
    keep = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    table = {}
    extra = 0
    for b in range(256):
        if b in keep:
            table[b] = chr(b)
        else:
            table[b] = chr(256 + extra)
            extra += 1
    return tuple(table[b] for b in range(256))


@functools.lru_cache(maxsize=None)
def _char_to_byte() -> dict[str, int]:
    return {c: b for b, c in enumerate(byte_to_char())}


def _bytes_to_str(data: bytes) -> str:
    table = byte_to_char()
    return "".join(table[b] for b in data)


def _str_to_bytes(text: str) -> bytes:
    table = _char_to_byte()
    return bytes(table[c] for c in text)


class BpeModel:
    """Trained merge rules plus the shared vocabulary.

    Instances are immutable after construction; ``encode``/``decode`` are
    safe to call from many threads.
    """

    def __init__(self, specials: Sequence[str], merges: Sequence[tuple[bytes, bytes]]) -> None:
        specials = tuple(specials)
        if specials[: len(CONTROL_SPECIALS)] != CONTROL_SPECIALS:
            raise ValueError(f"specials must start with {CONTROL_SPECIALS}")
        if len(set(specials)) != len(specials) or any(not s or any(c.isspace() for c in s) for s in specials):
            raise ValueError("specials must be unique, non-empty and free of whitespace")
        self.specials = specials
        self.merges = tuple((bytes(a), bytes(b)) for a, b in merges)

        n_special = len(specials)
        self.byte_offset = n_special
        self._tokens: list[str | bytes] = list(specials) + [bytes([b]) for b in range(256)]
        self._byte_ids: dict[bytes, int] = {bytes([b]): n_special + b for b in range(256)}
        self._ranks: dict[tuple[int, int], tuple[int, int]] = {}
        for rank, (left, right) in enumerate(self.merges):
            try:
                a, b = self._byte_ids[left], self._byte_ids[right]
            except KeyError as exc:
                raise ValueError(f"merge {rank} uses a token not yet in the vocabulary: {exc}") from None
            product = left + right
            new_id = self._byte_ids.get(product)
            if new_id is None:
                new_id = len(self._tokens)
                self._tokens.append(product)
                self._byte_ids[product] = new_id
            self._ranks.setdefault((a, b), (rank, new_id))
        self._special_ids = {s: i for i, s in enumerate(specials)}
        self._atomic = {s.encode("utf-8"): i for i, s in enumerate(specials) if i >= len(CONTROL_SPECIALS)}
        self._piece_cache = functools.lru_cache(maxsize=1 << 16)(self._encode_piece)

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BpeModel) and self.specials == other.specials and self.merges == other.merges

    def __hash__(self) -> int:
        return hash((self.specials, self.merges))

    @property
    def vocab(self) -> list[str | bytes]:
        """Tokens indexed by id: specials are ``str``, learned tokens ``bytes``."""
        return list(self._tokens)

    def special_id(self, name: str) -> int:
        return self._special_ids[name]

    def token(self, token_id: int) -> str | bytes:
        return self._tokens[token_id]

    def _encode_piece(self, piece: bytes) -> tuple[int, ...]:
        seq = [self._byte_ids[piece[i:i + 1]] for i in range(len(piece))]
        ranks = self._ranks
        while len(seq) > 1:
            best = None
            for pair in zip(seq, seq[1:]):
                r = ranks.get(pair)
                if r is not None and (best is None or r[0] < best[0]):
                    best = r
                    best_pair = pair
            if best is None:
                break
            new_id = best[1]
            a, b = best_pair
            merged = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            seq = merged
        return tuple(seq)

    def encode(self, text: str | bytes) -> list[int]:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        ids: list[int] = []
        for piece in _PRETOKEN_RE.findall(data):
            core = piece[1:] if piece[:1] == b" " else piece
            special = self._atomic.get(core)
            if special is not None:
                if core is not piece:
                    ids.append(self._byte_ids[b" "])
                ids.append(special)
            else:
                ids.extend(self._piece_cache(piece))
        return ids

    def encode_words(self, words: Iterable[str]) -> list[int]:
        """Encode a word sequence as if space-joined, without spending ids on
        the separators: each word is encoded with one leading space and
        atomic specials map straight to their id."""
        ids: list[int] = []
        for w in words:
            special = self._atomic.get(w.encode("utf-8"))
            if special is not None:
                ids.append(special)
            else:
                ids.extend(self.encode(" " + w))
        return ids

    def decode_bytes(self, ids: Iterable[int]) -> bytes:
        out = bytearray()
        n_control = len(CONTROL_SPECIALS)
        for i in ids:
            if not 0 <= i < len(self._tokens):
                raise UnknownId(f"token id {i} outside vocabulary of size {len(self._tokens)}")
            tok = self._tokens[i]
            if isinstance(tok, bytes):
                out += tok
            elif i >= n_control:
                out += tok.encode("utf-8")
        return bytes(out)

    def decode(self, ids: Iterable[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")


def encode(model: BpeModel, text: str | bytes) -> list[int]:
    return model.encode(text)


def decode(model: BpeModel, ids: Iterable[int]) -> str:
    return model.decode(ids)


def train_bpe(texts: Iterable[str | bytes], vocab_size: int, specials: Sequence[str] = DEFAULT_SPECIALS) -> BpeModel:
    """Learn merges by repeatedly fusing the most frequent adjacent pair.

    Ties go to the pair whose (left bytes, right bytes) sorts first. Training
    stops at ``vocab_size`` tokens or when no pair occurs twice.

    Raises:
        VocabTooSmall: If ``vocab_size < 256 + len(specials)``.
    """
    specials = tuple(specials)
    floor = 256 + len(specials)
    if vocab_size < floor:
        raise VocabTooSmall(f"vocab_size {vocab_size} below the minimum {floor}")
    atomic = {s.encode("utf-8") for s in specials[len(CONTROL_SPECIALS):]}

    word_counts: Counter[bytes] = Counter()
    for text in texts:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        for piece in _PRETOKEN_RE.findall(data):
            core = piece[1:] if piece[:1] == b" " else piece
            if core in atomic:
                continue
            word_counts[piece] += 1

    # token ids here are local: 0..255 are bytes, then merge products
    tok_bytes: list[bytes] = [bytes([b]) for b in range(256)]
    tok_index: dict[bytes, int] = {t: i for i, t in enumerate(tok_bytes)}
    words = [list(w) for w in word_counts]
    freqs = list(word_counts.values())
    pair_counts: Counter[tuple[int, int]] = Counter()
    where: dict[tuple[int, int], set[int]] = {}
    for wi, seq in enumerate(words):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += freqs[wi]
            where.setdefault(pair, set()).add(wi)

    heap = [(-c, tok_bytes[a], tok_bytes[b], a, b) for (a, b), c in pair_counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[bytes, bytes]] = []
    n_tokens = floor
    while n_tokens < vocab_size and heap:
        neg, _, _, a, b = heapq.heappop(heap)
        if pair_counts.get((a, b), 0) != -neg:
            continue  # stale entry
        if -neg < 2:
            break
        product = tok_bytes[a] + tok_bytes[b]
        new = tok_index.get(product)
        if new is None:
            new = len(tok_bytes)
            tok_bytes.append(product)
            tok_index[product] = new
            n_tokens += 1
        merges.append((tok_bytes[a], tok_bytes[b]))

        touched: set[tuple[int, int]] = set()
        for wi in sorted(where.pop((a, b), ())):
            seq, f = words[wi], freqs[wi]
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] -= f
                touched.add(pair)
                s = where.get(pair)
                if s is not None:
                    s.discard(wi)
            merged = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
                    merged.append(new)
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            words[wi] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += f
                touched.add(pair)
                where.setdefault(pair, set()).add(wi)
        for pair in touched:
            c = pair_counts[pair]
            if c <= 0:
                del pair_counts[pair]
            else:
                heapq.heappush(heap, (-c, tok_bytes[pair[0]], tok_bytes[pair[1]], pair[0], pair[1]))
    return BpeModel(specials, merges)


def save_bpe(model: BpeModel, directory: str | Path) -> None:
    """Write ``merges.txt`` (``left right`` per line) and ``vocab.txt``
    (one token per line, line number = id)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MERGES_FILE, "w", encoding="utf-8", newline="\n") as f:
        for left, right in model.merges:
            f.write(f"{_bytes_to_str(left)} {_bytes_to_str(right)}\n")
    with open(directory / VOCAB_FILE, "w", encoding="utf-8", newline="\n") as f:
        for tok in model.vocab:
            f.write((tok if isinstance(tok, str) else _bytes_to_str(tok)) + "\n")


def load_bpe(directory: str | Path) -> BpeModel:
    directory = Path(directory)
    merges = []
    with open(directory / MERGES_FILE, encoding="utf-8", newline="\n") as f:
        for line in f:
            left, right = line.rstrip("\n").split(" ")
            merges.append((_str_to_bytes(left), _str_to_bytes(right)))
    with open(directory / VOCAB_FILE, encoding="utf-8", newline="\n") as f:
        lines = [line.rstrip("\n") for line in f]
    alphabet = list(byte_to_char())
    n_special = next((s for s in range(len(lines) - 255) if lines[s:s + 256] == alphabet), None)
    if n_special is None:
        raise ValueError(f"{directory / VOCAB_FILE}: byte alphabet not found")
    model = BpeModel(lines[:n_special], merges)
    stored = lines[n_special + 256:]
    rebuilt = [_bytes_to_str(t) for t in model.vocab[n_special + 256:]]
    if stored != rebuilt:
        raise ValueError(f"{directory / VOCAB_FILE} disagrees with {MERGES_FILE}")
    return model
