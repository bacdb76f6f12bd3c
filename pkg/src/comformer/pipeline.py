"""Corpus ingestion, splitting and the preprocess, BPE, train, generate and
evaluate stages, plus the human-study sampler.

Every stage reads and writes a run directory::

    config.json                 effective configuration
    bpe/                        merges.txt, vocab.txt
    data/{train,valid,test}.jsonl   raw pairs per split
    data/{split}.ids.jsonl      processed examples
    data/skips.tsv              split, id, reason
    checkpoint/                 best-validation checkpoint (with bpe/ copy)
    last/                       most recent checkpoint with optimizer state
    train_log.tsv               step<TAB>loss
    valid_log.tsv               epoch<TAB>validation loss
    eval/                       report.txt, examples.tsv, generations.jsonl
    sample/human_study.tsv
"""

from __future__ import annotations

import json
import logging
import re
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import bpe as bpe_mod
from .bpe import EOS, SOS, BpeModel, load_bpe, save_bpe, train_bpe
from .checkpoint import load_checkpoint, save_checkpoint
from .generate import beam_search
from .java import LABELS, LexError, ParseError, UnsupportedConstruct, lex, normalize_code_tokens, parse_method
from .linearize import sim_sbt
from .metrics import EvalReport, build_report, corpus_stats, sample_size, z_for_confidence
from .model import ComFormerModel, ModelConfig, collate, make_rng, train_step
from .optim import AdamW

log = logging.getLogger(__name__)

MALFORMED_LIMIT = 0.10


class FormatError(ValueError):
    pass


class IoError(OSError):
    pass


class TooFewPairs(ValueError):
    pass


# -- configuration -------------------------------------------------------------


@dataclass
class RunConfig:
    out_dir: str = "run"
    corpus: str = ""
    corpus_format: str = "jsonl"
    comments: str = ""  # second file of a parallel-text corpus
    n_test: int = 200
    n_valid: int = 200
    seed: int = 0
    bpe_vocab_size: int = 8192
    beam_width: int = 5
    alpha: float = 0.0
    batch_size: int = 32
    epochs: int = 30
    lr: float = 5e-4
    weight_decay: float = 0.01
    bucket_width: int = 25
    workers: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.corpus_format not in ("jsonl", "parallel-text"):
            raise ValueError(f"corpus_format must be jsonl or parallel-text, got {self.corpus_format!r}")
        for name in ("n_test", "n_valid", "epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("bpe_vocab_size", "beam_width", "batch_size", "bucket_width", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``key=value`` (dotted keys reach into ``model``). Values parse
    as JSON when possible, otherwise stay strings."""
    if "=" not in assignment:
        raise ValueError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target = data
    *parents, leaf = key.strip().split(".")
    for p in parents:
        target = target.setdefault(p, {})
        if not isinstance(target, dict):
            raise ValueError(f"override {assignment!r}: {p} is not a section")
    target[leaf] = value


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    for item in overrides:
        apply_override(data, item)
    return RunConfig.from_dict(data)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def echo_config(config: RunConfig, directory: Path | None = None) -> None:
    write_json((directory or config.out) / "config.json", config.to_dict())


# -- ingestion -------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusPair:
    id: int
    code: str
    comment: str


@dataclass
class IngestResult:
    pairs: list[CorpusPair]
    skipped: int
    total: int


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\"}


def unescape_line(line: str) -> str:
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(0)), line)


def escape_field(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")


def _read_lines(path: str | Path) -> list[str]:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            return [line.rstrip("\r\n") for line in f]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 ({exc})") from exc


def _finish(pairs: list[CorpusPair], skipped: int, total: int, source) -> IngestResult:
    if total and skipped / total > MALFORMED_LIMIT:
        raise FormatError(f"{source}: {skipped} of {total} records malformed (limit {MALFORMED_LIMIT:.0%})")
    if skipped:
        log.warning("%s: skipped %d malformed record(s)", source, skipped)
    return IngestResult(pairs, skipped, total)


def ingest(path: str | Path, fmt: str = "jsonl", comments_path: str | Path | None = None) -> IngestResult:
    """Read a corpus as ordered pairs whose ids are their line numbers.

    ``jsonl`` holds one ``{"code": ..., "comment": ...}`` object per line.
    ``parallel-text`` pairs line ``i`` of ``path`` with line ``i`` of
    ``comments_path``; backslash escapes (``\\n``, ``\\t``, ``\\\\``) are decoded.

    Raises:
        IoError: If a file cannot be read.
        FormatError: If more than 10% of records are malformed.
    """
    pairs: list[CorpusPair] = []
    skipped = total = 0
    if fmt == "jsonl":
        for i, line in enumerate(_read_lines(path)):
            if not line.strip():
                continue
            total += 1
            try:
                obj = json.loads(line)
                code, comment = obj["code"], obj["comment"]
            except (json.JSONDecodeError, KeyError, TypeError):
                skipped += 1
                continue
            if not isinstance(code, str) or not isinstance(comment, str) or not code.strip() or not comment.strip():
                skipped += 1
                continue
            pairs.append(CorpusPair(i, code, comment))
        return _finish(pairs, skipped, total, path)
    if fmt == "parallel-text":
        if comments_path is None:
            raise FormatError("parallel-text needs a comments file")
        codes, comments = _read_lines(path), _read_lines(comments_path)
        if len(codes) != len(comments):
            raise FormatError(f"{path} has {len(codes)} lines but {comments_path} has {len(comments)}")
        for i, (code, comment) in enumerate(zip(codes, comments)):
            total += 1
            code, comment = unescape_line(code), unescape_line(comment)
            if not code.strip() or not comment.strip():
                skipped += 1
                continue
            pairs.append(CorpusPair(i, code, comment))
        return _finish(pairs, skipped, total, path)
    raise FormatError(f"unknown corpus format {fmt!r}")


def split(pairs: Sequence[CorpusPair], n_test: int, n_valid: int, seed: int):
    """Seeded shuffle, then carve off test and validation sets.

    Returns ``(train, valid, test)``, each ordered by id.

    Raises:
        TooFewPairs: If ``n_test + n_valid`` exceeds the corpus.
    """
    if n_test < 0 or n_valid < 0:
        raise ValueError("split sizes must be non-negative")
    if n_test + n_valid > len(pairs):
        raise TooFewPairs(f"cannot take {n_test} test + {n_valid} valid from {len(pairs)} pairs")
    order = make_rng(seed).permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    by_id = lambda xs: sorted(xs, key=lambda p: p.id)
    test = by_id(shuffled[:n_test])
    valid = by_id(shuffled[n_test : n_test + n_valid])
    train = by_id(shuffled[n_test + n_valid :])
    return train, valid, test


SPLITS = ("train", "valid", "test")


def save_pairs(path: Path, pairs: Iterable[CorpusPair]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            f.write(json.dumps({"id": p.id, "code": p.code, "comment": p.comment}, sort_keys=True) + "\n")


def load_pairs(path: Path) -> list[CorpusPair]:
    out = []
    for line in _read_lines(path):
        if line.strip():
            obj = json.loads(line)
            out.append(CorpusPair(obj["id"], obj["code"], obj["comment"]))
    return out


# -- preprocessing -----------------------------------------------------------------

_COMMENT_RE = re.compile(r"\w+|[^\w\s]")


def comment_tokens(text: str) -> list[str]:
    """Lowercased word and punctuation tokens."""
    return _COMMENT_RE.findall(text.lower())


def code_words(code: str) -> list[str]:
    return normalize_code_tokens(lex(code))


def bpe_training_texts(pairs: Iterable[CorpusPair]) -> Iterable[str]:
    for p in pairs:
        try:
            yield " ".join(code_words(p.code))
        except LexError:
            pass
        yield " ".join(comment_tokens(p.comment))


def bpe_specials() -> tuple[str, ...]:
    """Control symbols, literal tags and every AST label, all atomic."""
    return bpe_mod.DEFAULT_SPECIALS + tuple(LABELS)


@dataclass(frozen=True)
class ProcessedExample:
    id: int
    code_ids: tuple[int, ...]
    ast_ids: tuple[int, ...]
    comment_ids: tuple[int, ...]
    code_len: int

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "code": self.code_ids, "ast": self.ast_ids, "comment": self.comment_ids, "code_len": self.code_len},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> ProcessedExample:
        o = json.loads(line)
        return cls(o["id"], tuple(o["code"]), tuple(o["ast"]), tuple(o["comment"]), o["code_len"])

    def as_batch_item(self):
        return self.code_ids, self.ast_ids, self.comment_ids


@dataclass(frozen=True)
class Skip:
    id: int
    reason: str
    detail: str = ""


def encode_source(code: str, bpe: BpeModel, cfg: ModelConfig) -> tuple[list[int], list[int], int]:
    """Lex, parse and encode one method as (code ids, ast ids, raw token count).

    Both streams start with SOS and are cut to their configured maxima.
    """
    tokens = lex(code)
    tree = parse_method(tokens)
    code_ids = ([SOS] + bpe.encode_words(normalize_code_tokens(tokens)))[: cfg.max_code_len]
    ast_ids = ([SOS] + bpe.encode_words(sim_sbt(tree)))[: cfg.max_ast_len]
    return code_ids, ast_ids, len(tokens)


def encode_comment(comment: str, bpe: BpeModel, cfg: ModelConfig) -> list[int]:
    """``[SOS] + body + [EOS]``; the body keeps ``max_comment_len - 1`` ids so
    the teacher-forced decoder input fits the positional table."""
    body = bpe.encode_words(comment_tokens(comment))[: cfg.max_comment_len - 1]
    return [SOS] + body + [EOS]


def preprocess_one(pair: CorpusPair, bpe: BpeModel, cfg: ModelConfig) -> ProcessedExample | Skip:
    try:
        code_ids, ast_ids, n = encode_source(pair.code, bpe, cfg)
    except LexError as exc:
        return Skip(pair.id, "LexError", str(exc))
    except ParseError as exc:
        return Skip(pair.id, "ParseError", str(exc))
    except UnsupportedConstruct as exc:
        return Skip(pair.id, "UnsupportedConstruct", str(exc))
    except RecursionError:
        return Skip(pair.id, "TooDeep", "nesting exceeds the parser's recursion limit")
    comment_ids = encode_comment(pair.comment, bpe, cfg)
    if len(comment_ids) == 2:
        return Skip(pair.id, "EmptyComment", "no comment tokens")
    return ProcessedExample(pair.id, tuple(code_ids), tuple(ast_ids), tuple(comment_ids), n)


_WORKER: dict = {}


def _worker_init(bpe_dir: str, cfg: dict) -> None:
    _WORKER["bpe"] = load_bpe(bpe_dir)
    _WORKER["cfg"] = ModelConfig.from_dict(cfg)


def _worker_preprocess(pair: CorpusPair):
    return preprocess_one(pair, _WORKER["bpe"], _WORKER["cfg"])


def preprocess(
    pairs: Sequence[CorpusPair], bpe: BpeModel, cfg: ModelConfig, workers: int = 1, bpe_dir: str | Path | None = None
) -> tuple[list[ProcessedExample], list[Skip]]:
    """Preprocess every pair; failures become :class:`Skip` entries.

    With ``workers > 1`` the work fans out to processes that load the BPE
    model from ``bpe_dir``; results keep input order either way.
    """
    if workers > 1 and bpe_dir is not None and len(pairs) > 1:
        with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(str(bpe_dir), cfg.to_dict())) as ex:
            results = list(ex.map(_worker_preprocess, pairs, chunksize=64))
    else:
        results = [preprocess_one(p, bpe, cfg) for p in pairs]
    done = [r for r in results if isinstance(r, ProcessedExample)]
    skips = [r for r in results if isinstance(r, Skip)]
    return done, skips


def save_examples(path: Path, examples: Iterable[ProcessedExample]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in examples:
            f.write(e.to_json() + "\n")


def load_examples(path: Path) -> list[ProcessedExample]:
    return [ProcessedExample.from_json(line) for line in _read_lines(path) if line.strip()]


# -- stage drivers ------------------------------------------------------------------


def stage_train_bpe(config: RunConfig) -> BpeModel:
    """Ingest, split, store raw splits and fit BPE on the training split."""
    if not config.corpus:
        raise IoError("no corpus path configured")
    result = ingest(config.corpus, config.corpus_format, config.comments or None)
    train, valid, test = split(result.pairs, config.n_test, config.n_valid, config.seed)
    data = config.out / "data"
    for name, part in zip(SPLITS, (train, valid, test)):
        save_pairs(data / f"{name}.jsonl", part)
    model = train_bpe(bpe_training_texts(train), config.bpe_vocab_size, bpe_specials())
    save_bpe(model, config.out / "bpe")
    echo_config(config)
    log.info("ingested %d pairs (%d malformed); split %d/%d/%d; vocab %d",
             len(result.pairs), result.skipped, len(train), len(valid), len(test), len(model))
    return model


def stage_preprocess(config: RunConfig) -> dict[str, int]:
    bpe = load_bpe(config.out / "bpe")
    if config.model.vocab_size != len(bpe):
        log.info("model vocab_size %d replaced by BPE vocabulary size %d", config.model.vocab_size, len(bpe))
        config.model.vocab_size = len(bpe)
    data = config.out / "data"
    counts = {}
    skip_rows = ["split\tid\treason\tdetail"]
    for name in SPLITS:
        pairs = load_pairs(data / f"{name}.jsonl")
        done, skips = preprocess(pairs, bpe, config.model, config.workers, config.out / "bpe")
        save_examples(data / f"{name}.ids.jsonl", done)
        skip_rows += [f"{name}\t{s.id}\t{s.reason}\t{escape_field(s.detail)}" for s in skips]
        counts[name] = len(done)
        counts[f"{name}_skipped"] = len(skips)
    (data / "skips.tsv").write_text("\n".join(skip_rows) + "\n", encoding="utf-8")
    echo_config(config)
    return counts


def _batches(examples: Sequence[ProcessedExample], size: int, order: Sequence[int] | None = None):
    idx = list(range(len(examples))) if order is None else list(order)
    for i in range(0, len(idx), size):
        yield [examples[j].as_batch_item() for j in idx[i : i + size]]


def mean_loss(model: ComFormerModel, examples: Sequence[ProcessedExample], batch_size: int) -> float:
    """Token-weighted teacher-forced loss over ``examples``."""
    total = 0.0
    count = 0
    for batch in _batches(examples, batch_size):
        code, ast, comment = collate(batch)
        n = int((comment[:, 1:] != bpe_mod.PAD).sum())
        total += float(model.loss(code, ast, comment).data) * n
        count += n
    return total / count


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return make_rng([seed, epoch, stream])


def train_model(
    config: RunConfig,
    train_set: Sequence[ProcessedExample],
    valid_set: Sequence[ProcessedExample] = (),
    out: Path | None = None,
    resume: bool = False,
) -> Path:
    """Epoch loop over shuffled batches with a validation pass per epoch.

    Writes ``checkpoint/`` (best validation loss, or the latest when there
    is no validation set), ``last/`` with optimizer state for resuming, and
    the step/epoch loss logs. Returns the best checkpoint path.
    """
    out = out or config.out
    out.mkdir(parents=True, exist_ok=True)
    best_dir, last_dir = out / "checkpoint", out / "last"
    train_log, valid_log = out / "train_log.tsv", out / "valid_log.tsv"
    if resume and (last_dir / "manifest.json").exists():
        ck = load_checkpoint(last_dir)
        model, step, start_epoch = ck.model, ck.step, ck.epoch
        opt = AdamW(model.parameters(), state=ck.optimizer) if ck.optimizer else AdamW(
            model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        best = ck.extra.get("best_valid", float("inf"))
        _truncate_log(train_log, step)
        _truncate_log(valid_log, start_epoch)
    else:
        model = ComFormerModel(config.model)
        opt = AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        step = start_epoch = 0
        best = float("inf")
        train_log.write_text("step\tloss\n", encoding="utf-8")
        valid_log.write_text("epoch\tvalid_loss\n", encoding="utf-8")
        shutil.rmtree(last_dir, ignore_errors=True)
    bpe_dir = config.out / "bpe"

    def snapshot(directory: Path, epoch: int, with_opt: bool) -> None:
        save_checkpoint(directory, model, step, epoch, opt.state if with_opt else None, {"best_valid": best})
        if bpe_dir.exists():
            shutil.copytree(bpe_dir, directory / "bpe", dirs_exist_ok=True)

    if start_epoch == 0:
        snapshot(best_dir, 0, False)
    for epoch in range(start_epoch, config.epochs):
        if not train_set:
            raise TooFewPairs("training set is empty")
        order = _epoch_rng(config.seed, epoch, 0).permutation(len(train_set))
        model.dropout_rng = _epoch_rng(config.seed, epoch, 1)
        with open(train_log, "a", encoding="utf-8") as f:
            for batch in _batches(train_set, config.batch_size, order):
                loss = train_step(model, batch, opt)
                step += 1
                f.write(f"{step}\t{loss!r}\n")
        score = mean_loss(model, valid_set, config.batch_size) if valid_set else None
        with open(valid_log, "a", encoding="utf-8") as f:
            f.write(f"{epoch + 1}\t{score!r}\n")
        improved = score is None or score < best
        if score is not None and improved:
            best = score
        if improved:
            snapshot(best_dir, epoch + 1, False)
        snapshot(last_dir, epoch + 1, True)
        log.info("epoch %d step %d valid %s", epoch + 1, step, score)
    return best_dir


def _truncate_log(path: Path, keep: int) -> None:
    """Drop rows past ``keep`` so a resumed run appends cleanly."""
    if not path.exists():
        return
    lines = path.read_text(encoding="utf-8").splitlines()
    path.write_text("\n".join(lines[: keep + 1]) + "\n", encoding="utf-8")


def stage_train(config: RunConfig, resume: bool = False) -> Path:
    data = config.out / "data"
    train_set = load_examples(data / "train.ids.jsonl")
    valid_path = data / "valid.ids.jsonl"
    valid_set = load_examples(valid_path) if valid_path.exists() else []
    bpe = load_bpe(config.out / "bpe")
    config.model.vocab_size = len(bpe)
    echo_config(config)
    return train_model(config, train_set, valid_set, resume=resume)


@dataclass
class Generator:
    """A loaded checkpoint plus its BPE model, ready to comment methods."""

    model: ComFormerModel
    bpe: BpeModel

    @classmethod
    def load(cls, checkpoint: str | Path) -> Generator:
        checkpoint = Path(checkpoint)
        ck = load_checkpoint(checkpoint)
        bpe_dir = checkpoint / "bpe"
        if not bpe_dir.exists():
            bpe_dir = checkpoint.parent / "bpe"
        bpe = load_bpe(bpe_dir)
        if len(bpe) != ck.model.config.vocab_size:
            raise FormatError(f"BPE vocabulary ({len(bpe)}) does not match the checkpoint ({ck.model.config.vocab_size})")
        return cls(ck.model, bpe)

    def decode(self, ids: Sequence[int]) -> str:
        """Comment text with control symbols dropped and atomic symbols
        separated by spaces."""
        out = bytearray()
        n_control = len(bpe_mod.CONTROL_SPECIALS)
        for i in ids:
            tok = self.bpe.token(i)
            if isinstance(tok, bytes):
                out += tok
            elif i >= n_control:
                out += b" " + tok.encode("utf-8")
        return out.decode("utf-8", errors="replace").strip()

    def generate_ids(self, code_ids, ast_ids, beam: int = 5, alpha: float = 0.0) -> list[int]:
        hyps = beam_search(self.model, code_ids, ast_ids, beam, self.model.config.max_comment_len, alpha)
        return list(hyps[0].tokens)

    def comment(self, java_source: str, beam: int = 5, alpha: float = 0.0) -> str:
        """Comment one method.

        Raises:
            LexError, ParseError, UnsupportedConstruct: On bad input.
        """
        code_ids, ast_ids, _ = encode_source(java_source, self.bpe, self.model.config)
        return self.decode(self.generate_ids(code_ids, ast_ids, beam, alpha))


def generate(checkpoint: str | Path, java_source: str, beam: int = 5, alpha: float = 0.0) -> str:
    return Generator.load(checkpoint).comment(java_source, beam, alpha)


def _worker_gen_init(checkpoint: str) -> None:
    _WORKER["gen"] = Generator.load(checkpoint)


def _worker_generate(args):
    ex, beam, alpha = args
    return _WORKER["gen"].generate_ids(ex.code_ids, ex.ast_ids, beam, alpha)


def evaluate(
    checkpoint: str | Path,
    test_set: Sequence[ProcessedExample],
    config: RunConfig,
    out: Path | None = None,
) -> EvalReport:
    """Generate for every test example and score against the references.

    References are the stored comment ids decoded the same way as the
    candidates, so both sides share one tokenization.
    """
    gen = Generator.load(checkpoint)
    jobs = [(ex, config.beam_width, config.alpha) for ex in test_set]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers, initializer=_worker_gen_init, initargs=(str(checkpoint),)) as ex:
            outputs = list(ex.map(_worker_generate, jobs))
    else:
        outputs = [gen.generate_ids(ex.code_ids, ex.ast_ids, b, a) for ex, b, a in jobs]
    cand_text = [gen.decode(ids) for ids in outputs]
    ref_text = [gen.decode(ex.comment_ids) for ex in test_set]
    report = build_report(
        [ex.id for ex in test_set],
        [comment_tokens(t) for t in cand_text],
        [comment_tokens(t) for t in ref_text],
        [ex.code_len for ex in test_set],
        config.bucket_width,
    )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (out / "examples.tsv").write_text(report.to_tsv(), encoding="utf-8")
        with open(out / "generations.jsonl", "w", encoding="utf-8", newline="\n") as f:
            for ex, c, r in zip(test_set, cand_text, ref_text):
                f.write(json.dumps({"id": ex.id, "generated": c, "reference": r}, sort_keys=True) + "\n")
    return report


def stage_evaluate(config: RunConfig) -> EvalReport:
    test_set = load_examples(config.out / "data" / "test.ids.jsonl")
    echo_config(config, config.out / "eval")
    return evaluate(config.out / "checkpoint", test_set, config, config.out / "eval")


# -- statistics and sampling -------------------------------------------------------------


def stats_for_pairs(pairs: Iterable[CorpusPair]):
    """Length statistics of raw lexed code tokens and comment tokens.
    Methods that fail to lex are left out; returns (stats, lex failures)."""
    code_lengths, comment_lengths = [], []
    failures = 0
    for p in pairs:
        try:
            n = len(lex(p.code))
        except LexError:
            failures += 1
            continue
        code_lengths.append(n)
        comment_lengths.append(len(comment_tokens(p.comment)))
    return corpus_stats(code_lengths, comment_lengths), failures


def sample_human_study(
    rows: Sequence[tuple[str, str, str]], e: float = 0.05, confidence: float = 0.95, seed: int = 0
) -> list[tuple[str, str, str]]:
    """Uniform sample without replacement of (code, generated, reference)
    rows, sized by the finite-population formula and clamped to the input."""
    if not rows:
        return []
    n = sample_size(e, z_for_confidence(confidence), len(rows))
    picked = sorted(make_rng(seed).choice(len(rows), size=n, replace=False))
    return [rows[i] for i in picked]


def stage_sample(config: RunConfig, e: float = 0.05, confidence: float = 0.95) -> Path:
    test_pairs = {p.id: p for p in load_pairs(config.out / "data" / "test.jsonl")}
    rows = []
    for line in _read_lines(config.out / "eval" / "generations.jsonl"):
        if line.strip():
            g = json.loads(line)
            rows.append((test_pairs[g["id"]].code, g["generated"], g["reference"]))
    sample = sample_human_study(rows, e, confidence, config.seed)
    path = config.out / "sample" / "human_study.tsv"
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["code\tgenerated\treference"] + ["\t".join(escape_field(x) for x in row) for row in sample]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
