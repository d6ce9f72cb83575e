"""Text view of a load window: statistics, fixed template, tokenizer, negatives."""
from __future__ import annotations

import operator
import re
import string
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import ContractError

STAT_NAMES = ("seasonality", "trend", "minimum", "maximum", "mean", "kurtosis", "skewness")
ENTITY_LEVELS = ("user-level", "building-level", "distribution network")
RESOLUTIONS = ("1 hour", "15 min", "30 min", "1 day")
NEGATIVE_KINDS = ("context_swap", "semantic_tamper")


@dataclass
class WindowStats:
    seasonality: float
    trend: float
    min: float
    max: float
    mean: float
    kurtosis: float
    skewness: float
    constant: bool = False
    seasonality_degenerate: bool = False

    def as_dict(self) -> dict[str, float]:
        return {"seasonality": self.seasonality, "trend": self.trend, "minimum": self.min,
                "maximum": self.max, "mean": self.mean, "kurtosis": self.kurtosis,
                "skewness": self.skewness}


def _channel_stats(x: np.ndarray, period_hint: int) -> WindowStats:
    n = x.size
    mu = float(x.mean())
    xc = x - mu
    m2 = float(np.mean(xc ** 2))
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    trend = float(np.dot(tc, x) / np.dot(tc, tc)) if n > 1 else 0.0
    constant = m2 <= 1e-24 * max(1.0, mu * mu)
    if constant:
        skew = kurt = 0.0
    else:
        skew = float(np.mean(xc ** 3) / m2 ** 1.5)
        kurt = float(np.mean(xc ** 4) / m2 ** 2)
    degenerate = constant or period_hint < 1 or n < 2 * period_hint
    if degenerate:
        season = 0.0
    else:
        a, b = x[:-period_hint], x[period_hint:]
        a, b = a - a.mean(), b - b.mean()
        den = np.sqrt(np.dot(a, a) * np.dot(b, b))
        season = 0.0 if den == 0 else max(0.0, min(1.0, float(np.dot(a, b) / den)))
    return WindowStats(season, trend, float(x.min()), float(x.max()), mu, kurt, skew,
                       constant=constant, seasonality_degenerate=degenerate)


def compute_stats(history: np.ndarray, period_hint: int = 24) -> list[WindowStats]:
    """Per-channel statistics of an (l, d) history.

    Seasonality is the Pearson autocorrelation at lag ``period_hint``,
    clipped below at 0; trend is the least-squares slope per step; kurtosis
    is the plain (non-excess) standardized fourth moment.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[:, None]
    return [_channel_stats(history[:, c], period_hint) for c in range(history.shape[1])]


# --------------------------------------------------------------------------
# knowledge rules

_COMPARATORS = {">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le}
_RULE_RE = re.compile(r"^\s*(\w+)\s*(>=|<=|>|<)\s*([-+0-9.eE]+)\s*=\s*(.+?)\s*$")


@dataclass(frozen=True)
class Rule:
    stat: str
    comparator: str
    threshold: float
    statement: str

    def matches(self, stats: dict[str, float]) -> bool:
        return _COMPARATORS[self.comparator](stats[self.stat], self.threshold)


def parse_rules(text: str) -> list[Rule]:
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _RULE_RE.match(line)
        if not m:
            raise ValueError(f"rule table line {lineno}: cannot parse {line!r}")
        stat, comp, thr, stmt = m.groups()
        if stat not in STAT_NAMES:
            raise ValueError(f"rule table line {lineno}: unknown statistic {stat!r}")
        rules.append(Rule(stat, comp, float(thr), stmt))
    return rules


def load_rules(path=None) -> list[Rule]:
    if path is None:
        text = resources.files("prismnet.resources").joinpath("knowledge_rules.txt").read_text()
    else:
        text = Path(path).read_text()
    return parse_rules(text)


# --------------------------------------------------------------------------
# template


@dataclass
class TextView:
    task_part: str
    stat_part: str
    knowledge_part: str
    fields: dict[str, str] = field(default_factory=dict)
    tokens: list[int] = field(default_factory=list)
    is_negative: bool = False
    negative_kind: str = "none"

    @property
    def text(self) -> str:
        return self.task_part + self.stat_part + self.knowledge_part


def _fmt(x: float) -> str:
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def _task_part(f: dict[str, str]) -> str:
    return (f"Task: forecast the next <{f['horizon']}> steps. The subject is "
            f"{f['entity_level']} load sampled every {f['resolution']}. ")


def _stat_part(f: dict[str, str], n_channels: int) -> str:
    if n_channels == 0:
        return ""
    chunks = []
    for c in range(n_channels):
        items = ", ".join(f"the {s} is <{f[f'{s}[{c}]']}>" for s in STAT_NAMES)
        chunks.append(f"Channel {c}: {items}.")
    return "Statistics: " + " ".join(chunks) + " "


def _compose(fields: dict[str, str], n_channels: int, knowledge: str) -> tuple[str, str, str]:
    return _task_part(fields), _stat_part(fields, n_channels), knowledge


def knowledge_statements(stats: Sequence[WindowStats], rules: Sequence[Rule]) -> list[str]:
    if not stats:
        return []
    avg = {k: float(np.mean([s.as_dict()[k] for s in stats])) for k in STAT_NAMES}
    return [r.statement for r in rules if r.matches(avg)]


def render_text(stats: Sequence[WindowStats], meta: dict, rules: Sequence[Rule] | None = None,
                include_stats: bool = True, include_knowledge: bool = True) -> TextView:
    """Fill the three-part template.

    ``meta`` carries ``entity_level``, ``resolution`` and ``horizon``.
    Numbers are written with three decimals inside angle brackets.
    """
    if isinstance(stats, WindowStats):
        stats = [stats]
    for s in stats:
        if not all(np.isfinite(v) for v in s.as_dict().values()):
            raise ContractError("statistics must be finite")
    rules = load_rules() if rules is None else rules
    fields = {"entity_level": str(meta.get("entity_level", "user-level")),
              "resolution": str(meta.get("resolution", "1 hour")),
              "horizon": str(int(meta.get("horizon", 24)))}
    n_ch = len(stats) if include_stats else 0
    if include_stats:
        for c, s in enumerate(stats):
            for name, val in s.as_dict().items():
                fields[f"{name}[{c}]"] = _fmt(val)
    knowledge = ""
    if include_knowledge:
        stmts = knowledge_statements(stats, rules)
        knowledge = "Knowledge: " + (" ".join(stmts) if stmts else "No additional domain cues.")
    fields["_channels"] = str(n_ch)
    fields["_knowledge"] = knowledge
    task, stat, know = _compose(fields, n_ch, knowledge)
    return TextView(task, stat, know, fields)


def text_fields(view: TextView) -> dict[str, str]:
    """Template fields of a view, without bookkeeping entries."""
    return {k: v for k, v in view.fields.items() if not k.startswith("_")}


def _implausible(name: str, value: float, fields: dict[str, str], c: int,
                 rng: np.random.Generator) -> str:
    k = int(rng.integers(2, 100))
    if name == "seasonality":
        return str(k)  # outside [0, 1]
    if name == "kurtosis":
        return str(-k)  # plain kurtosis is >= 1
    if name in ("trend", "skewness"):
        return str(k if rng.random() < 0.5 else -k)
    lo, hi = float(fields[f"minimum[{c}]"]), float(fields[f"maximum[{c}]"])
    span = max(hi - lo, 1.0)
    if name == "minimum":
        return _fmt(hi + k * span)
    if name == "maximum":
        return _fmt(lo - k * span)
    return _fmt(hi + k * span)  # mean above the maximum


def make_text_negative(view: TextView, kind: str, rng: np.random.Generator,
                       tokenizer: "Tokenizer | None" = None) -> TextView:
    """Corrupt exactly one template field of a positive view."""
    if view.is_negative:
        raise ContractError("negatives are built from positive views")
    fields = dict(view.fields)
    n_ch = int(fields.get("_channels", "0"))
    if kind == "context_swap":
        options = [e for e in ENTITY_LEVELS if e != fields["entity_level"]]
        fields["entity_level"] = options[int(rng.integers(len(options)))]
    elif kind == "semantic_tamper":
        keys = [k for k in fields if "[" in k]
        if not keys:
            fields["horizon"] = str(int(fields["horizon"]) * int(rng.integers(10, 100)))
        else:
            key = keys[int(rng.integers(len(keys)))]
            name, c = key[:-1].split("[")
            fields[key] = _implausible(name, float(fields[key]), fields, int(c), rng)
    else:
        raise ContractError(f"unknown text negative kind {kind!r}")
    task, stat, know = _compose(fields, n_ch, fields.get("_knowledge", ""))
    out = TextView(task, stat, know, fields, is_negative=True, negative_kind=kind)
    if tokenizer is not None:
        out.tokens = tokenizer.encode(out.text)
    return out


def external_text(directory, index: int) -> TextView | None:
    """Optional user-supplied text for window ``index`` (``<index>.txt``)."""
    path = Path(directory) / f"{index}.txt"
    if not path.exists():
        return None
    return TextView("", path.read_text(), "", {})


# --------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(r" ?[A-Za-z]+(?:-[A-Za-z]+)*|[0-9]| ?[^\sA-Za-z0-9]|\s")
PAD, UNK = "<pad>", "<unk>"


def split_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def template_corpus(rules: Sequence[Rule] | None = None) -> list[str]:
    """Texts covering every fixed word the template and rule table can emit."""
    rules = load_rules() if rules is None else rules
    stats = [WindowStats(0.5, 0.1, -1.0, 1.0, 0.0, 3.0, 0.0)] * 2
    out = []
    for ent in ENTITY_LEVELS:
        for res in RESOLUTIONS:
            out.append(render_text(stats, {"entity_level": ent, "resolution": res, "horizon": 24},
                                   rules).text)
    out.append("Knowledge: No additional domain cues.")
    out.extend("Knowledge: " + r.statement for r in rules)
    return out


class Tokenizer:
    """Word-level tokenizer; digits are always single tokens.

    Words and punctuation carry their leading space, so decoding is plain
    concatenation.
    """

    def __init__(self, vocab: Sequence[str]):
        self.vocab = list(vocab)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.pad_id = self.index[PAD]
        self.unk_id = self.index[UNK]

    @classmethod
    def from_corpus(cls, corpus: Sequence[str]) -> "Tokenizer":
        base = [PAD, UNK, " "] + list(string.digits)
        base += list(string.punctuation) + [" " + p for p in string.punctuation]
        seen = dict.fromkeys(base)
        for text in corpus:
            for tok in split_tokens(text):
                seen.setdefault(tok)
        return cls(list(seen))

    def __len__(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(tok, self.unk_id) for tok in split_tokens(text)]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.vocab[i] for i in ids if i != self.pad_id)


def default_tokenizer(rules: Sequence[Rule] | None = None) -> Tokenizer:
    return Tokenizer.from_corpus(template_corpus(rules))


def tokenize(text: str, tokenizer: Tokenizer | None = None) -> list[int]:
    return (tokenizer or default_tokenizer()).encode(text)


def detokenize(ids: Sequence[int], tokenizer: Tokenizer | None = None) -> str:
    return (tokenizer or default_tokenizer()).decode(ids)


def with_tokens(view: TextView, tokenizer: Tokenizer) -> TextView:
    return replace(view, tokens=tokenizer.encode(view.text))
