"""Model-formula parsing for survival fits.

The formula language is deliberately tiny::

    model := "Surv(" ident "," ident ")" "~" term ("+" term)*
    term  := ident | "nph(" ident ")" | "const(" ident ")"
    ident := [A-Za-z_][A-Za-z0-9_.]*

Whitespace is insignificant.  Bare terms and ``const(x)`` terms are
proportional-hazards covariates; ``nph(x)`` marks a factor column whose
effect is allowed to vary over time (or to define separate strata,
depending on the estimator).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

__all__ = ["ModelFormula", "FormulaError", "parse_formula", "render_formula"]

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


class FormulaError(ValueError):
    """Raised on malformed formula text; carries the character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ModelFormula:
    """Parsed model specification.

    ``ph_terms`` are covariate columns entering through exp(x'beta);
    ``nph_terms`` are factor columns with time-varying / stratifying roles.
    """

    time_col: str
    event_col: str
    ph_terms: tuple[str, ...] = field(default_factory=tuple)
    nph_terms: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        overlap = set(self.ph_terms) & set(self.nph_terms)
        if overlap:
            raise ValueError(f"terms cannot be both PH and NPH: {sorted(overlap)}")

    @property
    def all_terms(self) -> tuple[str, ...]:
        return self.ph_terms + self.nph_terms

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.time_col, self.event_col) + self.all_terms


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def literal(self, lit: str, what: str):
        self.skip_ws()
        if not self.text.startswith(lit, self.pos):
            raise FormulaError(f"expected {what!r}", self.pos)
        self.pos += len(lit)

    def ident(self, what: str) -> str:
        self.skip_ws()
        m = _IDENT.match(self.text, self.pos)
        if m is None:
            raise FormulaError(f"expected {what}", self.pos)
        self.pos = m.end()
        return m.group(0)

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def peek_word(self) -> str | None:
        self.skip_ws()
        m = _IDENT.match(self.text, self.pos)
        return m.group(0) if m else None


def parse_formula(text: str) -> ModelFormula:
    """Parse formula text into a :class:`ModelFormula`.

    Raises :class:`FormulaError` (with character offset) on syntax errors,
    duplicate terms, or an empty response.
    """
    cur = _Cursor(text)
    cur.literal("Surv", "'Surv('")
    cur.literal("(", "'('")
    time_col = cur.ident("response time column")
    cur.literal(",", "','")
    event_col = cur.ident("response event column")
    cur.literal(")", "')'")
    if not time_col or not event_col:
        raise FormulaError("empty response", 0)
    cur.literal("~", "'~'")

    ph: list[str] = []
    nph: list[str] = []
    while True:
        cur.skip_ws()
        start = cur.pos
        word = cur.peek_word()
        if word is None:
            raise FormulaError("expected a term", cur.pos)
        cur.ident("term")
        cur.skip_ws()
        if word in ("nph", "const") and cur.pos < len(cur.text) and cur.text[cur.pos] == "(":
            cur.literal("(", "'('")
            name = cur.ident("covariate name")
            cur.literal(")", "')'")
            bucket = nph if word == "nph" else ph
        else:
            name, bucket = word, ph
        if name in ph or name in nph:
            raise FormulaError(f"duplicate term {name!r}", start)
        bucket.append(name)
        if cur.at_end():
            break
        cur.literal("+", "'+' or end of formula")

    return ModelFormula(time_col, event_col, tuple(ph), tuple(nph))


def render_formula(formula: ModelFormula) -> str:
    """Canonical text form: PH terms bare, NPH terms wrapped in nph()."""
    terms = list(formula.ph_terms) + [f"nph({t})" for t in formula.nph_terms]
    return f"Surv({formula.time_col}, {formula.event_col}) ~ " + " + ".join(terms)
