"""Trainable-parameter and storage accounting for VeRA/LoRA on transformer stacks.

Counts assume square ``d_model x d_model`` adapted projections, single
precision storage (4 bytes per value) and binary byte units.  Two counting
modes are reported everywhere: *trainable* (only the learned vectors or
matrices) and *with shared* (VeRA additionally storing its frozen ``A``/``B``
pair, ``2 * d_model * r`` values).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal

from .adapters import Method

BYTES_PER_VALUE = 4


@dataclass(frozen=True)
class ModelShape:
    name: str
    blocks: int
    d_model: int
    adapted_per_block: int = 2

    def __post_init__(self):
        if min(self.blocks, self.d_model, self.adapted_per_block) < 1:
            raise ValueError(f"all ModelShape counts must be >= 1: {self}")

    @property
    def l_tuned(self) -> int:
        return self.blocks * self.adapted_per_block

    def layers(self) -> list[tuple[str, int, int]]:
        """(name, m, n) for every adapted matrix; two per block are named q and k."""
        roles = ["q", "k"] + [f"p{i}" for i in range(2, self.adapted_per_block)]
        return [(f"block{b}.{roles[i]}", self.d_model, self.d_model)
                for b in range(self.blocks) for i in range(self.adapted_per_block)]


# query+key adapted in every block, as Table-1-style budgets assume
PRESETS = {
    "base": ModelShape("roberta-base", 12, 768),
    "large": ModelShape("roberta-large", 24, 1024),
    "gpt3": ModelShape("gpt3", 96, 12288),
}
TABLE1_RANKS = (1, 16, 256)


def vera_param_count(shape: ModelShape, r: int) -> int:
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    return shape.l_tuned * (shape.d_model + r)


def lora_param_count(shape: ModelShape, r: int) -> int:
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    return 2 * shape.l_tuned * shape.d_model * r


def param_count(shape: ModelShape, r: int, method: Method) -> int:
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    method = Method(method)
    if method is Method.VERA:
        return vera_param_count(shape, r)
    if method is Method.LORA:
        return lora_param_count(shape, r)
    if method is Method.ONLY_D:
        return shape.l_tuned * r
    if method is Method.ONLY_B:
        return shape.l_tuned * shape.d_model
    return 0


def shared_values(shape: ModelShape, r: int, method: Method) -> int:
    """Frozen values a VeRA-family model would add if the shared pair were stored."""
    if Method(method) in (Method.VERA, Method.ONLY_D, Method.ONLY_B):
        return 2 * shape.d_model * r
    return 0


def rank_increment(shape: ModelShape, method: Method = Method.VERA) -> int:
    """Parameters added per unit of rank; constant in r for every method."""
    return param_count(shape, 2, method) - param_count(shape, 1, method)


# --- display formatting -----------------------------------------------------------

_BYTE_UNITS = [("GB", 1024**3), ("MB", 1024**2), ("KB", 1024), ("B", 1)]
_COUNT_UNITS = {"": 1, "K": 1000, "M": 1000**2, "B": 1000**3}


def _round(value: Decimal, decimals: int, mode=ROUND_HALF_UP) -> Decimal:
    return value.quantize(Decimal(1).scaleb(-decimals), rounding=mode)


def format_bytes(n: int, decimals: int | None = None, unit: str | None = None) -> str:
    """Binary-unit byte string, e.g. ``147456 -> '144KB'``.

    The unit defaults to the largest one that keeps the value >= 1.  With
    ``decimals=None`` KB and B values are integers and MB/GB values keep one
    decimal, dropped when it is zero.  Rounding is half-up.
    """
    if n < 0:
        raise ValueError("byte count must be non-negative")
    if unit is None:
        unit, div = next((u, d) for u, d in _BYTE_UNITS if n >= d or d == 1)
    else:
        div = dict(_BYTE_UNITS)[unit]
    value = Decimal(n) / Decimal(div)
    if decimals is None:
        text = str(_round(value, 0 if unit in ("B", "KB") else 1))
        if text.endswith(".0"):
            text = text[:-2]
    else:
        text = str(_round(value, decimals))
    return f"{text}{unit}"


def format_count(n: int, decimals: int = 1, unit: str | None = None) -> str:
    """Decimal-unit parameter count, e.g. ``589824 -> '589.8K'``."""
    if unit is None:
        unit = "M" if n >= 10**6 else "K" if n >= 10**3 else ""
    return f"{_round(Decimal(n) / _COUNT_UNITS[unit], decimals)}{unit}"


def _split_display(text: str, units) -> tuple[Decimal, str, int]:
    for unit in sorted(units, key=len, reverse=True):
        if unit and text.endswith(unit):
            number = text[: -len(unit)]
            break
    else:
        number, unit = text, ""
    decimals = len(number.split(".")[1]) if "." in number else 0
    return Decimal(number), unit, decimals


def compare_display(exact: int, published: str, kind: str) -> str:
    """Classify how ``published`` relates to the exact integer ``exact``.

    Returns ``"exact"`` (half-up rounding reproduces it), ``"truncated"``
    (rounding toward zero reproduces it), ``"within-1-unit"`` (off by at most
    one unit of the last displayed digit) or ``"mismatch"``.
    """
    if kind == "bytes":
        value, unit, decimals = _split_display(published, [u for u, _ in _BYTE_UNITS])
        div = dict(_BYTE_UNITS)[unit]
    else:
        value, unit, decimals = _split_display(published, _COUNT_UNITS)
        div = _COUNT_UNITS[unit]
    true = Decimal(exact) / Decimal(div)
    if _round(true, decimals) == value:
        return "exact"
    if _round(true, decimals, ROUND_DOWN) == value:
        return "truncated"
    if abs(true - value) <= Decimal(1).scaleb(-decimals):
        return "within-1-unit"
    return "mismatch"


def matches(status: str, allow_one_unit: bool = False) -> bool:
    ok = {"exact", "truncated"} | ({"within-1-unit"} if allow_one_unit else set())
    return status in ok


# --- budget rows --------------------------------------------------------------------

@dataclass(frozen=True)
class BudgetRow:
    model: str
    method: str
    rank: int
    trainable_params: int
    stored_bytes: int
    params_with_shared: int
    stored_bytes_with_shared: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params_display"] = format_count(self.trainable_params)
        d["bytes_display"] = format_bytes(self.stored_bytes)
        d["bytes_with_shared_display"] = format_bytes(self.stored_bytes_with_shared)
        return d


def budget_row(shape: ModelShape, r: int, method: Method) -> BudgetRow:
    params = param_count(shape, r, method)
    with_shared = params + shared_values(shape, r, method)
    return BudgetRow(shape.name, Method(method).label, r, params, BYTES_PER_VALUE * params,
                     with_shared, BYTES_PER_VALUE * with_shared)


def plan(shape: ModelShape, ranks, methods) -> list[BudgetRow]:
    return [budget_row(shape, r, Method(m)) for m in methods for r in ranks]


# Published Table 1 cells: (preset, method, rank) -> (params, bytes)
PUBLISHED_TABLE1 = {
    ("base", "lora", 1): ("36.8K", "144KB"),
    ("base", "lora", 16): ("589.8K", "2MB"),
    ("base", "lora", 256): ("9437.1K", "36MB"),
    ("base", "vera", 1): ("18.4K", "72KB"),
    ("base", "vera", 16): ("18.8K", "74KB"),
    ("base", "vera", 256): ("24.5K", "96KB"),
    ("large", "lora", 1): ("98.3K", "384KB"),
    ("large", "lora", 16): ("1572.8K", "6MB"),
    ("large", "lora", 256): ("25165.8K", "96MB"),
    ("large", "vera", 1): ("49.2K", "192KB"),
    ("large", "vera", 16): ("49.5K", "195KB"),
    ("large", "vera", 256): ("61.4K", "240KB"),
    ("gpt3", "lora", 1): ("4.7M", "18MB"),
    ("gpt3", "lora", 16): ("75.5M", "288MB"),
    ("gpt3", "lora", 256): ("1207.9M", "4.6GB"),
    ("gpt3", "vera", 1): ("2.4M", "9.1MB"),
    ("gpt3", "vera", 16): ("2.8M", "10.5MB"),
    ("gpt3", "vera", 256): ("8.7M", "33MB"),
}


@dataclass(frozen=True)
class Table1Row:
    preset: str
    budget: BudgetRow
    published_params: str
    published_bytes: str
    params_status: str              # trainable-only mode vs published
    params_status_with_shared: str
    bytes_status: str
    bytes_status_with_shared: str

    @property
    def params_mode(self) -> str:
        """Which counting mode reproduces the published parameter cell."""
        return _mode(self.params_status, self.params_status_with_shared)

    @property
    def bytes_mode(self) -> str:
        return _mode(self.bytes_status, self.bytes_status_with_shared, allow_one_unit=True)

    def to_dict(self) -> dict:
        _, p_unit, p_dec = _split_display(self.published_params, _COUNT_UNITS)
        _, b_unit, b_dec = _split_display(self.published_bytes, [u for u, _ in _BYTE_UNITS])
        b = self.budget
        return {
            "model": self.preset,
            "method": b.method,
            "rank": b.rank,
            "trainable_params": b.trainable_params,
            "params_with_shared": b.params_with_shared,
            "stored_bytes": b.stored_bytes,
            "stored_bytes_with_shared": b.stored_bytes_with_shared,
            "params_display": format_count(b.trainable_params, p_dec, p_unit),
            "params_with_shared_display": format_count(b.params_with_shared, p_dec, p_unit),
            "bytes_display": format_bytes(b.stored_bytes, b_dec, b_unit),
            "bytes_with_shared_display": format_bytes(b.stored_bytes_with_shared, b_dec, b_unit),
            "published_params": self.published_params,
            "published_bytes": self.published_bytes,
            "params_status": self.params_status,
            "params_status_with_shared": self.params_status_with_shared,
            "bytes_status": self.bytes_status,
            "bytes_status_with_shared": self.bytes_status_with_shared,
            "params_mode": self.params_mode,
            "bytes_mode": self.bytes_mode,
        }


def _mode(trainable: str, shared: str, allow_one_unit: bool = False) -> str:
    a, b = matches(trainable, allow_one_unit), matches(shared, allow_one_unit)
    if a and b:
        return "both"
    if a:
        return "trainable"
    if b:
        return "with-shared"
    return "none"


def table1(presets=("base", "large", "gpt3"), ranks=TABLE1_RANKS) -> list[Table1Row]:
    """All Table-1 cells in both counting modes, classified against the published values."""
    rows = []
    for preset in presets:
        shape = PRESETS[preset]
        for method in (Method.LORA, Method.VERA):
            for r in ranks:
                b = budget_row(shape, r, method)
                pub_p, pub_b = PUBLISHED_TABLE1[(preset, method.label, r)]
                rows.append(Table1Row(
                    preset, b, pub_p, pub_b,
                    compare_display(b.trainable_params, pub_p, "params"),
                    compare_display(b.params_with_shared, pub_p, "params"),
                    compare_display(b.stored_bytes, pub_b, "bytes"),
                    compare_display(b.stored_bytes_with_shared, pub_b, "bytes"),
                ))
    return rows


# --- rendering ----------------------------------------------------------------------

def render_text(records: list[dict], columns: list[str]) -> str:
    cells = [[str(rec[c]) for c in columns] for rec in records]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def render_json(records: list[dict]) -> str:
    return json.dumps(records, indent=2)


TABLE1_COLUMNS = ["model", "method", "rank", "trainable_params", "params_with_shared",
                  "params_display", "params_with_shared_display", "published_params", "params_mode",
                  "bytes_display", "bytes_with_shared_display", "published_bytes", "bytes_mode"]
PLAN_COLUMNS = ["model", "method", "rank", "trainable_params", "stored_bytes",
                "params_with_shared", "stored_bytes_with_shared", "params_display",
                "bytes_display", "bytes_with_shared_display"]
