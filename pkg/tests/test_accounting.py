import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vera import accounting as acc
from vera import adapters as ad
from vera.adapters import Method

BASE, LARGE, GPT3 = acc.PRESETS["base"], acc.PRESETS["large"], acc.PRESETS["gpt3"]


@pytest.mark.parametrize("shape,r,expected", [
    (BASE, 1, 18_456), (LARGE, 256, 61_440), (GPT3, 1, 2_359_488),
    (BASE, 16, 18_816), (BASE, 256, 24_576),
])
def test_vera_param_count(shape, r, expected):
    assert acc.vera_param_count(shape, r) == expected


@pytest.mark.parametrize("shape,r,expected", [
    (BASE, 16, 589_824), (GPT3, 256, 1_207_959_552), (BASE, 1, 36_864), (LARGE, 1, 98_304),
])
def test_lora_param_count(shape, r, expected):
    assert acc.lora_param_count(shape, r) == expected


def test_rank_one_ratio_about_two():
    for shape in acc.PRESETS.values():
        ratio = acc.lora_param_count(shape, 1) / acc.vera_param_count(shape, 1)
        assert ratio == pytest.approx(2 * shape.d_model / (shape.d_model + 1))
        assert 1.99 < ratio < 2.0


def test_rank_increment():
    assert acc.rank_increment(BASE) == 24
    assert acc.rank_increment(GPT3) == 192
    assert acc.rank_increment(BASE, Method.LORA) == 2 * 24 * 768


@given(st.integers(1, 200), st.integers(1, 4096), st.integers(1, 4), st.integers(1, 500))
def test_increment_constant_and_vera_le_lora(blocks, d_model, per_block, r):
    shape = acc.ModelShape("s", blocks, d_model, per_block)
    assert acc.vera_param_count(shape, r + 1) - acc.vera_param_count(shape, r) == shape.l_tuned
    assert acc.vera_param_count(shape, r) <= acc.lora_param_count(shape, r)


@pytest.mark.parametrize("method", [Method.VERA, Method.LORA, Method.ONLY_D, Method.ONLY_B])
def test_formula_matches_enumeration(method):
    shape = acc.ModelShape("toy", 3, 6, 2)
    cfg = ad.AdapterConfig(method=method, rank=4, r_max=4)
    pool = ad.SharedPool.for_config(cfg)
    layers = [ad.build_layer(cfg, np.zeros((m, n)), name, pool) for name, m, n in shape.layers()]
    assert len(layers) == shape.l_tuned
    enumerated = sum(a.size for layer in layers for a in ad.trainable_arrays(layer).values())
    assert acc.param_count(shape, 4, method) == enumerated


@pytest.mark.parametrize("n,text", [(147_456, "144KB"), (245_760, "240KB"), (73_824, "72KB"),
                                    (75_264, "74KB"), (37_748_736, "36MB"), (9_536_256, "9.1MB"),
                                    (512, "512B")])
def test_format_bytes(n, text):
    assert acc.format_bytes(n) == text


def test_format_with_precision():
    assert acc.format_bytes(2_359_296, 0) == "2MB"
    assert acc.format_bytes(4_831_838_208, 1) == "4.5GB"
    assert acc.format_count(589_824) == "589.8K"
    assert acc.format_count(1_207_959_552, 1, "M") == "1208.0M"


@pytest.mark.parametrize("exact,published,kind,status", [
    (36_864, "36.8K", "params", "truncated"),
    (589_824, "589.8K", "params", "exact"),
    (49_920, "49.5K", "params", "mismatch"),
    (4_831_838_208, "4.6GB", "bytes", "within-1-unit"),
    (2_362_368, "2.8M", "params", "mismatch"),
    (2_755_584, "2.8M", "params", "exact"),
])
def test_compare_display(exact, published, kind, status):
    assert acc.compare_display(exact, published, kind) == status


def test_budget_row_invariants():
    for shape in acc.PRESETS.values():
        for r in (1, 7, 64):
            row = acc.budget_row(shape, r, Method.VERA)
            assert row.stored_bytes == 4 * row.trainable_params
            assert row.stored_bytes_with_shared == row.stored_bytes + 4 * 2 * shape.d_model * r


def test_table1_modes():
    rows = {(r.preset, r.budget.method, r.budget.rank): r for r in acc.table1()}
    assert len(rows) == 18
    g16 = rows[("gpt3", "vera", 16)]
    assert g16.budget.trainable_params == 2_362_368
    assert g16.budget.params_with_shared == 2_755_584
    assert g16.params_mode == "with-shared"
    assert rows[("gpt3", "vera", 256)].budget.params_with_shared == 8_699_904
    assert rows[("gpt3", "vera", 256)].bytes_mode == "with-shared"
    for key, row in rows.items():
        if key[0] in ("base", "large") and key != ("large", "vera", 16):
            assert row.params_mode in ("trainable", "both"), key
            assert row.bytes_mode in ("trainable", "both"), key


def test_render_outputs():
    recs = [r.to_dict() for r in acc.table1()]
    text = acc.render_text(recs, acc.TABLE1_COLUMNS)
    assert len(text.splitlines()) == 19
    parsed = json.loads(acc.render_json(recs))
    assert parsed[0]["trainable_params"] == 36_864
    assert parsed[0]["published_bytes"] == "144KB"


def test_plan_rows():
    rows = acc.plan(acc.ModelShape("m", 2, 8, 2), [1, 2], [Method.VERA, Method.LORA, Method.ONLY_B])
    assert [r.method for r in rows] == ["vera", "vera", "lora", "lora", "only-b", "only-b"]
    assert rows[0].trainable_params == 4 * 9
    assert rows[5].trainable_params == 4 * 8


def test_invalid_inputs():
    with pytest.raises(ValueError):
        acc.ModelShape("bad", 0, 8)
    with pytest.raises(ValueError):
        acc.vera_param_count(BASE, 0)
