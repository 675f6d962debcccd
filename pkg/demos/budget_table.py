"""
Parameter and storage budgets
=============================

How many values does each adapter train, and how many bytes does a
checkpoint of them take?  The counts are closed forms in the number of
adapted matrices, their width and the rank.
"""

from vera import accounting as acc
from vera.adapters import Method

# A 12-block encoder adapting the query and value projections.
shape = acc.PRESETS["base"]
print(shape, "adapted matrices:", shape.l_tuned)

rows = acc.plan(shape, ranks=[1, 16, 256], methods=[Method.LORA, Method.VERA])
print(acc.render_text([r.to_dict() for r in rows], acc.PLAN_COLUMNS))

# Each extra rank adds one value per adapted matrix for the vector adapter,
# and 2 * d_model values per matrix for the low-rank one.
print("vera per-rank increment:", acc.rank_increment(shape, Method.VERA))
print("lora per-rank increment:", acc.rank_increment(shape, Method.LORA))

# The reference table, both counting modes, checked against the published cells.
print()
print(acc.render_text([r.to_dict() for r in acc.table1()],
                      ["model", "method", "rank", "params_display", "published_params", "params_mode",
                       "bytes_display", "published_bytes", "bytes_mode"]))
