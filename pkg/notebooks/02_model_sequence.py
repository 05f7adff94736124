"""From one analysis formula to a chain of imputation models."""
from ordmi import build_sequence, list_models, parse_formula
from ordmi.simulate import simulate_nimh_like

ds = simulate_nimh_like(weeks=range(7))
f = parse_formula("y6 ~ tx + y0 + y1 + y2 + y3 + y4 + y5")
print(f)

# The default order fills in the visits with the fewest missing values first,
# so the sparse weeks 2, 4 and 5 come after week 3.
seq = build_sequence(f, ds)
print(list_models(seq))

# A user order lists every incomplete visit; here plain time order.
print(list_models(build_sequence(f, ds, order=["y0", "y1", "y2", "y3", "y4", "y5"])))

# Each model conditions on everything earlier in the chain.
for m in seq.models:
    print(m.target, "<-", ", ".join(m.predictors), f"({m.family})")
