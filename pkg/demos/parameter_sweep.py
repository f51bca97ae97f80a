"""
How the weighting strength and threshold move the error
=======================================================

Sweeps alpha and the fraction threshold on one noisy phantom. With
alpha = 0 the joint estimate collapses to the independent one.
"""

from forni.core import EstimationConfig, cfari, estimate
from forni.geometry import build_dictionary, default_basis
from forni.io import normalize_signals
from forni.metrics import e_fo_field
from forni.phantom import make_phantom

truth, scheme, signals = make_phantom(snr=20, seed=2)
y, _ = normalize_signals(signals, scheme)
basis = default_basis()
G = build_dictionary(basis, scheme)


def mean_error(field):
    return e_fo_field(field.fo_sets(), [truth.fo_set(v) for v in field.voxels]).mean()


start = cfari(y, truth.mask, basis, G)
print(f"CFARI start: {mean_error(start):.2f} deg")

for alpha in (0.0, 0.4, 0.8, 0.95):
    field = estimate(y, truth.mask, basis, G, EstimationConfig(alpha=alpha), init=start,
                     scheme=scheme)
    print(f"alpha {alpha:4.2f}: {mean_error(field):.2f} deg, "
          f"{len(field.diagnostics['sweeps'])} sweeps")

# the threshold is applied to the start as well, so each run gets its own CFARI pass
for f_th in (0.0, 0.05, 0.1, 0.15, 0.2):
    init = cfari(y, truth.mask, basis, G, f_th=f_th)
    field = estimate(y, truth.mask, basis, G, EstimationConfig(f_th=f_th), init=init,
                     scheme=scheme)
    print(f"f_th {f_th:4.2f}: {mean_error(field):.2f} deg")
