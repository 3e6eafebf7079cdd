"""Built-in oracle suite: gradient checks, Shapley axioms, Kernel-SHAP
equivalence, path-integral exactness, and determinism, on seeded fixtures.

Every check is self-contained and fast; the CLI and service surface it as
a pass/fail report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attribution as attr
from .models import (
    LinearModel,
    OutputSelector,
    TinyCNN,
    check_gradient,
    forward_batch,
)
from .segmentation import grid_segment
from .types import Image


@dataclass
class SelftestReport:
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, passed, detail))

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def lines(self) -> list[str]:
        out = []
        for name, passed, detail in self.checks:
            tag = "PASS" if passed else "FAIL"
            out.append(f"{tag} {name}" + (f" ({detail})" if detail else ""))
        return out


def _kink_free_probe(cnn: TinyCNN, start_seed: int) -> Image:
    h, w, c = cnn.input_shape
    for s in range(start_seed, start_seed + 500):
        rng = np.random.default_rng(s)
        probe = Image(rng.normal(0.0, 1.0, (h, w, c)))
        if np.abs(cnn.conv_preactivations(probe)).min() > 1e-3:
            return probe
    raise RuntimeError("no kink-free probe found")


def run_selftest(seed: int = 0) -> SelftestReport:
    report = SelftestReport()
    rng = np.random.default_rng(seed)

    lin = LinearModel(rng.uniform(0.5, 1.5, (6, 6, 1)), bias=0.25)
    lin_img = Image(rng.normal(0.0, 1.0, (6, 6, 1)))
    err = check_gradient(lin, lin_img, OutputSelector(0), eps=1e-3)
    report.add("gradient-linear", err <= 1e-10, f"max rel err {err:.3g}")

    cnn = TinyCNN((12, 12, 1), num_classes=3, num_filters=4, seed=seed + 1)
    probe = _kink_free_probe(cnn, seed + 2)
    err = check_gradient(cnn, probe, OutputSelector(0), eps=1e-3, max_coords=64)
    report.add("gradient-cnn", err < 1e-4, f"max rel err {err:.3g}")

    seg = grid_segment(lin_img, 2, 2)
    sv = attr.exact_shapley(lin, lin_img, seg, OutputSelector(0))
    fx = forward_batch(lin, [lin_img])[0, 0]
    gap = abs(sv.phi0 + sv.phi.sum() - fx)
    report.add("shapley-local-accuracy", gap <= 1e-6, f"gap {gap:.3g}")

    dummy_data = np.array(lin_img.data)
    dummy_data[seg.labels == 2] = 0.0  # zeroed segment is a dummy feature
    dv = attr.exact_shapley(lin, Image(dummy_data), seg, OutputSelector(0))
    report.add("shapley-dummy", abs(dv.phi[2]) <= 1e-9, f"phi {dv.phi[2]:.3g}")

    cnn_img = Image(np.random.default_rng(seed + 3).normal(0.0, 1.0, (12, 12, 1)))
    cseg = grid_segment(cnn_img, 2, 2)
    csel = OutputSelector(1)
    csv_ = attr.exact_shapley(cnn, cnn_img, cseg, csel)
    lp = attr.LimeParams(kernel="shapley", enumerate_all=True, ridge_lambda=0.0)
    clv = attr.lime_attribution(cnn, cnn_img, cseg, csel, lp)
    gap = float(np.abs(csv_.phi - clv.phi).max())
    report.add("kernel-shap-equivalence", gap <= 1e-5, f"max gap {gap:.3g}")

    igm = attr.integrated_gradients(lin, lin_img, OutputSelector(0), 4)
    gap = float(np.abs(igm.values - lin.weights * lin_img.data).max())
    report.add("ig-linear-exact", gap <= 1e-9, f"max gap {gap:.3g}")

    p = attr.E2xParams(num_samples=16, seed=seed)
    e1 = attr.e2x_attribution(cnn, cnn_img, cseg, csel, p)
    e2 = attr.e2x_attribution(cnn, cnn_img, cseg, csel, p)
    report.add("e2x-deterministic", bool(np.array_equal(e1.phi, e2.phi)))

    batch = [lin_img, Image(np.zeros((6, 6, 1))), lin_img]
    together = forward_batch(lin, batch)
    separate = np.concatenate([forward_batch(lin, [b]) for b in batch])
    report.add("batch-serial-equivalence", bool(np.array_equal(together, separate)))

    return report
