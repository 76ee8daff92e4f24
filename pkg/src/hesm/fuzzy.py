"""Mamdani fuzzy inference: fuzzification, min/max rule evaluation, centroid defuzzification.

The engine is stateless after construction and safe to share between
simulation workers.  Composition is fixed to the classic scheme: AND is
minimum, implication clips the output set at the firing strength, and
aggregation takes the pointwise maximum.  The crisp output is the centroid
of the aggregated set, computed by midpoint sampling over the output
universe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class FuzzyDefinitionError(ValueError):
    """Raised when a membership function, variable or rule base is malformed."""


@dataclass(frozen=True)
class MembershipFunction:
    """Piecewise-linear membership function, triangular or trapezoidal.

    Breakpoints must be non-decreasing: 3 points (a <= b <= c) for a
    triangle, 4 points (a <= b <= c <= d) for a trapezoid.  Coincident
    breakpoints degenerate into step edges; the peak value is taken at the
    coincident point itself.
    """

    kind: str
    points: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("triangular", "trapezoidal"):
            raise FuzzyDefinitionError(f"unknown membership kind {self.kind!r}")
        n = 3 if self.kind == "triangular" else 4
        if len(self.points) != n:
            raise FuzzyDefinitionError(
                f"{self.kind} membership needs {n} breakpoints, got {len(self.points)}")
        pts = self.points
        if any(not np.isfinite(p) for p in pts):
            raise FuzzyDefinitionError(f"non-finite breakpoint in {pts}")
        if any(pts[i] > pts[i + 1] for i in range(len(pts) - 1)):
            raise FuzzyDefinitionError(f"breakpoints must be non-decreasing, got {pts}")

    @classmethod
    def triangular(cls, a: float, b: float, c: float) -> "MembershipFunction":
        return cls("triangular", (float(a), float(b), float(c)))

    @classmethod
    def trapezoidal(cls, a: float, b: float, c: float, d: float) -> "MembershipFunction":
        return cls("trapezoidal", (float(a), float(b), float(c), float(d)))

    @property
    def trapezoid_points(self) -> tuple[float, float, float, float]:
        """Breakpoints in unified (a, b, c, d) trapezoid form (triangle: b == c)."""
        if self.kind == "triangular":
            a, b, c = self.points
            return (a, b, b, c)
        return self.points  # type: ignore[return-value]

    @property
    def peak(self) -> float:
        """Center of the plateau (the peak itself for a triangle)."""
        a, b, c, d = self.trapezoid_points
        return 0.5 * (b + c)

    @property
    def support(self) -> tuple[float, float]:
        return (self.trapezoid_points[0], self.trapezoid_points[3])

    def __call__(self, x):
        """Membership degree at ``x`` (scalar or ndarray), always in [0, 1]."""
        a, b, c, d = self.trapezoid_points
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        on_plateau = (x >= b) & (x <= c)
        out[on_plateau] = 1.0
        if b > a:
            rising = (x >= a) & (x < b)
            out[rising] = (x[rising] - a) / (b - a)
        if d > c:
            falling = (x > c) & (x <= d)
            out[falling] = (d - x[falling]) / (d - c)
        if out.ndim == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class LinguisticVariable:
    """Named variable over a closed real universe with an ordered family of sets.

    Invariants enforced at construction: every set's support lies inside the
    universe, the supports jointly cover the universe (every point has a set
    with positive membership), and set peaks are strictly increasing so the
    list order matches the linguistic order.
    """

    name: str
    lo: float
    hi: float
    sets: tuple[tuple[str, MembershipFunction], ...]

    def __post_init__(self):
        if not self.lo < self.hi:
            raise FuzzyDefinitionError(f"{self.name}: universe [{self.lo}, {self.hi}] is empty")
        if len(self.sets) == 0:
            raise FuzzyDefinitionError(f"{self.name}: needs at least one set")
        labels = [lbl for lbl, _ in self.sets]
        if len(set(labels)) != len(labels):
            raise FuzzyDefinitionError(f"{self.name}: duplicate set labels")
        for lbl, mf in self.sets:
            s_lo, s_hi = mf.support
            if s_lo < self.lo - 1e-12 or s_hi > self.hi + 1e-12:
                raise FuzzyDefinitionError(
                    f"{self.name}/{lbl}: support [{s_lo}, {s_hi}] exceeds universe")
        peaks = [mf.peak for _, mf in self.sets]
        if any(peaks[i] >= peaks[i + 1] for i in range(len(peaks) - 1)):
            raise FuzzyDefinitionError(f"{self.name}: set peaks must be strictly increasing")
        self._check_coverage()

    def _check_coverage(self):
        # Supports are intervals, so coverage holds iff their sorted union
        # has no gap inside [lo, hi].
        intervals = sorted(mf.support for _, mf in self.sets)
        reach = intervals[0][0]
        if reach > self.lo + 1e-12:
            raise FuzzyDefinitionError(f"{self.name}: no coverage near {self.lo}")
        for s_lo, s_hi in intervals:
            if s_lo > reach + 1e-12:
                raise FuzzyDefinitionError(f"{self.name}: coverage gap near {reach}")
            reach = max(reach, s_hi)
        if reach < self.hi - 1e-12:
            raise FuzzyDefinitionError(f"{self.name}: no coverage near {self.hi}")
        # Interval overlap is necessary but membership could still be zero at
        # an interior breakpoint; probe a dense grid to be safe.
        grid = np.linspace(self.lo, self.hi, 2049)
        peak_degrees = np.max([mf(grid) for _, mf in self.sets], axis=0)
        if np.any(peak_degrees <= 0.0):
            bad = grid[int(np.argmin(peak_degrees))]
            raise FuzzyDefinitionError(f"{self.name}: zero membership at {bad}")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.sets)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise FuzzyDefinitionError(f"{self.name}: unknown set label {label!r}") from None

    def clamp(self, x: float) -> float:
        return min(max(float(x), self.lo), self.hi)

    def fuzzify(self, x: float) -> np.ndarray:
        """Degree vector for ``x`` (clamped to the universe), one entry per set."""
        xc = self.clamp(x)
        return np.array([mf(xc) for _, mf in self.sets])

    def breakpoint_matrix(self) -> np.ndarray:
        """(n_sets, 4) trapezoid-form breakpoints, for array-level evaluators."""
        return np.array([mf.trapezoid_points for _, mf in self.sets])


@dataclass(frozen=True)
class RuleBase:
    """Rule grid mapping (current set, voltage set) pairs to output set labels.

    ``matrix[r][c]`` names the consequent for current set ``r`` and voltage
    set ``c``, with rows and columns following each variable's own set order.
    """

    matrix: tuple[tuple[str, ...], ...]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[str]]) -> "RuleBase":
        return cls(tuple(tuple(r) for r in rows))

    def validate(self, row_var: LinguisticVariable, col_var: LinguisticVariable,
                 out_var: LinguisticVariable) -> None:
        if len(self.matrix) != len(row_var.sets):
            raise FuzzyDefinitionError(
                f"rule base has {len(self.matrix)} rows, expected {len(row_var.sets)}")
        for r, row in enumerate(self.matrix):
            if len(row) != len(col_var.sets):
                raise FuzzyDefinitionError(
                    f"rule row {row_var.labels[r]!r} has {len(row)} cells, "
                    f"expected {len(col_var.sets)}")
            for lbl in row:
                if lbl not in out_var.labels:
                    raise FuzzyDefinitionError(
                        f"rule row {row_var.labels[r]!r}: unknown output label {lbl!r}")

    def index_matrix(self, out_var: LinguisticVariable) -> np.ndarray:
        return np.array([[out_var.index_of(lbl) for lbl in row] for row in self.matrix],
                        dtype=np.int64)


@dataclass(frozen=True)
class InferenceConfig:
    """Inference composition knobs.

    AND, implication and aggregation are fixed (min / min / max); only the
    defuzzification sampling resolution is adjustable.
    """

    defuzz_resolution: int = 1001

    def __post_init__(self):
        if self.defuzz_resolution < 101:
            raise FuzzyDefinitionError(
                f"defuzz_resolution must be >= 101, got {self.defuzz_resolution}")


def evaluate_rules(rules: RuleBase, degrees_v: np.ndarray, degrees_i: np.ndarray,
                   out_var: LinguisticVariable) -> np.ndarray:
    """Activation per output set from the two input degree vectors.

    Each rule fires at ``min(degrees_i[row], degrees_v[col])``; an output
    set's activation is the maximum firing strength over the rules that name
    it.
    """
    acts = np.zeros(len(out_var.sets))
    for r, row in enumerate(rules.matrix):
        di = degrees_i[r]
        if di <= 0.0:
            continue
        for c, lbl in enumerate(row):
            w = min(di, degrees_v[c])
            k = out_var.index_of(lbl)
            if w > acts[k]:
                acts[k] = w
    return acts


def defuzzify(out_var: LinguisticVariable, activations: np.ndarray,
              cfg: InferenceConfig) -> tuple[float, bool]:
    """Centroid of the clipped-and-aggregated output sets.

    Returns ``(value, uncovered)``.  When every activation is zero there is
    no mass to take a centroid of; the universe midpoint is returned with
    ``uncovered=True`` so the caller can flag the sample instead of aborting.
    """
    res = cfg.defuzz_resolution
    span = out_var.hi - out_var.lo
    midpoint = out_var.lo + 0.5 * span
    if np.max(activations) <= 0.0:
        return midpoint, True
    centers = out_var.lo + (np.arange(res) + 0.5) * (span / res)
    agg = np.zeros(res)
    for k, (_, mf) in enumerate(out_var.sets):
        a = activations[k]
        if a <= 0.0:
            continue
        np.maximum(agg, np.minimum(mf(centers), a), out=agg)
    den = float(np.sum(agg))
    if den <= 0.0:
        return midpoint, True
    num = float(np.sum(centers * agg))
    return num / den, False


@dataclass(frozen=True)
class FuzzyController:
    """Two-input, one-output Mamdani controller for the storage supervisor.

    Inputs are the DC bus voltage and the net module current; the output is
    a signed battery current limit (positive allows discharge, negative
    commands recharge).
    """

    bus_voltage: LinguisticVariable
    module_current: LinguisticVariable
    battery_limit: LinguisticVariable
    rules: RuleBase
    config: InferenceConfig = field(default_factory=InferenceConfig)

    def __post_init__(self):
        self.rules.validate(self.module_current, self.bus_voltage, self.battery_limit)

    def infer_flagged(self, v_bus: float, i_module: float) -> tuple[float, bool]:
        """Crisp battery current limit plus the uncovered-input flag."""
        dv = self.bus_voltage.fuzzify(v_bus)
        di = self.module_current.fuzzify(i_module)
        acts = evaluate_rules(self.rules, dv, di, self.battery_limit)
        return defuzzify(self.battery_limit, acts, self.config)

    def infer(self, v_bus: float, i_module: float) -> float:
        return self.infer_flagged(v_bus, i_module)[0]

    def surface(self, resolution: int = 50) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sample the control surface on a ``resolution`` x ``resolution`` grid.

        Returns (v_grid, i_grid, limit_grid) with limit_grid[j, k] evaluated
        at voltage v_grid[k] and current i_grid[j].
        """
        v = np.linspace(self.bus_voltage.lo, self.bus_voltage.hi, resolution)
        i = np.linspace(self.module_current.lo, self.module_current.hi, resolution)
        z = np.empty((resolution, resolution))
        for j, iv in enumerate(i):
            for k, vv in enumerate(v):
                z[j, k] = self.infer(vv, iv)
        return v, i, z

    # Array views consumed by the compiled simulation loop.

    def kernel_arrays(self) -> dict:
        res = self.config.defuzz_resolution
        span = self.battery_limit.hi - self.battery_limit.lo
        centers = self.battery_limit.lo + (np.arange(res) + 0.5) * (span / res)
        out_grid = np.array([mf(centers) for _, mf in self.battery_limit.sets])
        return {
            "v_bps": self.bus_voltage.breakpoint_matrix(),
            "i_bps": self.module_current.breakpoint_matrix(),
            "rules": self.rules.index_matrix(self.battery_limit),
            "v_universe": np.array([self.bus_voltage.lo, self.bus_voltage.hi]),
            "i_universe": np.array([self.module_current.lo, self.module_current.hi]),
            "out_universe": np.array([self.battery_limit.lo, self.battery_limit.hi]),
            "out_centers": centers,
            "out_grid": out_grid,
        }


# Default controller design.  The voltage sets bracket the 24 V bus nominal
# tightly so the supervisor reacts well inside the pulse-to-pulse excursions;
# the current sets are signed with sourcing positive ("In" flows into the bus
# from storage, "Out" flows from the bus into storage).

VOLTAGE_LABELS = ("Very Low", "Low", "Good", "High", "Very High")
CURRENT_LABELS = ("High Out", "Low Out", "No Flow", "Low In", "High In")
OUTPUT_LABELS = ("High Recharge", "Low Recharge", "No Flow", "Low Discharge", "High Discharge")

DEFAULT_RULE_ROWS = {
    "High Out": ("No Flow", "Low Recharge", "High Recharge", "High Recharge", "High Recharge"),
    "Low Out": ("Low Discharge", "No Flow", "Low Recharge", "High Recharge", "High Recharge"),
    "No Flow": ("High Discharge", "Low Discharge", "No Flow", "Low Recharge", "High Recharge"),
    "Low In": ("High Discharge", "High Discharge", "Low Discharge", "No Flow", "Low Recharge"),
    "High In": ("High Discharge", "High Discharge", "High Discharge", "Low Discharge", "No Flow"),
}


def default_bus_voltage_variable() -> LinguisticVariable:
    t = MembershipFunction.triangular
    z = MembershipFunction.trapezoidal
    return LinguisticVariable("bus_voltage", 18.0, 30.0, (
        ("Very Low", z(18.0, 18.0, 22.5, 23.25)),
        ("Low", t(22.5, 23.25, 24.0)),
        ("Good", t(23.25, 24.0, 24.75)),
        ("High", t(24.0, 24.75, 25.5)),
        ("Very High", z(24.75, 25.5, 30.0, 30.0)),
    ))


def default_module_current_variable() -> LinguisticVariable:
    t = MembershipFunction.triangular
    z = MembershipFunction.trapezoidal
    return LinguisticVariable("module_current", -60.0, 60.0, (
        ("High Out", z(-60.0, -60.0, -45.0, -15.0)),
        ("Low Out", t(-45.0, -15.0, 0.0)),
        ("No Flow", t(-15.0, 0.0, 15.0)),
        ("Low In", t(0.0, 15.0, 45.0)),
        ("High In", z(15.0, 45.0, 60.0, 60.0)),
    ))


def default_battery_limit_variable() -> LinguisticVariable:
    t = MembershipFunction.triangular
    z = MembershipFunction.trapezoidal
    return LinguisticVariable("battery_limit", -30.0, 30.0, (
        ("High Recharge", z(-30.0, -30.0, -25.0, -10.0)),
        ("Low Recharge", t(-25.0, -10.0, 0.0)),
        ("No Flow", t(-10.0, 0.0, 10.0)),
        ("Low Discharge", t(0.0, 10.0, 25.0)),
        ("High Discharge", z(10.0, 25.0, 30.0, 30.0)),
    ))


def default_rule_base(current_var: LinguisticVariable | None = None) -> RuleBase:
    cur = current_var or default_module_current_variable()
    return RuleBase.from_rows([DEFAULT_RULE_ROWS[lbl] for lbl in cur.labels])


def default_controller(defuzz_resolution: int = 1001) -> FuzzyController:
    cur = default_module_current_variable()
    return FuzzyController(
        bus_voltage=default_bus_voltage_variable(),
        module_current=cur,
        battery_limit=default_battery_limit_variable(),
        rules=default_rule_base(cur),
        config=InferenceConfig(defuzz_resolution=defuzz_resolution),
    )
