"""Deterministic two-level synthetic worlds with known flow rules.

A world is a rectangular grid of coarse square cells, each split into
``subdivision x subdivision`` fine cells. Fine flows follow one of three
rules and coarse flows are their containment sums, so every output can
be checked exactly against the geo and features pipeline.

Draw order from the single seeded generator: feature values, rule
coefficients (affine) or noise (noisy-gravity), then trip coordinates.

Affine world construction. Coarse features are ``F_A = base + q * D_A``
where the integer deviation rows ``D`` sum to zero and ``q`` is the
``affine_spread`` (larger values shrink fine cells toward their parent). Fine cell ``k`` of coarse
cell ``A`` gets ``F_A + eps_k * D_next(A)`` with an integer zero-sum
pattern ``eps``. Fine means equal coarse means, fine covariance is an
exact multiple of coarse covariance, and fine features stay in the affine
hull of the coarse ones, so a standardized affine relation learned on
the coarse grid holds unchanged on the fine grid. Fine counts are
``c0 + w_o . (f_o - base) + w_d . (f_d - base)`` with integer ``w`` drawn
from the span of ``D``, which keeps coarse coefficients identifiable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .features import N_VARIABLES, VARIABLES, FeatureTable
from .geo import ODFlowTable, Polygon, TripRecord, Zoning, write_trips

RULES = ("affine", "gravity", "noisy-gravity")


@dataclass(frozen=True)
class SynthSpec:
    coarse_nx: int = 4
    coarse_ny: int = 4
    subdivision: int = 2
    seed: int = 0
    rule: str = "affine"
    noise: float = 0.0
    trips_per_pair: float = 20.0
    softening: float = 4.0  # added to centroid distance, in fine-cell widths
    cell_size: float = 0.01
    origin: tuple[float, float] = (-74.05, 40.55)
    non_residential: int = 0
    # affine rule: coarse deviation scale relative to the within-cell spread
    affine_spread: int = 1

    def __post_init__(self) -> None:
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if min(self.coarse_nx, self.coarse_ny, self.subdivision) < 1:
            raise ValueError("grid sizes must be positive")
        if self.coarse_nx * self.coarse_ny < 2:
            raise ValueError("need at least two coarse cells")
        if self.rule == "affine" and self.subdivision < 2:
            raise ValueError("the affine world needs subdivision >= 2")
        if self.noise < 0 or self.trips_per_pair <= 0:
            raise ValueError("noise must be non-negative and trips_per_pair positive")
        if self.affine_spread < 1:
            raise ValueError("affine_spread must be a positive integer")
        if self.rule != "affine" and self.softening <= 0:
            raise ValueError("gravity rules need a positive softening length")


@dataclass
class SynthWorld:
    spec: SynthSpec
    coarse: Zoning
    fine: Zoning
    coarse_features: FeatureTable
    fine_features: FeatureTable
    fine_flows: ODFlowTable
    coarse_flows: ODFlowTable
    parent: dict[str, str]
    truth: dict = field(default_factory=dict)

    def trips(self, rng: np.random.Generator | None = None):
        """Yield one TripRecord per counted fine trip, interior to its cells."""
        rng = rng if rng is not None else np.random.default_rng([self.spec.seed, 1])
        s = self.spec
        ids = self.fine.unit_ids
        pos = {u: k for k, u in enumerate(ids)}
        ncols = s.coarse_nx * s.subdivision
        for (o, d), c in sorted(self.fine_flows.counts.items(), key=lambda kv: (pos[kv[0][0]], pos[kv[0][1]])):
            if c <= 0:
                continue
            u = rng.uniform(0.1, 0.9, size=(c, 4))
            oi, oj = divmod(pos[o], ncols)
            di, dj = divmod(pos[d], ncols)
            px = s.origin[0] + (oj + u[:, 0]) * s.cell_size
            py = s.origin[1] + (oi + u[:, 1]) * s.cell_size
            dx = s.origin[0] + (dj + u[:, 2]) * s.cell_size
            dy = s.origin[1] + (di + u[:, 3]) * s.cell_size
            for k in range(c):
                yield TripRecord.from_coords(px[k], py[k], dx[k], dy[k])

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Write every artifact in the formats the pipeline reads."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "coarse_zoning": out / "coarse.geojson",
            "fine_zoning": out / "fine.geojson",
            "coarse_features": out / "coarse_features.csv",
            "fine_features": out / "fine_features.csv",
            "coarse_flows": out / "coarse_flows_truth.csv",
            "fine_flows": out / "fine_flows_truth.csv",
            "trips": out / "trips.csv",
            "truth": out / "truth.json",
        }
        for key in ("coarse", "fine"):
            zoning = getattr(self, key)
            with open(paths[f"{key}_zoning"], "w") as fh:
                json.dump(zoning.to_geojson(), fh)
        self.coarse_features.to_csv(paths["coarse_features"])
        self.fine_features.to_csv(paths["fine_features"])
        self.coarse_flows.to_csv(paths["coarse_flows"])
        self.fine_flows.to_csv(paths["fine_flows"])
        write_trips(paths["trips"], self.trips())
        with open(paths["truth"], "w") as fh:
            json.dump({"spec": asdict(self.spec), **self.truth}, fh, indent=1)
        return paths


def _square(x0: float, y0: float, size: float) -> Polygon:
    return Polygon.from_coords([(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size)])


def _grids(spec: SynthSpec):
    s = spec.subdivision
    nx, ny = spec.coarse_nx, spec.coarse_ny
    cs = spec.cell_size
    x0, y0 = spec.origin
    coarse_ids = [f"Z{i:02d}{j:02d}" for i in range(ny) for j in range(nx)]
    fine_ids = [f"T{i:03d}{j:03d}" for i in range(ny * s) for j in range(nx * s)]
    coarse_units = {
        f"Z{i:02d}{j:02d}": [_square(x0 + j * s * cs, y0 + i * s * cs, s * cs)]
        for i in range(ny) for j in range(nx)
    }
    fine_units = {
        f"T{i:03d}{j:03d}": [_square(x0 + j * cs, y0 + i * cs, cs)]
        for i in range(ny * s) for j in range(nx * s)
    }
    parent = {f"T{i:03d}{j:03d}": f"Z{i // s:02d}{j // s:02d}" for i in range(ny * s) for j in range(nx * s)}
    # fine cell centres in fine-cell units
    centres = np.array([(j + 0.5, i + 0.5) for i in range(ny * s) for j in range(nx * s)])
    return coarse_ids, fine_ids, coarse_units, fine_units, parent, centres


def _zero_sum_pattern(n: int) -> np.ndarray:
    eps = np.array([1 if k % 2 == 0 else -1 for k in range(n)])
    if n % 2:
        eps[-1] = 0
    return eps


def _affine_features(rng: np.random.Generator, n_coarse: int, s: int, coarse_ids, fine_ids, parent,
                     spread: int = 1):
    half = n_coarse // 2
    base = np.round(rng.uniform(20, 80, size=N_VARIABLES)) + spread
    base[0], base[1] = 4000.0, 1800.0  # population and commuter counts
    while True:
        top = rng.integers(-1, 2, size=(half, N_VARIABLES))
        dev = np.vstack([top, -top] + ([np.zeros((1, N_VARIABLES), int)] if n_coarse % 2 else []))
        if np.all(np.any(dev != 0, axis=0)):
            break
    dev = dev[rng.permutation(n_coarse)].astype(np.float64)
    coarse_vals = base + spread * dev
    eps = _zero_sum_pattern(s * s)
    cpos = {c: k for k, c in enumerate(coarse_ids)}
    seen: dict[str, int] = {}
    fine_vals = np.empty((len(fine_ids), N_VARIABLES))
    for r, f in enumerate(fine_ids):
        a = cpos[parent[f]]
        k = seen.get(parent[f], 0)
        seen[parent[f]] = k + 1
        fine_vals[r] = coarse_vals[a] + eps[k] * dev[(a + 1) % n_coarse]
    return base, dev, coarse_vals, fine_vals


def _smooth_features(rng: np.random.Generator, centres: np.ndarray, fine_ids, parent, coarse_ids):
    span = centres.max(axis=0)
    u = centres / span  # in (0, 1]
    basis = np.column_stack([
        u[:, 0], u[:, 1], u[:, 0] * u[:, 1], u[:, 0] ** 2, u[:, 1] ** 2,
        np.sin(np.pi * u[:, 0]), np.cos(np.pi * u[:, 1]),
    ])
    basis = (basis - basis.mean(0)) / basis.std(0)
    mix = rng.normal(size=(basis.shape[1], N_VARIABLES))
    field_vals = basis @ mix / np.sqrt(basis.shape[1])
    field_vals += 0.1 * rng.normal(size=field_vals.shape)
    vals = 50.0 + 10.0 * field_vals
    # population: lognormal surface peaking toward one corner
    vals[:, 0] = 3000.0 * np.exp(0.6 * field_vals[:, 0])
    vals[:, 1] = 0.45 * vals[:, 0] * np.exp(0.05 * rng.normal(size=len(fine_ids)))
    # two columns carry location so models can see separation
    vals[:, 27] = 20.0 + 60.0 * u[:, 0]
    vals[:, 28] = 20.0 + 60.0 * u[:, 1]
    cpos = {c: k for k, c in enumerate(coarse_ids)}
    coarse_vals = np.zeros((len(coarse_ids), N_VARIABLES))
    counts = np.zeros(len(coarse_ids))
    for r, f in enumerate(fine_ids):
        coarse_vals[cpos[parent[f]]] += vals[r]
        counts[cpos[parent[f]]] += 1
    return vals, coarse_vals / counts[:, None]


def generate(spec: SynthSpec) -> SynthWorld:
    rng = np.random.default_rng(spec.seed)
    coarse_ids, fine_ids, coarse_units, fine_units, parent, centres = _grids(spec)
    nf = len(fine_ids)
    s = spec.subdivision
    truth: dict = {"rule": spec.rule}

    if spec.rule == "affine":
        base, dev, coarse_vals, fine_vals = _affine_features(
            rng, len(coarse_ids), s, coarse_ids, fine_ids, parent, spec.affine_spread
        )
        n_c = len(coarse_ids)
        picks = rng.choice(n_c, size=4, replace=False)
        w_o = dev[picks[0]] + dev[picks[1]]
        w_d = dev[picks[2]] - dev[picks[3]]
        lin_o = (fine_vals - base) @ w_o
        lin_d = (fine_vals - base) @ w_d
        c0 = 1.0 - (lin_o.min() + lin_d.min())
        counts = c0 + lin_o[:, None] + lin_d[None, :]
        scale = float(s**4)
        truth.update({
            "fine_intercept": float(c0 - base @ (w_o + w_d)),
            "fine_coef": np.concatenate([w_o, w_d]).tolist(),
            "coarse_intercept": scale * float(c0 - base @ (w_o + w_d)),
            "coarse_coef": (scale * np.concatenate([w_o, w_d])).tolist(),
        })
    else:
        fine_vals, coarse_vals = _smooth_features(rng, centres, fine_ids, parent, coarse_ids)
        pop = fine_vals[:, 0]
        d2 = ((centres[:, None, :] - centres[None, :, :]) ** 2).sum(-1)
        dist = np.sqrt(d2) + spec.softening
        raw = pop[:, None] * pop[None, :] / dist**2
        k = spec.trips_per_pair / raw.mean()
        counts = k * raw
        if spec.rule == "noisy-gravity" and spec.noise > 0:
            counts = counts * (1.0 + spec.noise * rng.normal(size=counts.shape))
        counts = np.maximum(counts, 0.0)
        truth.update({"k": float(k), "softening": spec.softening})
    counts = np.rint(counts).astype(np.int64)

    fine_res = np.ones(nf, dtype=bool)
    if spec.non_residential:
        fine_res[nf - spec.non_residential:] = False
    coarse_res = np.array([any(fine_res[r] for r, f in enumerate(fine_ids) if parent[f] == c) for c in coarse_ids])
    fine_table_vals = fine_vals.copy()
    fine_table_vals[~fine_res] = np.nan
    coarse_table_vals = coarse_vals.copy()
    coarse_table_vals[~coarse_res] = np.nan

    fine_flows = ODFlowTable("fine", {
        (fine_ids[a], fine_ids[b]): int(counts[a, b])
        for a in range(nf) for b in range(nf) if counts[a, b] > 0
    })
    coarse_flows = fine_flows.coarsen(parent, "coarse")
    return SynthWorld(
        spec,
        Zoning("coarse", coarse_units, dict(zip(coarse_ids, coarse_res.tolist()))),
        Zoning("fine", fine_units, dict(zip(fine_ids, fine_res.tolist()))),
        FeatureTable(coarse_ids, coarse_table_vals, coarse_res),
        FeatureTable(fine_ids, fine_table_vals, fine_res),
        fine_flows,
        coarse_flows,
        parent,
        truth,
    )


__all__ = ["RULES", "SynthSpec", "SynthWorld", "generate", "VARIABLES"]
