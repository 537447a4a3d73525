"""Markovian Adomian cascade: backward heat equations driven by gradient products.

When A_t = int_0^t a(s, W_s, B_s) ds the BSDE value is Y_t = v(t, W_t, B_t)
with v = sum_n v^n and

    (d_t + 1/2 Lap) v^0 + (gamma/2) a = 0,                        v^0(T) = eta_bar/2
    (d_t + 1/2 Lap) v^n + sum_{k<n} (v^k_x v^{n-1-k}_x
                                     + w v^k_y v^{n-1-k}_y) = 0,  v^n(T) = 0

where w = 1/alpha weights the orthogonal bracket. The martingale parts are
L = int v_x dW and L_perp = int v_y dB. The same system written for 2v
carries a factor 1/2 in front of the products (``cascade_source(scale=0.5)``).

All levels are marched together backwards in time, so only the current
time slice of each level is held in memory; snapshots are kept at a few
requested times.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lapack

SourceFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GridSpec:
    nx: int = 241
    ny: int = 241
    x_bounds: tuple = (-6.0, 6.0)
    y_bounds: tuple = (-6.0, 6.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs at least 3 points per axis")
        if not (self.x_bounds[0] < self.x_bounds[1] and self.y_bounds[0] < self.y_bounds[1]):
            raise ValueError("grid bounds must be increasing")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_bounds[0], self.x_bounds[1], self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_bounds[0], self.y_bounds[1], self.ny)

    @property
    def hx(self) -> float:
        return (self.x_bounds[1] - self.x_bounds[0]) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_bounds[1] - self.y_bounds[0]) / (self.ny - 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def index_of(self, x: float, y: float) -> tuple[int, int]:
        """Grid indices of the node (x, y); raises if (x, y) is not a node."""
        i = (x - self.x_bounds[0]) / self.hx
        j = (y - self.y_bounds[0]) / self.hy
        ii, jj = int(round(i)), int(round(j))
        if abs(i - ii) > 1e-9 or abs(j - jj) > 1e-9 or not (0 <= ii < self.nx and 0 <= jj < self.ny):
            raise ValueError(f"({x}, {y}) is not a grid node")
        return ii, jj

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "x_bounds": list(self.x_bounds), "y_bounds": list(self.y_bounds)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(d["nx"], d["ny"], tuple(d["x_bounds"]), tuple(d["y_bounds"]))


@dataclass
class GridFunction:
    grid: GridSpec
    t: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(f"values shape {self.values.shape} does not match grid {(self.grid.nx, self.grid.ny)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    def to_csv(self, path) -> None:
        X, Y = self.grid.mesh()
        with open(path, "w", newline="") as fh:
            fh.write("x,y,value\n")
            for x, y, v in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")

    @classmethod
    def from_csv(cls, path, grid: GridSpec, t: float) -> "GridFunction":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["x", "y", "value"]:
                raise ValueError(f"unexpected CSV header {header}")
            vals = np.array([float(row[2]) for row in reader])
        return cls(grid, t, vals.reshape(grid.nx, grid.ny))


@dataclass(frozen=True)
class ProblemSpec:
    """One BSDE instance: coupling alpha, weight beta = 1/alpha, gamma, horizon, source a.

    ``eta_bar`` is 0 or a bounded terminal function h(x, y). ``level0_exact``
    optionally gives v^0(t, x, y) in closed form; it then supplies Dirichlet
    boundary values for level 0 (otherwise all levels use zero-Neumann).
    """

    alpha_coupling: float
    gamma: float
    T: float
    source: SourceFn
    beta: float | None = None
    eta_bar: float | Callable = 0.0
    level0_exact: SourceFn | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.alpha_coupling == 0:
            raise ValueError("alpha_coupling must be nonzero")
        if self.T <= 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 / self.alpha_coupling)
        if abs(self.beta * self.alpha_coupling - 1.0) > 1e-12:
            raise ValueError(f"beta = {self.beta} is not 1/alpha for alpha = {self.alpha_coupling}")
        if not callable(self.eta_bar) and self.eta_bar != 0:
            raise ValueError("eta_bar must be 0 or a function h(x, y)")

    def level0_source(self, t: float, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return 0.5 * self.gamma * np.broadcast_to(self.source(t, X, Y), X.shape)

    def terminal(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        if callable(self.eta_bar):
            return 0.5 * np.asarray(self.eta_bar(X, Y), dtype=float) * np.ones_like(X)
        return np.zeros_like(X)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alpha_coupling": self.alpha_coupling,
            "beta": self.beta,
            "gamma": self.gamma,
            "T": self.T,
            "eta_bar": "function" if callable(self.eta_bar) else self.eta_bar,
            "level0_dirichlet": self.level0_exact is not None,
        }


def example1_problem(T: float) -> ProblemSpec:
    """alpha = -1, gamma = 2, A_t = 1/2 int (W^2 + B^2) ds."""
    return ProblemSpec(
        alpha_coupling=-1.0,
        gamma=2.0,
        T=T,
        source=lambda t, x, y: 0.5 * (x * x + y * y),
        level0_exact=lambda t, x, y: 0.5 * (T - t) * (x * x + y * y) + 0.5 * (T - t) ** 2,
        name="example1",
    )


def example2_problem(T: float) -> ProblemSpec:
    """alpha = -1, gamma = 2, A_t = int W B ds."""
    return ProblemSpec(
        alpha_coupling=-1.0,
        gamma=2.0,
        T=T,
        source=lambda t, x, y: x * y,
        level0_exact=lambda t, x, y: (T - t) * x * y,
        name="example2",
    )


@dataclass
class CascadeResult:
    grid: GridSpec
    times: np.ndarray
    levels: list
    partial_sums: list
    level_norms: np.ndarray
    spec: ProblemSpec
    nt: int
    scheme: str
    probe: float = 1.0
    gradient_norms: np.ndarray | None = None

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, self.spec.T):
            raise ValueError(f"t = {t} is not a stored snapshot; have {self.times.tolist()}")
        return k

    def slice(self, n: int | None, t: float) -> GridFunction:
        """Level n at time t, or the partial sum through the top level when n is None."""
        k = self.time_index(t)
        arr = self.partial_sums[-1] if n is None else self.levels[n]
        return GridFunction(self.grid, float(self.times[k]), arr[k])

    def gradient(self, t: float, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        return grid_gradient(self.slice(n, t).values, self.grid)


def grid_gradient(v: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, one-sided second order at the edges."""
    return (
        np.gradient(v, grid.hx, axis=0, edge_order=2),
        np.gradient(v, grid.hy, axis=1, edge_order=2),
    )


def _check_same_grid(arrays: Sequence[np.ndarray]) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"levels live on mismatched grids: {sorted(shapes)}")


def cascade_source(
    levels: Sequence[np.ndarray],
    n: int,
    weight: float,
    grid: GridSpec,
    scale: float = 0.5,
    gradients: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
) -> np.ndarray:
    """scale * sum_{k<n} (v^k_x v^{n-1-k}_x + weight * v^k_y v^{n-1-k}_y).

    ``levels`` are arrays on ``grid`` sharing a leading time axis (or a single
    time slice). ``scale=0.5`` is the Remark form (for 2Y); the cascade for Y
    itself uses ``scale=1``. Precomputed ``gradients`` may be passed to avoid
    recomputing them.
    """
    if n < 1:
        raise ValueError("cascade source is defined for n >= 1")
    if len(levels) < n:
        raise ValueError(f"need levels 0..{n - 1}, got {len(levels)}")
    _check_same_grid(levels[:n])
    if levels[0].shape[-2:] != (grid.nx, grid.ny):
        raise ValueError(f"levels have spatial shape {levels[0].shape[-2:]}, grid is {(grid.nx, grid.ny)}")
    if gradients is None:
        ax = levels[0].ndim - 2
        gradients = [
            (
                np.gradient(v, grid.hx, axis=ax, edge_order=2),
                np.gradient(v, grid.hy, axis=ax + 1, edge_order=2),
            )
            for v in levels[:n]
        ]
    out = np.zeros_like(levels[0], dtype=float)
    for k in range(n):
        gx_a, gy_a = gradients[k]
        gx_b, gy_b = gradients[n - 1 - k]
        out += gx_a * gx_b + weight * (gy_a * gy_b)
    return scale * out


class _Tridiag:
    """Factored (I - r D2) along one axis; D2 is the 3-point second difference."""

    def __init__(self, m: int, r: float, neumann: bool):
        self.neumann = neumann
        if neumann:
            # ghost reflection v_{-1} = v_1 at both ends
            d = np.full(m, 1.0 + 2.0 * r)
            du = np.full(m - 1, -r)
            dl = np.full(m - 1, -r)
            du[0] = -2.0 * r
            dl[-1] = -2.0 * r
        else:
            # interior unknowns only; boundary values enter through the rhs
            d = np.full(m - 2, 1.0 + 2.0 * r)
            du = np.full(m - 3, -r)
            dl = np.full(m - 3, -r)
        self.r = r
        dl, d, du, du2, ipiv, info = lapack.dgttrf(dl, d, du)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal factorisation failed (info={info})")
        self._lu = (dl, d, du, du2, ipiv)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dgttrs(*self._lu, np.asfortranarray(rhs))
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x


class _Stepper:
    """One backward step of v_tau = 1/2 Lap v + f for a single level."""

    def __init__(self, grid: GridSpec, dtau: float, scheme: str, dirichlet: bool):
        self.grid, self.dtau, self.scheme, self.dirichlet = grid, dtau, scheme, dirichlet
        self.rx = 0.5 * dtau / grid.hx**2
        self.ry = 0.5 * dtau / grid.hy**2
        if scheme == "implicit":
            self.sx = _Tridiag(grid.nx, self.rx, neumann=not dirichlet)
            self.sy = _Tridiag(grid.ny, self.ry, neumann=not dirichlet)

    def _d2(self, v: np.ndarray, axis: int) -> np.ndarray:
        # zero-Neumann ghost reflection; boundary entries unused under Dirichlet
        pad = [(0, 0), (0, 0)]
        pad[axis] = (1, 1)
        p = np.pad(v, pad, mode="reflect")
        if axis == 0:
            return p[2:, :] - 2.0 * v + p[:-2, :]
        return p[:, 2:] - 2.0 * v + p[:, :-2]

    def step(self, v: np.ndarray, f: np.ndarray, g_new: np.ndarray | None = None) -> np.ndarray:
        """Advance v by dtau. ``f`` is the source (new time for implicit, old for
        explicit); ``g_new`` the Dirichlet data at the new time."""
        if self.scheme == "explicit":
            out = v + self.rx * self._d2(v, 0) + self.ry * self._d2(v, 1) + self.dtau * f
            if self.dirichlet:
                _set_boundary(out, g_new)
            return out
        rhs = v + self.dtau * f
        if not self.dirichlet:
            w = self.sx.solve(rhs)
            return self.sy.solve(w.T).T
        # (I - rx Dxx)(I - ry Dyy) u = rhs with u = g on the boundary.
        # Intermediate w = (I - ry Dyy) u, known on the x-edges from g.
        rx, ry = self.rx, self.ry
        w = np.empty_like(rhs)
        for i in (0, -1):
            edge = g_new[i, :]
            w[i, 1:-1] = edge[1:-1] - ry * (edge[2:] - 2.0 * edge[1:-1] + edge[:-2])
        b = rhs[1:-1, 1:-1].copy()
        b[0, :] += rx * w[0, 1:-1]
        b[-1, :] += rx * w[-1, 1:-1]
        w[1:-1, 1:-1] = self.sx.solve(b)
        u = g_new.copy()
        b = w[1:-1, 1:-1].T.copy()
        b[0, :] += ry * g_new[1:-1, 0]
        b[-1, :] += ry * g_new[1:-1, -1]
        u[1:-1, 1:-1] = self.sy.solve(b).T
        return u


def _set_boundary(v: np.ndarray, g: np.ndarray) -> None:
    v[0, :], v[-1, :], v[:, 0], v[:, -1] = g[0, :], g[-1, :], g[:, 0], g[:, -1]


def _snapshot_steps(nt: int, n_snapshots: int) -> list[int]:
    """Step indices (counted in tau = T - t) at which to keep slices; always 0 and nt."""
    if n_snapshots < 2:
        raise ValueError("need at least 2 snapshots (t = 0 and t = T)")
    return sorted({int(round(k * nt / (n_snapshots - 1))) for k in range(n_snapshots)})


def _check_stability(grid: GridSpec, dtau: float, scheme: str) -> None:
    if scheme not in ("implicit", "explicit"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "explicit":
        h2 = min(grid.hx, grid.hy) ** 2
        if dtau > h2 / 4.0:
            raise ValueError(
                f"explicit scheme unstable: dt = {dtau:.3g} exceeds h^2/4 = {h2 / 4.0:.3g}; "
                "use more time steps or the implicit scheme"
            )


def run_cascade(
    spec: ProblemSpec,
    grid: GridSpec | None = None,
    nt: int = 2000,
    N: int = 6,
    scheme: str = "implicit",
    n_snapshots: int = 5,
    probe: float = 1.0,
) -> CascadeResult:
    """Levels v^0..v^N marched jointly from t = T back to t = 0.

    At every step the levels are advanced in order, so the source of level n
    uses levels 0..n-1 at the same (new) time: the implicit scheme stays fully
    implicit in the cascade coupling.
    """
    grid = grid or GridSpec()
    if N < 0:
        raise ValueError(f"depth must be >= 0, got {N}")
    if nt < 1:
        raise ValueError(f"nt must be >= 1, got {nt}")
    dtau = spec.T / nt
    _check_stability(grid, dtau, scheme)

    X, Y = grid.mesh()
    dirichlet0 = spec.level0_exact is not None
    steppers = [_Stepper(grid, dtau, scheme, dirichlet0)]
    if N >= 1:
        shared = _Stepper(grid, dtau, scheme, dirichlet=False)
        steppers += [shared] * N

    current = [spec.terminal(X, Y)] + [np.zeros_like(X) for _ in range(N)]
    if dirichlet0:
        _set_boundary(current[0], np.asarray(spec.level0_exact(spec.T, X, Y), dtype=float) * np.ones_like(X))

    keep = _snapshot_steps(nt, n_snapshots)
    stored = {0: [c.copy() for c in current]} if 0 in keep else {}
    weight = spec.beta

    for k in range(nt):
        t_old = spec.T - k * dtau
        t_new = spec.T - (k + 1) * dtau
        t_src = t_new if scheme == "implicit" else t_old
        grads = [] if scheme == "implicit" else [grid_gradient(v, grid) for v in current]
        new = []
        for n in range(N + 1):
            if n == 0:
                f = spec.level0_source(t_src, X, Y)
            else:
                src_levels = new if scheme == "implicit" else current
                f = cascade_source(src_levels, n, weight, grid, scale=1.0, gradients=grads)
            g = None
            if n == 0 and dirichlet0:
                g = np.asarray(spec.level0_exact(t_new, X, Y), dtype=float) * np.ones_like(X)
            v = steppers[n].step(current[n], f, g)
            new.append(v)
            if scheme == "implicit":
                grads.append(grid_gradient(v, grid))
        current = new
        if k + 1 in keep:
            stored[k + 1] = [c.copy() for c in current]

    # order snapshots by increasing t (decreasing tau)
    steps = sorted(stored, reverse=True)
    times = np.array([spec.T - s * dtau for s in steps])
    times[-1] = spec.T  # exact terminal label
    if steps[0] == nt:
        times[0] = 0.0
    levels = [np.stack([stored[s][n] for s in steps]) for n in range(N + 1)]
    partial_sums = list(np.cumsum(np.stack(levels), axis=0))

    probe_mask = (np.abs(X) <= probe + 1e-12) & (np.abs(Y) <= probe + 1e-12)
    norms = np.array([float(np.max(np.abs(lv[:, probe_mask]))) for lv in levels])
    grad_norms = []
    for lv in levels:
        gx = np.gradient(lv, grid.hx, axis=1, edge_order=2)
        gy = np.gradient(lv, grid.hy, axis=2, edge_order=2)
        grad_norms.append(float(np.max(np.hypot(gx, gy)[:, probe_mask])))
    return CascadeResult(
        grid, times, levels, partial_sums, norms, spec, nt, scheme, probe, np.array(grad_norms)
    )


def solve_level0(
    spec: ProblemSpec,
    grid: GridSpec | None = None,
    nt: int = 2000,
    scheme: str = "implicit",
    n_snapshots: int = 5,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward heat equation with source (gamma/2) a: returns (times, values[t, x, y])."""
    res = run_cascade(spec, grid, nt, N=0, scheme=scheme, n_snapshots=n_snapshots)
    return res.times, res.levels[0]


@dataclass
class NormRatios:
    ratios: np.ndarray
    zero_level: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def level_norm_ratio(result: CascadeResult, gradient: bool = False) -> NormRatios:
    """||v^{n+1}|| / ||v^n|| on the probe region; zero-norm levels give 0 and a flag.

    With ``gradient=True`` the sup of |grad v^n| is used instead, i.e. the
    size of the martingale integrands of level n.
    """
    norms = np.asarray(result.gradient_norms if gradient else result.level_norms, dtype=float)
    if norms.size < 3:
        raise ValueError("need at least 3 levels for norm ratios")
    zero = norms[:-1] == 0.0
    ratios = np.where(zero, 0.0, norms[1:] / np.where(zero, 1.0, norms[:-1]))
    return NormRatios(ratios, zero)


def write_result(result: CascadeResult, outdir, all_times: bool = False) -> list[Path]:
    """CSV slices ("x,y,value") for every level and the partial sum, plus manifest.json.

    Only the t = 0 slice is written unless ``all_times``.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    time_idx = range(len(result.times)) if all_times else [0]
    written, slices = [], []
    for k in time_idx:
        t = float(result.times[k])
        for n in range(result.depth + 1):
            path = outdir / f"level{n}_t{k}.csv"
            GridFunction(result.grid, t, result.levels[n][k]).to_csv(path)
            slices.append({"level": n, "t": t, "file": path.name})
            written.append(path)
        path = outdir / f"sum_t{k}.csv"
        GridFunction(result.grid, t, result.partial_sums[-1][k]).to_csv(path)
        slices.append({"level": "sum", "t": t, "file": path.name})
        written.append(path)
    manifest = {
        "grid": result.grid.to_dict(),
        "problem": result.spec.to_dict(),
        "nt": result.nt,
        "depth": result.depth,
        "scheme": result.scheme,
        "times": [float(t) for t in result.times],
        "probe": result.probe,
        "level_norms": [float(x) for x in result.level_norms],
        "gradient_norms": [float(x) for x in result.gradient_norms],
        "slices": slices,
    }
    mpath = outdir / "cascade_manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    written.append(mpath)
    return written


def read_manifest(path) -> dict:
    manifest = json.loads(Path(path).read_text())
    manifest["grid"] = GridSpec.from_dict(manifest["grid"])
    return manifest

