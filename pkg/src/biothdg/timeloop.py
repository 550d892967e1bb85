"""Time integration: initial projections, the step loop and checkpoints."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .forms import ElementTables, ModelParams, ah_consistency_load, assemble_ah_local
from .spaces import DofLayout, project_trace
from .system import (BiotSystem, ProblemData, SolutionState, SolverError, StaticCondensation,
                     TimeScheme, backward_euler, bdf2, static_scheme)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, T_final]`` into ``n_steps`` steps."""

    T_final: float
    n_steps: int

    def __post_init__(self):
        if not self.T_final > 0:
            raise ValueError("final time must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one time step")

    @classmethod
    def from_dt(cls, T_final: float, dt: float) -> "TimeGrid":
        if not dt > 0:
            raise ValueError("time step must be positive")
        n = int(round(T_final / dt))
        if n < 1 or abs(n * dt - T_final) > 1e-9 * max(T_final, dt):
            raise ValueError(f"T={T_final} is not an integer multiple of dt={dt}")
        return cls(T_final, n)

    @property
    def dt(self) -> float:
        return self.T_final / self.n_steps

    def time(self, n: int) -> float:
        return self.T_final if n == self.n_steps else n * self.dt

    def times(self) -> np.ndarray:
        return np.array([self.time(n) for n in range(self.n_steps + 1)])


# projections --------------------------------------------------------------------

def l2_projection(layout: DofLayout, func, space: str = "Q", tables: ElementTables | None = None):
    """Element-wise L2 projection.

    ``space`` is ``"Q"`` (scalar, P_{k-1}), ``"P"`` (scalar, P_k) or ``"V"``
    (vector, P_k); ``func(x)`` takes ``(N, 2)`` points.  Returns the
    coefficient array ``(nc, m*nb)`` in the element layout.
    """
    T = tables if tables is not None else ElementTables(layout, volume_degree=2 * layout.k + 4)
    nc, nq = T.wq.shape
    nb = layout.nk1 if space == "Q" else layout.nk
    vals = np.asarray(func(T.xq.reshape(-1, 2)), dtype=float)
    ncomp = 2 if space == "V" else 1
    vals = vals.reshape(nc, nq, ncomp)
    phi = T.phi[:, :nb]
    M = T.mass[:, :nb, :nb]
    b = np.einsum("cq,cqa,qi->cia", T.wq, vals, phi)
    coef = np.linalg.solve(M, b)                      # (nc, nb, ncomp)
    return coef.transpose(0, 2, 1).reshape(nc, ncomp * nb)


def elliptic_projection(layout: DofLayout, params: ModelParams, u, grad_u,
                        tables: ElementTables | None = None):
    """Discrete elasticity solve ``a_h(Pi u, v) = a_h((u, u), v)`` with Gamma_D traces fixed.

    ``u(x) -> (N, 2)`` and ``grad_u(x) -> (N, 2, 2)``.  Returns the element
    coefficients ``(nc, 2nk)`` and the displacement-trace part of the
    facet vector ``(n_ubar,)``.
    """
    T = tables if tables is not None else ElementTables(layout)
    Auu, Aub, Abb = assemble_ah_local(T, params)
    K = np.concatenate([np.concatenate([Auu, Aub], axis=2),
                        np.concatenate([Aub.transpose(0, 2, 1), Abb], axis=2)], axis=1)
    dofs = layout.cell_facet_dofs[:, layout.local_facet_slices["ubar"]]
    fixed = layout.constrained[layout.constrained < layout.n_ubar]
    if len(fixed) == 0:
        raise ValueError("elliptic projection needs |Gamma_D| > 0 to fix rigid motions")
    cond = StaticCondensation(K, Auu.shape[1], dofs, layout.n_ubar, fixed)
    vol, trace = ah_consistency_load(T, params, grad_u)
    r_f = np.zeros(layout.n_ubar)
    np.add.at(r_f, dofs, trace)
    x_c = np.zeros(layout.n_ubar)
    idx, val = project_trace(layout, u, layout.mesh.facets_tagged("D"), "ubar")
    x_c[idx] = val
    xi, xf = cond.solve(vol, r_f, x_c[cond.constrained])
    return xi, xf


def initialize(layout: DofLayout, params: ModelParams, exact, t0: float = 0.0) -> SolutionState:
    """Discrete initial state from an exact-solution bundle.

    ``exact`` provides ``u, grad_u, p, pT, z`` as callables ``(x, t)``;
    ``None`` yields the zero state.  Displacement uses the elliptic
    projection, the other fields element-wise L2 projections, and the
    pressure traces facet-wise L2 projections.
    """
    state = SolutionState.zeros(layout, t0)
    if exact is None:
        return state
    at = lambda fn: (lambda x: fn(x, t0))  # noqa: E731
    T = ElementTables(layout, volume_degree=2 * layout.k + 4)
    state.u, ubar = elliptic_projection(layout, params, at(exact.u), at(exact.grad_u))
    state.facet[layout.facet_slices["ubar"]] = ubar
    state.p = l2_projection(layout, at(exact.p), "Q", T)
    state.pT = l2_projection(layout, at(exact.pT), "Q", T)
    state.z = l2_projection(layout, at(exact.z), "V", T)
    every = np.arange(layout.mesh.num_facets)
    for target, fn in (("pTbar", exact.pT), ("pbar", exact.p)):
        idx, val = project_trace(layout, at(fn), every, target)
        state.facet[idx] = val
    return state


# stepping -----------------------------------------------------------------------

class Stepper:
    """Owns the assembled operators for one run.

    For BDF2 the first step is a backward-Euler step, which needs its own
    operator; it is built lazily and dropped after use.
    """

    def __init__(self, layout: DofLayout, params: ModelParams, scheme: str, dt: float | None):
        self.layout = layout
        self.params = params
        self.scheme_name = scheme.lower()
        self.dt = dt
        self.tables = ElementTables(layout)
        self._systems: dict[str, BiotSystem] = {}

    def _system(self, scheme: TimeScheme) -> BiotSystem:
        if scheme.name not in self._systems:
            logger.info("assembling %s operator (%d facet unknowns)", scheme.name,
                        self.layout.n_global)
            self._systems[scheme.name] = BiotSystem(self.layout, self.params, scheme, self.tables)
        return self._systems[scheme.name]

    def system_for(self, n_history: int) -> BiotSystem:
        if self.scheme_name == "static":
            return self._system(static_scheme())
        if self.scheme_name == "be":
            return self._system(backward_euler(self.dt))
        if self.scheme_name == "bdf2":
            if n_history < 2:
                return self._system(backward_euler(self.dt))
            self._systems.pop("BE", None)
            return self._system(bdf2(self.dt))
        raise ValueError(f"unknown time scheme {self.scheme_name!r}")

    def step(self, history: Sequence[SolutionState], data: ProblemData, t: float):
        """Return the new state and the operator that produced it."""
        system = self.system_for(len(history))
        state = system.solve_step(list(history)[:system.scheme.levels], data, t)
        if not state.is_finite():
            raise SolverError(f"non-finite solution at t={t}")
        return state, system


Observer = Callable[[int, SolutionState, BiotSystem], None]


@dataclass
class RunResult:
    final: SolutionState
    states: list = field(default_factory=list)
    history: list = field(default_factory=list)
    steps: int = 0


def run(layout: DofLayout, params: ModelParams, grid: TimeGrid, scheme: str, data: ProblemData,
        initial: SolutionState | Sequence[SolutionState], observers: Iterable[Observer] = (),
        start_step: int = 0, keep_states: bool = False, checkpoint_dir=None,
        checkpoint_every: int = 0, stepper: Stepper | None = None) -> RunResult:
    """Advance from step ``start_step`` to ``grid.n_steps``.

    ``initial`` is the state at ``start_step`` or, when restarting a BDF2
    run, the list ``[x^n, x^{n-1}]`` newest first.  Observers are called as
    ``obs(step, state, system)`` after every step.
    """
    history = [initial] if isinstance(initial, SolutionState) else list(initial)
    if scheme.lower() == "static":
        raise ValueError("the static problem has no time loop; use a single solve")
    stepper = stepper or Stepper(layout, params, scheme, grid.dt)
    observers = list(observers)
    states = [history[0]] if keep_states else []
    for n in range(start_step + 1, grid.n_steps + 1):
        t = grid.time(n)
        new, system = stepper.step(history, data, t)
        history = [new] + history[:1]
        for obs in observers:
            obs(n, new, system)
        if keep_states:
            states.append(new)
        if checkpoint_dir is not None and checkpoint_every and n % checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint_{n:06d}.npz", layout, history, n)
        logger.debug("step %d t=%g done", n, t)
    return RunResult(history[0], states, history, grid.n_steps - start_step)


# checkpoints ----------------------------------------------------------------------

def save_checkpoint(path, layout: DofLayout, history: Sequence[SolutionState], step: int) -> Path:
    """Write the newest ``len(history)`` states plus mesh/layout hashes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"version": np.array(CHECKPOINT_VERSION), "step": np.array(step),
              "mesh_hash": np.array(layout.mesh.digest()), "layout_hash": np.array(layout.digest()),
              "levels": np.array(len(history))}
    for i, s in enumerate(history):
        for name in ("u", "pT", "z", "p", "facet"):
            arrays[f"{name}_{i}"] = getattr(s, name)
        arrays[f"time_{i}"] = np.array(s.time)
    np.savez(path, **arrays)
    return path


def load_checkpoint(path, layout: DofLayout):
    """Return ``(history, step)``; the mesh and layout hashes must match."""
    with np.load(path) as f:
        if int(f["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(f['version'])}")
        if str(f["mesh_hash"]) != layout.mesh.digest() or str(f["layout_hash"]) != layout.digest():
            raise ValueError("checkpoint does not belong to this mesh/layout")
        history = [SolutionState(float(f[f"time_{i}"]), f[f"u_{i}"], f[f"pT_{i}"], f[f"z_{i}"],
                                 f[f"p_{i}"], f[f"facet_{i}"]) for i in range(int(f["levels"]))]
        return history, int(f["step"])
