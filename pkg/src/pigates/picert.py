"""Path-independence certification.

The no-jump propagator of a PI design factorizes as
``W(t2, t1) = sum_mn xi_mn(t2, t1) |m><n| x U_mn`` with scalar ``xi`` and
time-independent unitaries ``U_mn`` obeying the holonomy condition (every
loop product of ``U`` is the identity). Given that form, the central-system
operator of a jump trajectory is a product of ``U`` labels along an ancilla
path; relaxation jumps inside a noiseless ancilla subspace (NAS) only add a
phase, while other jumps add a time-dependent frame rotation.

:func:`pi_order` combines two routes. The symbolic route enumerates ancilla
paths and compares their operators. The numeric route tests whether the
Dyson-truncated conditional channel is a single unitary Kraus operator.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import dyson
from .model import ModelError, SystemModel
from .numerics import nearest_unitary, unitary_distance

__all__ = [
    "NotPiFormError",
    "CertificationError",
    "PropagatorDecomposition",
    "HolonomyResult",
    "NasPartition",
    "JumpEdge",
    "PathGraph",
    "Path",
    "PiOrder",
    "PiReport",
    "factorize_no_jump",
    "check_holonomy",
    "detect_nas",
    "build_path_graph",
    "enumerate_paths",
    "pi_order",
    "certify",
]

XI_THRESHOLD = 1e-10
RESIDUAL_TOL = 1e-8
HOLONOMY_TOL = 1e-8
EQUIV_TOL = 1e-8
NAS_TOL = 1e-10
RANK_TOL = 1e-8
ZERO_WEIGHT = 1e-13
MAX_PATH_JUMPS = 4


class NotPiFormError(ModelError):
    """The no-jump propagator does not factorize into PI form."""


class CertificationError(RuntimeError):
    """Symbolic and numeric certification disagree."""


# ----------------------------------------------------------------------------
# factorization


@dataclass
class PropagatorDecomposition:
    """``{xi_mn, U_mn}`` factorization of sampled no-jump propagators.

    Attributes
    ----------
    grid : list of (float, float)
        ``(t1, t2)`` pairs at which ``W(t2, t1)`` was evaluated.
    xi : numpy.ndarray, shape (G, d, d)
        Scalar coefficients per grid point.
    unitaries : dict
        ``(m, n) -> U_mn`` for every defined block.
    defined : numpy.ndarray of bool, shape (d, d)
        Blocks whose ``max |xi|`` exceeds the edge threshold.
    residuals : numpy.ndarray, shape (d, d)
        Worst relative deviation of a block from ``xi U`` over the grid.
    failures : list of tuple
        ``(m, n, t1, t2, residual)`` for blocks violating the PI form.
    composition_error : float
        Worst violation of the ``xi`` composition rule, loop phases included.
    """

    grid: list
    xi: np.ndarray
    unitaries: dict
    defined: np.ndarray
    residuals: np.ndarray
    failures: list
    composition_error: float

    @property
    def valid(self) -> bool:
        return not self.failures and self.composition_error <= RESIDUAL_TOL

    def raise_if_invalid(self):
        if self.failures:
            m, n, t1, t2, res = self.failures[0]
            raise NotPiFormError(f"block ({m}, {n}) at (t1={t1:g}, t2={t2:g}) deviates from "
                                 f"PI form by {res:.2e}")
        if self.composition_error > RESIDUAL_TOL:
            raise NotPiFormError(f"xi composition violated by {self.composition_error:.2e}")


def _default_times(model: SystemModel, n_points: int = 4) -> np.ndarray:
    end = model.duration
    if end is None:
        raise ModelError("a time grid is required for models without controls")
    return np.linspace(0.0, end, n_points)


def _propagators_on_grid(model, times):
    """``W(t_j, t_i)`` for all ``i < j`` built from consecutive steps."""
    steps = [dyson.no_jump_propagator(model, a, b) for a, b in zip(times[:-1], times[1:])]
    out = {}
    for i in range(len(times)):
        w = np.eye(model.dim, dtype=complex)
        for j in range(i + 1, len(times)):
            w = steps[j - 1] @ w
            out[(i, j)] = w
    return out


def factorize_no_jump(model: SystemModel, times=None,
                      strict: bool = False) -> PropagatorDecomposition:
    """Factorize the no-jump propagator into PI form.

    Parameters
    ----------
    times : sequence of float, optional
        Time points; every ordered pair ``t_i < t_j`` is a grid point. Four
        equally spaced points over the gate by default.
    strict : bool
        Raise :class:`NotPiFormError` instead of reporting failures.

    Notes
    -----
    Each block's unitary is taken from the grid point where the block is
    largest: ``U = B sqrt(N) / ||B||_F`` with a real positive scale (diagonal
    blocks are phase-aligned so that ``U_mm = I`` whenever the block is a
    multiple of the identity). Every other grid point is then projected
    onto that ``U`` and the relative remainder is the residual.
    """
    times = _default_times(model) if times is None else np.sort(np.asarray(times, dtype=float))
    if len(times) < 3:
        raise ModelError("factorization needs at least three time points")
    d, n = model.d, model.N
    ws = _propagators_on_grid(model, times)
    keys = sorted(ws)
    grid = [(float(times[i]), float(times[j])) for i, j in keys]
    blocks = np.stack([ws[k].reshape(d, n, d, n).transpose(0, 2, 1, 3) for k in keys])
    norms = np.linalg.norm(blocks, axis=(-2, -1)) / math.sqrt(n)    # (G, d, d)
    peak = norms.max(axis=0)
    defined = peak > XI_THRESHOLD
    xi = np.zeros(norms.shape, dtype=complex)
    unitaries = {}
    residuals = np.zeros((d, d))
    failures = []
    for m in range(d):
        for k in range(d):
            if not defined[m, k]:
                continue
            g_ref = int(np.argmax(norms[:, m, k]))
            ref = blocks[g_ref, m, k]
            u = ref / norms[g_ref, m, k]
            if m == k:
                tr = np.trace(u)
                if abs(tr) > 0:
                    u = u * (abs(tr) / tr)
            _, spread = nearest_unitary(u)
            u_fix, _ = nearest_unitary(u)
            unitaries[(m, k)] = u_fix
            worst = spread
            for g in range(len(keys)):
                c = np.trace(u_fix.conj().T @ blocks[g, m, k]) / n
                xi[g, m, k] = c
                res = np.linalg.norm(blocks[g, m, k] - c * u_fix) / (math.sqrt(n) * peak[m, k])
                worst = max(worst, res)
                if res > RESIDUAL_TOL:
                    failures.append((m, k, grid[g][0], grid[g][1], float(res)))
            if spread > RESIDUAL_TOL:
                failures.append((m, k, grid[g_ref][0], grid[g_ref][1], float(spread)))
            residuals[m, k] = worst
    comp = _composition_error(times, keys, xi, unitaries, defined, n)
    dec = PropagatorDecomposition(grid, xi, unitaries, defined, residuals, failures, comp)
    if strict:
        dec.raise_if_invalid()
    return dec


def _composition_error(times, keys, xi, unitaries, defined, n) -> float:
    index = {k: g for g, k in enumerate(keys)}
    d = defined.shape[0]
    worst = 0.0
    for a, b, c in itertools.combinations(range(len(times)), 3):
        g_ac, g_ab, g_bc = index[(a, c)], index[(a, b)], index[(b, c)]
        for m in range(d):
            for k in range(d):
                total = 0j
                for e in range(d):
                    if defined[m, e] and defined[e, k]:
                        loop = 1.0
                        if defined[m, k]:
                            loop = np.trace(unitaries[(m, k)].conj().T
                                            @ unitaries[(m, e)] @ unitaries[(e, k)]) / n
                        total += xi[g_bc, m, e] * xi[g_ab, e, k] * loop
                worst = max(worst, abs(xi[g_ac, m, k] - total))
    return float(worst)


# ----------------------------------------------------------------------------
# holonomy


@dataclass
class HolonomyResult:
    passed: bool
    worst_distance: float
    worst_cycle: tuple


def _simple_cycles(nodes, edges, max_len):
    adj = {m: sorted(k for (a, k) in edges if a == m) for m in nodes}
    for start in nodes:
        if (start, start) in edges:
            yield (start,)
        stack = [(start, (start,))]
        while stack:
            node, path = stack.pop()
            for nxt in adj[node]:
                if nxt == start and len(path) >= 2:
                    yield path
                elif nxt > start and nxt not in path and len(path) < max_len:
                    stack.append((nxt, path + (nxt,)))


def check_holonomy(table: dict, d: int, tol: float = HOLONOMY_TOL) -> HolonomyResult:
    """Check that every loop product of block unitaries is the identity.

    Parameters
    ----------
    table : dict
        ``(m, n) -> U_mn`` over the defined blocks; missing blocks are
        skipped.
    d : int
        Number of ancilla levels; cycles up to length ``d`` are checked,
        including self-loops and 2-cycles.

    Returns
    -------
    HolonomyResult
        ``passed`` is True when every cycle's product is within ``tol`` of a
        multiple of the identity in :func:`unitary_distance`.
    """
    edges = set(table)
    worst, worst_cycle = 0.0, ()
    for cyc in _simple_cycles(range(d), edges, d):
        seq = list(cyc) + [cyc[0]]
        prod = None
        for a, b in zip(seq[:-1], seq[1:]):
            u = np.asarray(table[(a, b)], dtype=complex)
            prod = u if prod is None else prod @ u
        dist = unitary_distance(prod, np.eye(prod.shape[0]))
        if dist > worst:
            worst, worst_cycle = dist, tuple(cyc)
    return HolonomyResult(worst <= tol, worst, worst_cycle)


# ----------------------------------------------------------------------------
# NAS


@dataclass
class NasPartition:
    """Levels grouped by frame Hamiltonians that differ by real constants.

    Attributes
    ----------
    groups : list of list of int
    offsets : numpy.ndarray, shape (segments, d)
        ``lambda_m`` per frame segment with ``H_m + lambda_m`` equal across
        a group (zero for each group's first level).
    """

    groups: list
    offsets: np.ndarray

    def group_of(self, m: int) -> int:
        for g, members in enumerate(self.groups):
            if m in members:
                return g
        raise KeyError(m)

    def same_group(self, m: int, n: int) -> bool:
        return self.group_of(m) == self.group_of(n)


def _scalar_difference(a: np.ndarray, b: np.ndarray):
    """Real ``c`` with ``a - b = c I`` within tolerance, else ``None``."""
    diff = a - b
    c = np.trace(diff) / diff.shape[0]
    if abs(c.imag) > NAS_TOL:
        return None
    if np.max(np.abs(diff - c * np.eye(diff.shape[0])), initial=0.0) > NAS_TOL:
        return None
    return float(c.real)


def detect_nas(model: SystemModel) -> NasPartition:
    """Finest partition of levels whose frame Hamiltonians differ by reals.

    Two levels share a group iff ``H_m(t) - H_n(t)`` is a real multiple of
    the identity on every frame segment.
    """
    d = model.d
    groups: list[list[int]] = []
    for m in range(d):
        for grp in groups:
            ref = grp[0]
            if all(_scalar_difference(seg.blocks[m], seg.blocks[ref]) is not None
                   for seg in model.frame):
                grp.append(m)
                break
        else:
            groups.append([m])
    offsets = np.zeros((len(model.frame), d))
    for s, seg in enumerate(model.frame):
        for grp in groups:
            for m in grp[1:]:
                offsets[s, m] = _scalar_difference(seg.blocks[grp[0]], seg.blocks[m])
    return NasPartition(groups, offsets)


# ----------------------------------------------------------------------------
# path graph


@dataclass(frozen=True)
class JumpEdge:
    """Directed ancilla transition ``source -> target`` caused by a jump."""

    source: int
    target: int
    jump: int
    label: str
    nas: bool
    central_identity: bool = True

    @property
    def dephasing(self) -> bool:
        return self.source == self.target


@dataclass
class PathGraph:
    """Drive and jump connectivity of the ancilla levels.

    ``drive_edges`` holds ``(m, n)`` for every defined block of the no-jump
    propagator (propagation ``n -> m``, diagonal included) and ``labels``
    the matching ``U_mn``.
    """

    nodes: list
    drive_edges: set
    jump_edges: list
    labels: dict
    nas: NasPartition


def build_path_graph(model: SystemModel, dec: PropagatorDecomposition,
                     nas: NasPartition | None = None) -> PathGraph:
    nas = detect_nas(model) if nas is None else nas
    d = model.d
    drive = {(m, n) for m in range(d) for n in range(d) if dec.defined[m, n]}
    jumps = []
    for idx, j in enumerate(model.jumps):
        if j.rate <= 0:
            continue
        if j.ancilla_op is None:
            # central action is not the identity: every transition is suspect
            k = _ancilla_pattern(model, j.operator)
            for m, n in zip(*np.nonzero(k)):
                jumps.append(JumpEdge(int(n), int(m), idx, j.label, False, False))
            continue
        k = j.ancilla_op
        for m in range(d):
            for n in range(d):
                if abs(k[m, n]) > 1e-12:
                    same = m == n or nas.same_group(m, n)
                    jumps.append(JumpEdge(n, m, idx, j.label, bool(same)))
    return PathGraph(list(range(d)), drive, jumps, dict(dec.unitaries), nas)


def _ancilla_pattern(model, op):
    d, n = model.d, model.N
    blk = op.reshape(d, n, d, n)
    return np.linalg.norm(blk, axis=(1, 3)) > 1e-12


@dataclass
class Path:
    """One class of ancilla trajectories (all jump times).

    Attributes
    ----------
    nodes : tuple of int
        Ancilla levels visited: start, then (pre-jump, post-jump) pairs,
        then the final level.
    jumps : tuple of JumpEdge
    operator : numpy.ndarray
        Product of ``U`` labels; time-dependent jumps contribute identity.
    nas_only : bool
        True when every relaxation jump stays inside the NAS.
    time_dependent : bool
        True when some jump adds a jump-time-dependent frame rotation.
    """

    nodes: tuple
    jumps: tuple
    operator: np.ndarray
    nas_only: bool
    time_dependent: bool

    def describe(self) -> list:
        return [e.label for e in self.jumps]


def enumerate_paths(graph: PathGraph, i: int, r: int, max_jumps: int) -> list[Path]:
    """All ancilla paths from ``i`` to ``r`` with at most ``max_jumps`` jumps.

    A path alternates no-jump propagation along a defined block with jump
    edges. Its central-system operator is the ordered product of the ``U``
    labels; a jump outside the NAS is flagged time-dependent.
    """
    if max_jumps > MAX_PATH_JUMPS:
        raise ValueError(f"max_jumps is limited to {MAX_PATH_JUMPS}")
    out = []
    n_c = None
    for u in graph.labels.values():
        n_c = u.shape[0]
        break
    eye = np.eye(n_c or 1, dtype=complex)
    by_source: dict[int, list[JumpEdge]] = {}
    for e in graph.jump_edges:
        by_source.setdefault(e.source, []).append(e)

    def reach(a):
        return [b for b in graph.nodes if (b, a) in graph.drive_edges]

    def extend(node, nodes, jumps, op, td, nas_only):
        # finish here: propagate to r
        if (r, node) in graph.drive_edges:
            out.append(Path(nodes + (r,), tuple(jumps), graph.labels[(r, node)] @ op,
                            nas_only, td))
        if len(jumps) >= max_jumps:
            return
        for b in reach(node):
            for e in by_source.get(b, ()):
                new_op = graph.labels[(b, node)] @ op
                extend(e.target, nodes + (b, e.target), jumps + [e], new_op,
                       td or not (e.nas and e.central_identity),
                       nas_only and (e.nas or e.dephasing))

    extend(i, (i,), [], eye, False, True)
    return out


# ----------------------------------------------------------------------------
# PI order


@dataclass
class PiOrder:
    """Certified PI order for one ``(i, r)`` pair.

    Attributes
    ----------
    pair : tuple of int
    order : int or None
        Certified order, capped at ``max_order``; ``None`` if no path
        reaches ``r`` within the checked orders.
    capped : bool
        True when PI also holds one order beyond ``max_order`` (reported as
        ``">= max_order"``).
    witnesses : list of dict
        Paths at order ``order + 1`` that break PI.
    symbolic_order, numeric_order : int or None
    agree : bool or None
        Whether the routes agree (``None`` if only one route ran).
    """

    pair: tuple
    order: int | None
    max_order: int
    capped: bool
    witnesses: list
    symbolic_order: int | None
    numeric_order: int | None
    agree: bool | None
    numeric_details: list = field(default_factory=list)

    @property
    def reachable(self) -> bool:
        return self.order is not None

    @property
    def label(self):
        if self.order is None:
            return "unreachable"
        if self.capped:
            return f">={self.max_order}"
        return self.order


def _symbolic_levels(graph, i, r, top):
    """Per jump count k: (ok, witnesses, reachable) using paths with <= k jumps."""
    paths = enumerate_paths(graph, i, r, top)
    out = []
    for k in range(top + 1):
        subset = [p for p in paths if len(p.jumps) <= k]
        bad = [p for p in subset if p.time_dependent]
        ref = next((p for p in subset if not p.time_dependent), None)
        if ref is not None:
            for p in subset:
                if not p.time_dependent and unitary_distance(p.operator, ref.operator) > EQUIV_TOL:
                    bad.append(p)
        out.append((not bad, bad, bool(subset)))
    return out


def _witness(p: Path) -> dict:
    return {"jumps": p.describe(), "nodes": list(p.nodes), "times_dependent": p.time_dependent}


def _numeric_levels(model, i, r, t, terms, top):
    out = []
    acc = None
    for k in range(top + 1):
        acc = terms[k].pairs if acc is None else acc + terms[k].pairs
        sec = terms[0].sectors
        choi = dyson.choi_from_superoperator(sec.to_full(acc), model.dim, i, r, model.N)
        weight = float(np.trace(choi).real / model.N)
        if weight <= ZERO_WEIGHT:
            out.append((True, {"order": k, "weight": weight, "ratio": 0.0, "spread": 0.0}, False))
            continue
        ratio, spread, _ = dyson.choi_unitarity(choi)
        ok = ratio <= RANK_TOL and spread <= RANK_TOL
        out.append((ok, {"order": k, "weight": weight, "ratio": ratio, "spread": spread}, True))
    return out


def _order_from(levels, top):
    """Largest n with all k <= n ok; None if nothing reachable up to top."""
    if not any(reach for _, _, reach in levels[:top + 1]):
        return None
    n = -1
    for k in range(top + 1):
        if not levels[k][0]:
            break
        n = k
    return n


def pi_order(model: SystemModel, i, r, max_order: int = 3, use_numeric: bool = True,
             t: float | None = None, terms=None, graph: PathGraph | None = None,
             dec: PropagatorDecomposition | None = None, strict: bool = False) -> PiOrder:
    """Certified PI order of the gate from ancilla ``i`` to ``r``.

    The symbolic route enumerates paths with up to ``max_order + 1`` jumps,
    so a design that stays PI one order beyond ``max_order`` is reported as
    ``">= max_order"``. The numeric route checks the Dyson-truncated channel
    for ``P = 0 .. max_order``. On disagreement the numeric order is
    reported and ``agree`` is False (``strict`` raises instead).
    """
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    if max_order + 1 > MAX_PATH_JUMPS:
        raise ValueError(f"max_order is limited to {MAX_PATH_JUMPS - 1}")
    i = model.level_index(i)
    r = model.level_index(r)
    t = model.duration if t is None else t
    if dec is None:
        dec = factorize_no_jump(model)
    sym_levels = None
    if dec.valid:
        graph = build_path_graph(model, dec) if graph is None else graph
        sym_levels = _symbolic_levels(graph, i, r, max_order + 1)
    num_levels = None
    if use_numeric:
        if terms is None:
            terms = dyson.dyson_terms(model, max_order, t)
        num_levels = _numeric_levels(model, i, r, t, terms, max_order)

    sym_order = _order_from(sym_levels, max_order) if sym_levels else None
    num_order = _order_from(num_levels, max_order) if num_levels else None
    agree = None
    if sym_levels is not None and num_levels is not None:
        agree = sym_order == num_order
    if num_levels is not None and (agree is False or sym_levels is None):
        order = num_order
    elif sym_levels is not None:
        order = sym_order
    else:
        order = 0
    if agree is False and strict:
        raise CertificationError(f"pair {(i, r)}: symbolic order {sym_order} "
                                 f"vs numeric {num_order}")

    capped = False
    witnesses = []
    if order is not None and order >= max_order:
        order = max_order
        if sym_levels is not None and agree is not False:
            capped = sym_levels[max_order + 1][0]
        else:
            capped = True
    if order is not None and not capped and sym_levels is not None:
        nxt = min(order + 1, max_order + 1)
        witnesses = [_witness(p) for p in sym_levels[nxt][1]]
    details = [d for _, d, _ in num_levels] if num_levels else []
    return PiOrder((i, r), order, max_order, capped, witnesses, sym_order, num_order,
                   agree, details)


@dataclass
class PiReport:
    """Certification of every requested ``(i, r)`` pair."""

    entries: list
    nas: NasPartition
    decomposition_valid: bool
    levels: tuple

    def entry(self, i, r) -> PiOrder:
        for e in self.entries:
            if e.pair == (i, r):
                return e
        raise KeyError((i, r))

    def to_dict(self) -> dict:
        out = []
        for e in self.entries:
            out.append({
                "pair": [self.levels[e.pair[0]], self.levels[e.pair[1]]],
                "order": e.label,
                "witnesses": e.witnesses,
                "nas": [[self.levels[m] for m in g] for g in self.nas.groups],
                "symbolic_order": e.symbolic_order,
                "numeric_order": e.numeric_order,
                "agree": e.agree,
            })
        return {"pi_form": self.decomposition_valid, "pairs": out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def certify(model: SystemModel, pairs=None, max_order: int = 3, use_numeric: bool = True,
            t: float | None = None, strict: bool = False) -> PiReport:
    """Certify all (or the given) ancilla pairs of a model.

    Dyson terms and the path graph are computed once and shared.
    """
    t = model.duration if t is None else t
    dec = factorize_no_jump(model)
    nas = detect_nas(model)
    graph = build_path_graph(model, dec, nas) if dec.valid else None
    terms = dyson.dyson_terms(model, max_order, t) if use_numeric else None
    if pairs is None:
        pairs = [(i, r) for i in range(model.d) for r in range(model.d)]
    entries = [pi_order(model, i, r, max_order, use_numeric, t, terms, graph, dec, strict)
               for i, r in pairs]
    return PiReport(entries, nas, dec.valid, model.levels)
