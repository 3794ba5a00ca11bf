"""Command-line runner.

``pigates <task> --config <file> [--out DIR] [--max-order N] [--dyson-order P]``

Tasks: ``check-pi``, ``simulate``, ``metrics``, ``sweep`` and ``qec-check``.
Configs are JSON. Frequencies carry an ``_mhz`` suffix and are ordinary
frequencies, converted to rad/us on ingestion; times are in us. Results go
to stdout, or to files in ``--out`` when given.

Exit status: 0 on success, 2 on invalid input, 3 when a certification
fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np

from . import dyson, picert, qec, snap
from .model import (ControlSegment, ModelError, PiControlSpec, PiPair, SpecError, build_model,
                    level_projector, number, pi_control_hamiltonian)
from .numerics import DimensionError, NumericError, kronecker

__all__ = ["main", "load_config", "run", "ConfigError", "SWEEP_HEADER"]

TASKS = ("check-pi", "simulate", "metrics", "sweep", "qec-check")
SWEEP_HEADER = ["value", "outcome", "population", "f_avg", "weighted_infidelity", "converged"]
FREQ_FIELDS = ("chi", "omega", "delta")
TIME_FIELDS = ("t_phi", "t1", "t1_ge", "duration")
OTHER_FIELDS = ("levels", "fock_dim", "control", "dephasing", "code_max_fock",
                "max_phase_step", "phases")
HALVING_RTOL = 1e-3
HALVING_ATOL = 1e-10
TIMING_TOL = 1e-8
EXIT_OK, EXIT_INVALID, EXIT_CERT = 0, 2, 3


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class _Banner:
    def __init__(self):
        self.lines = []

    def mhz(self, name, value):
        rad = 2 * math.pi * value
        self.lines.append(f"  {name}: {value:g} MHz -> {rad:.6g} rad/us")
        return rad


# ----------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if ("scenario" in cfg) == ("model" in cfg):
        raise ConfigError("config needs exactly one of 'scenario' or 'model'")
    return cfg


def _snap_kwargs(params: dict) -> dict:
    out = {}
    for key, value in params.items():
        base = key[:-4] if key.endswith("_mhz") else key
        if key.endswith("_mhz") and base in FREQ_FIELDS:
            out[base] = 2 * math.pi * float(value)
        elif base in FREQ_FIELDS:
            raise ConfigError(f"frequency '{key}' must be given as '{key}_mhz'")
        elif key in TIME_FIELDS:
            out[key] = None if value is None else float(value)
        elif key in OTHER_FIELDS:
            out[key] = tuple(value) if key == "phases" else value
        else:
            raise ConfigError(f"unknown scenario parameter '{key}'")
    return out


def snap_config(cfg: dict, banner: _Banner) -> snap.SnapConfig:
    name = cfg.get("scenario")
    if name is None:
        raise ConfigError("this task needs a named SNAP scenario")
    if name not in snap.PRESETS:
        raise ConfigError(f"unknown scenario {name!r}; known: {sorted(snap.PRESETS)}")
    kw = _snap_kwargs(cfg.get("params", {}))
    sc = snap.preset(name, **kw)
    for f in FREQ_FIELDS:
        banner.mhz(f, getattr(sc, f) / (2 * math.pi))
    return sc


def _level(levels, value) -> int:
    if isinstance(value, str):
        if value not in levels:
            raise ConfigError(f"unknown level {value!r}")
        return levels.index(value)
    return int(value)


def _matrix(entry, n):
    arr = np.asarray(entry, dtype=float)
    if arr.shape == (n, n, 2):
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.shape == (n, n):
        return arr.astype(complex)
    raise ConfigError(f"matrix must be {n}x{n} (real) or {n}x{n}x2 (re, im)")


def inline_model(spec: dict, banner: _Banner):
    """Model from an inline description.

    Keys: ``ancilla_dim``, ``fock_dim``, optional ``levels`` (names),
    ``chi_mhz`` (per level, ``H_m = -2 pi chi_m a^dagger a``), ``frame``
    (``"static"`` or ``"none"``), ``controls`` and ``jumps``.

    Control entries have a ``type``: ``pi_pairs`` (``pairs`` of driven
    levels with SNAP ``phases`` or an explicit ``unitary``), ``ideal_snap``
    or ``approx_snap`` (drive between the first and last level) or
    ``explicit`` (a full interaction-picture ``matrix`` in MHz). Jump entries
    have a ``type`` (``dephasing`` with ``weights``, ``relaxation`` with
    ``levels: [m, n]`` for ``|m><n|``, or ``matrix``) and either
    ``rate_per_us`` or ``t_coherence_us``.
    """
    try:
        d, n = int(spec["ancilla_dim"]), int(spec["fock_dim"])
    except KeyError as exc:
        raise ConfigError(f"inline model is missing {exc}") from exc
    levels = list(spec.get("levels") or [str(m) for m in range(d)])
    if len(levels) != d:
        raise ConfigError("one level name per ancilla level is required")
    chi = [float(c) for c in spec.get("chi_mhz", [0.0] * d)]
    if len(chi) != d:
        raise ConfigError("chi_mhz needs one entry per ancilla level")
    h0 = np.zeros((d * n, d * n), dtype=complex)
    for m, c in enumerate(chi):
        if c:
            w = banner.mhz(f"chi[{levels[m]}]", c)
            h0[m * n:(m + 1) * n, m * n:(m + 1) * n] = -w * number(n)
    controls = [_inline_control(c, d, n, levels, chi, banner) for c in spec.get("controls", [])]
    jumps = [_inline_jump(j, d, n, levels) for j in spec.get("jumps", [])]
    frame = spec.get("frame", "static")
    return build_model(d, n, h0, frame=frame, controls=controls, jumps=jumps, levels=levels)


def _inline_control(c, d, n, levels, chi, banner):
    kind = c.get("type", "pi_pairs")
    if kind == "pi_pairs":
        pairs = []
        for p in c.get("pairs", []):
            m, k = _level(levels, p["m"]), _level(levels, p["n"])
            if "unitary" in p:
                u = _matrix(p["unitary"], n)
            else:
                u = snap.snap_operator(p.get("phases", []), n)
            omega = banner.mhz(f"omega[{levels[m]},{levels[k]}]", float(p["omega_mhz"]))
            pairs.append(PiPair(m, k, u, omega, 2 * math.pi * float(p.get("delta_m_mhz", 0.0)),
                                2 * math.pi * float(p.get("delta_n_mhz", 0.0))))
        h = pi_control_hamiltonian(PiControlSpec(tuple(pairs)), d, n)
        return ControlSegment(float(c["start"]), float(c["end"]), h)
    if kind == "explicit":
        h = 2 * math.pi * _matrix(c["matrix"], d * n)
        return ControlSegment(float(c["start"]), float(c["end"]), h)
    if kind in ("ideal_snap", "approx_snap"):
        if d not in (2, 3):
            raise ConfigError("SNAP controls need a 2- or 3-level ancilla")
        cfg = snap.SnapConfig(levels=d, chi=2 * math.pi * abs(chi[-1]),
                              omega=banner.mhz("omega", float(c["omega_mhz"])),
                              delta=2 * math.pi * float(c.get("delta_mhz", 0.0)),
                              phases=tuple(c["phases"]) if "phases" in c else None,
                              fock_dim=n, code_max_fock=max(0, min(4, n - 5)),
                              duration=c.get("duration"))
        if kind == "ideal_snap":
            return ControlSegment(0.0, cfg.gate_time, snap.ideal_control(cfg))
        return snap.approximate_control(cfg)
    raise ConfigError(f"unknown control type {kind!r}")


def _inline_jump(j, d, n, levels):
    if "rate_per_us" in j:
        rate = float(j["rate_per_us"])
    elif "t_coherence_us" in j:
        rate = 1.0 / float(j["t_coherence_us"])
    else:
        raise ConfigError("jump needs 'rate_per_us' or 't_coherence_us'")
    eye = np.eye(n)
    kind = j.get("type")
    if kind == "dephasing":
        w = np.asarray(j["weights"], dtype=float)
        if w.shape != (d,):
            raise ConfigError("dephasing weights need one entry per level")
        return kronecker(np.diag(w), eye), rate, j.get("label", "dephasing")
    if kind == "relaxation":
        m, k = (_level(levels, x) for x in j["levels"])
        label = j.get("label", f"|{levels[m]}><{levels[k]}|")
        return kronecker(level_projector(d, m, k), eye), rate, label
    if kind == "matrix":
        return _matrix(j["operator"], d * n), rate, j.get("label", "")
    raise ConfigError(f"unknown jump type {kind!r}")


def build_from_config(cfg: dict, banner: _Banner):
    if "model" in cfg:
        return inline_model(cfg["model"], banner), None
    sc = snap_config(cfg, banner)
    return snap.build_snap_scenario(sc), sc


# ----------------------------------------------------------------------------
# tasks


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return f"{float(x):.12g}"


def _json_float(x):
    x = float(x)
    return None if not math.isfinite(x) else float(f"{x:.12g}")


def task_check_pi(cfg, args, banner):
    model, _ = build_from_config(cfg, banner)
    max_order = args.max_order if args.max_order is not None else int(cfg.get("max_order", 2))
    pairs = None
    if "pairs" in cfg:
        pairs = [(model.level_index(a), model.level_index(b)) for a, b in cfg["pairs"]]
    dec = picert.factorize_no_jump(model)
    report = picert.certify(model, pairs, max_order=max_order,
                            use_numeric=bool(cfg.get("numeric", True)))
    out = report.to_dict()
    out["holonomy"] = picert.check_holonomy(dec.unitaries, model.d).passed if dec.valid else False
    out["max_order"] = max_order
    status = EXIT_OK
    if any(e.agree is False for e in report.entries):
        status = EXIT_CERT
    return {"check_pi.json": json.dumps(out, indent=2, sort_keys=True) + "\n"}, status


def _initial_state(cfg, model, sc):
    init = cfg.get("initial", {})
    i = model.level_index(init.get("ancilla", 0))
    n = model.N
    if "state" in init:
        amp = np.asarray(init["state"], dtype=float)
        psi = amp[:, 0] + 1j * amp[:, 1] if amp.ndim == 2 else amp.astype(complex)
        if psi.shape != (n,):
            raise ConfigError(f"initial state needs {n} amplitudes")
    elif sc is not None and n >= 5:
        psi = snap.binomial_code(n).basis.sum(axis=1)
    else:
        psi = np.zeros(n, dtype=complex)
        psi[0] = 1
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise ConfigError("initial state is zero")
    psi = psi / norm
    anc = np.zeros(model.d)
    anc[i] = 1
    full = np.kron(anc, psi)
    return np.outer(full, full.conj())


def task_simulate(cfg, args, banner):
    model, sc = build_from_config(cfg, banner)
    t = float(cfg.get("time", model.duration))
    rho0 = _initial_state(cfg, model, sc)
    rho = dyson.evolve_master(model, rho0, t)
    n = model.N
    pops = [float(np.trace(rho[m * n:(m + 1) * n, m * n:(m + 1) * n]).real) for m in range(model.d)]
    out = {
        "time": _json_float(t),
        "trace": _json_float(np.trace(rho).real),
        "purity": _json_float(np.trace(rho @ rho).real),
        "populations": {model.levels[m] if model.levels else str(m): _json_float(p)
                        for m, p in enumerate(pops)},
    }
    P = args.dyson_order if args.dyson_order is not None else cfg.get("dyson_order")
    if P is not None:
        terms = dyson.dyson_terms(model, int(P), t)
        approx = sum(term.apply(rho0) for term in terms)
        out["dyson"] = {
            "order": int(P),
            "trace": _json_float(np.trace(approx).real),
            "max_deviation": _json_float(np.max(np.abs(approx - rho))),
            "converged": all(term.converged for term in terms),
        }
    return {"simulate.json": json.dumps(out, indent=2, sort_keys=True) + "\n"}, EXIT_OK


def _code_for(sc):
    return snap.binomial_code(sc.fock_dim)


def evaluate_point(sc: snap.SnapConfig, P=None) -> list[dict]:
    """Rows for one scenario: target outcome, g, total and unconditioned.

    ``converged`` requires the metric to survive step halving (and node
    doubling on the Dyson route).
    """
    code = _code_for(sc)
    targets = snap.snap_targets(sc, code)
    x = ("g", "e", "f")[sc.target_level]
    model = snap.build_snap_scenario(sc)
    base = snap.gate_metrics(model, code, targets, P=P, unconditioned=x)
    if model.is_time_dependent():
        fine_model = snap.build_snap_scenario(sc)
        fine = snap.gate_metrics(fine_model, code, targets, P=P, unconditioned=x,
                                 step_scale=0.5, check=False)
    else:
        fine = base
    rows = []
    for a, b in zip(base, fine):
        ok = a.converged and abs(a.weighted_infidelity - b.weighted_infidelity) <= \
            HALVING_RTOL * abs(a.weighted_infidelity) + HALVING_ATOL
        rows.append(dict(outcome=a.outcome, population=a.population, f_avg=a.average_fidelity,
                         weighted_infidelity=a.weighted_infidelity, converged=bool(ok)))
    post = [r for r in rows if r["outcome"] != "unconditioned"]
    pop = sum(r["population"] for r in post)
    w = sum(r["weighted_infidelity"] for r in post)
    total = dict(outcome="total", population=pop, f_avg=1 - w / pop if pop > 0 else math.nan,
                 weighted_infidelity=w, converged=all(r["converged"] for r in post))
    return post + [total] + [r for r in rows if r["outcome"] == "unconditioned"]


def task_metrics(cfg, args, banner):
    sc = snap_config(cfg, banner)
    P = args.dyson_order if args.dyson_order is not None else cfg.get("dyson_order")
    rows = evaluate_point(sc, None if P is None else int(P))
    out = {"gate_time": _json_float(sc.gate_time), "dyson_order": P,
           "outcomes": [{k: (_json_float(v) if isinstance(v, float) else v) for k, v in r.items()}
                        for r in rows]}
    return {"metrics.json": json.dumps(out, indent=2, sort_keys=True) + "\n"}, EXIT_OK


SWEEP_AXES = ("t_phi", "t1", "t1_ge", "duration", "chi_mhz", "omega_mhz", "delta_mhz",
              "omega_over_chi", "max_phase_step")


def _point_config(base: snap.SnapConfig, axis: str, value: float) -> snap.SnapConfig:
    if axis == "omega_over_chi":
        return base.with_(omega=value * base.chi)
    if axis.endswith("_mhz"):
        return base.with_(**{axis[:-4]: 2 * math.pi * value})
    return base.with_(**{axis: value})


def task_sweep(cfg, args, banner):
    sc = snap_config(cfg, banner)
    sw = cfg.get("sweep")
    if not isinstance(sw, dict):
        raise ConfigError("sweep task needs a 'sweep' object with 'axis' and 'values'")
    axis = sw.get("axis")
    numeric = {f.name for f in fields(snap.SnapConfig)}
    known = axis in SWEEP_AXES and (axis == "omega_over_chi"
                                    or axis.removesuffix("_mhz") in numeric)
    if not known:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    values = [float(v) for v in sw.get("values", [])]
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    if not all(math.isfinite(v) for v in values):
        raise ConfigError("sweep values must be finite")
    values = sorted(values)
    P = args.dyson_order if args.dyson_order is not None else cfg.get("dyson_order")
    P = None if P is None else int(P)

    def run_point(v):
        try:
            return evaluate_point(_point_config(sc, axis, v), P)
        except (ModelError, NumericError, ValueError) as exc:
            return [dict(outcome=f"error: {exc}", population=math.nan, f_avg=math.nan,
                         weighted_infidelity=math.nan, converged=False)]

    workers = max(1, int(os.environ.get("PIGATES_THREADS", os.cpu_count() or 1)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_point, values))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for v, rows in zip(values, results):
        for r in rows:
            writer.writerow([_fmt(v), r["outcome"], _fmt(r["population"]), _fmt(r["f_avg"]),
                             _fmt(r["weighted_infidelity"]), _fmt(r["converged"])])
    return {"sweep.csv": buf.getvalue()}, EXIT_OK


def task_qec_check(cfg, args, banner):
    sc = snap_config(cfg, banner)
    qc = cfg.get("qec", {})
    n = sc.fock_dim
    code_spec = qc.get("code", "binomial")
    if code_spec == "binomial":
        code = snap.binomial_code(n)
    else:
        basis = np.asarray(code_spec["basis"], dtype=float).T
        code = snap.LogicalCode(basis.astype(complex))
    errors = qc.get("errors", ["identity", "lowering"])
    kl = qec.kl_diagonalize(code, errors)
    gate = np.asarray(qc.get("gate_phases_pi", [0.0, 0.25]), dtype=float) * math.pi
    if gate.shape != (code.dim,):
        raise ConfigError("gate_phases_pi needs one phase per code word")
    u0 = np.diag(np.exp(1j * gate))
    u_et = qec.build_pi_et_unitary(kl, u0, qc.get("error_phases"))
    u0_full = code.basis @ u0 @ code.basis.conj().T
    u_plain = np.eye(n) - code.projector + u0_full
    fracs = qc.get("t1_fractions", [k / 10 for k in range(1, 10)])
    out = {"r": [_json_float(x) for x in kl.r], "kl_residual": _json_float(kl.verify()),
           "designs": {}}
    status = EXIT_OK
    for name, u in (("error_transparent", u_et), ("plain", u_plain)):
        sc_u = sc.with_(phases=tuple(qec.diagonal_phases(u)))
        model = snap.build_snap_scenario(sc_u)
        t = model.duration
        entry = {"phases_over_pi": [_json_float(p / math.pi) for p in qec.diagonal_phases(u)],
                 "errors": []}
        for k, f in enumerate(kl.F):
            if kl.r[k] <= qec.KL_TOL:
                continue
            cert = qec.commutator_condition(model, f)
            dev = qec.error_timing_equivalence(model, code, f, [x * t for x in fracs], t,
                                               i=0, r=sc.target_level)
            entry["errors"].append({"k": k, "r": _json_float(kl.r[k]),
                                    "commutator_valid": cert.valid,
                                    "max_deviation": _json_float(dev)})
        entry["equivalent"] = all(e["max_deviation"] <= TIMING_TOL for e in entry["errors"])
        out["designs"][name] = entry
    if not out["designs"]["error_transparent"]["equivalent"]:
        status = EXIT_CERT
    return {"qec_check.json": json.dumps(out, indent=2, sort_keys=True) + "\n"}, status


HANDLERS = {"check-pi": task_check_pi, "simulate": task_simulate, "metrics": task_metrics,
            "sweep": task_sweep, "qec-check": task_qec_check}


# ----------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="pigates", description="Path-independent gate toolkit.")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", required=True, help="JSON scenario file")
    p.add_argument("--out", help="directory for report files (stdout if omitted)")
    p.add_argument("--max-order", type=int, dest="max_order")
    p.add_argument("--dyson-order", type=int, dest="dyson_order")
    p.add_argument("--seed", type=int,
                   help="accepted for compatibility; the pipeline is deterministic")
    return p


def run(task: str, cfg: dict, args) -> tuple[dict, int, list]:
    """Run a task and return ``(files, status, banner lines)``."""
    banner = _Banner()
    files, status = HANDLERS[task](cfg, args, banner)
    return files, status, banner.lines


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.get("task", args.task) != args.task:
            raise ConfigError(f"config is for task {cfg['task']!r}, not {args.task!r}")
        files, status, lines = run(args.task, cfg, args)
    except (picert.CertificationError, picert.NotPiFormError) as exc:
        print(f"pigates: certification failed: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (ConfigError, ModelError, SpecError, DimensionError, NumericError,
            KeyError, TypeError, ValueError) as exc:
        print(f"pigates: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"pigates {args.task}: frequencies in MHz converted to rad/us (x 2 pi)", file=sys.stderr)
    for line in lines:
        print(line, file=sys.stderr)
    for name, text in files.items():
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, name)
            with open(path, "w", newline="") as fh:
                fh.write(text)
            print(f"wrote {path}", file=sys.stderr)
        else:
            sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
