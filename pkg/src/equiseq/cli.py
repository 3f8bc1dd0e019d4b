"""Command-line front end.

Exit codes: 0 success / property holds, 1 property failure, 2 usage or parse
error.  ``EQUISEQ_SEED`` overrides ``--seed`` (and a training config's seed).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import audit as au
from .errors import EquiseqError, SchemaError
from .forms import RhoPsiAttention, psi2, rho_psi_matrix, softmax_attention_coefficients
from .layers import model_from_text
from .tensor import Rng, child_seed

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SYMMETRY_FLAGS = {
    "orthogonal": au.ORTHOGONAL_EMBEDDING,
    "knowledge": au.ORTHOGONAL_WITH_KNOWLEDGE,
    "permutation": au.ELEMENTWISE_PERMUTATION,
}
DECOMPOSE_TOL = 1e-12


class UsageError(Exception):
    pass


def _seed(flag_value: int) -> int:
    env = os.environ.get("EQUISEQ_SEED")
    if env is None or env == "":
        return flag_value
    try:
        return int(env, 0)
    except ValueError:
        raise UsageError(f"EQUISEQ_SEED must be an integer, got {env!r}") from None


def _range(text: str) -> tuple[int, int]:
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            return int(lo), int(hi)
        v = int(text)
        return v, v
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO:HI, got {text!r}") from None


def _write(path, text: str):
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _read_json_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


# --------------------------------------------------------------------------
# commands


def cmd_audit(args) -> int:
    model = model_from_text(_read_json_text(args.model))
    if args.dim is not None and args.dim != model.d:
        raise UsageError(f"--dim {args.dim} does not match the model dimension {model.d}")
    if model.out_dim != model.d and args.symmetry != "permutation":
        raise UsageError("orthogonal audits need a model that maps its embedding space to itself")
    cfg = au.AuditConfig(
        d=model.d, n=args.seq_len, trials=args.trials, tol=args.tol, seed=_seed(args.seed)
    )
    report = au.run_audit(SYMMETRY_FLAGS[args.symmetry], model, cfg)
    text = report.dumps()
    _write(args.out, text)
    verdict = "pass" if report.passed else "FAIL"
    print(
        f"{report.symmetry}: residual_max={report.to_json()['residual_max']} "
        f"tol={report.tolerance} worst_seed={report.worst_seed} -> {verdict}"
    )
    return EXIT_OK if report.passed else EXIT_FAIL


def _basis(i: int) -> str:
    return f"e{i + 1}"


def demo_transcript() -> tuple[str, au.AuditReport]:
    task = au.ArithmeticTask()
    report = au.arithmetic_counterexample()
    det = report.details
    lines = ["One-hot embedding of the 12-token vocabulary:"]
    for i, tok in enumerate(task.vocabulary):
        lines.append(f'  "{tok}" -> {_basis(i)}')

    def basis_seq(tokens):
        return "[" + ", ".join(_basis(task.vocabulary.index(t)) for t in tokens) + "]"

    lines += [
        "",
        f'f("{det["input"]}") = "{det["output"]}":  f({basis_seq(det["input"])}) = {basis_seq(det["output"])}',
        "Q12 swaps the first two coordinates (\"+\" <-> \"-\"); it is orthogonal.",
        f'Q12 applied to the input gives "{det["swapped_input"]}" = {basis_seq(det["swapped_input"])}',
        f'f("{det["swapped_input"]}") = "{det["swapped_output"]}" = {basis_seq(det["swapped_output"])}',
        f'Equivariance would require Q12 f(X) = {basis_seq(det["equivariant_prediction"])} '
        f'("{det["equivariant_prediction"]}")',
        f"residual |f(Q12 X) - Q12 f(X)|_max = {report.residual_max:g}",
        f"audit verdict: {'pass' if report.passed else 'fail'} "
        "(the task is not orthogonally equivariant in a fixed embedding)",
    ]
    return "\n".join(lines), report


def cmd_demo(args) -> int:
    text, report = demo_transcript()
    print(text)
    _write(args.out, report.dumps())
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import config_from_json, train

    text = _read_json_text(args.config)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    env = os.environ.get("EQUISEQ_SEED")
    override = _seed(0) if env not in (None, "") else None
    cfg = config_from_json(obj, base_dir=Path(args.config).parent, seed_override=override)
    record = train(cfg, record_time=args.record_time)
    _write(args.out, record.dumps())
    if record.diverged_at is not None:
        print(f"diverged: loss is not finite at step {record.diverged_at}", file=sys.stderr)
        return EXIT_FAIL
    ratio = record.final_loss / record.initial_loss if record.initial_loss else 0.0
    print(
        f"task={cfg.task} steps={cfg.steps} initial_loss={record.initial_loss:.6g} "
        f"final_loss={record.final_loss:.6g} ratio={ratio:.4g} -> {'pass' if record.converged else 'FAIL'}"
    )
    return EXIT_OK if record.converged else EXIT_FAIL


def _perturbed_psi2(att, x, y, z, shift=0.0):
    return psi2(att, x, y, z, shift) * (1.0 + 1e-3)


def decompose_check(dim: int, d1: int, seq_len: int, trials: int, seed: int, inject_fault: bool = False) -> dict:
    psi2_fn = _perturbed_psi2 if inject_fault else None
    worst = {"discrepancy": 0.0, "trial": 0, "i": 0, "j": 0, "seed": child_seed(seed, 0)}
    for t in range(trials):
        s = child_seed(seed, t)
        rng = Rng(s)
        att = RhoPsiAttention(rng.normal((d1, dim)), rng.normal((d1, dim)))
        x = rng.normal((dim, seq_len))
        diff = np.abs(rho_psi_matrix(att, x, psi2_fn) - softmax_attention_coefficients(att, x))
        i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
        if diff[i, j] > worst["discrepancy"]:
            worst = {"discrepancy": float(diff[i, j]), "trial": t, "i": int(i), "j": int(j), "seed": s}
    return {
        "dim": dim,
        "d1": d1,
        "seq_len": seq_len,
        "trials": trials,
        "seed": seed,
        "tolerance": DECOMPOSE_TOL,
        "max_discrepancy": worst["discrepancy"],
        "worst": worst,
        "pass": worst["discrepancy"] <= DECOMPOSE_TOL,
    }


def cmd_decompose_check(args) -> int:
    if min(args.dim, args.d1, args.seq_len, args.trials) < 1:
        raise UsageError("--dim, --d1, --seq-len and --trials must be positive")
    result = decompose_check(args.dim, args.d1, args.seq_len, args.trials, _seed(args.seed), args.inject_fault)
    _write(args.out, json.dumps(result, indent=2))
    w = result["worst"]
    if result["pass"]:
        print(f"rho/psi decomposition matches softmax attention: max discrepancy {result['max_discrepancy']:.3e}")
        return EXIT_OK
    print(
        f"rho/psi discrepancy {result['max_discrepancy']:.3e} > {DECOMPOSE_TOL:g} "
        f"at trial {w['trial']} (seed {w['seed']}), entry ({w['i']}, {w['j']})"
    )
    return EXIT_FAIL


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="equiseq", description="Equivariant sequence-map audits, demos and toy training.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", help="audit a model file for a symmetry")
    a.add_argument("model", help="ModelSpec JSON file (schema equiseq/1)")
    a.add_argument("--dim", type=int, default=None, help="embedding dimension (must match the model)")
    a.add_argument("--seq-len", type=_range, default=(1, 8), help="sequence length N or range LO:HI")
    a.add_argument("--trials", type=int, default=100)
    a.add_argument("--tol", type=float, default=1e-9)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--symmetry", choices=sorted(SYMMETRY_FLAGS), default="knowledge")
    a.add_argument("--out", default=None, help="write the AuditReport JSON here")
    a.set_defaults(func=cmd_audit)

    dm = sub.add_parser("demo", help="demonstrations")
    dsub = dm.add_subparsers(dest="demo", required=True)
    ar = dsub.add_parser("arithmetic", help="the fixed-embedding arithmetic counterexample")
    ar.add_argument("--out", default=None, help="write the AuditReport JSON here")
    ar.set_defaults(func=cmd_demo)

    t = sub.add_parser("train", help="train a toy copy/reverse model")
    t.add_argument("config", help="training config JSON")
    t.add_argument("--out", default=None, help="write the RunRecord JSON here")
    t.add_argument("--record-time", action="store_true", help="include wall-clock seconds in the record")
    t.set_defaults(func=cmd_train)

    dc = sub.add_parser("decompose-check", help="check the rho/psi factorisation of attention coefficients")
    dc.add_argument("--dim", type=int, default=4)
    dc.add_argument("--d1", type=int, default=2)
    dc.add_argument("--seq-len", type=int, default=5)
    dc.add_argument("--trials", type=int, default=50)
    dc.add_argument("--seed", type=int, default=0)
    dc.add_argument("--out", default=None)
    dc.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    dc.set_defaults(func=cmd_decompose_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, EquiseqError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
