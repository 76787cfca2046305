"""Command-line entry point: ``python -m latentsym <command>``.

Exit codes: 0 success, 1 usage or input error, 2 property-check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_PROPERTY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True)


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}")


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    from .tasks import make_ring_dataset, make_rotation_pairs

    out = Path(args.out)
    if args.task == "ring":
        out.mkdir(parents=True, exist_ok=True)
        path = make_ring_dataset(args.n, args.noise, args.seed).save(out / "ring.json")
    else:
        corruption = args.corruption if args.corruption != "oblique" else f"oblique:{args.view_angle}"
        ds = make_rotation_pairs(args.n, corruption, args.seed, n_val=args.n_val, n_test=args.n_test)
        path = ds.save(out) / "dataset.json"
    print(path)
    return EXIT_OK


def _load_config(args):
    from .harness import ExperimentConfig

    try:
        config = ExperimentConfig.from_dict(_read_json(args.config))
        config = config.with_overrides(_parse_overrides(args.set))
    except (TypeError, KeyError, ValueError) as exc:
        raise UsageError(f"bad config {args.config}: {exc}")
    if getattr(args, "out", None):
        config.output_dir = args.out
    return config


def cmd_train(args) -> int:
    from .harness import TrainingDiverged, train

    config = _load_config(args)
    try:
        report = train(config, verbose=args.verbose)
    except TrainingDiverged as exc:
        print(_dump(exc.report.to_dict()))
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    print(report.to_json())
    return EXIT_OK


def cmd_compare(args) -> int:
    from .harness import PARITY_LIMIT, ExperimentConfig, RunReport, compare, train

    reports = []
    for path in args.reports or ():
        reports.append(RunReport.load(path))
    for path in args.configs or ():
        config = ExperimentConfig.from_dict(_read_json(path))
        if args.out:
            config.output_dir = str(Path(args.out) / "runs" / config.name)
        reports.append(train(config))
    try:
        summary = compare(reports, args.out, args.ordering or (), svg=not args.no_svg)
    except ValueError as exc:
        raise UsageError(str(exc))
    print(_dump(summary))
    parity_ok = all(p["parity_gap"] < PARITY_LIMIT for p in summary["parity"])
    return EXIT_OK if summary["ok"] and parity_ok else EXIT_PROPERTY


def cmd_diagnose(args) -> int:
    from .diagnostics import classify_action
    from .layers import default_group
    from .tasks import PAIR_TOL, PairDataset, PairRenderOracle, RingDataset, ring_transform

    if args.oracle == "nearest" and args.tol is None:
        raise UsageError("--tol is required with the nearest-neighbour oracle")

    path = Path(args.data)
    doc = _read_json(path / "dataset.json" if path.is_dir() else path)
    if doc.get("n", len(doc.get("labels", []))) == 0 or not doc.get("labels"):
        raise UsageError(f"{path}: dataset is empty")
    kind = doc.get("kind")
    if kind == "ring":
        ds = RingDataset.from_dict(doc)
        try:
            transforms = [(spec, ring_transform(spec)) for spec in args.action.split(",")]
        except ValueError as exc:
            raise UsageError(str(exc))
        if args.oracle == "exact":
            membership = ds.membership(1e-9 if args.tol is None else args.tol)
        else:
            membership = args.tol
        verdict = classify_action(list(ds.points), list(ds.labels), transforms, membership)
    elif kind == "rotation-pairs":
        if args.oracle != "exact":
            raise UsageError("pair datasets use the renderer's membership predicate (--oracle exact)")
        try:
            group = default_group(args.action)
        except (KeyError, ValueError):
            raise UsageError(f"pair datasets take a group action such as C8 or C4, got {args.action!r}")
        ds = PairDataset.load(path)
        limit = args.limit if args.limit else len(ds)
        oracle = PairRenderOracle(ds, PAIR_TOL if args.tol is None else args.tol)
        verdict = oracle.classify(group, range(min(limit, len(ds))))
    else:
        raise UsageError(f"{path}: unknown dataset kind {kind!r}")
    print(_dump(verdict.to_dict()))
    return EXIT_OK


def cmd_bound(args) -> int:
    from .diagnostics import SymmetryInstance, bound_report

    try:
        instance = SymmetryInstance.from_dict(_read_json(args.instance))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad instance {args.instance}: {exc}")
    print(_dump(bound_report(instance)))
    return EXIT_OK


def selftest(seed: int = 0, quick: bool = True) -> list[tuple[str, bool, str]]:
    """Equivariance, gradient and oracle property checks; one (name, ok, detail) per suite."""
    from . import autodiff as ad
    from .diagnostics import brute_force_bound, loose_bound, random_instance, tight_bound
    from .groups import Representation, check_homomorphism, make_group
    from .heads import ActorHead, check_actor_equivariance
    from .layers import EquivConv, kernel_constraint_residual, transform_features

    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for kind, n in [("cyclic", 8), ("dihedral", 4), ("dihedral", 1)]:
        for rep in ("trivial", "signed", "standard2d", "regular"):
            worst = max(worst, check_homomorphism(Representation(make_group(kind, n), rep), tol=1e-12))
    results.append(("representation homomorphisms", worst <= 1e-12, f"max residual {worst:.3g}"))

    d4 = make_group("dihedral", 4)
    worst = 0.0
    for _ in range(5 if quick else 100):
        layer = EquivConv(d4, "regular", 2, 2, 5, rng)
        worst = max(worst, max(kernel_constraint_residual(layer, g) for g in d4))
    results.append(("kernel constraint (D4)", worst == 0.0, f"max residual {worst:.3g}"))

    lift = EquivConv(d4, "trivial", 3, 2, 3, rng, padding=1)
    # dyadic weights and inputs keep every partial sum exact, so any reordering is bit-exact
    lift.weight.data[...] = rng.integers(-8, 9, size=lift.weight.shape) / 8.0
    x = rng.integers(-8, 9, size=(2, 3, 7, 7)) / 16.0
    base = lift(x).data
    worst = max(float(np.max(np.abs(
        lift(transform_features(d4, g, x, "trivial")).data - transform_features(d4, g, base, "regular"))))
        for g in d4)
    results.append(("lifting convolution equivariance (D4)", worst == 0.0, f"max residual {worst:.3g}"))

    # C8 eighth turns resample: smooth input, norm-relative residual on the interior disc
    c8 = make_group("cyclic", 8)
    size = 25
    yy, xx = np.mgrid[:size, :size] - size // 2
    blobs = [np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 18.0) for cx, cy in rng.uniform(-5, 5, size=(6, 2))]
    image = (np.stack(blobs).reshape(2, 3, size, size) * rng.normal(size=(2, 3, 1, 1))).sum(1)[None]
    interior = np.hypot(xx, yy) <= size // 2 - 5
    lift8 = EquivConv(c8, "trivial", 2, 2, 5, rng, padding=2)
    base = lift8(image).data
    worst = max(
        float(np.linalg.norm((lift8(transform_features(c8, g, image, "trivial", mode="bilinear")).data
                              - transform_features(c8, g, base, "regular", mode="bilinear"))[..., interior])
              / np.linalg.norm(base[..., interior]))
        for g in c8)
    results.append(("lifting convolution equivariance (C8 bilinear)", worst < 5e-2, f"relative residual {worst:.3g}"))

    head = ActorHead(d4, 2, rng)
    state = rng.normal(size=(2, 2 * d4.order, 5, 5))
    try:
        res = check_actor_equivariance(head, d4, state, tol=1e-10)
        results.append(("actor equivariance (D4)", True, f"max residual {res:.3g}"))
    except AssertionError as exc:
        results.append(("actor equivariance (D4)", False, str(exc)))

    xg = ad.parameter(rng.normal(size=(2, 2, 5, 5)))
    kg = ad.parameter(rng.normal(size=(3, 2, 3, 3)))
    bg = ad.parameter(rng.normal(size=3))
    labels = np.array([1, 2])
    err = ad.gradient_error(
        lambda: ad.softmax_cross_entropy(ad.flatten(ad.global_max_pool(ad.relu(ad.conv2d(xg, kg, bg, padding=1)))),
                                         labels), [xg, kg, bg])
    results.append(("gradient check (conv/relu/pool/cross-entropy)", err < 1e-6, f"relative error {err:.3g}"))

    mismatches, order_violations = 0, 0
    for _ in range(50 if quick else 1000):
        inst = random_instance(rng)
        tight = tight_bound(inst).exact
        mismatches += tight != brute_force_bound(inst)
        order_violations += loose_bound(inst).exact < tight
    results.append(("tight bound vs exhaustive search", mismatches == 0 and order_violations == 0,
                    f"{mismatches} mismatches, {order_violations} loose<tight"))
    return results


def cmd_selftest(args) -> int:
    results = selftest(args.seed, quick=not args.full)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_PROPERTY


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .tasks import CORRUPTIONS

    parser = _Parser(prog="latentsym", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a dataset")
    p.add_argument("--task", choices=("pairs", "ring"), default="pairs")
    p.add_argument("--corruption", choices=CORRUPTIONS, default="none")
    p.add_argument("--view-angle", type=float, default=45.0)
    p.add_argument("--n", type=int, required=True, help="training samples (pairs) or points (ring)")
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.0, help="ring half-width")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. optim.lr=1e-4")
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="train and compare configurations")
    p.add_argument("--configs", nargs="*")
    p.add_argument("--reports", nargs="*", help="existing report.json files or run directories")
    p.add_argument("--out")
    p.add_argument("--ordering", action="append", help='declared ordering such as "equivariant>plain"')
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="classify a dataset/action pair")
    p.add_argument("--data", required=True)
    p.add_argument("--action", required=True, help="ring: reflect, rot_pi, scale:2, rotate:<deg>; pairs: C8, C4, D4")
    p.add_argument("--tol", type=float, default=None,
                   help="membership tolerance; defaults to the generator's own predicate tolerance")
    p.add_argument("--oracle", choices=("exact", "nearest"), default="exact")
    p.add_argument("--limit", type=int, default=0, help="pairs: only the first LIMIT samples")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("bound", help="accuracy bounds for a symmetry instance")
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("selftest", help="run the property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true", help="full-size sweeps instead of the quick ones")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"latentsym: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
