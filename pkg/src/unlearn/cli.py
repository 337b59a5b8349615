"""Command-line entry point: ``unlearn <command> ...``.

Exit codes: 0 success, 1 I/O error, 2 usage, 3 format, 4 numeric/divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import THREADS_ENV, resolve_threads
from .dataset_io import (UDS_MAGIC, LabeledDataset, dataset_summary, read_cifar_binary, read_uds,
                         write_uds)
from .errors import FormatError
from .gmm_theory import (contour_grid, mc_clean_accuracy, mu_direction, quadratic_boundary,
                         theorem_bound, verify_identities, SymTriToeplitz)
from .keyed_filters import BANK_MAGIC, FilterSpec, generate_bank, load_bank, save_bank
from .poison_engine import poison_dataset

log = logging.getLogger("unlearn")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3, 4
SCENARIOS = ("shortcut", "protection", "dat", "grayscale", "blur-defense")

# required after the config file has been merged in
_REQUIRED = {
    "genfilters": ("classes", "out"),
    "poison": ("input", "bank", "out"),
    "inspect": ("input",),
    "theory contour": ("mu_norm",),
    "theory bound": ("a_minus", "a_plus", "mu_norm"),
}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; command-line flags take precedence")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1); never changes results")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=1, help="master seed for data, bank and training")
    p.add_argument("--arch", choices=("linear", "mlp"), default="mlp")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--per-class", type=int, default=1000, help="synthetic train images per class")
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--train", dest="train_path", help="UDS train set instead of the synthetic task")
    p.add_argument("--test", dest="test_path", help="UDS test set (required with --train)")
    p.add_argument("--k", type=int, default=3, help="poison filter size")
    p.add_argument("--pb", type=float, default=0.3, help="poison blur parameter")
    p.add_argument("-o", "--out", default="report.json", help="report path (.json; a .csv is written beside)")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="unlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"unlearn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}

    p = sub.add_parser("genfilters", help="generate a keyed filter bank")
    _add_common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--pb", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out")
    leaves["genfilters"] = p

    p = sub.add_parser("poison", help="poison a CIFAR binary or UDS dataset")
    _add_common(p)
    p.add_argument("--in", dest="input", help="CIFAR .bin file, directory of .bin files, or UDS file")
    p.add_argument("--bank")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="seed of the stratified poison mask")
    p.add_argument("--fine-labels", action="store_true", help="CIFAR-100 records")
    p.add_argument("-o", "--out")
    leaves["poison"] = p

    p = sub.add_parser("inspect", help="summarize a bank or dataset file")
    _add_common(p)
    p.add_argument("--in", dest="input")
    leaves["inspect"] = p

    theory = sub.add_parser("theory", help="Gaussian-mixture theory").add_subparsers(dest="action", required=True)
    p = theory.add_parser("contour", help="MC accuracy and bound on the (a_minus, a_plus) grid")
    _add_common(p)
    p.add_argument("--mu-norm", type=float)
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--grid", type=int, default=30)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mu-mode", choices=("uniform", "eigvec"), default="uniform")
    p.add_argument("-o", "--out", default="contour.csv")
    leaves["theory contour"] = p
    p = theory.add_parser("bound", help="bound and MC estimate at one cell")
    _add_common(p)
    p.add_argument("--a-minus", type=float)
    p.add_argument("--a-plus", type=float)
    p.add_argument("--mu-norm", type=float)
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--points", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mu-mode", choices=("uniform", "eigvec"), default="uniform")
    leaves["theory bound"] = p
    p = theory.add_parser("verify", help="run the numeric identity checks")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    leaves["theory verify"] = p

    p = sub.add_parser("demo", help="shortcut-lab scenarios")
    _add_common(p)
    p.add_argument("scenario", choices=SCENARIOS)
    _add_train(p)
    p.add_argument("--fractions", type=_floats, default=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument("--blurs", type=_floats, default=[0.1, 0.3],
                   help="random-blur defense levels, or poison levels for dat")
    p.add_argument("--dat-k", type=_ints, default=[3, 5, 7])
    p.add_argument("--clamp", type=float, default=5.0)
    p.add_argument("--inner-steps", type=int, default=10)
    p.add_argument("--inner-lr", type=float, default=0.1)
    leaves["demo"] = p
    return parser, leaves


def _leaf_key(ns) -> str:
    return f"{ns.command} {ns.action}" if ns.command == "theory" else ns.command


def _explicit_dests(leaf: argparse.ArgumentParser, argv: list[str]) -> set[str]:
    actions = leaf._option_string_actions
    found = set()
    for tok in argv:
        opt = tok.split("=", 1)[0]
        if opt in actions:
            found.add(actions[opt].dest)
    return found


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes equal underscores."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merge_config(ns, leaf: argparse.ArgumentParser, argv: list[str]) -> None:
    if not ns.config:
        return
    explicit = _explicit_dests(leaf, argv)
    by_dest = {a.dest: a for a in leaf._actions}
    for opt, action in leaf._option_string_actions.items():
        if opt.startswith("--"):
            by_dest.setdefault(opt[2:].replace("-", "_"), action)
    for key, text in read_config_file(ns.config).items():
        action = by_dest.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        key = action.dest
        if key in explicit:
            continue
        if action.nargs == 0:
            value = text.lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = action.type(text) if action.type else text
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        setattr(ns, key, value)


def _resolved(ns) -> dict:
    # thread count and directories are excluded so manifests do not depend on them
    skip = {"config", "threads", "verbose"}
    paths = {"out", "input", "bank", "train_path", "test_path"}
    return {k: (Path(v).name if k in paths and v else v)
            for k, v in sorted(vars(ns).items()) if k not in skip}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, ns, inputs: dict, outputs: list[Path]) -> Path:
    manifest = {
        "tool": "unlearn",
        "version": __version__,
        "command": _leaf_key(ns),
        "config": _resolved(ns),
        "inputs": {name: {"file": Path(p).name, "sha256": h} for name, (p, h) in sorted(inputs.items())},
        "outputs": sorted({Path(p).name: _sha256(p) for p in outputs}.items()),
    }
    path = out_dir / "run.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _out_path(text) -> Path:
    out = Path(text)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ------------------------------------------------------------------

def cmd_genfilters(ns) -> int:
    bank = generate_bank(FilterSpec(ns.classes, ns.k, ns.pb, ns.seed))
    out = _out_path(ns.out)
    save_bank(bank, out)
    _write_manifest(out.parent, ns, {}, [out])
    print(bank.fingerprint())
    return EXIT_OK


def load_dataset(path, fine_labels: bool = False) -> LabeledDataset:
    """Read a UDS file, a CIFAR binary file, or every ``*.bin`` in a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.bin"))
        if not files:
            raise FormatError(f"no .bin files in {path}")
        return read_cifar_binary(files, fine_labels)
    with open(path, "rb") as fh:
        head = fh.read(len(UDS_MAGIC))
    if head == UDS_MAGIC:
        return read_uds(path)
    return read_cifar_binary([path], fine_labels)


def _input_files(path) -> list[Path]:
    path = Path(path)
    return sorted(path.glob("*.bin")) if path.is_dir() else [path]


def cmd_poison(ns) -> int:
    if not 0.0 <= ns.fraction <= 1.0:
        raise UsageError(f"--fraction must lie in [0, 1], got {ns.fraction}")
    bank = load_bank(ns.bank)
    data = load_dataset(ns.input, ns.fine_labels)
    poisoned, mask = poison_dataset(data, bank, ns.fraction, ns.seed, ns.threads)
    out = _out_path(ns.out)
    write_uds(poisoned, out)
    sidecar = out.with_name(out.name + ".mask.json")
    doc = {"bank_fingerprint": bank.fingerprint(), **mask.to_dict(data.labels, data.num_classes)}
    sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    inputs = {f"data[{i}]": (p, _sha256(p)) for i, p in enumerate(_input_files(ns.input))}
    inputs["bank"] = (ns.bank, _sha256(ns.bank))
    _write_manifest(out.parent, ns, inputs, [out, sidecar])
    print(f"poisoned {mask.count}/{len(data)} images -> {out}")
    return EXIT_OK


def cmd_inspect(ns) -> int:
    with open(ns.input, "rb") as fh:
        head = fh.read(8)
    if head == BANK_MAGIC:
        print(load_bank(ns.input).to_json())
    else:
        print(json.dumps(dataset_summary(load_dataset(ns.input)), indent=2, sort_keys=True))
    return EXIT_OK


def _mu(ns, a_minus=None, a_plus=None) -> np.ndarray:
    lam = None
    if ns.mu_mode == "eigvec":
        lam = (SymTriToeplitz(ns.d, a_minus).power_eigenvalues(-2)
               - SymTriToeplitz(ns.d, a_plus).power_eigenvalues(-2))
    return mu_direction(ns.d, ns.mu_norm, ns.mu_mode, lam)


def cmd_theory(ns) -> int:
    if ns.action == "verify":
        checks = verify_identities(seed=ns.seed)
        for check in checks:
            print(check.line())
        return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERIC
    if ns.action == "bound":
        mu = _mu(ns, ns.a_minus, ns.a_plus)
        res = theorem_bound(mu, ns.a_minus, ns.a_plus)
        acc, se = mc_clean_accuracy(quadratic_boundary(mu, ns.a_minus, ns.a_plus), mu, ns.points, ns.seed)
        ok = acc <= res.bound + 3 * se
        print(f"bound={res.bound:.6f} mc={acc:.6f} se={se:.6f} t1={res.t1} t2={res.t2} "
              f"gamma1_pos={res.gamma1_pos} gamma2_pos={res.gamma2_pos} vacuous={res.vacuous}")
        print(f"{'PASS' if ok else 'FAIL'} mc <= bound + 3*se")
        return EXIT_OK if ok else EXIT_NUMERIC
    report, cells = contour_grid(ns.mu_norm, ns.d, ns.grid, ns.points, ns.seed, mu_mode=ns.mu_mode,
                                 threads=ns.threads)
    out = _out_path(ns.out)
    written = report.write(out)
    infeasible = [c for c in cells if c.error]
    for c in infeasible:
        log.warning("cell (%.4f, %.4f) infeasible: %s", c.a_minus, c.a_plus, c.error)
    _write_manifest(out.parent, ns, {}, written)
    print(f"{len(cells)} cells ({len(infeasible)} infeasible) -> {written[0]}")
    return EXIT_OK


def _demo_data(ns):
    from .shortcut_lab import TemplateTask, make_template_task

    if ns.train_path or ns.test_path:
        if not (ns.train_path and ns.test_path):
            raise UsageError("--train and --test must be given together")
        inputs = {"train": (ns.train_path, _sha256(ns.train_path)),
                  "test": (ns.test_path, _sha256(ns.test_path))}
        return read_uds(ns.train_path), read_uds(ns.test_path), inputs
    train, test = make_template_task(TemplateTask(), ns.per_class, ns.test_per_class, ns.seed)
    return train, test, {}


def cmd_demo(ns) -> int:
    from .keyed_filters import generate_bank
    from .rng import derive_seed
    from .shortcut_lab import (DATConfig, TrainConfig, dat_sweep, evaluate, grayscale_check,
                               protection_sweep, random_blur_defense_check, shortcut_report, train)

    clean_train, clean_test, inputs = _demo_data(ns)
    config = TrainConfig(epochs=ns.epochs, batch_size=ns.batch_size, lr=ns.lr, hidden=ns.hidden,
                         seed=derive_seed(ns.seed, 1))
    bank_seed = derive_seed(ns.seed, 2)
    bank = generate_bank(FilterSpec(clean_train.num_classes, ns.k, ns.pb, bank_seed))
    if ns.scenario == "shortcut":
        report = shortcut_report(clean_train, clean_test, bank, ns.arch, config, ns.threads)
        keys = ("baseline", "clean_test", "cuda_test", "permuted_test", "universal_blur")
    elif ns.scenario == "protection":
        report = protection_sweep(clean_train, clean_test, bank, ns.fractions, ns.arch, config,
                                  mask_seed=derive_seed(ns.seed, 3), threads=ns.threads)
        keys = ()
    elif ns.scenario == "dat":
        dat = DATConfig(3, ns.clamp, ns.inner_steps, ns.inner_lr)
        report = dat_sweep(clean_train, clean_test, ns.blurs, ns.dat_k, ns.k, bank_seed, ns.arch,
                           config, dat, ns.threads)
        keys = ("baseline",)
    elif ns.scenario == "grayscale":
        report = grayscale_check(clean_train, clean_test, bank, ns.arch, config, ns.threads)
        keys = ("gray_baseline", "gray_cuda")
    else:
        poisoned, _ = poison_dataset(clean_train, bank, 1.0, threads=ns.threads)
        baseline = evaluate(train(clean_train, ns.arch, config), clean_test)
        report = random_blur_defense_check(poisoned, clean_test, ns.blurs, ns.k, ns.arch, config, baseline)
        keys = ("baseline",)
    report.params["bank_fingerprint"] = bank.fingerprint()
    out = _out_path(ns.out)
    written = report.write(out)
    _write_manifest(out.parent, ns, inputs, written)
    print(f"[{report.name}]")
    for key in keys:
        print(f"  {key:>16s}: {report.metrics[key]:.4f}")
    if report.rows and report.columns[0] != "measure":
        print("  " + "  ".join(f"{c:>14s}" for c in report.columns))
        for row in report.rows:
            cells = ["-" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v) for v in row]
            print("  " + "  ".join(f"{c:>14s}" for c in cells))
    return EXIT_OK


_COMMANDS = {"genfilters": cmd_genfilters, "poison": cmd_poison, "inspect": cmd_inspect,
             "theory": cmd_theory, "demo": cmd_demo}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, leaves = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    key = _leaf_key(ns)
    try:
        _merge_config(ns, leaves[key], argv)
        missing = [d for d in _REQUIRED.get(key, ()) if getattr(ns, d, None) is None]
        if missing:
            raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
        ns.threads = resolve_threads(ns.threads)
        log.info("resolved configuration: %s", json.dumps({**_resolved(ns), "threads": ns.threads},
                                                          sort_keys=True, default=str))
        return _COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(f"unlearn {key}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"unlearn: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ArithmeticError as exc:
        print(f"unlearn: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"unlearn {key}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"unlearn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
