import json
import subprocess
import sys

import numpy as np
import pytest

from unlearn.cli import main, read_config_file
from unlearn.dataset_io import read_uds, write_cifar_binary
from unlearn.keyed_filters import load_bank
from unlearn.shortcut_lab import TemplateTask, make_template_task


@pytest.fixture(scope="module")
def cifar_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cifar")
    train, _ = make_template_task(TemplateTask(shape=(3, 32, 32)), 10, 1, 0)
    write_cifar_binary(train, root / "data_batch_1.bin")
    return root


def run(*args):
    return main([str(a) for a in args])


def test_genfilters_writes_bank_and_fingerprint(tmp_path, capsys):
    out = tmp_path / "bank.cfb"
    assert run("genfilters", "--classes", 10, "--k", 3, "--pb", 0.3, "--seed", 1, "-o", out) == 0
    fp = capsys.readouterr().out.strip()
    assert fp == load_bank(out).fingerprint()
    assert run("genfilters", "--classes", 10, "--k", 3, "--pb", 0.3, "--seed", 1, "-o", out) == 0
    assert capsys.readouterr().out.strip() == fp
    manifest = json.loads((tmp_path / "run.json").read_text())
    assert manifest["config"]["classes"] == 10 and manifest["outputs"][0][0] == "bank.cfb"


def test_usage_errors(tmp_path, capsys):
    assert run("genfilters", "--k", 3, "-o", tmp_path / "b.cfb") == 2
    assert run("genfilters", "--classes", 10, "--k", 4, "-o", tmp_path / "b.cfb") == 2
    with pytest.raises(SystemExit) as info:
        run("demo", "nonsense")
    assert info.value.code == 2
    assert "shortcut" in capsys.readouterr().err


def test_poison_fraction_and_sidecar(tmp_path, cifar_dir):
    bank = tmp_path / "bank.cfb"
    run("genfilters", "--classes", 10, "--seed", 3, "-o", bank)
    out = tmp_path / "p.uds"
    assert run("poison", "--in", cifar_dir, "--bank", bank, "--fraction", 0.2, "-o", out) == 0
    mask = json.loads((tmp_path / "p.uds.mask.json").read_text())
    assert mask["per_class_fraction"] == [0.2] * 10
    ds = read_uds(out)
    assert len(ds) == 100 and ds.provenance.startswith("mixed:")
    assert run("poison", "--in", cifar_dir, "--bank", bank, "--fraction", 1.5, "-o", out) == 2
    assert run("poison", "--in", cifar_dir, "--bank", bank, "-o", out) == 0
    maxes = read_uds(out).images.reshape(100, -1).max(axis=1)
    assert np.all(maxes == 1.0)


def test_truncated_input_is_format_error(tmp_path, cifar_dir, capsys):
    bank = tmp_path / "bank.cfb"
    run("genfilters", "--classes", 10, "-o", bank)
    bad = tmp_path / "bad.bin"
    bad.write_bytes((cifar_dir / "data_batch_1.bin").read_bytes()[:5000])
    assert run("poison", "--in", bad, "--bank", bank, "-o", tmp_path / "x.uds") == 3
    assert "byte offset" in capsys.readouterr().err
    assert run("inspect", "--in", bad) == 3


def test_inspect_bank_and_dataset(tmp_path, cifar_dir, capsys):
    bank = tmp_path / "bank.cfb"
    run("genfilters", "--classes", 4, "--k", 5, "-o", bank)
    capsys.readouterr()
    assert run("inspect", "--in", bank) == 0
    assert json.loads(capsys.readouterr().out)["kernel_size"] == 5
    assert run("inspect", "--in", cifar_dir / "data_batch_1.bin") == 0
    assert json.loads(capsys.readouterr().out)["n"] == 100


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# bank\nclasses = 6\nk=5\npb = 0.1\nseed=9\n")
    assert read_config_file(cfg) == {"classes": "6", "k": "5", "pb": "0.1", "seed": "9"}
    out = tmp_path / "b.cfb"
    assert run("genfilters", "--config", cfg, "--k", 3, "-o", out) == 0
    spec = load_bank(out).spec
    assert (spec.num_classes, spec.kernel_size, spec.blur, spec.master_seed) == (6, 3, 0.1, 9)
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=red\n")
    assert run("genfilters", "--config", bad, "--classes", 2, "-o", out) == 2


def test_theory_commands(tmp_path, capsys):
    assert run("theory", "bound", "--a-minus", 0.4, "--a-plus", 0.1, "--mu-norm", 2.5,
               "--points", 20000) == 0
    assert "PASS mc <= bound + 3*se" in capsys.readouterr().out
    out = tmp_path / "c.csv"
    assert run("theory", "contour", "--mu-norm", 1.0, "--grid", 3, "--d", 10, "--points", 100, "-o", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "a_minus,a_plus,mc_acc,mc_se,bound,t1,t2,gamma1_pos,gamma2_pos"
    assert len(lines) == 10


def test_theory_contour_threads_byte_identical(tmp_path):
    outs = []
    for threads in (1, 8):
        d = tmp_path / f"t{threads}"
        assert run("theory", "contour", "--mu-norm", 2.5, "--grid", 4, "--d", 20, "--points", 200,
                   "--threads", threads, "-o", d / "c.csv") == 0
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1]


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("UNLEARN_THREADS", "3")
    assert run("theory", "contour", "--mu-norm", 1.0, "--grid", 2, "--d", 5, "--points", 50,
               "-o", tmp_path / "c.csv") == 0


def test_demo_shortcut_small(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run("demo", "shortcut", "--per-class", 20, "--test-per-class", 5, "--epochs", 2,
               "--arch", "linear", "-o", out) == 0
    report = json.loads(out.read_text())
    assert set(report["metrics"]) >= {"baseline", "cuda_test", "permuted_test", "clean_test"}
    assert "cuda_test" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "unlearn.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "unlearn" in proc.stdout
