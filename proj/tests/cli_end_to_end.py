"""End-to-end CLI run on a tiny config; every JSON artifact is validated
against the schemas shipped in schemas/.

usage: cli_end_to_end.py <ctrlns binary> <schemas dir> <tiny config>
"""

import filecmp
import json
import os
import shutil
import subprocess
import sys
import tempfile

import jsonschema

CLI, SCHEMAS, TINY = (os.path.abspath(a) for a in sys.argv[1:4])
failures = []


def schema(name):
    with open(os.path.join(SCHEMAS, name + ".schema.json")) as f:
        return json.load(f)


def load(path):
    with open(path) as f:
        return json.load(f)


def validate(path, name):
    try:
        jsonschema.validate(load(path), schema(name))
    except jsonschema.ValidationError as e:
        failures.append(f"{path} does not match {name}: {e.message}")


def run(*args, env=None, expect=0):
    full_env = dict(os.environ)
    full_env.pop("CTRLNS_SEED", None)
    full_env.pop("CTRLNS_OUTPUT_DIR", None)
    full_env.update(env or {})
    p = subprocess.run([CLI, *args], capture_output=True, text=True, env=full_env)
    if p.returncode != expect:
        failures.append(f"{' '.join(args)}: exit {p.returncode}, expected {expect}\n{p.stderr}")
    return p


def check(cond, msg):
    if not cond:
        failures.append(msg)


def write_config(path, **changes):
    cfg = load(TINY)
    for dotted, value in changes.items():
        node = cfg
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    with open(path, "w") as f:
        json.dump(cfg, f)
    return path


work = tempfile.mkdtemp(prefix="ctrlns_e2e_")
os.chdir(work)
runs = os.path.join(work, "runs")

# Input config and materialized snapshot both follow the config schema.
validate(TINY, "config")

# generate: idempotent, seed override gives a separate run directory.
run("generate", "--config", TINY, "--out", runs)
first = open("runs/tiny/dataset.bin", "rb").read()
run("generate", "--config", TINY, "--out", runs)
check(first == open("runs/tiny/dataset.bin", "rb").read(), "generate is not idempotent")
out = run("generate", "--config", TINY, "--out", runs, env={"CTRLNS_SEED": "7"})
check("tiny-seed7" in out.stdout, "CTRLNS_SEED did not select a separate run directory")
check(json.loads(out.stdout)["n_domains"] == 2, "generate summary lacks U")

# train: artifacts, schema validity, idempotency.
run("train", "--config", TINY, "--out", runs, "--quiet")
for f in ["config.json", "build.json", "loss_history.csv", "epoch_metrics.csv", "summary.json", "metrics.json",
          "checkpoints/last.bin"]:
    check(os.path.exists(os.path.join("runs/tiny", f)), f"missing artifact {f}")
validate("runs/tiny/config.json", "config")
validate("runs/tiny/summary.json", "run_summary")
validate("runs/tiny/metrics.json", "metrics")
snapshot = load("runs/tiny/config.json")
check("leaky_slope" in snapshot["gen"] and "gumbel" in snapshot["train"], "defaults not materialized")
shutil.copy("runs/tiny/loss_history.csv", "first_history.csv")
shutil.copy("runs/tiny/metrics.json", "first_metrics.json")
run("train", "--config", TINY, "--out", runs, "--quiet")
check(filecmp.cmp("first_history.csv", "runs/tiny/loss_history.csv", shallow=False), "train is not idempotent")
check(filecmp.cmp("first_metrics.json", "runs/tiny/metrics.json", shallow=False), "metrics are not idempotent")

# resume from an intermediate checkpoint reproduces the uninterrupted run.
long_cfg = write_config("long.json", **{"train.epochs": 4, "run_id": "long"})
run("generate", "--config", long_cfg, "--out", runs)
run("train", "--config", long_cfg, "--out", runs, "--quiet")
full = open("runs/long/loss_history.csv").read()
shutil.copy("runs/long/checkpoints/epoch_0002.bin", "runs/long/checkpoints/last.bin")
run("train", "--config", long_cfg, "--out", runs, "--quiet", "--resume")
check(open("runs/long/loss_history.csv").read() == full, "resumed loss history differs")

# zero epochs: empty history, still schema-valid.
zero_cfg = write_config("zero.json", **{"train.epochs": 0, "run_id": "zero"})
run("generate", "--config", zero_cfg, "--out", runs)
run("train", "--config", zero_cfg, "--out", runs, "--quiet")
check(len(open("runs/zero/loss_history.csv").read().strip().splitlines()) == 1, "zero-epoch history not empty")
validate("runs/zero/summary.json", "run_summary")
validate("runs/zero/metrics.json", "metrics")

# eval
run("eval", "--run", "runs/tiny")
validate("runs/tiny/eval_metrics.json", "metrics")

# audit: default system passes, tiny oracle attached; identical masks fail variability.
run("audit", "runs/tiny/dataset.bin", "--config", TINY, "--tiny-oracle")
validate("runs/tiny/dataset.bin.audit.json", "audit")
audit = load("runs/tiny/dataset.bin.audit.json")
check(audit["overall"] == "pass", f"default system audit: {audit['overall']}")
check(audit["oracle"] is not None and audit["oracle"]["identifiable"], "oracle landscape missing or not identifiable")
ident_cfg = write_config("ident.json", **{"variability_mode": "identical_masks", "run_id": "ident"})
run("generate", "--config", ident_cfg, "--out", runs)
run("audit", "--config", ident_cfg, "--out", runs)
ident = load("runs/ident/dataset.bin.audit.json")
validate("runs/ident/dataset.bin.audit.json", "audit")
check(ident["checks"]["mechanism_variability"]["verdict"] == "fail", "identical masks not flagged")

# report: one row for one run, mean and std rows for three seeds.
run("report", "runs/tiny", "--out", "rep1")
check(len(open("rep1/report.csv").read().strip().splitlines()) == 2, "single-run report is not one row")
check(os.path.exists("rep1/tiny_phases.svg"), "phase chart missing")
seed_dirs = []
for s in ["1", "2", "3"]:
    run("generate", "--config", TINY, "--out", runs, "--seed", s)
    run("train", "--config", TINY, "--out", runs, "--seed", s, "--quiet")
    seed_dirs.append(f"runs/tiny-seed{s}")
run("report", *seed_dirs, "--out", "rep3")
md = open("rep3/report.md").read()
check("mean ± std (n=3)" in md, "three-seed report lacks mean ± std")

# exit codes
bad = write_config("bad.json", **{"gen.n_domains": 1})
run("generate", "--config", bad, "--out", runs, expect=2)
with open("syntax.json", "w") as f:
    f.write('{\n  "gen": {,}\n}\n')
p = run("generate", "--config", "syntax.json", expect=2)
check(":2:" in p.stderr, "syntax error lacks a line number")
mismatch = write_config("mismatch.json", **{"gen.seed": 99})
run("train", "--config", mismatch, "--out", runs, "--dataset", "runs/tiny/dataset.bin", "--quiet", expect=2)
nan_cfg = write_config("nan.json", **{"train.learning_rate": 1e9, "run_id": "nan"})
run("generate", "--config", nan_cfg, "--out", runs)
run("train", "--config", nan_cfg, "--out", runs, "--quiet", expect=3)
validate("runs/nan/summary.json", "run_summary")
run("train", "--config", TINY, "--out", runs, "--device", "gpu", expect=2)

# lock: a held lock blocks a second writer.
open("runs/tiny/.lock", "w").write("1\n")
run("train", "--config", TINY, "--out", runs, "--quiet", expect=1)
os.remove("runs/tiny/.lock")

shutil.rmtree(work, ignore_errors=True)
for f in failures:
    print("FAIL:", f)
print("cli end-to-end:", "ok" if not failures else f"{len(failures)} failure(s)")
sys.exit(1 if failures else 0)
