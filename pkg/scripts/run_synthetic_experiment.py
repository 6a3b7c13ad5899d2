"""Repeat the planted-pattern run over several seeds and ablations, then compare.

Each (variant, seed) pair runs parse -> prepare -> train -> detect -> evaluate
in its own directory. The report stage writes mean F1 per variant and a
pairwise Mann-Whitney U matrix to <workdir>/report/report.csv.

    python3 scripts/run_synthetic_experiment.py runs/experiment --seeds 5
"""
import argparse
import copy
import json
import sys
from pathlib import Path

import yaml

from logvote.cli import main as cli
from logvote.synthetic import LOG_FORMAT, PLANTED_WORD, write_planted_logs

VARIANTS = {
    "full": {},
    "no_llm": {"use_llm": False},
    "no_knn": {"use_knn": False},
    "llm_only": {"use_knn": False, "use_dt": False, "use_slfn": False},
    "no_cache": {"cache_enabled": False},
}


def base_config(data: Path, train_n: int) -> dict:
    return {
        "input": {
            "log_format": LOG_FORMAT,
            "train_files": [str(data / "train.log")],
            "test_files": [str(data / "test.log")],
            "labels": str(data / "labels.tsv"),
        },
        "sampling": {"strategy": "random", "n": train_n},
        "backend": {"kind": "mock", "rule": "keyword", "patterns": [PLANTED_WORD]},
        "detect": {"max_workers": 4},
    }


def run_one(workdir: Path, variant: str, seed: int, cfg: dict) -> Path:
    out = workdir / variant / f"seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    cfg = copy.deepcopy(cfg)
    cfg["ensemble"] = VARIANTS[variant]
    cfg_path = out / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    for stage in ("parse", "prepare", "train", "detect", "evaluate"):
        if cli([stage, "--config", str(cfg_path), "--out", str(out), "--seed", str(seed)]) != 0:
            sys.exit(f"{variant} seed {seed}: {stage} failed")
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("workdir", type=Path)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--train", type=int, default=500, help="sampled training sequences")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    args = ap.parse_args()

    data = args.workdir / "data"
    write_planted_logs(data, n_train=800, n_test=1200, seed=0)
    cfg = base_config(data.resolve(), args.train)
    dirs = {v: [run_one(args.workdir, v, s, cfg) for s in range(args.seeds)] for v in args.variants}

    for variant, outs in dirs.items():
        f1 = [json.loads((o / "metrics.json").read_text())["f1"] for o in outs]
        print(f"{variant:10s} F1 per seed: " + " ".join(f"{x:.3f}" for x in f1))
    groups = [f"{v}=" + ",".join(str(o) for o in outs) for v, outs in dirs.items()]
    argv = ["report", "--out", str(args.workdir / "report")]
    for g in groups:
        argv += ["--group", g]
    sys.exit(cli(argv))


if __name__ == "__main__":
    main()
