import argparse
import json
from pathlib import Path


def parser(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--replicates", type=int, default=None, help="override the replicate count")
    ap.add_argument("--threads", type=int, default=1)
    return ap


def save(out, name, sweep):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(sweep.to_csv(), encoding="utf-8")
    (out / f"{name}.json").write_text(sweep.to_json() + "\n", encoding="utf-8")


def save_json(out, name, payload):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
