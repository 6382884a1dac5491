"""Smoke test for the pymcqgen extension.

Build and install first:
    pip install --no-build-isolation ./crates/py
then run:
    python python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

import pymcqgen

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "fixtures")


def check(cond, what):
    if not cond:
        print("FAIL", what)
        sys.exit(1)
    print("ok  ", what)


def main():
    check(pymcqgen.normalize_text("  Paris \u06f1\u06f2 ") == "Paris 12", "normalize_text")
    check(pymcqgen.normalize_written_form("twenty one") == pymcqgen.normalize_written_form("21"), "written form")
    check(pymcqgen.classify_type("Who wrote Hamlet?") == "WHO", "classify_type")
    check(abs(pymcqgen.confidence([0.25, 0.25, 0.25, 0.25])) < 1e-12, "uniform confidence is 0")

    recs = [
        pymcqgen.EvalRecord("a", "m", [0.7, 0.1, 0.1, 0.1], 0),
        pymcqgen.EvalRecord.from_loglikelihoods("b", "m", [0.0, 2.0, 0.0, 0.0], 0),
    ]
    m = pymcqgen.metrics(recs)
    check(m["n"] == 2 and math.isclose(m["hard_accuracy"], 0.5), "metrics")
    try:
        pymcqgen.EvalRecord("c", "m", [0.5, 0.6], 0)
        check(False, "bad probs rejected")
    except ValueError:
        check(True, "bad probs rejected")

    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "items.jsonl")
        manifest = json.loads(
            pymcqgen.generate(
                os.path.join(FIXTURES, "qa.jsonl"), out, config=os.path.join(FIXTURES, "run.toml")
            )
        )
        items = pymcqgen.read_mcq_dataset(out)
        check(len(items) == manifest["items_written"] > 0, "generate wrote items")
        for it in items:
            it.validate()
            check(len(set(it.choices)) == len(it.choices), f"{it.id} choices distinct")

        again = os.path.join(tmp, "copy.jsonl")
        pymcqgen.write_mcq_dataset(items, again)
        check([i.to_json() for i in pymcqgen.read_mcq_dataset(again)] == [i.to_json() for i in items], "dataset round trip")

        emb = os.path.join(tmp, "kg.emb")
        mrr = pymcqgen.train_kg(os.path.join(FIXTURES, "kg.tsv"), emb, epochs=5, dim=8)
        check(0.0 < mrr <= 1.0 and os.path.exists(emb), "train_kg")

    try:
        pymcqgen.read_mcq_dataset("/nonexistent/x.jsonl")
        check(False, "missing file raises OSError")
    except OSError:
        check(True, "missing file raises OSError")


if __name__ == "__main__":
    main()
