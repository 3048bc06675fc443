#!/usr/bin/env python3
"""Protocol stub: generate returns canned candidates built from the input."""
import json
import sys

for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "generate":
        words = req["input"].split(" : ")[-1]
        cands = [
            {"question": "What is " + words + "?", "score": -1.0},
            {"question": "", "score": -0.1},
            {"question": "What is " + words + "?", "score": -1.5},
            {"question": "List " + words + ".", "score": -0.5},
            {"question": "Show " + words + ".", "score": -2.0},
        ]
        out = {"ok": True, "candidates": cands}
    elif req["op"] in ("train", "load"):
        out = {"ok": True}
    else:
        out = {"ok": False, "error": "unknown op"}
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()
