"""Walkthrough: the HTTP explanation service, driven as a client.

Builds a tiny pipeline through the CLI, starts the service in a thread,
and runs one complete what-if: list samples, ask a question, request the
counterfactual, and compare answers.

Run:  python3 demos/05_service_whatif.py
"""

import json
import tempfile
import threading
import urllib.request
from pathlib import Path

from cfvqa import cli
from cfvqa.explain_service import build_state, make_server

out = Path(tempfile.mkdtemp(prefix="cfvqa_demo_"))
tiny = [
    "--set", "data.n_train=60", "--set", "data.n_val=12",
    "--set", "vqa_train.epochs=3",
    "--set", "cf_train.warmup_epochs=1", "--set", "cf_train.joint_epochs=1",
]
for cmd in ("gen-data", "train-vqa", "train-cf"):
    assert cli.main([cmd, "--out", str(out), "--seed", "11", *tiny]) == 0

server = make_server(build_state(out), "127.0.0.1:0")
threading.Thread(target=server.serve_forever, daemon=True).start()
base = "http://{}:{}".format(*server.server_address[:2])
print(f"service at {base}")


def get(path):
    with urllib.request.urlopen(base + path) as r:
        return json.loads(r.read())


def post(path, body):
    req = urllib.request.Request(base + path, data=json.dumps(body).encode(),
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as r:
        return json.loads(r.read())


print("health:", get("/health")["status"])
sample = get("/samples?split=val&qtype=color&limit=1")["samples"][0]
print(f"sample {sample['id']}: {sample['question']!r} (gt {sample['answer']})")

ans = post("/answer", {"image_id": sample["id"], "question": sample["question"]})
print(f"model answers {ans['answer']!r}; top-3 {ans['top_k'][:3]}")

cf = post("/counterfactual", {"image_id": sample["id"], "question": sample["question"]})
print(f"counterfactual: {cf['orig_answer']!r} -> {cf['cf_answer']!r} "
      f"(flipped={cf['flipped']}, edit RMS {cf['edit_rms']:.4f})")
print(f"payload carries original/cf/heatmap PNGs, e.g. {len(cf['cf_png_base64'])} b64 chars")
server.shutdown()
