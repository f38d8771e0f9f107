"""HTTP/JSON inference service over the frozen VQA model and trained
generator. Read-only by construction: request handling never mutates model
state, so identical requests produce byte-identical responses and the
server is safe under concurrent load.

Endpoints:
    GET  /health          -> {status, vqa_hash, gen_hash, requests}
    GET  /samples         -> [{id, question, answer, qtype}] (manifest order)
    GET  /image?id=...    -> {id, png_base64}
    POST /answer          -> {answer, top_k}
    POST /counterfactual  -> {cf_png_base64, heatmap_png_base64, orig_png_base64,
                              orig_answer, cf_answer, flipped, edit_rms}
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .evaluation import heatmap
from .scenes import QTYPES, images_to_float, load_manifest, load_split_tensors, tokenize
from .training import edit_rms, load_generator, load_vqa


class ServiceError(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status


@dataclass
class ServiceState:
    manifest: object
    vqa: object
    gen: object
    vqa_hash: str
    gen_hash: str
    tensors: dict        # split -> SplitTensors
    sample_index: dict   # sample id -> (split, row)

    def __post_init__(self):
        self._counter = 0
        self._lock = threading.Lock()

    def count_request(self):
        with self._lock:
            self._counter += 1
            return self._counter

    @property
    def requests_served(self):
        return self._counter


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_state(out_root):
    """Load dataset + checkpoints from a pipeline output directory, letting
    hash validation fail loudly before the server ever binds."""
    out_root = Path(out_root)
    dataset_dir = out_root / "dataset"
    manifest = load_manifest(dataset_dir)
    vocab_hash = manifest.vocab_hash()
    vqa_path = out_root / "vqa" / "vqa.npz"
    gen_path = out_root / "cf" / "gen.npz"
    vqa, _ = load_vqa(vqa_path, expect_vocab_hash=vocab_hash)
    vqa_hash = file_sha256(vqa_path)
    gen, _ = load_generator(gen_path, expect_vocab_hash=vocab_hash, expect_vqa_hash=vqa_hash)
    tensors = {split: load_split_tensors(manifest, split, dataset_dir) for split in manifest.samples}
    sample_index = {}
    for split, data in tensors.items():
        for row, sid in enumerate(data.sample_ids):
            sample_index[sid] = (split, row)
    return ServiceState(
        manifest=manifest,
        vqa=vqa,
        gen=gen,
        vqa_hash=vqa_hash,
        gen_hash=file_sha256(gen_path),
        tensors=tensors,
        sample_index=sample_index,
    )


# ---------------------------------------------------------------------------
# payload helpers


def _png_base64(arr_u8):
    """(3,H,W) or (H,W) uint8 -> base64 PNG string."""
    if arr_u8.ndim == 2:
        img = Image.fromarray(arr_u8, mode="L")
    else:
        img = Image.fromarray(arr_u8.transpose(1, 2, 0), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_png(b64, expected_hw):
    try:
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as e:
        raise ServiceError(400, f"image_png_base64 does not decode to a PNG: {e}") from e
    if arr.shape[:2] != expected_hw:
        raise ServiceError(400, f"image shape {arr.shape[:2]} != expected {expected_hw}")
    return arr.transpose(2, 0, 1)


def _resolve_image(state: ServiceState, body):
    """Returns (image_u8 (3,H,W))."""
    h, w, _ = state.manifest.image_size
    if "image_id" in body:
        sid = body["image_id"]
        if sid not in state.sample_index:
            raise ServiceError(404, f"unknown sample id {sid!r}")
        split, row = state.sample_index[sid]
        return state.tensors[split].images[row]
    if "image_png_base64" in body:
        return _decode_png(body["image_png_base64"], (h, w))
    raise ServiceError(400, "request needs image_id or image_png_base64")


def _answer_payload(state: ServiceState, image_u8, question, k=5):
    if not isinstance(question, str) or not question.strip():
        raise ServiceError(400, "question must be a non-empty string")
    ids = np.array(tokenize(question, state.manifest.vocab_q))
    img = images_to_float(image_u8[None], state.vqa.config.np_dtype())
    a_hat, p = state.vqa.predict_batch(img, ids[None])
    p = p[0]
    order = np.argsort(-p, kind="stable")
    top_k = [[state.manifest.vocab_a[int(i)], float(p[int(i)])] for i in order[:k]]
    return state.manifest.vocab_a[int(a_hat[0])], top_k, ids


def handle_request(state: ServiceState, method, path, query, body):
    """Pure request dispatcher; returns (status, payload dict)."""
    state.count_request()
    if method == "GET" and path == "/health":
        return 200, {
            "status": "ok",
            "vqa_hash": state.vqa_hash,
            "gen_hash": state.gen_hash,
            "requests": state.requests_served,
        }

    if method == "GET" and path == "/samples":
        split = query.get("split", ["val"])[0]
        if split not in state.tensors:
            raise ServiceError(400, f"unknown split {split!r}")
        qtype = query.get("qtype", [None])[0]
        if qtype is not None and qtype not in QTYPES:
            raise ServiceError(400, f"unknown qtype {qtype!r}")
        try:
            limit = int(query.get("limit", [-1])[0])
        except ValueError:
            raise ServiceError(400, "limit must be an integer")
        data = state.tensors[split]
        items = []
        for i, sid in enumerate(data.sample_ids):
            if qtype is not None and data.qtypes[i] != qtype:
                continue
            items.append(
                {
                    "id": sid,
                    "question": data.questions[i],
                    "answer": state.manifest.vocab_a[int(data.answers[i])],
                    "qtype": data.qtypes[i],
                }
            )
            if limit >= 0 and len(items) >= limit:
                break
        if limit == 0:
            items = []
        return 200, {"samples": items}

    if method == "GET" and path == "/image":
        sid = query.get("id", [None])[0]
        if sid is None:
            raise ServiceError(400, "id query parameter required")
        if sid not in state.sample_index:
            raise ServiceError(404, f"unknown sample id {sid!r}")
        split, row = state.sample_index[sid]
        return 200, {"id": sid, "png_base64": _png_base64(state.tensors[split].images[row])}

    if method == "POST" and path == "/answer":
        image_u8 = _resolve_image(state, body)
        answer, top_k, _ = _answer_payload(state, image_u8, body.get("question"))
        return 200, {"answer": answer, "top_k": top_k}

    if method == "POST" and path == "/counterfactual":
        image_u8 = _resolve_image(state, body)
        orig_answer, _, ids = _answer_payload(state, image_u8, body.get("question"))
        target = body.get("answer", orig_answer)
        if target not in state.manifest.vocab_a:
            raise ServiceError(400, f"answer {target!r} not in the answer vocabulary")
        a_idx = state.manifest.vocab_a.index(target)
        img = images_to_float(image_u8[None], state.gen.config.np_dtype())
        cond = state.gen.build_conditioning(state.vqa, ids[None], [a_idx])
        cf = state.gen.generate(img, cond)[0]
        cf_u8 = np.round(np.clip(cf, 0, 1) * 255.0).astype(np.uint8)
        heat_u8 = np.round(heatmap(img[0], cf) * 255.0).astype(np.uint8)
        cf_answer, _, _ = _answer_payload(state, cf_u8, body.get("question"))
        return 200, {
            "cf_png_base64": _png_base64(cf_u8),
            "heatmap_png_base64": _png_base64(heat_u8),
            "orig_png_base64": _png_base64(image_u8),
            "orig_answer": orig_answer,
            "cf_answer": cf_answer,
            "flipped": cf_answer != orig_answer,
            "edit_rms": edit_rms(img[0], cf),
        }

    raise ServiceError(404, f"no route for {method} {path}")


# ---------------------------------------------------------------------------
# HTTP plumbing


def _make_handler(state: ServiceState):
    class Handler(BaseHTTPRequestHandler):
        server_version = "cfvqa"

        def log_message(self, fmt, *args):
            pass

        def _respond(self, status, payload):
            body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def _dispatch(self, method, body):
            url = urlparse(self.path)
            try:
                status, payload = handle_request(state, method, url.path, parse_qs(url.query), body)
            except ServiceError as e:
                status, payload = e.status, {"error": str(e)}
            except Exception as e:  # defensive: never crash the server thread
                status, payload = 500, {"error": f"internal error: {e}"}
            self._respond(status, payload)

        def do_GET(self):
            self._dispatch("GET", {})

        def do_OPTIONS(self):
            self._respond(204, {})

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length) if length else b"{}"
            try:
                body = json.loads(raw.decode() or "{}")
                if not isinstance(body, dict):
                    raise ValueError("body must be a JSON object")
            except ValueError as e:
                self._respond(400, {"error": f"invalid JSON body: {e}"})
                return
            self._dispatch("POST", body)

    return Handler


def make_server(state: ServiceState, addr="127.0.0.1:0"):
    host, _, port = addr.partition(":")
    server = ThreadingHTTPServer((host, int(port or 0)), _make_handler(state))
    return server


def serve_forever(out_root, addr):
    state = build_state(out_root)
    server = make_server(state, addr)
    host, port = server.server_address[:2]
    print(f"cfvqa explain service listening on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
