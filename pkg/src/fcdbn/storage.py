"""File formats: binary PGM images, JSON model documents, manifest CSVs.

Everything is written atomically (temp file + rename) so failed commands
never leave partial artifacts behind. Model weights are serialized as
decimal strings that round-trip float64 exactly.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .deepnet import DbnStack, MlpModel
from .fusion import GaussianMixture, PlrModels, SvmModel
from .kvrl import KvrlModel, RegionFractions
from .rbm import RbmLayer

MODEL_FORMAT = "fcdbn-model"
MODEL_VERSION = 1
RELATIONS = ("FS", "FD", "MS", "MD", "BB", "BS", "SS")
MANIFEST_COLUMNS = ("path_a", "path_b", "label", "relation",
                    "subject_a", "subject_b")


class PgmParseError(ValueError):
    """Malformed PGM payload; message names the byte offset."""


class ModelFormatError(ValueError):
    """Model document fails version or dimension checks."""


def atomic_write_bytes(path, payload):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


# --- PGM (P5, 8-bit) --------------------------------------------------------

def _next_token(data, pos):
    """Skip whitespace and # comments, return (token, next_pos)."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PgmParseError(f"unexpected end of header at byte {start}")
    return data[start:pos], pos


def load_pgm(path, size=64):
    """Read a binary 8-bit PGM into a [0, 1] float image of size x size."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        raise PgmParseError(f"expected P5 magic at byte 0, got {magic!r}")
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise PgmParseError(
                f"non-numeric header field {token!r} at byte {pos}") from None
    width, height, maxval = fields
    if maxval != 255:
        raise PgmParseError(f"only 8-bit PGM supported, maxval={maxval}")
    if (width, height) != (size, size):
        raise PgmParseError(f"expected {size}x{size} image, got {width}x{height}")
    pos += 1  # single whitespace after maxval
    expected = width * height
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise PgmParseError(
            f"truncated payload at byte {pos + len(payload)}: "
            f"need {expected} bytes, have {len(payload)}"
        )
    img = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return (img / 255.0).reshape(height, width)


def save_pgm(path, image):
    """Quantize a [0, 1] image to 8 bits and write binary PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("save_pgm expects a 2-D image")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    h, w = img.shape
    body = np.round(img * 255.0).astype(np.uint8).tobytes()
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + body)


# --- model persistence ------------------------------------------------------

def _arr(a):
    return np.asarray(a, dtype=np.float64).tolist()


def _layer_doc(layer):
    return {
        "W": _arr(layer.W),
        "a": _arr(layer.a),
        "b": _arr(layer.b),
        "unit_kind": layer.unit_kind,
        "sigma": None if layer.sigma is None else _arr(layer.sigma),
        "filters": [_arr(f) for f in layer.filters],
        "alpha": layer.alpha,
        "beta": layer.beta,
        "image_shape": None if layer.image_shape is None
        else list(layer.image_shape),
    }


def _layer_from_doc(doc):
    layer = RbmLayer(
        W=np.array(doc["W"], dtype=np.float64),
        a=np.array(doc["a"], dtype=np.float64),
        b=np.array(doc["b"], dtype=np.float64),
        unit_kind=doc["unit_kind"],
        sigma=None if doc["sigma"] is None
        else np.array(doc["sigma"], dtype=np.float64),
        filters=[np.array(f, dtype=np.float64) for f in doc["filters"]],
        alpha=float(doc["alpha"]),
        beta=float(doc["beta"]),
        image_shape=None if doc["image_shape"] is None
        else tuple(doc["image_shape"]),
    )
    d, f = layer.W.shape if layer.W.ndim == 2 else (0, 0)
    if layer.W.ndim != 2 or layer.a.shape != (f,) or layer.b.shape != (d,):
        raise ModelFormatError(
            f"inconsistent layer dims: W {layer.W.shape}, a {layer.a.shape}, "
            f"b {layer.b.shape}"
        )
    if layer.image_shape is not None and \
            layer.image_shape[0] * layer.image_shape[1] != d:
        raise ModelFormatError(f"image_shape {layer.image_shape} != D {d}")
    return layer


def _stack_doc(stack):
    return {"layers": [_layer_doc(l) for l in stack.layers]}


def _stack_from_doc(doc):
    stack = DbnStack(layers=[_layer_from_doc(l) for l in doc["layers"]])
    try:
        stack.validate()
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc
    return stack


def _mlp_doc(mlp):
    return {
        "weights": [_arr(w) for w in mlp.weights],
        "biases": [_arr(b) for b in mlp.biases],
        "dropout_input": mlp.dropout_input,
        "dropout_hidden": mlp.dropout_hidden,
    }


def _mlp_from_doc(doc):
    mlp = MlpModel(
        weights=[np.array(w, dtype=np.float64) for w in doc["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in doc["biases"]],
        dropout_input=float(doc["dropout_input"]),
        dropout_hidden=float(doc["dropout_hidden"]),
    )
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ModelFormatError(f"classifier layer {i} dims inconsistent")
        if i > 0 and mlp.weights[i - 1].shape[1] != w.shape[0]:
            raise ModelFormatError(f"classifier layer {i} width mismatch")
    return mlp


def _gmm_doc(g):
    return {"weights": _arr(g.weights), "means": _arr(g.means),
            "variances": _arr(g.variances)}


def _gmm_from_doc(doc):
    g = GaussianMixture(weights=np.array(doc["weights"], dtype=np.float64),
                        means=np.array(doc["means"], dtype=np.float64),
                        variances=np.array(doc["variances"], dtype=np.float64))
    if not (g.weights.shape == g.means.shape == g.variances.shape):
        raise ModelFormatError("mixture component arrays differ in length")
    return g


def save_model(model, path):
    """Serialize a KVRL, PLR, or SVM model to a JSON text document."""
    if isinstance(model, KvrlModel):
        kind, payload = "kvrl", {
            "regions": list(model.regions),
            "region_size": model.region_size,
            "fractions": {
                "eye_rows": list(model.fractions.eye_rows),
                "nose_rows": list(model.fractions.nose_rows),
                "nose_cols": list(model.fractions.nose_cols),
                "chin_rows": list(model.fractions.chin_rows),
            },
            "stage1": {name: _stack_doc(s) for name, s in model.stage1.items()},
            "stage2": _stack_doc(model.stage2),
            "classifier": None if model.classifier is None
            else _mlp_doc(model.classifier),
        }
    elif isinstance(model, PlrModels):
        kind, payload = "plr", {
            "s_genuine": _gmm_doc(model.s_genuine),
            "s_impostor": _gmm_doc(model.s_impostor),
            "k_kin": _gmm_doc(model.k_kin),
            "k_nonkin": _gmm_doc(model.k_nonkin),
        }
    elif isinstance(model, SvmModel):
        kind, payload = "svm", {
            "w": _arr(model.w), "b": model.b,
            "feat_mean": _arr(model.feat_mean), "feat_std": _arr(model.feat_std),
            "degenerate": model.degenerate, "majority": model.majority,
            "margin": model.margin,
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION,
           "kind": kind, "payload": payload}
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def load_model(path):
    """Reconstruct a saved model; fails closed on any inconsistency."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a model document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("missing fcdbn-model format tag")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')}")
    kind = doc.get("kind")
    payload = doc.get("payload", {})
    if kind == "kvrl":
        fr = payload["fractions"]
        model = KvrlModel(
            stage1={name: _stack_from_doc(s)
                    for name, s in payload["stage1"].items()},
            stage2=_stack_from_doc(payload["stage2"]),
            classifier=None if payload["classifier"] is None
            else _mlp_from_doc(payload["classifier"]),
            regions=tuple(payload["regions"]),
            fractions=RegionFractions(
                eye_rows=tuple(fr["eye_rows"]),
                nose_rows=tuple(fr["nose_rows"]),
                nose_cols=tuple(fr["nose_cols"]),
                chin_rows=tuple(fr["chin_rows"]),
            ),
            region_size=int(payload["region_size"]),
        )
        try:
            model.validate()
        except ValueError as exc:
            raise ModelFormatError(str(exc)) from exc
        return model
    if kind == "plr":
        return PlrModels(s_genuine=_gmm_from_doc(payload["s_genuine"]),
                         s_impostor=_gmm_from_doc(payload["s_impostor"]),
                         k_kin=_gmm_from_doc(payload["k_kin"]),
                         k_nonkin=_gmm_from_doc(payload["k_nonkin"]))
    if kind == "svm":
        return SvmModel(w=np.array(payload["w"], dtype=np.float64),
                        b=float(payload["b"]),
                        feat_mean=np.array(payload["feat_mean"], dtype=np.float64),
                        feat_std=np.array(payload["feat_std"], dtype=np.float64),
                        degenerate=bool(payload["degenerate"]),
                        majority=int(payload["majority"]),
                        margin=float(payload["margin"]))
    raise ModelFormatError(f"unknown model kind {kind!r}")


# --- pair manifests ---------------------------------------------------------

@dataclass
class KinPair:
    path_a: str
    path_b: str
    label: str  # "kin" | "nonkin"
    relation: str
    subject_a: str
    subject_b: str


def write_manifest(path, pairs):
    rows = [",".join(MANIFEST_COLUMNS)]
    for p in pairs:
        rows.append(",".join((p.path_a, p.path_b, p.label, p.relation,
                              p.subject_a, p.subject_b)))
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_manifest(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or tuple(rows[0]) != MANIFEST_COLUMNS:
        raise ValueError(
            f"manifest must start with header {','.join(MANIFEST_COLUMNS)}"
        )
    pairs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_COLUMNS):
            raise ValueError(f"manifest line {lineno}: expected "
                             f"{len(MANIFEST_COLUMNS)} columns, got {len(row)}")
        pair = KinPair(*row)
        if pair.label not in ("kin", "nonkin"):
            raise ValueError(f"manifest line {lineno}: bad label {pair.label!r}")
        if pair.relation not in RELATIONS:
            raise ValueError(
                f"manifest line {lineno}: relation {pair.relation!r} not in "
                f"{RELATIONS}"
            )
        pairs.append(pair)
    return pairs
