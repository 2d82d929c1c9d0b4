"""
file_formats.py - artifact codecs
=================================
Graymaps (PGM through Pillow), the DPMF probability-map tensor, the EMB1
embedding file, and the small JSON / CSV writers every command shares.
All writers are byte-deterministic for identical inputs.
"""

import csv
import json
import os
import struct
from typing import Iterable, List, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from floc_errors import FloorplanFormatError, MissingInputError


DPMF_MAGIC = b"DPMF"
EMB1_MAGIC = b"EMB1"


# ─────────────────────────────────────────────
# Portable graymaps
# ─────────────────────────────────────────────
def read_graymap(path: str) -> np.ndarray:
    """Reads an 8-bit P5/P2 graymap into a (rows, cols) uint8 array"""
    if not os.path.isfile(path):
        raise FloorplanFormatError(f"graymap not found: {path}")
    try:
        with Image.open(path) as img:
            if img.format not in ("PPM", "PGM") or img.mode != "L":
                raise FloorplanFormatError(
                    f"{path}: expected an 8-bit portable graymap, got {img.format}/{img.mode}")
            return np.array(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise FloorplanFormatError(f"{path}: corrupt graymap ({e})") from e


def write_graymap(path: str, pixels: np.ndarray):
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"graymap needs a 2D array, got shape {arr.shape}")
    Image.fromarray(arr).save(path, format="PPM")


# ─────────────────────────────────────────────
# DPMF probability tensor
# ─────────────────────────────────────────────
def write_dpmf(path: str, values: np.ndarray):
    """magic, H, W, O as <u4, then H*W*O <f4 values (row-major, orientation-minor)"""
    h, w, o = values.shape
    with open(path, "wb") as fh:
        fh.write(DPMF_MAGIC)
        fh.write(struct.pack("<III", h, w, o))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_dpmf(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingInputError(f"probability map not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DPMF_MAGIC or len(blob) < 16:
        raise FloorplanFormatError(f"{path}: not a DPMF file")
    h, w, o = struct.unpack("<III", blob[4:16])
    values = np.frombuffer(blob[16:], dtype="<f4")
    if values.size != h * w * o:
        raise FloorplanFormatError(f"{path}: expected {h * w * o} values, found {values.size}")
    return values.reshape(h, w, o).astype(np.float64)


# ─────────────────────────────────────────────
# EMB1 embeddings
# ─────────────────────────────────────────────
def write_emb1(path: str, embeddings: np.ndarray):
    """magic, count, dim as <u4, then count*dim <f4 values"""
    arr = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    count, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", count, dim))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_emb1(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingInputError(f"embedding file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EMB1_MAGIC or len(blob) < 12:
        raise FloorplanFormatError(f"{path}: not an EMB1 file")
    count, dim = struct.unpack("<II", blob[4:12])
    values = np.frombuffer(blob[12:], dtype="<f4")
    if values.size != count * dim:
        raise FloorplanFormatError(f"{path}: expected {count * dim} values, found {values.size}")
    return values.reshape(count, dim).astype(np.float64)


# ─────────────────────────────────────────────
# JSON / CSV
# ─────────────────────────────────────────────
def write_json(path: str, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str):
    if not os.path.isfile(path):
        raise MissingInputError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path: str, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def fmt(value: float) -> str:
    """Fixed float rendering for diffable tables"""
    return f"{float(value):.6f}"


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path: str) -> List[dict]:
    if not os.path.isfile(path):
        raise MissingInputError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
