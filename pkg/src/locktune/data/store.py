"""On-disk corpus layout:

    <dir>/images/000123.ppm   binary PPM (P6)
    <dir>/captions.jsonl      {id, caption, class_id, split, seed, template_index}
    <dir>/grammar.json        the DataConfig that produced it
    <dir>/vocab.txt           one token per line, line number = id
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..config.models import DataConfig
from ..errors import CorpusError
from ..util.fs import ensure_dir, write_bytes_atomic, write_json_atomic, write_text_atomic
from .corpus import Corpus, SyntheticSample
from .tokenizer import Vocab

IMAGES_DIR = "images"
CAPTIONS_FILE = "captions.jsonl"
GRAMMAR_FILE = "grammar.json"
VOCAB_FILE = "vocab.txt"


def _image_path(root: Path, sample_id: int) -> Path:
    return root / IMAGES_DIR / f"{sample_id:06d}.ppm"


def encode_ppm(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(raster, dtype=np.uint8)).save(buf, format="PPM")
    return buf.getvalue()


def decode_ppm(blob: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(blob)) as im:
        if im.mode != "RGB":
            raise CorpusError(f"expected an RGB PPM, got mode {im.mode}")
        return np.array(im, dtype=np.uint8)


def save_corpus(corpus: Corpus, root: Path) -> Path:
    ensure_dir(root / IMAGES_DIR)
    for s in corpus.samples:
        write_bytes_atomic(_image_path(root, s.id), encode_ppm(s.image))
    lines = [json.dumps(s.meta(), ensure_ascii=False, sort_keys=True) for s in corpus.samples]
    write_text_atomic(root / CAPTIONS_FILE, "\n".join(lines) + "\n")
    write_json_atomic(root / GRAMMAR_FILE, corpus.config.to_dict())
    corpus.vocab.save(root / VOCAB_FILE)
    return root


def load_corpus(root: Path) -> Corpus:
    cap_path = root / CAPTIONS_FILE
    if not cap_path.is_file():
        raise CorpusError(f"no corpus at {root} (missing {CAPTIONS_FILE}); run `locktune gen-corpus` first")
    try:
        grammar = json.loads((root / GRAMMAR_FILE).read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError) as e:
        raise CorpusError(f"{root / GRAMMAR_FILE}: {e}") from e
    cfg = DataConfig.from_obj(grammar)
    vocab = Vocab.load(root / VOCAB_FILE)

    samples: list[SyntheticSample] = []
    for n, line in enumerate(cap_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            meta = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"{cap_path}:{n}: {e}") from e
        sid = int(meta["id"])
        try:
            image = decode_ppm(_image_path(root, sid).read_bytes())
        except FileNotFoundError:
            raise CorpusError(f"missing image for sample {sid}") from None
        samples.append(
            SyntheticSample(
                id=sid,
                class_id=int(meta["class_id"]),
                template_index=int(meta.get("template_index", 0)),
                caption=str(meta["caption"]),
                split=str(meta["split"]),
                seed=int(meta["seed"]),
                image=image,
            )
        )
    samples.sort(key=lambda s: s.id)
    return Corpus(samples=samples, config=cfg, vocab=vocab)
