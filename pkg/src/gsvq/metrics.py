"""Image and attribute distortion metrics plus the combined evaluation report."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from gsvq import codec, renderer
from gsvq.quantized import GROUPS, dequantize, group_data


def psnr(a, b, eight_bit=False):
    """Peak signal-to-noise ratio in dB for images in [0, 1]; ``inf`` when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if eight_bit:
        a = np.rint(np.clip(a, 0, 1) * 255) / 255
        b = np.rint(np.clip(b, 0, 1) * 255) / 255
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def attribute_mse(cloud, qcloud):
    """Per-group mean squared error between raw and dequantised attributes."""
    if len(cloud) != len(qcloud):
        raise ValueError(f"splat counts differ: {len(cloud)} vs {len(qcloud)}")
    deq = dequantize(qcloud)
    out = {}
    for g in GROUPS:
        a = np.asarray(group_data(cloud, g), dtype=np.float64)
        b = np.asarray(group_data(deq, g), dtype=np.float64)
        out[g] = float(np.mean((a - b) ** 2)) if a.size else 0.0
    return out


@dataclass
class EvalReport:
    psnr_db: float | None
    attribute_mse: dict
    compressed_bytes: int
    uncompressed_bytes: int
    ratio: float
    codebook_active_fraction: dict
    per_camera_psnr: list = field(default_factory=list)

    @property
    def psnr_infinite(self):
        return self.psnr_db is not None and math.isinf(self.psnr_db)

    def to_dict(self):
        d = asdict(self)
        # JSON has no infinity; identical renders are reported through the flag
        d["psnr_infinite"] = self.psnr_infinite
        if self.psnr_infinite:
            d["psnr_db"] = None
        d["per_camera_psnr"] = [None if math.isinf(p) else p for p in self.per_camera_psnr]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self, label="", header=False):
        cols = ["label", "psnr_db", "psnr_infinite", "compressed_bytes", "uncompressed_bytes", "ratio"]
        cols += [f"mse_{g}" for g in GROUPS] + [f"active_{g}" for g in GROUPS]
        row = [label, "" if self.psnr_db is None else self.psnr_db, self.psnr_infinite,
               self.compressed_bytes, self.uncompressed_bytes, self.ratio]
        row += [self.attribute_mse[g] for g in GROUPS]
        row += [self.codebook_active_fraction[g] for g in GROUPS]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(cols)
        writer.writerow(row)
        return buf.getvalue()


def evaluate(original, qcloud, cams=(), background=(0.0, 0.0, 0.0), eight_bit=False, threads=1):
    """Render both clouds from every camera and collect size and distortion figures.

    PSNR is the mean of the per-image dB values; it is ``None`` without cameras.
    """
    sizes = codec.size_report(qcloud)
    hist = qcloud.usage_histograms()
    per_cam = []
    if cams:
        deq = dequantize(qcloud)
        for cam in cams:
            ref = renderer.render(original, cam, background, threads)
            out = renderer.render(deq, cam, background, threads)
            per_cam.append(psnr(ref, out, eight_bit))
    return EvalReport(
        psnr_db=float(np.mean(per_cam)) if per_cam else None,
        attribute_mse=attribute_mse(original, qcloud),
        compressed_bytes=sizes["total"],
        uncompressed_bytes=sizes["uncompressed"],
        ratio=sizes["ratio"],
        codebook_active_fraction={g: float(np.mean(h > 0)) for g, h in hist.items()},
        per_camera_psnr=per_cam,
    )
