"""Reconstruction-quality metrics, feature similarity, image grids, reports.

Images are interpreted in [-1, 1] and remapped to [0, 1] (MAX = 1) inside the
pixel metrics.  SSIM uses a 7x7 uniform window, chosen over the common 11x11
Gaussian for dependency-free exactness at 16x16 scale.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 99.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs capped at 99.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    # remap the difference once: halving [-1,1] values lands in [0,1] units.
    # accumulating in extended precision keeps uniform offsets on their
    # closed-form dB values (plain fp64 pairwise summation drifts an ulp)
    err = float(np.mean(np.square((a - b) / 2.0), dtype=np.longdouble))
    if err == 0.0:
        return PSNR_CAP
    return float(min(-10.0 * np.log10(err), PSNR_CAP))


def _window_means(img, k):
    """Mean over every k x k window (valid positions), per channel."""
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(-2, -1))
    return win.mean(axis=(-2, -1))


def ssim(a, b) -> float:
    """Mean local SSIM over valid 7x7 windows, channel-averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = (a + 1.0) / 2.0
    y = (b + 1.0) / 2.0
    k = SSIM_WINDOW
    mu_x = _window_means(x, k)
    mu_y = _window_means(y, k)
    xx = _window_means(x * x, k) - mu_x * mu_x
    yy = _window_means(y * y, k) - mu_y * mu_y
    xy = _window_means(x * y, k) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2)
    return float(np.mean(num / den))


def image_mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def feature_similarity(z_sub, z_tgt):
    """(mean per-sample cosine, overall mse) between two feature batches."""
    a = np.asarray(z_sub, dtype=np.float64).reshape(len(z_sub), -1)
    b = np.asarray(z_tgt, dtype=np.float64).reshape(len(z_tgt), -1)
    _check_same_shape(a, b)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    keep = (na > 0.0) & (nb > 0.0)
    if not keep.any():
        raise ValueError("every sample has a zero-norm side")
    cos = (a[keep] * b[keep]).sum(axis=1) / (na[keep] * nb[keep])
    cosine = float(np.clip(cos, -1.0, 1.0).mean())
    return cosine, float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------
# PPM grids

def write_grid_ppm(images, cols, path, comment=None):
    """Tile [-1,1] images row-major into a binary P6 PPM (maxval 255)."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError("expected [N,3,H,W] images")
    n, _, h, w = images.shape
    if n < 1 or cols < 1:
        raise ValueError("need at least one image and one column")
    rows = -(-n // cols)
    grid = np.zeros((3, rows * h, cols * w), dtype=np.uint8)
    quant = np.clip(np.round((images.astype(np.float64) + 1.0) * 127.5), 0, 255)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[:, r * h:(r + 1) * h, c * w:(c + 1) * w] = quant[i]
    header = "P6\n"
    if comment:
        header += f"# {comment}\n"
    header += f"{cols * w} {rows * h}\n255\n"
    body = grid.transpose(1, 2, 0).tobytes()  # interleave to RGB rows
    with open(path, "wb") as f:
        f.write(header.encode("ascii") + body)


def read_ppm(path):
    """Parse a binary P6 PPM back to [3, H, W] uint8."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError("not a P6 PPM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).copy()


# ---------------------------------------------------------------------------
# reports

@dataclass
class MetricsReport:
    per_image: list = field(default_factory=list)  # dicts: index, psnr, ssim, mse
    aggregates: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)  # config hash, seed, ...

    @classmethod
    def from_batches(cls, recon, truth, z_sub=None, z_tgt=None, metadata=None):
        rows = []
        for i in range(len(recon)):
            rows.append({"index": i,
                         "psnr": psnr(recon[i], truth[i]),
                         "ssim": ssim(recon[i], truth[i]),
                         "mse": image_mse(recon[i], truth[i])})
        agg = {"mean_psnr": float(np.mean([r["psnr"] for r in rows])),
               "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
               "mean_mse": float(np.mean([r["mse"] for r in rows]))}
        if z_sub is not None and z_tgt is not None:
            cos, fm = feature_similarity(z_sub, z_tgt)
            agg["feature_cosine"] = cos
            agg["feature_mse"] = fm
        return cls(rows, agg, dict(metadata or {}))

    def csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "psnr", "ssim", "mse"])
        for r in self.per_image:
            writer.writerow([r["index"], repr(r["psnr"]), repr(r["ssim"]),
                             repr(r["mse"])])
        return buf.getvalue()

    def json_text(self):
        doc = {"aggregates": self.aggregates, "metadata": self.metadata}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_report(report: MetricsReport, out_dir):
    """Persist per-image rows as CSV and aggregates as a JSON document."""
    import os
    csv_path = os.path.join(str(out_dir), "report.csv")
    json_path = os.path.join(str(out_dir), "report.json")
    with open(csv_path, "w", newline="") as f:
        f.write(report.csv_text())
    with open(json_path, "w") as f:
        f.write(report.json_text())
    return csv_path, json_path
