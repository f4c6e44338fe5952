"""Clinical-printout rasterizer: 3x4 lead grid plus a lead II rhythm strip.

Rendering is a pure integer/array path (no anti-aliasing, no system fonts), so the
same record and config always give byte-identical PNGs.
"""

import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from config import RenderConfig
from errors import DurationError, PanelLookupError, ShapeError
from lab import font
from lab.signal_core import EcgRecord
from logger import get_logger
from utils import config_hash

logger = get_logger("ecglab.render")

STRIP_SECONDS = 10.0
PANEL_SECONDS = 2.5
N_COLUMNS = 4
N_ROWS = 4
BASELINE_FRACTION = 0.6
PNG_COMPRESS_LEVEL = 6

LAYOUT: Tuple[Tuple[str, ...], ...] = (
    ("I", "aVR", "V1", "V4"),
    ("II", "aVL", "V2", "V5"),
    ("III", "aVF", "V3", "V6"),
)
RHYTHM_PANEL = "rhythm"
RHYTHM_LEAD = "II"

WHITE = (255, 255, 255)
TRACE_COLOR = (0, 0, 0)
LABEL_COLOR = (30, 60, 200)
GRID_COLORS = {
    "fine-red": ((255, 192, 192), (255, 128, 128)),
    "coarse-gray": ((225, 225, 225), (170, 170, 170)),
}


@dataclass(eq=False)
class EcgImage:
    pixels: np.ndarray
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ShapeError(f"EcgImage needs an HxWx3 uint8 raster, got {self.pixels.shape} {self.pixels.dtype}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels).save(buf, format="PNG", compress_level=PNG_COMPRESS_LEVEL)
        return buf.getvalue()


@dataclass(frozen=True)
class Layout:
    px_per_mm: int
    width: int
    height: int
    plot_left: int
    plot_top: int
    plot_width: int
    row_height: int
    baseline_offset: int
    boundaries: Tuple[int, ...]

    @property
    def plot_bottom(self) -> int:
        return self.plot_top + N_ROWS * self.row_height


def layout_for(config: RenderConfig) -> Layout:
    ppm = config.px_per_mm
    px_per_s = config.paper_speed * ppm
    plot_width = int(round(STRIP_SECONDS * px_per_s))
    margin = config.margin_mm * ppm
    row_height = config.row_height_mm * ppm
    boundaries = tuple(int(round(k * PANEL_SECONDS * px_per_s)) for k in range(N_COLUMNS + 1))
    return Layout(
        px_per_mm=ppm,
        width=plot_width + 2 * margin,
        height=N_ROWS * row_height + 2 * margin,
        plot_left=margin,
        plot_top=margin,
        plot_width=plot_width,
        row_height=row_height,
        baseline_offset=int(round(BASELINE_FRACTION * config.row_height_mm * ppm)),
        boundaries=boundaries,
    )


def panel_table(layout: Layout) -> Dict[str, Dict]:
    """Panel id -> lead, pixel box (x0, y0, x1, y1) half-open, time window and baseline row."""
    panels = {}
    for row, leads in enumerate(LAYOUT):
        top = layout.plot_top + row * layout.row_height
        for col, lead in enumerate(leads):
            panels[lead] = {
                "lead": lead,
                "box": [
                    layout.plot_left + layout.boundaries[col],
                    top,
                    layout.plot_left + layout.boundaries[col + 1],
                    top + layout.row_height,
                ],
                "window": [col * PANEL_SECONDS, (col + 1) * PANEL_SECONDS],
                "baseline_y": top + layout.baseline_offset,
            }
    top = layout.plot_top + len(LAYOUT) * layout.row_height
    panels[RHYTHM_PANEL] = {
        "lead": RHYTHM_LEAD,
        "box": [layout.plot_left, top, layout.plot_left + layout.boundaries[-1], top + layout.row_height],
        "window": [0.0, STRIP_SECONDS],
        "baseline_y": top + layout.baseline_offset,
    }
    return panels


def _draw_grid(pixels: np.ndarray, layout: Layout, style: str):
    if style not in GRID_COLORS:
        return
    minor, major = GRID_COLORS[style]
    ppm = layout.px_per_mm
    x0, y0 = layout.plot_left, layout.plot_top
    # closing lines sit on x1 and y1; clipped when the margin is zero
    x1 = min(x0 + layout.plot_width + 1, pixels.shape[1])
    y1 = min(layout.plot_bottom + 1, pixels.shape[0])
    xs = np.arange(x0, x1, ppm)
    ys = np.arange(y0, y1, ppm)
    for color, keep in ((minor, lambda k: k % 5 != 0), (major, lambda k: k % 5 == 0)):
        cols = [x for k, x in enumerate(xs) if keep(k)]
        rows = [y for k, y in enumerate(ys) if keep(k)]
        pixels[y0:y1, cols] = color
        pixels[rows, x0:x1] = color


def _label_scale(ppm: int) -> int:
    return max(1, ppm // 4)


def _draw_labels(pixels: np.ndarray, layout: Layout, panels: Dict[str, Dict]):
    scale = _label_scale(layout.px_per_mm)
    for panel in panels.values():
        x0, y0 = panel["box"][:2]
        font.draw_text(pixels, x0 + layout.px_per_mm, y0 + layout.px_per_mm, panel["lead"], LABEL_COLOR, scale)


def _draw_calibration(pixels: np.ndarray, layout: Layout, config: RenderConfig):
    ppm = layout.px_per_mm
    pulse_w = int(round(0.2 * config.paper_speed * ppm))
    pulse_h = int(round(config.gain * ppm))
    x_end = layout.plot_left - ppm
    x_start = max(0, x_end - pulse_w)
    for row in range(N_ROWS):
        base = layout.plot_top + row * layout.row_height + layout.baseline_offset
        top = max(0, base - pulse_h)
        pixels[top : base + 1, x_start] = TRACE_COLOR
        pixels[top : base + 1, x_end] = TRACE_COLOR
        pixels[top, x_start : x_end + 1] = TRACE_COLOR


def _draw_footer(pixels: np.ndarray, layout: Layout, config: RenderConfig, fs: float):
    scale = _label_scale(layout.px_per_mm)
    text = f"{config.paper_speed:g}mm/s {config.gain:g}mm/mV {fs:g}Hz"
    _, text_h = font.text_size(text, scale)
    room = layout.height - layout.plot_bottom
    y = layout.plot_bottom + max(0, (room - text_h) // 2)
    font.draw_text(pixels, layout.plot_left, y, text, LABEL_COLOR, scale)


def _trace_rows(values: np.ndarray, baseline: int, px_per_mv: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column [lo, hi] pixel rows: each column spans to the midpoints with its neighbours."""
    y = baseline - values * px_per_mv
    prev_mid = (np.concatenate([y[:1], y[:-1]]) + y) / 2.0
    next_mid = (np.concatenate([y[1:], y[-1:]]) + y) / 2.0
    lo = np.rint(np.minimum(np.minimum(prev_mid, next_mid), y)).astype(np.int64)
    hi = np.rint(np.maximum(np.maximum(prev_mid, next_mid), y)).astype(np.int64)
    return lo, hi


def _draw_trace(pixels: np.ndarray, panel: Dict, t: np.ndarray, lead: np.ndarray, config: RenderConfig):
    x0, y0, x1, y1 = panel["box"]
    px_per_s = config.paper_speed * config.px_per_mm
    columns = np.arange(x1 - x0)
    col_times = panel["window"][0] + columns / px_per_s
    values = np.interp(col_times, t, lead)
    lo, hi = _trace_rows(values, panel["baseline_y"], config.gain * config.px_per_mm)
    rows = np.arange(y0, y1)[:, None]
    mask = (rows >= lo[None, :]) & (rows <= hi[None, :])
    pixels[y0:y1, x0:x1][mask] = TRACE_COLOR


def render(record: EcgRecord, config: Optional[RenderConfig] = None) -> EcgImage:
    config = config or RenderConfig()
    if record.duration + 1e-9 < STRIP_SECONDS:
        raise DurationError(f"render needs at least {STRIP_SECONDS:g} s of signal, record has {record.duration:g} s")
    record = record.head(STRIP_SECONDS)
    layout = layout_for(config)
    panels = panel_table(layout)

    pixels = np.empty((layout.height, layout.width, 3), dtype=np.uint8)
    pixels[:] = WHITE
    _draw_grid(pixels, layout, config.grid_style)
    if config.show_labels:
        _draw_labels(pixels, layout, panels)
    if config.show_calibration_pulse:
        _draw_calibration(pixels, layout, config)
    if config.show_metadata:
        _draw_footer(pixels, layout, config, record.fs)

    t = np.arange(record.n_samples, dtype=np.float64) / record.fs
    for panel in panels.values():
        _draw_trace(pixels, panel, t, record.lead(panel["lead"]).astype(np.float64), config)

    meta = {
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config),
        "fs": record.fs,
        "size": [layout.width, layout.height],
        "panels": panels,
        "augmentations": [],
    }
    return EcgImage(pixels, meta)


def render_many(records: Sequence[EcgRecord], config: RenderConfig, workers: int = 1) -> List[EcgImage]:
    """Render a batch; results keep input order whatever the worker count."""
    if workers <= 1 or len(records) <= 1:
        return [render(r, config) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: render(r, config), records))


def expected_size(config: RenderConfig) -> Tuple[int, int]:
    """(height, width) of a render under ``config``."""
    layout = layout_for(config)
    return layout.height, layout.width


def extract_centerline(image: EcgImage, panel: str) -> np.ndarray:
    """Per pixel column of ``panel``, the centroid of its darkest trace pixels mapped back to mV."""
    panels = image.meta.get("panels", {})
    if panel not in panels:
        raise PanelLookupError(f"unknown panel '{panel}'; known panels: {', '.join(panels) or 'none'}")
    info = panels[panel]
    config = image.meta["config"]
    x0, y0, x1, y1 = info["box"]
    region = image.pixels[y0:y1, x0:x1].astype(np.int32)

    spread = region.max(axis=2) - region.min(axis=2)
    level = region.mean(axis=2)
    trace = (spread <= 16) & (level < 128)
    darkness = np.where(trace, 255.0 - level, -1.0)
    best = darkness.max(axis=0)
    hits = trace & (darkness == best[None, :])

    rows = np.arange(y0, y1, dtype=np.float64)[:, None]
    counts = hits.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        centroid = (hits * rows).sum(axis=0) / counts
    found = counts > 0
    if not found.any():
        return np.zeros(x1 - x0)
    if not found.all():
        cols = np.arange(x1 - x0)
        centroid = np.interp(cols, cols[found], centroid[found])
    return (info["baseline_y"] - centroid) / (config["gain"] * config["px_per_mm"])


# files -----------------------------------------------------------------------


def sidecar_path(png_path) -> Path:
    path = Path(png_path)
    return path.with_name(path.name + ".json")


def save_image(image: EcgImage, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(image.png_bytes())
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(image.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_image(path) -> EcgImage:
    path = Path(path)
    with Image.open(path) as img:
        pixels = np.array(img.convert("RGB"), dtype=np.uint8)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
    return EcgImage(pixels, meta)
