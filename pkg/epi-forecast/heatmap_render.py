"""PNG rendering of grid heatmaps (rows = window size, columns = horizon)."""

import logging

import numpy as np
from PIL import Image, ImageDraw, ImageFont

log = logging.getLogger(__name__)

CELL = 44
MARGIN_LEFT = 56
MARGIN_TOP = 40
MARGIN_BOTTOM = 36
LOW_COLOR = np.array([33, 49, 140])
HIGH_COLOR = np.array([253, 231, 37])
MISSING_COLOR = (200, 200, 200)


def _color(value, lo, hi):
    if not np.isfinite(value):
        return MISSING_COLOR
    frac = 0.0 if hi <= lo else (value - lo) / (hi - lo)
    rgb = LOW_COLOR + frac * (HIGH_COLOR - LOW_COLOR)
    return tuple(int(round(c)) for c in rgb)


def _text_color(fill):
    # dark text on light cells
    return (0, 0, 0) if sum(fill) > 400 else (255, 255, 255)


def render_heatmap(frame, path, title=""):
    """Write a heatmap frame (index = window sizes, columns horizon_F) to a PNG."""
    values = frame.to_numpy(dtype=np.float64)
    rows, cols = values.shape
    finite = values[np.isfinite(values)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)

    width = MARGIN_LEFT + cols * CELL + 8
    height = MARGIN_TOP + rows * CELL + MARGIN_BOTTOM
    image = Image.new("RGB", (width, height), "white")
    draw = ImageDraw.Draw(image)
    font = ImageFont.load_default()

    draw.text((MARGIN_LEFT, 10), title, fill="black", font=font)
    for r, window in enumerate(frame.index):
        y = MARGIN_TOP + r * CELL
        draw.text((8, y + CELL // 2 - 6), f"l={window}", fill="black", font=font)
        for c in range(cols):
            x = MARGIN_LEFT + c * CELL
            fill = _color(values[r, c], lo, hi)
            draw.rectangle([x, y, x + CELL - 1, y + CELL - 1], fill=fill)
            if np.isfinite(values[r, c]):
                draw.text((x + 3, y + CELL // 2 - 6), f"{values[r, c]:.3g}", fill=_text_color(fill), font=font)
    for c, column in enumerate(frame.columns):
        x = MARGIN_LEFT + c * CELL
        draw.text((x + 3, MARGIN_TOP + rows * CELL + 8), "F=" + str(column).removeprefix("horizon_"), fill="black", font=font)

    image.save(path, format="PNG")
    log.info("rendered %dx%d heatmap to %s", rows, cols, path)
    return path
