"""Square-crop geometry, matching the engine's rule bit for bit.

The crop side equals the box's longer edge; the square is centered on the
box, translated to stay inside the image when it fits, and clipped per axis
when the side exceeds the image extent.
"""


class CropError(Exception):
    pass


def square_crop(box, image):
    x1, y1, x2, y2 = (float(v) for v in box)
    w, h = (float(v) for v in image)
    if x2 <= x1 or y2 <= y1:
        raise CropError(f"box {box} has non-positive extent")
    side = max(x2 - x1, y2 - y1)

    def axis(lo, hi, limit):
        center = (lo + hi) / 2.0
        a, b = center - side / 2.0, center + side / 2.0
        if side >= limit:
            return 0.0, limit
        if a < 0.0:
            return 0.0, side
        if b > limit:
            return limit - side, limit
        return a, b

    cx1, cx2 = axis(x1, x2, w)
    cy1, cy2 = axis(y1, y2, h)
    return (cx1, cy1, cx2, cy2)


def pixel_bounds(crop, image):
    """Integer pixel window covering the (float) crop, clamped to the image."""
    import math

    x1, y1, x2, y2 = crop
    w, h = image
    left = max(0, math.floor(x1))
    upper = max(0, math.floor(y1))
    right = min(int(w), math.ceil(x2))
    lower = min(int(h), math.ceil(y2))
    if right <= left or lower <= upper:
        raise CropError(f"crop {crop} collapses to an empty pixel window")
    return left, upper, right, lower
