"""Image-purchase and labelling-time arithmetic for exhaustive vs sampled counting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

PRICE_PER_SQ_KM = 17.0
IMAGE_PIXELS = 640
GSD_KM = 0.0003
MINUTES_PER_HIT = 43.0
IMAGES_PER_HIT = 100


def image_cost(area: float, price_per_sq_km: float = PRICE_PER_SQ_KM) -> float:
    if area < 0:
        raise ValueError("area must be non-negative")
    return area * price_per_sq_km


def images_to_cover(area: float, image_pixels: int = IMAGE_PIXELS, gsd_km: float = GSD_KM) -> int:
    """Number of square images needed to cover ``area``, rounded up."""
    if not (area > 0 and image_pixels > 0 and gsd_km > 0):
        raise ValueError("area, image_pixels and gsd_km must be positive")
    edge = image_pixels * gsd_km
    ratio = area / (edge * edge)
    # absorb representation error in edge**2 before taking the ceiling
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        return int(nearest)
    return math.ceil(ratio)


def labeling_hours(n_images: float, minutes_per_hit: float = MINUTES_PER_HIT,
                   images_per_hit: int = IMAGES_PER_HIT) -> float:
    if n_images < 0 or minutes_per_hit < 0 or images_per_hit <= 0:
        raise ValueError("inputs must be non-negative and images_per_hit positive")
    return n_images / images_per_hit * minutes_per_hit / 60.0


@dataclass(frozen=True)
class CostReport:
    area: float
    tile_edge_km: float
    percent_sampled: float
    images_total: int
    images_sampled: float
    image_cost_total: float
    image_cost_sampled: float
    image_cost_saved: float
    labeling_hours_total: float
    labeling_hours_sampled: float
    labeling_hours_saved: float

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("region area (km^2)", f"{self.area:,.2f}"),
            ("image edge (km)", f"{self.tile_edge_km:g}"),
            ("percent sampled", f"{self.percent_sampled:g}%"),
            ("images, exhaustive", f"{self.images_total:,}"),
            ("images, sampled", f"{self.images_sampled:,.2f}"),
            ("image cost, exhaustive ($)", f"{self.image_cost_total:,.2f}"),
            ("image cost, sampled ($)", f"{self.image_cost_sampled:,.2f}"),
            ("cost saved on images ($)", f"{self.image_cost_saved:,.2f}"),
            ("labeling hours, exhaustive", f"{self.labeling_hours_total:,.2f}"),
            ("labeling hours, sampled", f"{self.labeling_hours_sampled:,.2f}"),
            ("time saved on labeling (hours)", f"{self.labeling_hours_saved:,.2f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def savings_report(area: float, percent_sampled: float, price_per_sq_km: float = PRICE_PER_SQ_KM,
                   image_pixels: int = IMAGE_PIXELS, gsd_km: float = GSD_KM,
                   minutes_per_hit: float = MINUTES_PER_HIT,
                   images_per_hit: int = IMAGES_PER_HIT) -> CostReport:
    """Compare the exhaustive cost of ``area`` with sampling ``percent_sampled``
    percent of it."""
    if not 0 < percent_sampled <= 100:
        raise ValueError("percent_sampled must lie in (0, 100]")
    frac = percent_sampled / 100.0
    n_total = images_to_cover(area, image_pixels, gsd_km)
    cost_total = image_cost(area, price_per_sq_km)
    hours_total = labeling_hours(n_total, minutes_per_hit, images_per_hit)
    cost_sampled = cost_total * frac
    hours_sampled = hours_total * frac
    return CostReport(
        area=area,
        tile_edge_km=image_pixels * gsd_km,
        percent_sampled=percent_sampled,
        images_total=n_total,
        images_sampled=n_total * frac,
        image_cost_total=cost_total,
        image_cost_sampled=cost_sampled,
        image_cost_saved=cost_total - cost_sampled,
        labeling_hours_total=hours_total,
        labeling_hours_sampled=hours_sampled,
        labeling_hours_saved=hours_total - hours_sampled,
    )
