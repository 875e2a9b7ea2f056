"""Running-image reconstruction from event streams, plus MSE/PSNR metrics."""

from __future__ import annotations

import math

import numpy as np

from .events import EMPTY, D_MAX, Event, StreamHeader

PSNR_CAP = 60.0


class Reconstructor:
    """Holds the last expressed value per pixel and updates it per event.

    A pixel keeps its last displayed value until its next event arrives
    (hold-last-value semantics for the open interval).  Events of one pixel
    must arrive in strictly increasing timestamp order; events of different
    pixels may be interleaved arbitrarily.
    """

    def __init__(self, header: StreamHeader):
        self.width = header.width
        self.height = header.height
        self.channels = header.channels
        self.dt_ref = header.dt_ref
        n = self.width * self.height
        self.image = [[0] * n for _ in range(self.channels)]
        self.last_t = [[0] * n for _ in range(self.channels)]

    def apply_event(self, event: Event) -> int:
        """Apply one event; returns the new displayed value of its pixel."""
        if not (0 <= event.x < self.width and 0 <= event.y < self.height):
            raise ValueError(f"event outside image bounds: ({event.x}, {event.y})")
        idx = event.y * self.width + event.x
        chan = event.c
        dt = event.t - self.last_t[chan][idx]
        if dt <= 0:
            raise ValueError(
                f"out-of-order event for pixel ({event.x}, {event.y}): "
                f"t={event.t} after t={self.last_t[chan][idx]}"
            )
        d = event.d
        if d == EMPTY:
            value = 0
        elif 0 <= d <= D_MAX:
            value = int((1 << d) * self.dt_ref / dt + 0.5)
            if value > 255:
                value = 255
        else:
            raise ValueError(f"decimation out of range: {d}")
        self.image[chan][idx] = value
        self.last_t[chan][idx] = event.t
        return value

    def frame_at(self, t: int | None = None) -> np.ndarray:
        """Snapshot of the running image (events with timestamps <= t must
        already be applied; t is documentation of intent, not a filter)."""
        planes = [
            np.asarray(plane, dtype=np.uint8).reshape(self.height, self.width)
            for plane in self.image
        ]
        return planes[0] if self.channels == 1 else np.stack(planes)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 * 255.0 / err))


def reconstruct_at_boundaries(events: list[Event], header: StreamHeader,
                              n_frames: int) -> list[np.ndarray]:
    """Reconstructed image at the end of each of ``n_frames`` frame spans.

    Events are applied in timestamp order (a pixel's own events are already
    mutually ordered, so a stable global sort is safe regardless of emission
    order in the stream).
    """
    recon = Reconstructor(header)
    ordered = sorted(events, key=lambda e: e.t)
    out: list[np.ndarray] = []
    i = 0
    total = len(ordered)
    for k in range(n_frames):
        boundary = (k + 1) * header.dt_ref
        while i < total and ordered[i].t <= boundary:
            recon.apply_event(ordered[i])
            i += 1
        out.append(recon.frame_at(boundary))
    return out
