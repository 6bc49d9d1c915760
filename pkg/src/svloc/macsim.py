"""Discrete-event simulation of the side-channel TDMA MAC and an unslotted baseline.

Tags blink on a drifting local clock. In TDMA mode the gateway assigns each
tag a base slot (the tag owns that slot plus every stride-th one), broadcasts
time-sync packets on the side channel that zero accumulated drift, and
re-slots tags that collide persistently. In unslotted mode tags free-run at
their blink rate from a random initial phase. A blink is delivered iff no
other blink's airtime overlaps it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml


@dataclass(frozen=True)
class MacConfig:
    n_tags: int
    blink_rate: float = 100.0          # Hz per tag
    slot_width: float = 1e-3           # seconds
    n_slots: int = 1000
    sync_period: float = 100.0         # seconds between sync broadcasts
    clock_ppm: float = 5.0             # per-tag drift drawn uniform in [-ppm, ppm]
    blink_airtime: float = 200e-6      # seconds on air per blink
    sim_duration: float = 1800.0
    mode: str = "tdma"                 # 'tdma' or 'unslotted'
    correction_threshold: int = 3      # consecutive collision frames before re-slot
    sync_loss_prob: float = 0.0        # per-tag probability of missing a sync
    window_s: float = 30.0             # reporting window for the time series
    fault: Optional[tuple] = None      # (time_s, tag_id, base_slot) fault injection

    def __post_init__(self):
        if self.n_tags < 1 or self.n_slots < 1:
            raise ValueError("need at least one tag and one slot")
        if self.mode not in ("tdma", "unslotted"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.slot_width <= 0 or self.blink_rate <= 0 or self.sim_duration <= 0:
            raise ValueError("rates and durations must be positive")
        if self.blink_airtime <= 0 or self.blink_airtime > self.slot_width:
            raise ValueError("blink_airtime must be in (0, slot_width]")
        if self.mode == "tdma":
            if self.n_tags > self.n_slots:
                raise ValueError("n_tags must not exceed n_slots in TDMA mode")
            bpf = self.blink_rate * self.frame_period
            if abs(bpf - round(bpf)) > 1e-9 or round(bpf) < 1:
                raise ValueError("blink_rate must give a whole number of slots per frame")
            if self.n_slots % round(bpf) != 0:
                raise ValueError("n_slots must be divisible by blinks per frame")

    @property
    def frame_period(self) -> float:
        return self.slot_width * self.n_slots

    @property
    def blinks_per_frame(self) -> int:
        return int(round(self.blink_rate * self.frame_period))

    @property
    def stride(self) -> int:
        """Slot stride between a tag's consecutive owned slots."""
        return self.n_slots // self.blinks_per_frame


def load_mac_config(path) -> MacConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    fault = raw.pop("fault", None)
    if fault is not None:
        fault = (float(fault["time_s"]), int(fault["tag_id"]), int(fault["base_slot"]))
    return MacConfig(fault=fault, **raw)


def drift_offset(ppm: float, elapsed: float) -> float:
    """Accumulated clock offset: ppm * 1e-6 * elapsed seconds."""
    return ppm * 1e-6 * elapsed


@dataclass
class GatewayState:
    """Slot table and collision bookkeeping kept by the MAC controller."""

    config: MacConfig
    tag_base: dict = field(default_factory=dict)    # tag -> base slot
    slot_owner: dict = field(default_factory=dict)  # base slot -> tag
    streaks: dict = field(default_factory=dict)     # tag -> consecutive bad frames
    corrections: list = field(default_factory=list)  # (time, tag, old, new)
    rejected: list = field(default_factory=list)

    def free_bases(self):
        return [b for b in range(self.config.stride) if b not in self.slot_owner]


def assign_slot(gw: GatewayState, tag_id: int) -> Optional[int]:
    """Onboard a tag into the lowest free base slot; None when the table is full."""
    free = gw.free_bases()
    if not free:
        gw.rejected.append(tag_id)
        return None
    base = free[0]
    gw.slot_owner[base] = tag_id
    gw.tag_base[tag_id] = base
    gw.streaks[tag_id] = 0
    return base


def detect_and_correct(gw: GatewayState, collision_groups, now: float) -> list:
    """Re-slot tags whose collision streak reached the configured threshold.

    `collision_groups` is this frame's list of colliding tag groups. Within a
    group the lowest tag id stays; offenders move to the lowest free base, or
    swap with an uninvolved tag when the table is full. Returns the moves as
    (tag, old_base, new_base); the caller applies them after one sync-channel
    latency.
    """
    threshold = gw.config.correction_threshold
    involved = set()
    for g in collision_groups:
        involved.update(g)
    for tag in gw.streaks:
        if tag in involved:
            gw.streaks[tag] += 1
        else:
            gw.streaks[tag] = 0

    moves = []
    moved = set()
    for g in sorted(collision_groups, key=min):
        keep = min(g)
        for tag in sorted(g):
            if tag == keep or tag in moved:
                continue
            if gw.streaks.get(tag, 0) < threshold:
                continue
            old = gw.tag_base[tag]
            free = gw.free_bases()
            if free:
                new = free[0]
                del gw.slot_owner[old]
                gw.slot_owner[new] = tag
                gw.tag_base[tag] = new
            else:
                # full table: swap with the lowest-id tag not involved this frame
                partners = [t for t in sorted(gw.tag_base)
                            if t not in involved and t not in moved and t != tag]
                if not partners:
                    continue
                other = partners[0]
                new = gw.tag_base[other]
                gw.tag_base[tag], gw.tag_base[other] = new, old
                gw.slot_owner[new], gw.slot_owner[old] = tag, other
                moved.add(other)
            gw.streaks[tag] = 0
            moved.add(tag)
            moves.append((tag, old, new))
            gw.corrections.append((now, tag, old, new))
    return moves


@dataclass
class MacReport:
    """Per-tag delivery statistics from one simulation run."""

    config: MacConfig
    sent: np.ndarray
    delivered: np.ndarray
    collided: np.ndarray
    window_rows: list                  # (window_start_s, tag_id, ratio)
    collision_log: list                # (time_s, tuple of tags)
    corrections: list                  # (time_s, tag, old_base, new_base)
    max_slot_error: np.ndarray         # per-tag max |clock error| at tx, seconds
    drift_ppm: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        sent = np.maximum(self.sent, 1)
        return self.delivered / sent

    @property
    def overall_success(self) -> float:
        return float(self.delivered.sum() / max(self.sent.sum(), 1))


def _mark_collisions(starts: np.ndarray, airtime: float):
    """Collision mask for equal-length intervals; chains only touch neighbours."""
    order = np.argsort(starts, kind="stable")
    s = starts[order]
    overlap_next = s[1:] < (s[:-1] + airtime)
    collided_sorted = np.zeros(len(s), dtype=bool)
    collided_sorted[:-1] |= overlap_next
    collided_sorted[1:] |= overlap_next
    collided = np.zeros(len(s), dtype=bool)
    collided[order] = collided_sorted
    return collided, order


def _collision_groups(times_sorted, tags_sorted, airtime):
    """Group chained overlapping blinks into (start_time, tags) entries."""
    n = len(times_sorted)
    if n < 2:
        return []
    ov = (times_sorted[1:] < times_sorted[:-1] + airtime).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], ov, [0]])))
    groups = []
    for s, e in zip(edges[::2], edges[1::2]):
        # overlap run [s, e) covers blinks s..e inclusive
        groups.append((float(times_sorted[s]),
                       tuple(sorted(set(int(t) for t in tags_sorted[s:e + 1])))))
    return groups


def _run_tdma(cfg: MacConfig, rng: np.random.Generator) -> MacReport:
    n = cfg.n_tags
    drift = rng.uniform(-cfg.clock_ppm, cfg.clock_ppm, n) * 1e-6
    gw = GatewayState(cfg)
    for tag in range(n):
        assign_slot(gw, tag)

    frame = cfg.frame_period
    n_frames = int(math.floor(cfg.sim_duration / frame + 1e-9))
    sync_every = max(int(round(cfg.sync_period / frame)), 1)
    tx_off = (cfg.slot_width - cfg.blink_airtime) / 2.0

    sent = np.zeros(n, dtype=np.int64)
    delivered = np.zeros(n, dtype=np.int64)
    collided_ct = np.zeros(n, dtype=np.int64)
    max_err = np.zeros(n)
    last_sync = np.zeros(n)
    collision_log = []
    n_windows = int(math.ceil(cfg.sim_duration / cfg.window_s))
    win_sent = np.zeros((n_windows, n), dtype=np.int64)
    win_del = np.zeros((n_windows, n), dtype=np.int64)

    k_idx = np.arange(cfg.blinks_per_frame)
    tag_ids = np.arange(n)
    tx_override = {}  # tag -> base it actually uses (fault injection)
    fault_done = False

    for f in range(n_frames):
        t0 = f * frame
        if f % sync_every == 0:
            got_sync = rng.uniform(size=n) >= cfg.sync_loss_prob
            last_sync[got_sync] = t0

        if cfg.fault is not None and not fault_done and t0 >= cfg.fault[0]:
            _, bad_tag, bad_base = cfg.fault
            tx_override[bad_tag] = bad_base
            fault_done = True

        bases = np.array([tx_override.get(t, gw.tag_base[t]) for t in range(n)])
        slots = bases[:, None] + k_idx[None, :] * cfg.stride    # (n, bpf)
        nominal = t0 + slots * cfg.slot_width + tx_off
        err = drift[:, None] * (nominal - last_sync[:, None])
        starts = (nominal + err).ravel()
        tags = np.repeat(tag_ids, cfg.blinks_per_frame)
        max_err = np.maximum(max_err, np.abs(err).max(axis=1))

        coll, order = _mark_collisions(starts, cfg.blink_airtime)
        sent += cfg.blinks_per_frame
        np.add.at(delivered, tags[~coll], 1)
        np.add.at(collided_ct, tags[coll], 1)
        w = min(int(t0 / cfg.window_s), n_windows - 1)
        win_sent[w] += cfg.blinks_per_frame
        np.add.at(win_del[w], tags[~coll], 1)

        if coll.any():
            groups = _collision_groups(starts[order], tags[order], cfg.blink_airtime)
            collision_log.extend(groups)
            # corrections decided now take effect next frame (side-channel latency)
            moves = detect_and_correct(gw, [g for _, g in groups], now=t0 + frame)
            for tag, _, _ in moves:
                tx_override.pop(tag, None)  # corrected tag obeys its new slot
        else:
            for tag in gw.streaks:
                gw.streaks[tag] = 0

    window_rows = [(w * cfg.window_s, tag, win_del[w, tag] / max(win_sent[w, tag], 1))
                   for w in range(n_windows) for tag in range(n)
                   if win_sent[w, tag] > 0]
    return MacReport(cfg, sent, delivered, collided_ct, window_rows,
                     collision_log, list(gw.corrections), max_err, drift / 1e-6)


def _run_unslotted(cfg: MacConfig, rng: np.random.Generator) -> MacReport:
    n = cfg.n_tags
    drift = rng.uniform(-cfg.clock_ppm, cfg.clock_ppm, n) * 1e-6
    period = 1.0 / cfg.blink_rate
    phases = rng.uniform(0.0, period, n)

    all_times = []
    all_tags = []
    for tag in range(n):
        per = period * (1.0 + drift[tag])
        count = int(math.floor((cfg.sim_duration - phases[tag]) / per)) + 1
        t = phases[tag] + np.arange(count) * per
        t = t[t + cfg.blink_airtime <= cfg.sim_duration]
        all_times.append(t)
        all_tags.append(np.full(len(t), tag, dtype=np.int64))
    starts = np.concatenate(all_times)
    tags = np.concatenate(all_tags)

    coll, order = _mark_collisions(starts, cfg.blink_airtime)
    sent = np.bincount(tags, minlength=n).astype(np.int64)
    delivered = np.bincount(tags[~coll], minlength=n).astype(np.int64)
    collided_ct = sent - delivered

    n_windows = int(math.ceil(cfg.sim_duration / cfg.window_s))
    w_idx = np.minimum((starts / cfg.window_s).astype(int), n_windows - 1)
    win_sent = np.zeros((n_windows, n), dtype=np.int64)
    win_del = np.zeros((n_windows, n), dtype=np.int64)
    np.add.at(win_sent, (w_idx, tags), 1)
    np.add.at(win_del, (w_idx[~coll], tags[~coll]), 1)
    window_rows = [(w * cfg.window_s, tag, win_del[w, tag] / max(win_sent[w, tag], 1))
                   for w in range(n_windows) for tag in range(n)
                   if win_sent[w, tag] > 0]

    groups = _collision_groups(starts[order], tags[order], cfg.blink_airtime)
    return MacReport(cfg, sent, delivered, collided_ct, window_rows, groups,
                     [], np.abs(drift) * cfg.sim_duration, drift / 1e-6)


def run_mac(config: MacConfig, rng: np.random.Generator) -> MacReport:
    """Run the MAC simulation; deterministic for a given generator state."""
    if config.mode == "tdma":
        return _run_tdma(config, rng)
    return _run_unslotted(config, rng)
