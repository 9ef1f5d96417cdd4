"""Builders wiring the five SLAM sub-networks into one network spec.

Population layout (default config, 72 bins x 3 levels, 1 place cell):

* head-direction ring (72) with clockwise/counter-clockwise transition
  neurons (2 x 72) and one speed cell per direction,
* sensory and inverse-sensory neurons, one per (bin, level),
* border cells (reference frame transformation) gated by coincidence of a
  head-direction cell and its sensory neuron,
* one place cell per map, map neurons (bin, level) with plastic
  place-to-map synapses and winner-take-all inhibition across levels,
* three level-relay neurons per polarity broadcasting the currently
  observed level to every likelihood window,
* likelihood neurons (one per bin) with an excitatory match branch and an
  inhibitory mismatch branch over a window of neighbouring bins,
* Bayesian neurons whose PASS dendrite forwards the likelihood voltage on
  head-direction spikes, feeding corrections back into the ring.

All builders are pure: they append to a fresh assembly and return handles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import (
    Compartment,
    CompartmentParams,
    Join,
    NetworkSpec,
    NeuronSpec,
    PlasticityRule,
    SynapseSpec,
)

__all__ = [
    "HeadingRing",
    "AttractorParams",
    "SlamConfig",
    "SlamPopulations",
    "build_hd",
    "build_rft",
    "build_dm",
    "build_ol",
    "build_bi",
    "assemble",
]


@dataclass(frozen=True)
class HeadingRing:
    n_bins: int = 72
    resolution: float = 5.0

    def __post_init__(self):
        if abs(self.n_bins * self.resolution - 360.0) > 1e-9:
            raise ValueError(
                f"n_bins*resolution must equal 360, got "
                f"{self.n_bins}*{self.resolution}"
            )

    def heading_of(self, b: int) -> float:
        return (b % self.n_bins) * self.resolution

    def bin_of(self, heading: float) -> int:
        return int(round((heading % 360.0) / self.resolution)) % self.n_bins


@dataclass(frozen=True)
class AttractorParams:
    """Ring attractor tuning: local excitation, global inhibition, shift."""

    excite_weight: float = 0.5
    excite_sigma: float = 2.0       # bins
    excite_cutoff: int = 5          # bins; must stay < n_bins/2
    inhibit_weight: float = 0.08
    threshold: float = 1.0
    voltage_decay: float = 0.0
    shift_weight: float = 0.6


@dataclass(frozen=True)
class SlamConfig:
    ring: HeadingRing = HeadingRing()
    attractor: AttractorParams = AttractorParams()
    n_levels: int = 3
    n_place: int = 1
    window_width: int = 1
    rule: PlasticityRule = PlasticityRule()
    # DM
    border_to_map_weight: float = 1.6
    map_threshold: float = 0.6
    wta_weight: float = -2.0
    # OL
    mismatch_gain: float = 1.2
    ol_threshold: float = 1.2
    ol_voltage_decay: float = 0.3
    # BI
    bi_value_weight: float = 0.4
    bi_value_decay: float = 0.8
    bi_threshold: float = 0.8
    bi_feedback_weight: float = 0.35
    bi_neighbor_weight: float = 0.05
    bi_gate_reach: int = 0
    bi_correction_offset: int = 2
    bi_correction_weight: float = 0.6
    correction_warmup_charge: float = 9000.0
    bi_inhibit_weight: float = -0.02
    ambiguity_threshold: float = 25.0

    def to_dict(self) -> dict:
        return {
            "n_bins": self.ring.n_bins,
            "resolution": self.ring.resolution,
            "attractor": {
                "excite_weight": self.attractor.excite_weight,
                "excite_sigma": self.attractor.excite_sigma,
                "excite_cutoff": self.attractor.excite_cutoff,
                "inhibit_weight": self.attractor.inhibit_weight,
                "threshold": self.attractor.threshold,
                "voltage_decay": self.attractor.voltage_decay,
                "shift_weight": self.attractor.shift_weight,
            },
            "n_levels": self.n_levels,
            "n_place": self.n_place,
            "window_width": self.window_width,
            "rule": {
                "a": self.rule.a, "b": self.rule.b, "k": self.rule.k,
                "tau_x1": self.rule.tau_x1,
                "w_min": self.rule.w_min, "w_max": self.rule.w_max,
            },
            "border_to_map_weight": self.border_to_map_weight,
            "map_threshold": self.map_threshold,
            "wta_weight": self.wta_weight,
            "mismatch_gain": self.mismatch_gain,
            "ol_threshold": self.ol_threshold,
            "ol_voltage_decay": self.ol_voltage_decay,
            "bi_value_weight": self.bi_value_weight,
            "bi_value_decay": self.bi_value_decay,
            "bi_threshold": self.bi_threshold,
            "bi_feedback_weight": self.bi_feedback_weight,
            "bi_neighbor_weight": self.bi_neighbor_weight,
            "bi_gate_reach": self.bi_gate_reach,
            "bi_correction_offset": self.bi_correction_offset,
            "bi_correction_weight": self.bi_correction_weight,
            "correction_warmup_charge": self.correction_warmup_charge,
            "bi_inhibit_weight": self.bi_inhibit_weight,
            "ambiguity_threshold": self.ambiguity_threshold,
        }

    @staticmethod
    def from_overrides(overrides: dict | None) -> "SlamConfig":
        """Build a config from a flat override mapping (unknown keys rejected)."""
        cfg = SlamConfig()
        if not overrides:
            return cfg
        ov = dict(overrides)
        ring = HeadingRing(
            n_bins=int(ov.pop("n_bins", cfg.ring.n_bins)),
            resolution=float(ov.pop("resolution", cfg.ring.resolution)),
        )
        att_kwargs = {}
        for name in ("excite_weight", "excite_sigma", "excite_cutoff",
                     "inhibit_weight", "threshold", "voltage_decay",
                     "shift_weight"):
            if name in ov:
                att_kwargs[name] = ov.pop(name)
        attractor = replace(cfg.attractor, **att_kwargs)
        rule_kwargs = {}
        for name in ("a", "b", "k", "tau_x1", "w_min", "w_max"):
            key = f"rule_{name}"
            if key in ov:
                rule_kwargs[name] = ov.pop(key)
        rule = replace(cfg.rule, **rule_kwargs)
        simple = {}
        for name in ("n_place", "window_width", "border_to_map_weight",
                     "map_threshold", "wta_weight", "mismatch_gain",
                     "ol_threshold", "ol_voltage_decay", "bi_value_weight",
                     "bi_value_decay", "bi_threshold", "bi_feedback_weight",
                     "bi_neighbor_weight", "bi_gate_reach", "bi_correction_offset",
                     "bi_correction_weight", "correction_warmup_charge",
                     "bi_inhibit_weight", "ambiguity_threshold"):
            if name in ov:
                simple[name] = ov.pop(name)
        if ov:
            raise ValueError(f"unknown config overrides: {sorted(ov)}")
        return replace(cfg, ring=ring, attractor=attractor, rule=rule, **simple)


class IdRange:
    """Contiguous neuron id block with optional (bin, level) indexing."""

    def __init__(self, start: int, count: int, n_levels: int = 1):
        self.start = start
        self.count = count
        self.n_levels = n_levels

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, b: int) -> int:
        if not (0 <= b < self.count):
            raise IndexError(b)
        return self.start + b

    def at(self, b: int, l: int = 0) -> int:
        idx = b * self.n_levels + l
        if not (0 <= idx < self.count):
            raise IndexError((b, l))
        return self.start + idx

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.count)


@dataclass
class SlamPopulations:
    ring: HeadingRing
    n_levels: int
    hd: IdRange
    transition_cw: IdRange
    transition_ccw: IdRange
    speed_cw: int
    speed_ccw: int
    sensory: IdRange
    inverse_sensory: IdRange
    relay: IdRange
    inverse_relay: IdRange
    border: IdRange
    place: IdRange
    map: list[IdRange]          # one per place cell
    likelihood: IdRange
    dark: int
    dark_charge: int
    settle: int
    write_protect: int
    bayes: IdRange
    corr_down: IdRange
    corr_up: IdRange
    warmup: int
    corr_gate: int
    corr_arbiter: int
    ambiguity: int
    snap_charge: int
    snap_enable: int
    snap_cw: int
    snap_ccw: int

    @property
    def hd_headings(self) -> np.ndarray:
        return np.array([self.ring.heading_of(b) for b in range(self.ring.n_bins)])

    def summary(self) -> dict:
        def rng(r: IdRange) -> list[int]:
            return [r.start, r.start + r.count]

        return {
            "n_bins": self.ring.n_bins,
            "resolution": self.ring.resolution,
            "n_levels": self.n_levels,
            "hd": rng(self.hd),
            "transition_cw": rng(self.transition_cw),
            "transition_ccw": rng(self.transition_ccw),
            "speed_cw": self.speed_cw,
            "speed_ccw": self.speed_ccw,
            "sensory": rng(self.sensory),
            "inverse_sensory": rng(self.inverse_sensory),
            "relay": rng(self.relay),
            "inverse_relay": rng(self.inverse_relay),
            "border": rng(self.border),
            "place": rng(self.place),
            "map": [rng(m) for m in self.map],
            "likelihood": rng(self.likelihood),
            "bayes": rng(self.bayes),
        }


class _Assembly:
    """Mutable accumulator for neurons and synapses during building."""

    def __init__(self):
        self.neurons: list[NeuronSpec] = []
        self.synapses: list[SynapseSpec] = []

    def add_point(self, population: str, heading: float | None = None,
                  **params) -> int:
        self.neurons.append(
            NeuronSpec.point(CompartmentParams(**params), population, heading)
        )
        return len(self.neurons) - 1

    def add_neuron(self, neuron: NeuronSpec) -> int:
        self.neurons.append(neuron)
        return len(self.neurons) - 1

    def add_block(self, count: int, population: str, n_levels: int = 1,
                  headings=None, **params) -> IdRange:
        start = len(self.neurons)
        for i in range(count):
            h = None if headings is None else float(headings[i])
            self.add_point(population, h, **params)
        return IdRange(start, count, n_levels)

    def connect(self, pre: int, post: int, weight: float, delay: int = 1,
                compartment: int = 0, plastic: bool = False) -> None:
        self.synapses.append(
            SynapseSpec(pre=pre, post=post, post_compartment=compartment,
                        weight=weight, delay=delay, plastic=plastic)
        )


def _fast_comp(threshold: float = 0.5) -> CompartmentParams:
    """One-step coincidence compartment: no memory, low threshold."""
    return CompartmentParams(voltage_decay=0.0, current_decay=0.0,
                             threshold=threshold)


def _and_neuron(population: str, heading: float | None,
                soma_threshold: float,
                child_threshold: float = 0.5,
                child_decay: float = 0.0) -> NeuronSpec:
    """Soma with a two-child AND dendrite pair (children are cids 1 and 2)."""
    soma = Compartment(
        0, None,
        CompartmentParams(threshold=soma_threshold),
        join=Join.AND,
    )
    kid = CompartmentParams(voltage_decay=child_decay, threshold=child_threshold)
    return NeuronSpec(
        compartments=(soma, Compartment(1, 0, kid), Compartment(2, 0, kid)),
        population=population,
        preferred_heading=heading,
    )


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_hd(asm: _Assembly, ring: HeadingRing,
             params: AttractorParams) -> dict:
    """Ring attractor with transition neurons and speed cells.

    Returns handles: hd, transition_cw, transition_ccw, speed_cw, speed_ccw.
    A bump of locally excited cells is self-sustaining; a speed-cell spike
    fires the transition neurons of the active bins, each exciting its
    neighbouring cell, which shifts the bump one bin per spike.
    """
    n = ring.n_bins
    if params.excite_cutoff >= n / 2:
        raise ValueError("excitation kernel width must be < n_bins/2")
    headings = [ring.heading_of(b) for b in range(n)]
    hd = asm.add_block(
        n, "hd", headings=headings,
        voltage_decay=params.voltage_decay, threshold=params.threshold,
    )
    # recurrent kernel: local excitation + uniform global inhibition
    for b in range(n):
        for d in range(-params.excite_cutoff, params.excite_cutoff + 1):
            w = params.excite_weight * math.exp(-(d * d) /
                                                (2 * params.excite_sigma ** 2))
            asm.connect(hd[b], hd[(b + d) % n], w)
        for b2 in range(n):
            asm.connect(hd[b], hd[b2], -params.inhibit_weight)

    speed_cw = asm.add_point("speed_cw", threshold=0.5)
    speed_ccw = asm.add_point("speed_ccw", threshold=0.5)

    def transitions(tag: str, speed: int, shift: int) -> IdRange:
        start = len(asm.neurons)
        for b in range(n):
            nid = asm.add_neuron(_and_neuron(tag, headings[b], soma_threshold=1.5))
            asm.connect(speed, nid, 1.0, compartment=1)
            asm.connect(hd[b], nid, 1.0, compartment=2)
            # push the pattern one bin: boost the neighbour, release own bin
            asm.connect(nid, hd[(b + shift) % n], params.shift_weight)
            asm.connect(nid, hd[b], -params.shift_weight)
        return IdRange(start, n)

    transition_cw = transitions("transition_cw", speed_cw, -1)
    transition_ccw = transitions("transition_ccw", speed_ccw, +1)
    return {
        "hd": hd,
        "transition_cw": transition_cw,
        "transition_ccw": transition_ccw,
        "speed_cw": speed_cw,
        "speed_ccw": speed_ccw,
    }


def build_rft(asm: _Assembly, ring: HeadingRing, n_levels: int,
              hd: IdRange) -> dict:
    """Sensory, inverse-sensory, and border-cell populations.

    Border cell (b, l) is an AND of head-direction cell b and sensory
    neuron (b, l): it can spike only when both are active in the same step.
    """
    n = ring.n_bins
    headings = np.repeat([ring.heading_of(b) for b in range(n)], n_levels)
    sensory = asm.add_block(n * n_levels, "sensory", n_levels=n_levels,
                            headings=headings, threshold=0.5)
    inverse = asm.add_block(n * n_levels, "inverse_sensory", n_levels=n_levels,
                            headings=headings, threshold=0.5)
    start = len(asm.neurons)
    for b in range(n):
        for l in range(n_levels):
            nid = asm.add_neuron(
                _and_neuron("border", ring.heading_of(b), soma_threshold=1.5)
            )
            asm.connect(hd[b], nid, 1.0, compartment=1)
            asm.connect(sensory.at(b, l), nid, 1.0, compartment=2)
    border = IdRange(start, n * n_levels, n_levels)
    return {"sensory": sensory, "inverse_sensory": inverse, "border": border}


def build_dm(asm: _Assembly, ring: HeadingRing, n_levels: int, n_place: int,
             border: IdRange, cfg: SlamConfig) -> dict:
    """Place cells, map neurons, plastic storage, and WTA inhibition.

    The map lives in the plastic place-to-map weights. During learning a
    border spike drives its map neuron over threshold; every post spike
    potentiates the place synapse via the trace rule, and the periodic
    decay gate erodes weights of inconsistently active neurons. Lateral
    inhibition across the levels of one bin keeps a single winner.
    """
    n = ring.n_bins
    place = asm.add_block(n_place, "place", threshold=0.5)
    maps: list[IdRange] = []
    for p in range(n_place):
        start = len(asm.neurons)
        for b in range(n):
            for l in range(n_levels):
                nid = asm.add_point("map", ring.heading_of(b),
                                    threshold=cfg.map_threshold)
                asm.connect(border.at(b, l), nid, cfg.border_to_map_weight)
                asm.connect(place[p], nid, 0.0, plastic=True)
        m = IdRange(start, n * n_levels, n_levels)
        maps.append(m)
        for b in range(n):
            for l in range(n_levels):
                for l2 in range(n_levels):
                    if l2 != l:
                        asm.connect(m.at(b, l), m.at(b, l2), cfg.wta_weight)
    return {"place": place, "map": maps}


def build_ol(asm: _Assembly, ring: HeadingRing, n_levels: int,
             sensory: IdRange, inverse: IdRange, maps: list[IdRange],
             border: IdRange, cfg: SlamConfig) -> dict:
    """Observation likelihood neurons with match and mismatch branches.

    Level-relay neurons broadcast which distance level is (and is not)
    currently observed, pooling the sensory populations across bins. Each
    likelihood neuron b owns one AND pair per (window bin, level) and
    branch: the excitatory branch counts (observed level, learned map)
    coincidences inside the window, the inhibitory branch counts
    (inverse level, learned map) coincidences of the non-observed levels.
    Firing rate is monotone in match minus mismatch.
    """
    n = ring.n_bins
    w = cfg.window_width
    if w >= n / 2:
        raise ValueError("window_width must be < n_bins/2")
    relay = asm.add_block(n_levels, "relay", threshold=0.5)
    inv_relay = asm.add_block(n_levels, "inverse_relay", threshold=0.5)
    for b in range(n):
        for l in range(n_levels):
            asm.connect(sensory.at(b, l), relay[l], 1.0)
            asm.connect(inverse.at(b, l), inv_relay[l], 1.0)

    start = len(asm.neurons)
    pair_kid = _fast_comp()
    for b in range(n):
        comps = [
            Compartment(0, None, CompartmentParams(
                voltage_decay=cfg.ol_voltage_decay, threshold=cfg.ol_threshold)),
            # branch compartments: 1 = match (+1 per coincident pair),
            # 2 = mismatch (negative contribution)
            Compartment(1, 0, _fast_comp(), join=Join.SUM, gain=0.5),
            Compartment(2, 0, _fast_comp(), join=Join.SUM,
                        gain=-0.5 * cfg.mismatch_gain),
        ]
        # (pool neuron, pool child cid, map child cid, window bin, level)
        wiring: list[tuple[int, int, int, int, int]] = []
        cid = 3
        for off in range(-w, w + 1):
            b2 = (b + off) % n
            for l in range(n_levels):
                for branch, pool in ((1, relay), (2, inv_relay)):
                    comps.append(Compartment(cid, branch, _fast_comp(),
                                             join=Join.AND, gain=1.0))
                    comps.append(Compartment(cid + 1, cid, pair_kid))
                    comps.append(Compartment(cid + 2, cid, pair_kid))
                    wiring.append((pool[l], cid + 1, cid + 2, b2, l))
                    cid += 3
        nid = asm.add_neuron(NeuronSpec(tuple(comps), "likelihood",
                                        ring.heading_of(b)))
        for pool_id, c_pool, c_map, b2, l in wiring:
            asm.connect(pool_id, nid, 1.0, compartment=c_pool)
            for m in maps:
                asm.connect(m.at(b2, l), nid, 1.0, compartment=c_map)
    likelihood = IdRange(start, n)

    # Write protection. After a long stretch with no returns the estimate
    # is stale, and letting border activity write the map before the
    # likelihood has pulled the estimate back would smear every stored
    # landmark forward a little on each lap -- the corrections would then
    # converge on the smeared copy instead of the original. A darkness
    # detector (all inverse relays firing at once) charges a leak-free
    # integrator; after ~5 s of darkness it trips a self-sustaining latch
    # that inhibits the whole border population. A settle integrator needs
    # ~1 s of sustained returns to break the latch, which is longer than
    # the correction machinery takes to fire, so learning resumes only
    # once the estimate has been reconciled with the stored map.
    dark = asm.add_point("dark", threshold=n_levels - 0.5)
    for l in range(n_levels):
        asm.connect(inv_relay[l], dark, 1.0)
    dark_charge = asm.add_point("dark_charge", voltage_decay=1.0,
                                threshold=500.0)
    asm.connect(dark, dark_charge, 1.0)
    settle = asm.add_point("settle", voltage_decay=0.99, threshold=60.0)
    for l in range(n_levels):
        asm.connect(relay[l], settle, 1.0)
    write_protect = asm.add_point("write_protect", threshold=0.5)
    asm.connect(dark_charge, write_protect, 1.0)
    asm.connect(write_protect, write_protect, 1.0)
    asm.connect(settle, write_protect, -30.0)
    for b in range(n):
        for l in range(n_levels):
            asm.connect(write_protect, border.at(b, l), -5.0)

    return {"relay": relay, "inverse_relay": inv_relay,
            "likelihood": likelihood, "dark": dark,
            "dark_charge": dark_charge, "settle": settle,
            "write_protect": write_protect}


def build_bi(asm: _Assembly, ring: HeadingRing, hd: IdRange,
             likelihood: IdRange, cfg: SlamConfig,
             transition_cw: IdRange | None = None,
             transition_ccw: IdRange | None = None,
             connect_likelihood: bool = True,
             connect_feedback: bool = True) -> dict:
    """Bayesian neurons: PASS join gated by head-direction spikes.

    The value child integrates the likelihood neuron's spikes into a
    rate-proportional voltage; a head-direction spike on the gate child
    forwards that voltage into the soma. The population projects back
    one-to-one onto the ring plus a weak uniform inhibition, so a
    consistent likelihood re-centers the attractor bump.
    """
    n = ring.n_bins
    start = len(asm.neurons)
    for b in range(n):
        comps = (
            Compartment(0, None, CompartmentParams(
                voltage_decay=0.2, threshold=cfg.bi_threshold), join=Join.PASS),
            Compartment(1, 0, CompartmentParams(
                voltage_decay=cfg.bi_value_decay, threshold=0.5),
                gain=0.5, pass_role="value"),
            Compartment(2, 0, _fast_comp(), pass_role="gate"),
        )
        nid = asm.add_neuron(NeuronSpec(comps, "bayes", ring.heading_of(b)))
        if connect_likelihood:
            asm.connect(likelihood[b], nid, cfg.bi_value_weight, compartment=1)
        for db in range(-cfg.bi_gate_reach, cfg.bi_gate_reach + 1):
            asm.connect(hd[(b + db) % n], nid, 1.0, compartment=2)
        if connect_feedback:
            asm.connect(nid, hd[b], cfg.bi_feedback_weight)
            asm.connect(nid, hd[(b - 1) % n], cfg.bi_neighbor_weight)
            asm.connect(nid, hd[(b + 1) % n], cfg.bi_neighbor_weight)
            for b2 in range(n):
                asm.connect(nid, hd[b2], cfg.bi_inhibit_weight)

    handles = {"bayes": IdRange(start, n)}

    # Warmup gate: corrections must not fight the first sweep of map
    # learning, so they are held silent until the ring has been active for
    # roughly `correction_warmup_steps`. A leak-free integrator charges from
    # the whole ring and, once it trips, kicks a self-sustaining relay that
    # then fires on every step for the rest of the run.
    charge = Compartment(0, None, CompartmentParams(
        voltage_decay=1.0, threshold=cfg.correction_warmup_charge))
    warmup = asm.add_neuron(NeuronSpec((charge,), "warmup", None))
    relay_soma = Compartment(0, None, CompartmentParams(threshold=0.5))
    corr_gate = asm.add_neuron(NeuronSpec((relay_soma,), "corr_gate", None))
    for b in range(n):
        asm.connect(hd[b], warmup, 1.0)
    asm.connect(warmup, corr_gate, 1.0)
    asm.connect(corr_gate, corr_gate, 1.0)
    handles["warmup"] = warmup
    handles["corr_gate"] = corr_gate

    # Correction neurons relocate the bump when the likelihood sits to one
    # side of it and no longer supports the current estimate. The evidence
    # dendrite integrates the likelihood `offset` bins away on its side and
    # is vetoed by activity at the bump itself or on the opposite flank; the
    # gate dendrite requires a sustained head-direction rate *and* the
    # post-warmup relay. An active correction neuron pulls the attractor one
    # bin toward the likelihood on every step it fires.
    off = cfg.bi_correction_offset
    for sgn, tag in ((-1, "corr_down"), (1, "corr_up")):
        cstart = len(asm.neurons)
        for b in range(n):
            comps = (
                Compartment(0, None, CompartmentParams(threshold=1.5),
                            join=Join.AND),
                Compartment(1, 0, CompartmentParams(
                    voltage_decay=0.9, threshold=4.0)),
                Compartment(2, 0, CompartmentParams(
                    voltage_decay=0.9, threshold=16.0)),
            )
            nid = asm.add_neuron(NeuronSpec(comps, tag, ring.heading_of(b)))
            if connect_likelihood:
                asm.connect(likelihood[(b + sgn * off) % n], nid, 2.0,
                            compartment=1)
                # veto on likelihood anywhere between the unit and its
                # evidence bin, at the unit itself, or on the opposite
                # flank: the arc must be detached from the bump, otherwise
                # a unit on the bump's far edge would drag the estimate
                # across its own likelihood plateau.
                asm.connect(likelihood[b], nid, -2.0, compartment=1)
                asm.connect(likelihood[(b - sgn * off) % n], nid, -2.0,
                            compartment=1)
            asm.connect(hd[b], nid, 1.0, compartment=2)
            # bump-extent veto: ring activity well past the evidence bin
            # means the estimate already covers the arc, and a unit on the
            # bump's trailing edge must not drag it further across.
            asm.connect(hd[(b + (off + 1) * sgn) % n], nid, -2.0,
                        compartment=2)
            asm.connect(corr_gate, nid, 1.0, compartment=2)
            if connect_feedback:
                asm.connect(nid, hd[(b + sgn) % n], cfg.bi_correction_weight)
        handles[tag] = IdRange(cstart, n)

    # Conflict arbiter: when the bump sits between two likelihood arcs the
    # two correction populations can both find one-sided evidence and call
    # for relocations in opposite directions, which would shred the bump.
    # Any corr_down spike fires the arbiter, which silences the opposing
    # snap relay so conflicting volleys resolve one-sided. The graded
    # per-bin nudges stay symmetric and unarbitrated.
    arb_soma = Compartment(0, None, CompartmentParams(threshold=0.5))
    arbiter = asm.add_neuron(NeuronSpec((arb_soma,), "corr_arbiter", None))
    for b in range(n):
        asm.connect(handles["corr_down"][b], arbiter, 1.0)
    handles["arbiter"] = arbiter

    # Broad-profile veto: when many likelihood bins are active at once there
    # is no single relocation target (wall-like surroundings light most of
    # the ring), so discrete snaps are disabled and only the graded per-bin
    # nudges act. The integrator tracks the instantaneous count of active
    # likelihood bins and fires whenever the profile is broad.
    amb_soma = Compartment(0, None, CompartmentParams(
        voltage_decay=0.2, threshold=cfg.ambiguity_threshold))
    ambiguity = asm.add_neuron(NeuronSpec((amb_soma,), "ambiguity", None))
    if connect_likelihood:
        for b in range(n):
            asm.connect(likelihood[b], ambiguity, 1.0)
    handles["ambiguity"] = ambiguity

    # A broad profile offers edges on many bins at once, and letting every
    # one of them trigger makes the estimate hunt; damping the correction
    # evidence while the profile is broad keeps the dense-environment
    # regime down to a gentle pull at the strongest edge.
    for tag in ("corr_down", "corr_up"):
        rng = handles[tag]
        for b in range(n):
            asm.connect(ambiguity, rng[b], -1.0, compartment=1)

    # Sticky sparse-profile enable: brief narrow windows occur even in
    # wall-like settings (during occupancy-level changes), so snaps engage
    # only once the profile has stayed narrow for a long stretch. A
    # leak-free charge counts ambiguity-free steps and kicks a
    # self-sustaining relay; any ambiguity spike breaks the relay and sets
    # the count far back.
    en_charge = Compartment(0, None, CompartmentParams(
        voltage_decay=1.0, threshold=150.0))
    snap_charge = asm.add_neuron(NeuronSpec((en_charge,), "snap_charge", None))
    asm.connect(corr_gate, snap_charge, 1.0)
    asm.connect(ambiguity, snap_charge, -5.0)
    en_soma = Compartment(0, None, CompartmentParams(threshold=0.5))
    snap_enable = asm.add_neuron(NeuronSpec((en_soma,), "snap_enable", None))
    asm.connect(snap_charge, snap_enable, 1.0)
    asm.connect(snap_enable, snap_enable, 1.0)
    asm.connect(ambiguity, snap_enable, -30.0)
    handles["snap_charge"] = snap_charge
    handles["snap_enable"] = snap_enable

    # Snap relays: while correction evidence persists and the sparse-profile
    # enable holds, the relay volleys the matching transition population
    # every step, relocating the bump one clean bin per volley.
    for tag, pool, corr in (("snap_cw", transition_cw, handles["corr_down"]),
                            ("snap_ccw", transition_ccw, handles["corr_up"])):
        comps = (
            Compartment(0, None, CompartmentParams(threshold=1.5),
                        join=Join.AND),
            Compartment(1, 0, CompartmentParams(threshold=0.5)),
            Compartment(2, 0, CompartmentParams(threshold=0.5)),
        )
        rid = asm.add_neuron(NeuronSpec(comps, tag, None))
        for b in range(n):
            asm.connect(corr[b], rid, 1.0, compartment=1)
        asm.connect(snap_enable, rid, 1.0, compartment=2)
        asm.connect(ambiguity, rid, -30.0, compartment=2)
        if tag == "snap_ccw":
            asm.connect(arbiter, rid, -30.0, compartment=2)
        if pool is not None:
            for j in range(n):
                asm.connect(rid, pool[j], 1.0, compartment=1)
        handles[tag] = rid
    return handles


def assemble(config: SlamConfig,
             connect_ol_to_bi: bool = True) -> tuple[NetworkSpec, SlamPopulations]:
    """Wire all five sub-networks; returns the spec and population handles.

    ``connect_ol_to_bi=False`` leaves the Bayesian value dendrites without
    likelihood input (the odometry-only ablation).
    """
    asm = _Assembly()
    ring = config.ring
    hd_h = build_hd(asm, ring, config.attractor)
    rft_h = build_rft(asm, ring, config.n_levels, hd_h["hd"])
    dm_h = build_dm(asm, ring, config.n_levels, config.n_place,
                    rft_h["border"], config)
    ol_h = build_ol(asm, ring, config.n_levels, rft_h["sensory"],
                    rft_h["inverse_sensory"], dm_h["map"], rft_h["border"],
                    config)
    bi_h = build_bi(asm, ring, hd_h["hd"], ol_h["likelihood"], config,
                    transition_cw=hd_h["transition_cw"],
                    transition_ccw=hd_h["transition_ccw"],
                    connect_likelihood=connect_ol_to_bi)

    pops = SlamPopulations(
        ring=ring,
        n_levels=config.n_levels,
        hd=hd_h["hd"],
        transition_cw=hd_h["transition_cw"],
        transition_ccw=hd_h["transition_ccw"],
        speed_cw=hd_h["speed_cw"],
        speed_ccw=hd_h["speed_ccw"],
        sensory=rft_h["sensory"],
        inverse_sensory=rft_h["inverse_sensory"],
        relay=ol_h["relay"],
        inverse_relay=ol_h["inverse_relay"],
        border=rft_h["border"],
        place=dm_h["place"],
        map=dm_h["map"],
        likelihood=ol_h["likelihood"],
        dark=ol_h["dark"],
        dark_charge=ol_h["dark_charge"],
        settle=ol_h["settle"],
        write_protect=ol_h["write_protect"],
        bayes=bi_h["bayes"],
        corr_down=bi_h["corr_down"],
        corr_up=bi_h["corr_up"],
        warmup=bi_h["warmup"],
        corr_gate=bi_h["corr_gate"],
        corr_arbiter=bi_h["arbiter"],
        ambiguity=bi_h["ambiguity"],
        snap_charge=bi_h["snap_charge"],
        snap_enable=bi_h["snap_enable"],
        snap_cw=bi_h["snap_cw"],
        snap_ccw=bi_h["snap_ccw"],
    )
    spec = NetworkSpec(neurons=asm.neurons, synapses=asm.synapses,
                       plasticity=config.rule)
    return spec, pops


def expected_neuron_count(config: SlamConfig) -> int:
    """Arithmetic audit of the assembled population sizes."""
    n, L, P = config.ring.n_bins, config.n_levels, config.n_place
    return (
        n            # hd
        + 2          # speed cells
        + 2 * n      # transitions
        + 2 * n * L  # sensory + inverse
        + n * L      # border
        + P          # place
        + P * n * L  # map
        + 2 * L      # relays
        + n          # likelihood
        + 4          # darkness detector, charge, settle, write-protect latch
        + n          # bayes
        + 2          # warmup integrator and relay
        + 2 * n      # correction
        + 1          # correction conflict arbiter
        + 1          # broad-profile ambiguity veto
        + 2          # sparse-profile enable charge and relay
        + 2          # snap relays
    )
