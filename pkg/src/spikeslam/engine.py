"""Deterministic discrete-time spiking network engine.

Neurons are current-based leaky integrate-and-fire somas with optional trees
of dendritic compartments. A compartment combines the contributions of its
children with one of three join operations:

* ``SUM``  -- children add their (gain-scaled) voltages to the parent input.
* ``AND``  -- exactly two children; they contribute only on steps where both
  sit at or above their activation thresholds simultaneously.
* ``PASS`` -- one value child and one gate child; the value child's voltage
  is forwarded only on steps where the gate child receives a spike.

Synapses carry an integer delay of at least one step, so the update order
inside a step is unambiguous and two runs from the same compiled spec and
input schedule produce identical spike rasters.

``voltage_decay`` / ``current_decay`` are retention factors: the fraction of
the state carried over to the next step (0.9 means v(n) = 0.9**n under pure
leak).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Join",
    "CompartmentParams",
    "Compartment",
    "NeuronSpec",
    "SynapseSpec",
    "PlasticityRule",
    "SynapseState",
    "NetworkSpec",
    "SpikeRaster",
    "Engine",
    "compile",
    "apply_plasticity",
    "record",
    "spec_to_json",
    "spec_from_json",
]


class Join(str, Enum):
    SUM = "sum"
    AND = "and"
    PASS = "pass"


class NetworkSpecError(ValueError):
    """Raised when a network spec violates a structural invariant."""


@dataclass(frozen=True)
class CompartmentParams:
    """Per-compartment dynamics.

    voltage_decay / current_decay are the retained fraction per step, in
    [0, 1]. ``threshold`` is the spike threshold for somas and the
    activation threshold for dendritic compartments (used by AND joins).
    ``refractory`` only applies to somas.
    """

    voltage_decay: float = 0.0
    current_decay: float = 0.0
    threshold: float = 1.0
    refractory: int = 0
    bias: float = 0.0

    def validate(self) -> None:
        if not (0.0 <= self.voltage_decay <= 1.0):
            raise NetworkSpecError(f"voltage_decay {self.voltage_decay} not in [0,1]")
        if not (0.0 <= self.current_decay <= 1.0):
            raise NetworkSpecError(f"current_decay {self.current_decay} not in [0,1]")
        if self.threshold <= 0.0:
            raise NetworkSpecError("threshold must be > 0")
        if self.refractory < 0:
            raise NetworkSpecError("refractory must be >= 0")


@dataclass(frozen=True)
class Compartment:
    """One node of a neuron's compartment tree.

    ``cid`` is local to the neuron; the soma is cid 0 with parent None.
    ``join`` states how this compartment combines its children. ``gain``
    scales this compartment's contribution into its parent. ``pass_role``
    marks children of a PASS parent as "value" or "gate".
    """

    cid: int
    parent: int | None
    params: CompartmentParams
    join: Join = Join.SUM
    gain: float = 1.0
    pass_role: str | None = None


@dataclass(frozen=True)
class NeuronSpec:
    compartments: tuple[Compartment, ...]
    population: str = ""
    preferred_heading: float | None = None

    @staticmethod
    def point(params: CompartmentParams, population: str = "",
              preferred_heading: float | None = None) -> "NeuronSpec":
        """Single-compartment neuron (soma only)."""
        return NeuronSpec(
            compartments=(Compartment(0, None, params),),
            population=population,
            preferred_heading=preferred_heading,
        )


@dataclass(frozen=True)
class SynapseSpec:
    pre: int
    post: int
    post_compartment: int = 0
    weight: float = 1.0
    delay: int = 1
    plastic: bool = False


@dataclass(frozen=True)
class PlasticityRule:
    """Trace-based Hebbian rule with a periodic decay gate.

    On every step each plastic synapse updates
    ``w += a * x1 * y0 - b * u_k`` (clamped to [w_min, w_max]) where ``x1``
    is the pre-synaptic trace, ``y0`` is 1 on steps where the post neuron
    spiked, and ``u_k`` is a global gate that is 1 on every k-th step.
    """

    a: float = 0.15
    b: float = 0.02
    k: int = 50
    tau_x1: float = 20.0
    w_min: float = 0.0
    w_max: float = 1.0

    def validate(self) -> None:
        if self.a <= 0:
            raise NetworkSpecError("potentiation gain a must be > 0")
        if self.b < 0:
            raise NetworkSpecError("decay gain b must be >= 0")
        if self.k <= 0:
            raise NetworkSpecError("decay period k must be > 0")
        if self.tau_x1 <= 0:
            raise NetworkSpecError("tau_x1 must be > 0")
        if self.w_min > self.w_max:
            raise NetworkSpecError("w_min must be <= w_max")


@dataclass(frozen=True)
class SynapseState:
    """Mutable per-synapse learning state (weight and pre-trace)."""

    w: float
    x1: float = 0.0


def apply_plasticity(syn: SynapseState, rule: PlasticityRule,
                     y0: int, u_k: int) -> SynapseState:
    """One plasticity update: w' = clamp(w + a*x1*y0 - b*u_k)."""
    if syn.x1 < 0:
        raise ValueError("pre-synaptic trace x1 must be >= 0")
    w = syn.w + rule.a * syn.x1 * y0 - rule.b * u_k
    w = min(max(w, rule.w_min), rule.w_max)
    return SynapseState(w=w, x1=syn.x1)


@dataclass
class NetworkSpec:
    neurons: list[NeuronSpec] = field(default_factory=list)
    synapses: list[SynapseSpec] = field(default_factory=list)
    plasticity: PlasticityRule | None = None

    @property
    def n_neurons(self) -> int:
        return len(self.neurons)


@dataclass
class SpikeRaster:
    """Time-ordered record of spike events."""

    steps: np.ndarray          # int array, sorted ascending
    neuron_ids: np.ndarray     # int array, parallel to steps
    step_count: int
    neuron_count: int
    populations: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def counts(self, neuron_ids: Sequence[int] | np.ndarray,
               t_lo: int = 0, t_hi: int | None = None) -> np.ndarray:
        """Spike counts per requested neuron over the step window [t_lo, t_hi)."""
        if t_hi is None:
            t_hi = self.step_count
        ids = np.asarray(neuron_ids)
        mask = (self.steps >= t_lo) & (self.steps < t_hi)
        full = np.bincount(self.neuron_ids[mask], minlength=self.neuron_count)
        return full[ids]

    def to_csv(self, path) -> None:
        pops = self.populations or [""] * self.neuron_count
        lines = ["step,neuron_id,population_tag"]
        lines.extend(
            f"{s},{n},{pops[n]}" for s, n in zip(self.steps, self.neuron_ids)
        )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def from_csv(path) -> "SpikeRaster":
        steps: list[int] = []
        ids: list[int] = []
        pops: dict[int, str] = {}
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("step,neuron_id"):
                raise ValueError(f"not a raster CSV: {path}")
            for line in fh:
                s, n, tag = line.rstrip("\n").split(",")
                steps.append(int(s))
                ids.append(int(n))
                pops[int(n)] = tag
        n_neurons = max(pops) + 1 if pops else 0
        populations = [pops.get(i, "") for i in range(n_neurons)]
        step_arr = np.asarray(steps, dtype=np.int64)
        return SpikeRaster(
            steps=step_arr,
            neuron_ids=np.asarray(ids, dtype=np.int64),
            step_count=int(step_arr[-1]) + 1 if len(step_arr) else 0,
            neuron_count=n_neurons,
            populations=populations,
        )


def _validate_neuron(idx: int, neuron: NeuronSpec) -> None:
    comps = neuron.compartments
    if not comps:
        raise NetworkSpecError(f"neuron {idx}: no compartments")
    if comps[0].cid != 0 or comps[0].parent is not None:
        raise NetworkSpecError(f"neuron {idx}: compartment 0 must be the root soma")
    by_id = {c.cid: c for c in comps}
    if len(by_id) != len(comps):
        raise NetworkSpecError(f"neuron {idx}: duplicate compartment ids")
    children: dict[int, list[Compartment]] = {c.cid: [] for c in comps}
    for c in comps:
        c.params.validate()
        if c.parent is None:
            continue
        if c.parent not in by_id:
            raise NetworkSpecError(f"neuron {idx}: compartment {c.cid} has unknown parent")
        children[c.parent].append(c)
    # acyclicity / single root: walk each compartment up to the soma
    for c in comps:
        seen = set()
        node = c
        while node.parent is not None:
            if node.cid in seen:
                raise NetworkSpecError(f"neuron {idx}: cycle in dendrite tree")
            seen.add(node.cid)
            node = by_id[node.parent]
    for c in comps:
        kids = children[c.cid]
        if c.join == Join.AND and len(kids) not in (0, 2):
            raise NetworkSpecError(
                f"neuron {idx}: AND compartment {c.cid} needs exactly 2 children"
            )
        if c.join == Join.PASS:
            roles = sorted(k.pass_role or "" for k in kids)
            if roles != ["gate", "value"]:
                raise NetworkSpecError(
                    f"neuron {idx}: PASS compartment {c.cid} needs one value "
                    "child and one gate child"
                )


class Engine:
    """Compiled, steppable network state. Single-threaded during stepping."""

    def __init__(self, spec: NetworkSpec):
        for i, neuron in enumerate(spec.neurons):
            _validate_neuron(i, neuron)
        self.spec = spec
        self.n_neurons = len(spec.neurons)
        self.populations = [n.population for n in spec.neurons]
        self.preferred_headings = np.array(
            [n.preferred_heading if n.preferred_heading is not None else np.nan
             for n in spec.neurons]
        )

        # ---- flatten compartments -------------------------------------
        comp_index: dict[tuple[int, int], int] = {}
        lam_v, lam_i, thr, bias = [], [], [], []
        parent_flat: list[int] = []
        gain: list[float] = []
        join_of: list[Join] = []
        pass_role: list[str | None] = []
        neuron_of: list[int] = []
        soma_idx = np.zeros(self.n_neurons, dtype=np.int64)
        refractory = np.zeros(self.n_neurons, dtype=np.int64)

        for nid, neuron in enumerate(spec.neurons):
            for comp in neuron.compartments:
                comp_index[(nid, comp.cid)] = len(lam_v)
                lam_v.append(comp.params.voltage_decay)
                lam_i.append(comp.params.current_decay)
                thr.append(comp.params.threshold)
                bias.append(comp.params.bias)
                gain.append(comp.gain)
                join_of.append(comp.join)
                pass_role.append(comp.pass_role)
                neuron_of.append(nid)
                parent_flat.append(-1)  # filled below
            soma_idx[nid] = comp_index[(nid, 0)]
            refractory[nid] = neuron.compartments[0].params.refractory

        for nid, neuron in enumerate(spec.neurons):
            for comp in neuron.compartments:
                if comp.parent is not None:
                    parent_flat[comp_index[(nid, comp.cid)]] = comp_index[
                        (nid, comp.parent)
                    ]

        self.n_comps = len(lam_v)
        self._lam_v = np.asarray(lam_v)
        self._lam_i = np.asarray(lam_i)
        self._thr = np.asarray(thr)
        self._bias = np.asarray(bias)
        self._parent = np.asarray(parent_flat, dtype=np.int64)
        self._neuron_of = np.asarray(neuron_of, dtype=np.int64)
        self._soma = soma_idx
        self._refractory = refractory
        self._soma_thr = self._thr[soma_idx]

        depth = np.zeros(self.n_comps, dtype=np.int64)
        for c in range(self.n_comps):
            d, p = 0, self._parent[c]
            while p >= 0:
                d += 1
                p = self._parent[p]
            depth[c] = d
        self._max_depth = int(depth.max()) if self.n_comps else 0

        # group children by depth and by the parent's join kind
        self._levels: list[dict[str, np.ndarray]] = []
        parent_join = np.array(
            [join_of[p].value if p >= 0 else "" for p in self._parent], dtype=object
        )
        for d in range(self._max_depth, 0, -1):
            at_d = np.nonzero(depth == d)[0]
            lvl: dict[str, np.ndarray] = {"comps": at_d}
            sum_mask = parent_join[at_d] == Join.SUM.value
            lvl["sum_child"] = at_d[sum_mask]
            lvl["sum_parent"] = self._parent[at_d[sum_mask]]

            and_parents = np.unique(self._parent[at_d[parent_join[at_d] == Join.AND.value]])
            a1, a2, ap = [], [], []
            for p in and_parents:
                kids = at_d[self._parent[at_d] == p]
                a1.append(kids[0])
                a2.append(kids[1])
                ap.append(p)
            lvl["and_c1"] = np.asarray(a1, dtype=np.int64)
            lvl["and_c2"] = np.asarray(a2, dtype=np.int64)
            lvl["and_parent"] = np.asarray(ap, dtype=np.int64)

            pass_parents = np.unique(self._parent[at_d[parent_join[at_d] == Join.PASS.value]])
            pv, pg, pp = [], [], []
            for p in pass_parents:
                kids = at_d[self._parent[at_d] == p]
                roles = {pass_role[k]: k for k in kids}
                pv.append(roles["value"])
                pg.append(roles["gate"])
                pp.append(p)
            lvl["pass_value"] = np.asarray(pv, dtype=np.int64)
            lvl["pass_gate"] = np.asarray(pg, dtype=np.int64)
            lvl["pass_parent"] = np.asarray(pp, dtype=np.int64)
            self._levels.append(lvl)
        self._gain = np.asarray(gain)

        # ---- synapses ---------------------------------------------------
        max_delay = 1
        post_comp: list[int] = []
        for s in spec.synapses:
            if s.delay < 1:
                raise NetworkSpecError("delay >= 1 required")
            if not (0 <= s.pre < self.n_neurons):
                raise NetworkSpecError(f"dangling synapse pre endpoint {s.pre}")
            key = (s.post, s.post_compartment)
            if key not in comp_index:
                raise NetworkSpecError(f"dangling synapse post endpoint {key}")
            post_comp.append(comp_index[key])
            max_delay = max(max_delay, s.delay)

        n_syn = len(spec.synapses)
        order = np.argsort([s.pre for s in spec.synapses], kind="stable")
        self._syn_pre = np.asarray([spec.synapses[i].pre for i in order], dtype=np.int64)
        self._syn_post = np.asarray([post_comp[i] for i in order], dtype=np.int64)
        self._syn_w = np.asarray([spec.synapses[i].weight for i in order])
        self._syn_delay = np.asarray([spec.synapses[i].delay for i in order], dtype=np.int64)
        self._syn_plastic = np.asarray([spec.synapses[i].plastic for i in order], dtype=bool)
        counts = np.bincount(self._syn_pre, minlength=self.n_neurons) if n_syn else \
            np.zeros(self.n_neurons, dtype=np.int64)
        self._syn_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._plastic_idx = np.nonzero(self._syn_plastic)[0]
        self._plastic_post_neuron = self._neuron_of[self._syn_post[self._plastic_idx]]
        self._plastic_pre = self._syn_pre[self._plastic_idx]
        self._x1 = np.zeros(len(self._plastic_idx))
        if spec.plasticity is not None:
            spec.plasticity.validate()
            self._trace_decay = math.exp(-1.0 / spec.plasticity.tau_x1)
        else:
            self._trace_decay = 0.0
        if len(self._plastic_idx) and spec.plasticity is None:
            raise NetworkSpecError("plastic synapses present but no plasticity rule")

        self._max_delay = max_delay
        self._buf = np.zeros((max_delay, self.n_comps))
        self._v = np.zeros(self.n_comps)
        self._i = np.zeros(self.n_comps)
        self._refr_count = np.zeros(self.n_neurons, dtype=np.int64)
        self.t = 0

    # -- accessors --------------------------------------------------------
    @property
    def plastic_weights(self) -> np.ndarray:
        """Current weights of plastic synapses, in spec order (copy)."""
        return self._syn_w[self._plastic_idx].copy()

    @property
    def plastic_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """(pre neuron ids, post neuron ids) of plastic synapses."""
        return self._plastic_pre.copy(), self._plastic_post_neuron.copy()

    def soma_voltage(self, nid: int) -> float:
        return float(self._v[self._soma[nid]])

    def compartment_voltage(self, nid: int, cid: int) -> float:
        base = self._soma[nid]   # soma is first compartment of the neuron
        return float(self._v[base + cid])

    # -- stepping -----------------------------------------------------------
    def step(self, external_inputs: Iterable[tuple[int, float]] = ()) -> np.ndarray:
        """Advance one step; returns the array of neuron ids that spiked."""
        slot = self.t % self._max_delay
        delivered = self._buf[slot].copy()
        self._buf[slot] = 0.0
        for nid, cur in external_inputs:
            if not (0 <= nid < self.n_neurons):
                raise IndexError(f"external input to unknown neuron {nid}")
            delivered[self._soma[nid]] += cur

        contrib = np.zeros(self.n_comps)
        for lvl in self._levels:
            comps = lvl["comps"]
            self._i[comps] = self._i[comps] * self._lam_i[comps] + \
                delivered[comps] + contrib[comps]
            self._v[comps] = self._v[comps] * self._lam_v[comps] + \
                self._i[comps] + self._bias[comps]

            sc, sp = lvl["sum_child"], lvl["sum_parent"]
            if len(sc):
                np.add.at(contrib, sp, self._gain[sc] * self._v[sc])
            c1, c2, ap = lvl["and_c1"], lvl["and_c2"], lvl["and_parent"]
            if len(ap):
                both = (self._v[c1] >= self._thr[c1]) & (self._v[c2] >= self._thr[c2])
                amount = (self._gain[c1] * self._v[c1] +
                          self._gain[c2] * self._v[c2]) * both
                np.add.at(contrib, ap, amount)
            pv, pg, pp = lvl["pass_value"], lvl["pass_gate"], lvl["pass_parent"]
            if len(pp):
                gate_open = delivered[pg] > 0.0
                np.add.at(contrib, pp, self._gain[pv] * self._v[pv] * gate_open)

        soma = self._soma
        refr = self._refr_count > 0
        active = ~refr
        s_act = soma[active]
        self._i[s_act] = self._i[s_act] * self._lam_i[s_act] + \
            delivered[s_act] + contrib[s_act]
        self._v[s_act] = self._v[s_act] * self._lam_v[s_act] + \
            self._i[s_act] + self._bias[s_act]
        self._v[soma[refr]] = 0.0
        self._i[soma[refr]] = 0.0
        self._refr_count[refr] -= 1

        v_soma = self._v[soma]
        spiked = np.nonzero(active & (v_soma >= self._soma_thr))[0]
        self._v[soma[spiked]] = 0.0
        self._refr_count[spiked] = self._refractory[spiked]

        # enqueue outgoing spikes (weights as of this step)
        if len(spiked) and len(self._syn_pre):
            starts = self._syn_start[spiked]
            ends = self._syn_start[spiked + 1]
            lens = ends - starts
            if lens.sum():
                idx = np.repeat(starts, lens) + (
                    np.arange(lens.sum()) -
                    np.repeat(np.concatenate([[0], np.cumsum(lens)[:-1]]), lens)
                )
                slots = (self.t + self._syn_delay[idx]) % self._max_delay
                np.add.at(self._buf, (slots, self._syn_post[idx]), self._syn_w[idx])

        # traces, then plasticity
        if len(self._plastic_idx):
            rule = self.spec.plasticity
            self._x1 *= self._trace_decay
            if len(spiked):
                pre_spiked = np.isin(self._plastic_pre, spiked)
                self._x1[pre_spiked] = 1.0
            y0 = np.zeros(len(self._plastic_idx))
            if len(spiked):
                y0 = np.isin(self._plastic_post_neuron, spiked).astype(float)
            u_k = 1.0 if (self.t % rule.k) == rule.k - 1 else 0.0
            w = self._syn_w[self._plastic_idx]
            w = np.clip(w + rule.a * self._x1 * y0 - rule.b * u_k,
                        rule.w_min, rule.w_max)
            self._syn_w[self._plastic_idx] = w

        self.t += 1
        return spiked


def compile(spec: NetworkSpec) -> Engine:  # noqa: A001 - spec-facing name
    """Compile a network spec into a fresh engine state (pure)."""
    return Engine(spec)


def record(engine: Engine, steps: int,
           input_schedule: Callable[[int], Iterable[tuple[int, float]]]
           | dict[int, list[tuple[int, float]]] | None = None) -> SpikeRaster:
    """Run ``steps`` steps, collecting all spikes into a raster."""
    t0 = engine.t
    all_steps: list[np.ndarray] = []
    all_ids: list[np.ndarray] = []
    for k in range(steps):
        if input_schedule is None:
            ext: Iterable[tuple[int, float]] = ()
        elif callable(input_schedule):
            ext = input_schedule(k)
        else:
            ext = input_schedule.get(k, ())
        spiked = engine.step(ext)
        if len(spiked):
            all_ids.append(spiked)
            all_steps.append(np.full(len(spiked), k, dtype=np.int64))
    steps_arr = np.concatenate(all_steps) if all_steps else np.empty(0, dtype=np.int64)
    ids_arr = np.concatenate(all_ids) if all_ids else np.empty(0, dtype=np.int64)
    del t0
    return SpikeRaster(
        steps=steps_arr,
        neuron_ids=ids_arr,
        step_count=steps,
        neuron_count=engine.n_neurons,
        populations=list(engine.populations),
    )


# ---------------------------------------------------------------------------
# JSON import/export of NetworkSpec (field-for-field)
# ---------------------------------------------------------------------------

def _comp_to_dict(c: Compartment) -> dict:
    return {
        "cid": c.cid,
        "parent": c.parent,
        "params": {
            "voltage_decay": c.params.voltage_decay,
            "current_decay": c.params.current_decay,
            "threshold": c.params.threshold,
            "refractory": c.params.refractory,
            "bias": c.params.bias,
        },
        "join": c.join.value,
        "gain": c.gain,
        "pass_role": c.pass_role,
    }


def spec_to_json(spec: NetworkSpec) -> str:
    doc = {
        "neurons": [
            {
                "compartments": [_comp_to_dict(c) for c in n.compartments],
                "population": n.population,
                "preferred_heading": n.preferred_heading,
            }
            for n in spec.neurons
        ],
        "synapses": [
            {
                "pre": s.pre,
                "post": s.post,
                "post_compartment": s.post_compartment,
                "weight": s.weight,
                "delay": s.delay,
                "plastic": s.plastic,
            }
            for s in spec.synapses
        ],
        "plasticity": None if spec.plasticity is None else {
            "a": spec.plasticity.a,
            "b": spec.plasticity.b,
            "k": spec.plasticity.k,
            "tau_x1": spec.plasticity.tau_x1,
            "w_min": spec.plasticity.w_min,
            "w_max": spec.plasticity.w_max,
        },
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def spec_from_json(text: str) -> NetworkSpec:
    doc = json.loads(text)
    neurons = [
        NeuronSpec(
            compartments=tuple(
                Compartment(
                    cid=c["cid"],
                    parent=c["parent"],
                    params=CompartmentParams(**c["params"]),
                    join=Join(c["join"]),
                    gain=c["gain"],
                    pass_role=c["pass_role"],
                )
                for c in n["compartments"]
            ),
            population=n["population"],
            preferred_heading=n["preferred_heading"],
        )
        for n in doc["neurons"]
    ]
    synapses = [SynapseSpec(**s) for s in doc["synapses"]]
    rule = None if doc["plasticity"] is None else PlasticityRule(**doc["plasticity"])
    return NetworkSpec(neurons=neurons, synapses=synapses, plasticity=rule)
