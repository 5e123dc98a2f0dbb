"""Heat-bath Gibbs sampling and annealed importance sampling for log Z.

Chains are advanced together as rows of one boolean matrix, but every chain
draws its uniforms from its own PCG64 stream spawned from the configured seed,
so a chain's trajectory does not depend on how many chains run beside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import MLNError
from .exact import Evidence, PartitionEstimate
from .grounding import GroundNetwork, assignment_index

GENERATOR = "numpy PCG64, SeedSequence(seed).spawn(chains), one stream per chain"
_BLOCK = 256


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    burn_in: int = 100
    samples: int = 1000
    thinning: int = 1
    chains: int = 4
    ais_ladder: int = 32
    ladder: str = "linear"
    sweeps_per_step: int = 1
    bootstrap: int = 200

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        for name in ("samples", "thinning", "chains", "ais_ladder", "sweeps_per_step", "bootstrap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ladder not in ("linear", "geometric"):
            raise ValueError(f"unknown ladder {self.ladder}")


@dataclass(frozen=True, eq=False)
class ChainState:
    world: np.ndarray
    rng_state: dict
    sweep_count: int = 0

    @classmethod
    def initial(cls, world, seed: int) -> "ChainState":
        return cls(np.asarray(world, dtype=bool).copy(), np.random.PCG64(seed).state, 0)


def _chain_rngs(seed: int, chains: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(chains)]


# ---------------------------------------------------------------------------
# Single-site conditionals
# ---------------------------------------------------------------------------

def conditional_logit(net: GroundNetwork, world, atom_index: int) -> float:
    """log P(x_i=True | rest) - log P(x_i=False | rest) from the Markov blanket."""
    world = np.asarray(world, dtype=bool)
    delta = 0.0
    for c in net.cliques:
        if atom_index not in c.support:
            continue
        base = 0
        bit = 0
        for pos, a in enumerate(c.support):
            if a == atom_index:
                bit = 1 << pos
            elif world[a]:
                base |= 1 << pos
        delta += c.weight * (float(c.sat_table[base | bit]) - float(c.sat_table[base]))
    return delta


def heat_bath_step(net: GroundNetwork, state: ChainState, atom_index: int) -> ChainState:
    """Resample one atom from its exact conditional. Pure: the input state is untouched."""
    if not 0 <= atom_index < net.n:
        raise MLNError(f"atom index {atom_index} out of range")
    bitgen = np.random.PCG64()
    bitgen.state = state.rng_state
    u = np.random.Generator(bitgen).random()
    world = state.world.copy()
    world[atom_index] = u < expit(conditional_logit(net, world, atom_index))
    return ChainState(world, bitgen.state, state.sweep_count)


class _Kernel:
    """Per-atom gain tables so a whole column of chains updates in a few numpy ops."""

    def __init__(self, net: GroundNetwork):
        self.n = net.n
        self.terms: list[list[tuple[list[int], np.ndarray]]] = [[] for _ in range(net.n)]
        for c in net.cliques:
            s = len(c.support)
            idx = np.arange(2 ** s)
            table = c.sat_table.astype(float)
            for pos, a in enumerate(c.support):
                on = table[idx | (1 << pos)]
                off = table[idx & ~(1 << pos)]
                gain = c.weight * (on - off)
                if np.any(gain):
                    self.terms[a].append((list(c.support), gain))
        self.cliques = [(list(c.support), c.weight * c.sat_table.astype(float)) for c in net.cliques]

    def delta(self, worlds: np.ndarray, atom: int) -> np.ndarray:
        d = np.zeros(len(worlds))
        for support, gain in self.terms[atom]:
            d += gain[assignment_index(worlds, support)]
        return d

    def score(self, worlds: np.ndarray) -> np.ndarray:
        s = np.zeros(len(worlds))
        for support, table in self.cliques:
            s += table[assignment_index(worlds, support)]
        return s

    def sweep(self, worlds: np.ndarray, free: Sequence[int], uniforms: np.ndarray, scale: float = 1.0):
        for k, a in enumerate(free):
            p = expit(scale * self.delta(worlds, a))
            worlds[:, a] = uniforms[:, k] < p


# ---------------------------------------------------------------------------
# Gibbs chains
# ---------------------------------------------------------------------------

def run_chains(net: GroundNetwork, evidence: Optional[Mapping], config: SamplerConfig) -> np.ndarray:
    """Sample worlds; returns a (chains * samples, n) boolean array, chain-major."""
    clamp = Evidence(evidence or {}).resolve(net.atom_table)
    free = [i for i in range(net.n) if i not in clamp]
    rngs = _chain_rngs(config.seed, config.chains)
    kernel = _Kernel(net)
    worlds = np.stack([rng.random(net.n) < 0.5 for rng in rngs]) if rngs else np.zeros((0, net.n), bool)
    for i, v in clamp.items():
        worlds[:, i] = v
    out = np.zeros((config.chains, config.samples, net.n), dtype=bool)
    total = config.burn_in + config.samples * config.thinning
    done = 0
    while done < total:
        block = min(_BLOCK, total - done)
        uniforms = np.stack([rng.random((block, len(free))) for rng in rngs])
        for s in range(block):
            kernel.sweep(worlds, free, uniforms[:, s, :])
            done += 1
            after = done - config.burn_in
            if after > 0 and after % config.thinning == 0:
                out[:, after // config.thinning - 1, :] = worlds
    return out.reshape(config.chains * config.samples, net.n)


@dataclass
class MarginalEstimate:
    values: dict
    std_errors: dict
    diagnostics: dict = field(default_factory=dict)


def estimate_marginals(samples: np.ndarray, query_atoms: Optional[Sequence[int]] = None,
                       batches: int = 32) -> MarginalEstimate:
    """Empirical P(atom=True) with batch-means standard errors."""
    samples = np.asarray(samples, dtype=bool)
    if samples.ndim != 2 or len(samples) == 0:
        raise MLNError("no samples")
    atoms = list(range(samples.shape[1])) if query_atoms is None else list(query_atoms)
    b = max(1, min(batches, len(samples)))
    size = len(samples) // b
    values, errors = {}, {}
    for a in atoms:
        col = samples[:, a].astype(float)
        values[a] = float(col.mean())
        if b > 1 and size > 0:
            means = col[: b * size].reshape(b, size).mean(axis=1)
            errors[a] = float(means.std(ddof=1) / math.sqrt(b))
        else:
            errors[a] = float("nan")
    return MarginalEstimate(values, errors, {"samples": len(samples), "batches": b, "batch_size": size})


# ---------------------------------------------------------------------------
# Annealed importance sampling
# ---------------------------------------------------------------------------

def ladder(k_steps: int, kind: str = "linear") -> np.ndarray:
    """Weight-scaling schedule lambda_0 = 0 < ... < lambda_K = 1."""
    if kind == "linear" or k_steps == 1:
        return np.linspace(0.0, 1.0, k_steps + 1)
    tail = 10.0 ** (-3.0 * (k_steps - np.arange(1, k_steps + 1)) / (k_steps - 1))
    return np.concatenate([[0.0], tail])


def _log_mean_exp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.mean(np.exp(x - m))))


def estimate_log_z_ais(net: GroundNetwork, config: SamplerConfig) -> PartitionEstimate:
    """AIS from the uniform (all weights zero) network to the full one."""
    rngs = _chain_rngs(config.seed, config.chains)
    kernel = _Kernel(net)
    lambdas = ladder(config.ais_ladder, config.ladder)
    free = list(range(net.n))
    worlds = np.stack([rng.random(net.n) < 0.5 for rng in rngs])
    log_w = np.zeros(config.chains)
    for k in range(1, len(lambdas)):
        log_w += (lambdas[k] - lambdas[k - 1]) * kernel.score(worlds)
        for _ in range(config.sweeps_per_step):
            uniforms = np.stack([rng.random(len(free)) for rng in rngs])
            kernel.sweep(worlds, free, uniforms, scale=lambdas[k])
    base = net.n * math.log(2.0) + net.log_offset
    log_z = base + _log_mean_exp(log_w)

    boot_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0xB0075])))
    picks = boot_rng.integers(0, config.chains, size=(config.bootstrap, config.chains))
    boot = np.array([_log_mean_exp(log_w[p]) for p in picks])
    std_error = float(boot.std(ddof=1)) if config.bootstrap > 1 else 0.0
    ess = float(math.exp(2 * logsumexp(log_w) - logsumexp(2 * log_w)))
    return PartitionEstimate(float(log_z), "ais", std_error, {
        "generator": GENERATOR, "ladder": config.ladder, "ladder_steps": config.ais_ladder,
        "chains": config.chains, "sweeps_per_step": config.sweeps_per_step,
        "bootstrap": config.bootstrap, "effective_sample_size": ess,
        "estimator": "annealed importance sampling (choice of this package)",
    })
