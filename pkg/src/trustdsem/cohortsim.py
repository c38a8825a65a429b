"""Synthetic human-AI cohorts driven by a rational trust-updating agent.

Each participant's trust is an exponential moving average of observed AI
outcomes, optionally pulled toward the true AI performance when a
calibration cue is shown. Over/under-trust labels compare trust with the
true AI performance under a margin.

Participant ``i`` draws from ``np.random.SeedSequence(seed, spawn_key=(i,))``,
so each series depends only on (config, params, seed, i) and generation order
does not matter.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from trustdsem.pathmodel import (
    AIP,
    CUE,
    HP,
    OVER_UNDER,
    PAPER_VARIABLES,
    RELIANCE,
    TRUST,
    PanelDataset,
    ParticipantSeries,
)

HIGH_AIP = 0.9
LOW_AIP = 0.3
CUE_POLICIES = ("none", "on_detected_overtrust")


@dataclass(frozen=True)
class AgentParams:
    learning_rate: float = 0.3
    cue_rate: float = 0.7
    decision_noise: float = 0.05
    label_margin: float = 0.1

    def __post_init__(self):
        if not 0 <= self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not 0 <= self.cue_rate <= 1:
            raise ValueError("cue_rate must lie in [0, 1]")
        if not 0 <= self.decision_noise < 0.5:
            raise ValueError("decision_noise must lie in [0, 0.5)")
        if not 0 < self.label_margin < 0.5:
            raise ValueError("label_margin must lie in (0, 0.5)")


@dataclass(frozen=True)
class CohortConfig:
    n_participants: int = 194
    phases: tuple[tuple[int, float], ...] = ((15, HIGH_AIP), (15, LOW_AIP))
    hp: float = 0.6
    hp_spread: float = 0.1  # half-width of the uniform per-participant HP draw
    initial_trust: float = 0.5
    cue_policy: str = "on_detected_overtrust"
    fraction_with_cues: float = 96 / 192
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple((int(n), float(a)) for n, a in self.phases))
        if self.n_participants < 1:
            raise ValueError("n_participants must be positive")
        if not self.phases:
            raise ValueError("at least one phase is required")
        for length, level in self.phases:
            if length < 1:
                raise ValueError("phase lengths must be >= 1")
            if not 0 <= level <= 1:
                raise ValueError("AIP levels must lie in [0, 1]")
        if not (0 <= self.hp - self.hp_spread and self.hp + self.hp_spread <= 1 and self.hp_spread >= 0):
            raise ValueError("HP range must lie inside [0, 1]")
        if not 0 <= self.initial_trust <= 1:
            raise ValueError("initial_trust must lie in [0, 1]")
        if self.cue_policy not in CUE_POLICIES:
            raise ValueError(f"cue_policy must be one of {CUE_POLICIES}")
        if not 0 <= self.fraction_with_cues <= 1:
            raise ValueError("fraction_with_cues must lie in [0, 1]")

    @property
    def n_steps(self) -> int:
        return sum(n for n, _ in self.phases)

    def aip_schedule(self) -> np.ndarray:
        return np.concatenate([np.full(n, a) for n, a in self.phases])


def drone_config(**overrides) -> CohortConfig:
    """194 participants, 15 high- then 15 low-performance checkpoints."""
    return replace(CohortConfig(), **overrides)


def driving_config(**overrides) -> CohortConfig:
    """49 participants, 22 scenes x 4 steps: 7 high, 9 low, 6 high scenes."""
    base = CohortConfig(n_participants=49, phases=((28, HIGH_AIP), (36, LOW_AIP), (24, HIGH_AIP)),
                        cue_policy="none", fraction_with_cues=0.0)
    return replace(base, **overrides)


@dataclass(frozen=True)
class AgentState:
    trust: float

    def __post_init__(self):
        object.__setattr__(self, "trust", float(min(1.0, max(0.0, self.trust))))


def label_over_under(trust: float, aip: float, margin: float) -> int:
    if trust > aip + margin:
        return 1
    if trust < aip - margin:
        return -1
    return 0


def label_array(trust: np.ndarray, aip: np.ndarray, margin: float) -> np.ndarray:
    trust = np.asarray(trust, dtype=float)
    aip = np.asarray(aip, dtype=float)
    return np.where(trust > aip + margin, 1, np.where(trust < aip - margin, -1, 0))


def agent_step(state: AgentState, aip_t: float, hp: float, cue_t: int, params: AgentParams,
               rng: np.random.Generator, outcome: int | None = None) -> tuple[AgentState, int, int]:
    """One checkpoint: decide, observe the AI outcome, update trust.

    Reliance is decided from the incoming trust. The AI's outcome is a
    Bernoulli(aip_t) draw, observed whether or not the human relied on it;
    pass ``outcome`` to fix it. Returns (new state, reliance, outcome).
    """
    reliance = int(state.trust >= hp)
    if rng.random() < params.decision_noise:
        reliance = 1 - reliance
    if outcome is None:
        outcome = int(rng.random() < aip_t)
    trust = state.trust + params.learning_rate * (outcome - state.trust)
    if cue_t:
        trust = trust + params.cue_rate * (aip_t - trust)
    return AgentState(trust), reliance, outcome


def participant_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def simulate_participant(config: CohortConfig, params: AgentParams, index: int,
                         with_cues: bool) -> ParticipantSeries:
    rng = participant_rng(config.seed, index)
    aip = config.aip_schedule()
    T = aip.size
    hp = config.hp + config.hp_spread * (2.0 * rng.random() - 1.0)
    state = AgentState(config.initial_trust)
    cols = {name: np.zeros(T) for name in (AIP, HP, CUE, TRUST, OVER_UNDER, RELIANCE)}
    prev_label = 0
    for t in range(T):
        cue = int(with_cues and prev_label == 1)
        state, reliance, _ = agent_step(state, aip[t], hp, cue, params, rng)
        prev_label = label_over_under(state.trust, aip[t], params.label_margin)
        cols[AIP][t] = aip[t]
        cols[HP][t] = hp
        cols[CUE][t] = cue
        cols[TRUST][t] = state.trust
        cols[OVER_UNDER][t] = prev_label
        cols[RELIANCE][t] = reliance
    return ParticipantSeries(f"p{index:04d}", cols)


def _cue_group(config: CohortConfig) -> int:
    if config.cue_policy == "none":
        return 0
    return int(round(config.fraction_with_cues * config.n_participants))


def gen_cohort(config: CohortConfig, params: AgentParams | None = None) -> PanelDataset:
    """Simulate every participant; the first ``fraction_with_cues`` share gets cues."""
    params = params or AgentParams()
    n_cue = _cue_group(config)
    parts = tuple(simulate_participant(config, params, i, i < n_cue) for i in range(config.n_participants))
    return PanelDataset(PAPER_VARIABLES, parts)


def gen_drone_cohort(config: CohortConfig | None = None, params: AgentParams | None = None) -> PanelDataset:
    return gen_cohort(config or drone_config(), params)


def gen_driving_cohort(config: CohortConfig | None = None, params: AgentParams | None = None) -> PanelDataset:
    """Reliance encodes non-intervention (1) versus intervention (0) within a step."""
    return gen_cohort(config or driving_config(), params)


def augment_panel(panel: PanelDataset, factor: int, rng: np.random.Generator,
                  margin: float = AgentParams.label_margin, noise: float = 0.02) -> PanelDataset:
    """Append ``factor - 1`` noisy resampled copies of the cohort.

    Copies draw participants with replacement, add N(0, noise^2) to AIP, HP
    and trust (clipped to [0, 1]) and recompute over/under labels; copies of
    participants without a trust column keep their labels.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    parts = list(panel.participants)
    n = len(parts)
    for k in range(1, factor):
        picks = rng.integers(0, n, size=n)
        for j, src in enumerate(picks):
            p = parts[src]
            vals = {name: np.array(v, dtype=float) for name, v in p.values.items()}
            for name in (AIP, HP, TRUST):
                if name in vals and not np.isnan(vals[name]).all():
                    vals[name] = np.clip(vals[name] + noise * rng.standard_normal(vals[name].shape), 0.0, 1.0)
            if TRUST in vals and not np.isnan(vals[TRUST]).any():
                vals[OVER_UNDER] = label_array(vals[TRUST], vals[AIP], margin).astype(float)
            parts.append(ParticipantSeries(f"{p.pid}_a{k}_{j}", vals))
    return PanelDataset(panel.variables, tuple(parts))


def config_dict(config: CohortConfig, params: AgentParams) -> dict:
    return {"cohort": asdict(config), "agent": asdict(params)}
