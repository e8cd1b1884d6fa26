"""Token vocabulary, observation verbalization, and phase extraction.

The controller's interface to the signal plan is textual: the policy emits
tokens, the decoded string is scanned for a ``<signal>MNEMONIC</signal>``
tag, and failing that for the last plain mention of a mnemonic or phase
description. The vocabulary is deliberately tiny (one token per mnemonic
plus structural, numeral, and filler tokens) so the whole string pipeline
stays exercised at desk scale.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .sim import LaneObservation, Topology

SIGNAL_OPEN = "<signal>"
SIGNAL_CLOSE = "</signal>"
EOS = "<eos>"

# Filler tokens stand in for free-form reasoning text. None of them contain
# a mnemonic or a full phase description, so they never trip the extractor.
FILLER_WORDS = (
    "the", "traffic", "flow", "wait", "heavy", "light", "queue", "move",
    "stop", "clear", "now", "next", "keep", "shift", "plan", "so",
)

_TAG_RE = re.compile(re.escape(SIGNAL_OPEN) + r"(.*?)" + re.escape(SIGNAL_CLOSE), re.DOTALL)


class Vocabulary:
    """Dense token-id table over mnemonics + structure + numerals + filler."""

    def __init__(self, mnemonics: Sequence[str], n_filler: int = 16):
        if n_filler > len(FILLER_WORDS):
            raise ValueError(f"at most {len(FILLER_WORDS)} filler tokens available")
        tokens = list(mnemonics)
        tokens += [SIGNAL_OPEN, SIGNAL_CLOSE, EOS]
        tokens += [str(d) for d in range(10)]
        tokens += list(FILLER_WORDS[:n_filler])
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens: Tuple[str, ...] = tuple(tokens)
        self.index: Dict[str, int] = {tok: i for i, tok in enumerate(tokens)}
        self.mnemonics = tuple(mnemonics)
        self.eos_id = self.index[EOS]

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self.index[token]

    def decode(self, token_ids: Sequence[int]) -> str:
        return " ".join(self.tokens[int(t)] for t in token_ids)

    @staticmethod
    def for_topology(topo: Topology, n_filler: int = 16) -> "Vocabulary":
        return Vocabulary([p.mnemonic for p in topo.phases], n_filler=n_filler)


@dataclass(frozen=True)
class PromptContext:
    """Observation rendered for the policy: features plus a prompt string."""

    current_phase: int
    features: np.ndarray  # length n_phases * 4 + n_phases, raw counts + one-hot
    text: str
    history: Tuple[Tuple[str, int], ...] = ()  # (summary, action) pairs, newest last


def feature_length(topo: Topology) -> int:
    return topo.n_phases * 4 + topo.n_phases


def verbalize(
    observation: Dict[str, LaneObservation],
    current_phase: int,
    topo: Topology,
    history: Sequence[Tuple[str, int]] = (),
) -> PromptContext:
    """Render an observation into features and a prompt string.

    The feature vector lists, per phase in table order, the sums of
    (early_queued, seg1, seg2, seg3) over the phase's allowed lanes,
    followed by a one-hot of the current phase. Counts stay raw. History
    holds at most the two most recent (summary, action) pairs and appears
    only in the rendered text.
    """
    for lane in topo.lanes:
        if lane.lane_id not in observation:
            raise KeyError(f"observation missing lane {lane.lane_id!r}")

    n_p = topo.n_phases
    features = np.zeros(feature_length(topo), dtype=np.float64)
    lines: List[str] = []
    lines.append(f"The traffic light has {n_p} signal phases.")
    lines.append(f"Current phase: {topo.phases[current_phase].mnemonic}")
    for phase in topo.phases:
        early = s1 = s2 = s3 = 0
        for lid in phase.allowed_lanes:
            obs = observation[lid]
            early += obs.early_queued
            s1 += obs.seg1
            s2 += obs.seg2
            s3 += obs.seg3
        base = phase.index * 4
        features[base : base + 4] = (early, s1, s2, s3)
        lines.append(
            f"{phase.mnemonic} ({phase.description}): "
            f"early queued {early}, near {s1}, mid {s2}, far {s3}"
        )
    features[4 * n_p + current_phase] = 1.0

    recent = tuple(history[-2:])
    for i, (summary, action) in enumerate(recent, start=1):
        lines.append(f"History {i}: {summary} -> chose {topo.phases[action].mnemonic}")
    lines.append(f"Reply with your choice identified by the tag: {SIGNAL_OPEN}YOUR_CHOICE{SIGNAL_CLOSE}")

    return PromptContext(
        current_phase=current_phase,
        features=features,
        text="\n".join(lines),
        history=recent,
    )


def extract_phase(text_or_tokens, topo: Topology, default_code: int, vocab: Optional[Vocabulary] = None) -> int:
    """Extract the chosen phase index from generated output.

    Resolution order: (1) the last ``<signal>...</signal>`` span whose
    content is a valid mnemonic; (2) the mnemonic or phase description
    with the last case-insensitive occurrence anywhere in the text;
    (3) ``default_code``. Total by construction.
    """
    if not 0 <= default_code < topo.n_phases:
        raise ValueError(f"default_code {default_code} out of range")
    if isinstance(text_or_tokens, str):
        text = text_or_tokens
    else:
        if vocab is None:
            raise ValueError("token-id input requires a vocabulary")
        text = vocab.decode(text_or_tokens)

    by_mnemonic = {p.mnemonic.upper(): p.index for p in topo.phases}
    for match in reversed(list(_TAG_RE.finditer(text))):
        candidate = match.group(1).strip().upper()
        if candidate in by_mnemonic:
            return by_mnemonic[candidate]

    lowered = text.lower()
    best_pos = -1
    best_phase = default_code
    for phase in topo.phases:
        for needle in (phase.mnemonic.lower(), phase.description.lower()):
            pos = lowered.rfind(needle)
            if pos > best_pos:
                best_pos = pos
                best_phase = phase.index
    return best_phase


def phase_histogram(
    responses: Sequence, topo: Topology, default_code: int, vocab: Optional[Vocabulary] = None
) -> np.ndarray:
    """Count extracted phases over G responses; sums to G."""
    counts = np.zeros(topo.n_phases, dtype=np.int64)
    for response in responses:
        counts[extract_phase(response, topo, default_code, vocab)] += 1
    return counts


def load_extraction_cases(path) -> List[Tuple[str, str]]:
    """Read extraction fixtures: one ``input_text TAB expected_mnemonic`` per line.

    Literal ``\\n`` sequences in the input text are unescaped to real
    newlines so multi-line cases fit the one-line format. Blank lines and
    ``#`` comments are skipped.
    """
    cases = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            text, expected = line.split("\t")
            cases.append((text.replace("\\n", "\n"), expected))
    return cases
