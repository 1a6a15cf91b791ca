"""System-as-prompt context: instruction + example text, byte-tokenized.

The context is rendered from a fixed template naming the system, its
application domain, and the state/observation semantics, optionally
followed by short numeric observation-to-state excerpts from the training
split. Text is tokenized at the byte level against a 258-entry vocabulary
(256 byte values plus BOS and SEP specials) whose embedding table is
trained with the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..systems import SYSTEM_DOMAINS, SystemModel

BOS_ID = 256
SEP_ID = 257
VOCAB_SIZE = 258

DEFAULT_MAX_TOKENS = 512

# Rendered excerpt rows per task example; keeps two examples inside the
# default token budget.
EXCERPT_ROWS = 3


class ContextTooLong(ValueError):
    """The instruction alone exceeds the token budget."""


@dataclass(frozen=True)
class SaPContext:
    instruction_text: str
    example_text: str
    token_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


def _fmt_vec(vec) -> str:
    return "[" + ", ".join(f"{v:.3f}" for v in vec) + "]"


def render_instruction(sys: SystemModel) -> str:
    return (
        f"Task: estimate the hidden state of the {sys.name} system "
        f"({SYSTEM_DOMAINS[sys.name]}) from noisy observations. "
        f"state dimension {sys.state_dim}, observation dimension {sys.obs_dim}."
    )


def render_examples(examples) -> str:
    lines = []
    for k, (obs_win, state_win) in enumerate(examples[:2]):
        rows = min(EXCERPT_ROWS, len(obs_win))
        lines.append(f"Example {k + 1}:")
        for i in range(rows):
            lines.append(
                f"obs {_fmt_vec(obs_win[i])} -> state {_fmt_vec(state_win[i])}"
            )
    return "\n".join(lines)


def tokenize(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def build_sap_context(
    sys: SystemModel,
    examples=(),
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> SaPContext:
    """Render and tokenize the in-context prompt for a system.

    `examples` is a sequence of (obs_window, state_window) array pairs drawn
    from the training split; at most two are rendered, at 3 decimal places.
    Token overflow is truncated from the example end, never the instruction.
    """
    instruction = render_instruction(sys)
    example_text = render_examples(list(examples))
    ids = [BOS_ID] + tokenize(instruction)
    if len(ids) > max_tokens:
        raise ContextTooLong(
            f"instruction needs {len(ids)} tokens, budget is {max_tokens}"
        )
    if example_text:
        ids = ids + [SEP_ID] + tokenize(example_text)
    return SaPContext(
        instruction_text=instruction,
        example_text=example_text,
        token_ids=tuple(ids[:max_tokens]),
    )


def sample_training_examples(
    dataset, window_len: int, rng: np.random.Generator, count: int = 2
):
    """Draw (obs, state) excerpt pairs from the training split."""
    trains = dataset.by_split("train")
    pairs = []
    for _ in range(count):
        traj = trains[rng.integers(len(trains))]
        start = int(rng.integers(len(traj) - window_len + 1))
        pairs.append(
            (
                traj.observations[start : start + window_len],
                traj.states[start : start + window_len],
            )
        )
    return pairs
