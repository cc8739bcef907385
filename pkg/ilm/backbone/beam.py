"""
Length-penalty-free beam search over any model exposing
`next_token_log_probs(prompt, suffixes) -> (len(suffixes), V)`.
"""
from dataclasses import dataclass
from typing import Any, List, Protocol, Sequence, Tuple

import numpy as np

from ..errors import UsageError


class LogProbModel(Protocol):
    def next_token_log_probs(self, prompt: Any, suffixes: Sequence[Sequence[int]]) -> np.ndarray:
        ...


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: Tuple[int, ...]
    score: float
    finished: bool = True

    def sort_key(self) -> Tuple[float, Tuple[int, ...]]:
        return -self.score, self.tokens


def _prompt_length(prompt: Any) -> int:
    ids = getattr(prompt, "prompt_ids", prompt)
    return 0 if ids is None else len(ids)


def generate_beam(model: LogProbModel, prompt: Any, beam_size: int = 10, max_new: int = 2,
                  eos_id: int = 2) -> List[BeamHypothesis]:
    """
    Returns up to `beam_size` complete hypotheses sorted by (score desc,
    tokens asc). A hypothesis is complete when it emits EOS or reaches
    `max_new` tokens. An EOS continuation only finishes a beam when it ranks
    within the step's top `beam_size` candidates, so beam_size=1 is greedy.
    """
    if beam_size < 1:
        raise UsageError("beam_size must be >= 1")
    if max_new < 1:
        raise UsageError("max_new must be >= 1")
    if _prompt_length(prompt) == 0:
        raise UsageError("cannot decode from an empty prompt")

    alive: List[BeamHypothesis] = [BeamHypothesis(tokens=(), score=0.0, finished=False)]
    finished: List[BeamHypothesis] = []
    for step in range(max_new):
        last_step = step == max_new - 1
        log_probs = model.next_token_log_probs(prompt, [list(h.tokens) for h in alive])
        candidates = []
        for hypothesis, row in zip(alive, log_probs):
            for token, value in enumerate(row):
                tokens = hypothesis.tokens + (token,)
                done = token == eos_id or last_step
                candidates.append(BeamHypothesis(tokens=tokens, score=hypothesis.score + float(value), finished=done))
        candidates.sort(key=BeamHypothesis.sort_key)

        finished.extend(c for c in candidates[:beam_size] if c.finished)
        finished.sort(key=BeamHypothesis.sort_key)
        del finished[beam_size:]
        alive = [c for c in candidates if not c.finished][:beam_size]
        if not alive:
            break
        if len(finished) == beam_size and alive[0].score < finished[-1].score:
            # extensions only lower the score
            break
    return finished


def decode_hypotheses(hypotheses: Sequence[BeamHypothesis], vocab) -> List[str]:
    """Detokenized output strings, specials dropped."""
    return [vocab.decode(h.tokens, skip_special=True) for h in hypotheses]
