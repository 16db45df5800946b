# License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
"""Joint dereverberation and source separation (ILRMA-T-ISS)."""

from ._demix import (
    ci_sdr,
    evaluate,
    istft,
    separate,
    si_sdr,
    simulate,
    stft,
    train,
)

__all__ = [
    "ci_sdr",
    "evaluate",
    "istft",
    "separate",
    "si_sdr",
    "simulate",
    "stft",
    "train",
]
