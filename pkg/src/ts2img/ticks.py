"""Axis tick selection and tick-label formatting."""
import math

_STEPS = (1, 2, 5)
# relative slack when testing whether a tick lies inside [lo, hi]
_FUDGE = 1e-9


def expand_degenerate(lo, hi):
    """Widen a zero-width range around its value by max(0.5, 10% of |value|)."""
    if lo != hi:
        return lo, hi
    pad = max(0.5, 0.1 * abs(lo))
    return lo - pad, hi + pad


def _ticks_for_step(lo, hi, step):
    eps = _FUDGE * max(abs(lo), abs(hi), step)
    first = math.ceil((lo - eps) / step)
    last = math.floor((hi + eps) / step)
    return [i * step for i in range(first, last + 1)]


def nice_ticks(lo, hi, target_count=6, log=False):
    """Tick values inside ``[lo, hi]``.

    Linear mode picks the step from {1, 2, 5} x 10^k whose tick count is
    closest to ``target_count`` (ties go to the larger step). Log mode
    returns the integer decades in the range.
    """
    if lo > hi:
        raise ValueError(f"lo ({lo}) must not exceed hi ({hi})")
    if target_count < 2:
        raise ValueError("target_count must be at least 2")
    if log:
        if lo <= 0:
            raise ValueError("log ticks need a positive range")
        elo, ehi = math.log10(lo), math.log10(hi)
        return [10.0 ** k for k in range(math.ceil(elo - _FUDGE), math.floor(ehi + _FUDGE) + 1)]
    lo, hi = expand_degenerate(lo, hi)
    span = hi - lo
    base = math.floor(math.log10(span / target_count))
    best = None
    for k in range(base - 1, base + 3):
        for m in _STEPS:
            step = m * 10.0 ** k
            ticks = _ticks_for_step(lo, hi, step)
            key = (abs(len(ticks) - target_count), -step)
            if best is None or key < best[0]:
                best = (key, ticks)
    return [0.0 if t == 0 else t for t in best[1]]


def format_tick(value):
    """Shortest decimal text with at most 4 significant digits.

    Scientific notation (``1.5e+04``) is used once the decimal exponent
    reaches 4 in magnitude.
    """
    if value == 0 or not math.isfinite(value):
        return "0" if value == 0 else str(value)
    rounded = float(f"{value:.4g}")
    exp = math.floor(math.log10(abs(rounded)))
    if abs(exp) >= 4:
        mant = rounded / 10.0 ** exp
        text = f"{mant:.3f}".rstrip("0").rstrip(".")
        # mantissa rounding can carry into the next decade
        if text in ("10", "-10"):
            text, exp = text[:-1], exp + 1
        return f"{text}e{'+' if exp >= 0 else '-'}{abs(exp):02d}"
    decimals = max(0, 3 - exp)
    text = f"{rounded:.{decimals}f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text == "-0" else text
