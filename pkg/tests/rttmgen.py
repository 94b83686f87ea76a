"""Random RTTM sessions on a 1 ms grid for scorer tests."""

from clusterdiar.scoring import RttmRecord


def random_session(rng, n_spk=3, length=60.0, sid="s", names=None):
    """Alternating single-speaker turns on a 1 ms grid, with pauses."""
    names = names or [f"r{i}" for i in range(n_spk)]
    t = int(rng.integers(0, 2000))
    out = []
    while True:
        dur = int(rng.integers(300, 6000))
        if (t + dur) / 1000 > length:
            break
        out.append(RttmRecord(sid, t / 1000, dur / 1000, names[int(rng.integers(n_spk))]))
        t += dur + int(rng.integers(0, 800))
    return out


def perturbed_hypothesis(rng, reference, n_hyp=3):
    """Hypothesis over the same speech with random relabels and shifted cuts."""
    out = []
    for r in reference:
        s_ms, e_ms = round(r.start * 1000), round(r.end * 1000)
        cut = int(rng.integers(s_ms, e_ms + 1))
        for a, b in ((s_ms, cut), (cut, e_ms)):
            if b > a:
                out.append(RttmRecord(r.session_id, a / 1000, (b - a) / 1000, f"h{rng.integers(n_hyp)}"))
    return out
