"""Independent arbitrary-precision references for the integer kernels.

Everything here is deliberately written with plain Python ints and nested
loops: no numpy, no shared code with the package under test.
"""


def clamp8(v: int) -> int:
    return max(-128, min(127, v))


def ref_round_half_away(num: int, den: int) -> int:
    """round(num / den) with ties away from zero; den > 0."""
    if num >= 0:
        return (num + den // 2) // den
    return -((-num + den // 2) // den)


def ref_requantize(acc: int, multiplier: int, shift: int, zero_point: int) -> int:
    q = ref_round_half_away(acc * multiplier, 1 << (31 + shift))
    return clamp8(q + zero_point)


def ref_quantize_value(x: float, scale: float, zero_point: int) -> int:
    scaled = x / scale
    if scaled >= 0:
        q = int(scaled + 0.5)
    else:
        q = -int(-scaled + 0.5)
    return clamp8(q + zero_point)


def ref_conv1d(x, in_zp, w, multiplier, shift, out_zp, relu):
    """x: list of channel lists; w: [out][in][k] nested lists of ints."""
    out_channels = len(w)
    in_channels = len(w[0])
    k = len(w[0][0])
    length = len(x[0])
    out_len = length - k + 1
    result = []
    for o in range(out_channels):
        row = []
        for j in range(out_len):
            acc = 0
            for c in range(in_channels):
                for t in range(k):
                    acc += w[o][c][t] * (x[c][j + t] - in_zp)
            v = ref_requantize(acc, multiplier, shift, out_zp)
            if relu:
                v = max(v, out_zp)
            row.append(v)
        result.append(row)
    return result


def ref_fully_connected(x, in_zp, w, multiplier, shift, out_zp, relu):
    """x: flat list; w: [out][in] nested lists."""
    result = []
    for o in range(len(w)):
        acc = 0
        for i in range(len(w[o])):
            acc += w[o][i] * (x[i] - in_zp)
        v = ref_requantize(acc, multiplier, shift, out_zp)
        if relu:
            v = max(v, out_zp)
        result.append(v)
    return result


def ref_maxpool1d(x, kernel, stride):
    out = []
    for row in x:
        n = (len(row) - kernel) // stride + 1
        out.append([max(row[j * stride : j * stride + kernel]) for j in range(n)])
    return out
