"""Complexity accounting: parameters, serialized size, MACs and FLOPs.

Sizes use the float32 serialized form and base-2 megabytes
(1 MB = 1024 KB = 2^20 bytes), so size_mb == 4 * params / 2^20 exactly.
FLOPs are defined as 2 * MACs.
"""

from dataclasses import dataclass


def size_mb_from_params(param_count):
    return 4.0 * param_count / float(2**20)


@dataclass
class ProfileReport:
    param_count: int
    size_mb: float
    macs: int
    flops: int
    per_layer: list

    def to_dict(self):
        return {
            "param_count": self.param_count,
            "size_mb": self.size_mb,
            "macs": self.macs,
            "flops": self.flops,
            "per_layer": [
                {"name": n, "params": p, "macs": m, "flops": 2 * m}
                for n, p, m in self.per_layer
            ],
        }


def profile(net, input_length=None):
    rows = net.profile_rows(input_length)
    params = net.param_count()
    macs = sum(m for _, _, m in rows)
    return ProfileReport(
        param_count=params,
        size_mb=size_mb_from_params(params),
        macs=macs,
        flops=2 * macs,
        per_layer=rows,
    )
