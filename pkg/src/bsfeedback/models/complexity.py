"""Parameter and multiply-accumulate counts derived from layer dimensions."""
from __future__ import annotations

from dataclasses import dataclass, field

from . import nets
from .pipelines import Architecture, ModelBundle


@dataclass
class ComplexityReport:
    params: int
    macs: int
    by_group: dict = field(default_factory=dict)  # group -> {"params", "macs"}
    layers: list = field(default_factory=list)  # (name, LayerSpec, repeats)

    def group_macs(self, prefix):
        return sum(spec.n_macs() * reps for name, spec, reps in self.layers if name.startswith(prefix))


def _convs(prefix, spatial, cin, channels=nets.CONV_CHANNELS, nd=2, reps=1):
    out = []
    specs = [s for s in nets.conv_stack_specs(spatial, cin, channels, nd) if s.kind != "tanh"]
    for i, spec in enumerate(specs):
        out.append((f"{prefix}.conv{i}", spec, reps))
    return out


def _dense(name, n_in, n_out, reps=1):
    return [(name, nets.LayerSpec("dense", {"n_in": n_in, "n_out": n_out}), reps)]


def architecture_layers(arch):
    """(name, LayerSpec, repeats) for one forward pass of a group of ``arch.n_ues`` UEs.

    The merging network runs once per group; everything downstream runs once per UE.
    The minimum-norm layer has no parameters and is not counted.
    """
    nb, l, n = arch.n_b, arch.l, arch.n_ues
    grid = (arch.n_h, arch.n_v)
    layers = []
    if arch.kind in ("bsdualnet", "bsdualnet-mn"):
        layers += _convs("bm", grid, n)
        layers += _dense("bm.fc", 2 * nb, 2 * nb * l)
    if arch.kind == "bsdualnet":
        layers += _dense("re.fc", 2 * l, 2 * nb, reps=n)
        layers += _convs("re", grid, 2, reps=n)
    if arch.kind in ("bsdualnet0", "bsdualnet", "bsdualnet-mn"):
        for blk in range(arch.n_blocks):
            layers += _convs(f"c.block{blk}", grid, 3, reps=n)
    if arch.kind == "bsdualnet-fr":
        k, kp, cw = arch.k_rbs, arch.k_pilot, arch.codeword_length
        layers += _convs("bm", grid + (k,), n, nd=3)
        layers += _dense("bm.fc", 2 * nb * k, 2 * nb * l)
        layers += _convs("fcm_en", (l, kp), 2, reps=n)
        layers += _dense("fcm_en.fc", 2 * l * kp, cw, reps=n)
        layers += _dense("fcm_de.fc", cw, 2 * nb * k, reps=n)
        layers += _convs("fcm_de", (nb, k), 2, reps=n)
        for blk in range(arch.n_blocks):
            layers += _convs(f"c.block{blk}", (nb, k), 2, nets.FR_COMBINE_CHANNELS, reps=n)
    return layers


def count_complexity(model):
    """Exact parameter count and MACs per forward for a ModelBundle, Architecture or
    a list of LayerSpec / (name, LayerSpec[, repeats]) entries."""
    if isinstance(model, ModelBundle):
        model = model.arch
    if isinstance(model, Architecture):
        layers = architecture_layers(model)
    else:
        layers = []
        for i, item in enumerate(model):
            if isinstance(item, nets.LayerSpec):
                layers.append((f"layer{i}", item, 1))
            else:
                name, spec, *rest = item
                layers.append((name, spec, rest[0] if rest else 1))
    report = ComplexityReport(0, 0, layers=layers)
    for name, spec, reps in layers:
        group = name.split(".", 1)[0]
        slot = report.by_group.setdefault(group, {"params": 0, "macs": 0})
        slot["params"] += spec.n_params()
        slot["macs"] += spec.n_macs() * reps
        report.params += spec.n_params()
        report.macs += spec.n_macs() * reps
    return report
