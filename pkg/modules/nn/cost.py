"""Exact parameter and multiply-add accounting, computed from the config alone.

The walk mirrors ``build_network`` layer for layer, so counts agree with the
built network's parameter tensors without allocating any weights.
"""
import json
from typing import List, Optional, Sequence

from core.config import NetworkConfig
from core.models import BlockVariant, CostEntry, CostReport, conv_output_size


class _Walker:
    def __init__(self, frames: int):
        self.t = frames
        self.entries: List[CostEntry] = []

    def conv(self, name, in_c, out_c, k, stride, pad, h, w):
        oh, ow = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
        self.entries.append(CostEntry(
            name, "conv", params=out_c * in_c * k * k,
            madds=oh * ow * out_c * in_c * k * k * self.t, output_shape=(out_c, self.t, oh, ow)))
        return out_c, oh, ow

    def bn(self, name, c, h, w):
        self.entries.append(CostEntry(name, "bn", params=2 * c, elementwise=2 * c * self.t * h * w,
                                      output_shape=(c, self.t, h, w)))

    def relu(self, name, c, h, w):
        self.entries.append(CostEntry(name, "relu", elementwise=c * self.t * h * w,
                                      output_shape=(c, self.t, h, w)))

    def zero_cost(self, name, kind, c, h, w):
        self.entries.append(CostEntry(name, kind, output_shape=(c, self.t, h, w)))


def _walk(cfg: NetworkConfig, frames: int, in_channels: int, height: int, width: int) -> List[CostEntry]:
    wk = _Walker(frames)
    c, h, w = wk.conv("conv1", in_channels, cfg.stem_width, 7, 2, 3, height, width)
    wk.bn("bn1", c, h, w)
    wk.relu("relu1", c, h, w)
    oh, ow = conv_output_size(h, 3, 2, 1), conv_output_size(w, 3, 2, 1)
    wk.entries.append(CostEntry("maxpool", "maxpool", elementwise=9 * c * frames * oh * ow,
                                output_shape=(c, frames, oh, ow)))
    h, w = oh, ow

    for s, stage in enumerate(cfg.stages):
        for i in range(stage.blocks):
            name = f"res{s + 2}.{i}"
            variant = cfg.variant_at(s, i)
            stride = stage.stride if i == 0 else 1
            width_c, out_c = stage.width, stage.width * cfg.expansion
            in_c, in_h, in_w = c, h, w
            if variant == BlockVariant.HEADTAIL:
                wk.zero_cost(f"{name}.shuffle", "shuffle", in_c, in_h, in_w)
            elif variant == BlockVariant.STANDARD_WITH_SHIFT:
                wk.zero_cost(f"{name}.shift", "shift", in_c, in_h, in_w)
            wk.conv(f"{name}.conv1", in_c, width_c, 1, 1, 0, in_h, in_w)
            wk.bn(f"{name}.bn1", width_c, in_h, in_w)
            wk.relu(f"{name}.relu1", width_c, in_h, in_w)
            if variant == BlockVariant.COMPACT:
                wk.zero_cost(f"{name}.shuffle", "shuffle", width_c, in_h, in_w)
            _, h, w = wk.conv(f"{name}.conv2", width_c, width_c, 3, stride, 1, in_h, in_w)
            if variant == BlockVariant.COMPACT:
                wk.zero_cost(f"{name}.unshuffle", "shuffle", width_c, h, w)
            wk.bn(f"{name}.bn2", width_c, h, w)
            wk.relu(f"{name}.relu2", width_c, h, w)
            wk.conv(f"{name}.conv3", width_c, out_c, 1, 1, 0, h, w)
            wk.bn(f"{name}.bn3", out_c, h, w)
            if variant == BlockVariant.HEADTAIL:
                wk.zero_cost(f"{name}.unshuffle", "shuffle", out_c, h, w)
            if stride != 1 or in_c != out_c:
                wk.conv(f"{name}.downsample.conv", in_c, out_c, 1, stride, 0, in_h, in_w)
                wk.bn(f"{name}.downsample.bn", out_c, h, w)
            wk.relu(f"{name}.relu_out", out_c, h, w)
            c = out_c

    wk.entries.append(CostEntry("avgpool", "avgpool", elementwise=c * frames * h * w, output_shape=(c,)))
    wk.entries.append(CostEntry("fc", "linear", params=c * cfg.classes + cfg.classes,
                                madds=c * cfg.classes, output_shape=(cfg.classes,)))
    return wk.entries


def count_flops(cfg: NetworkConfig, input_shape: Optional[Sequence[int]] = None) -> CostReport:
    """Per-layer costs for one clip. ``input_shape`` is (T, C, H, W); defaults come from ``cfg``."""
    if input_shape is None:
        input_shape = (cfg.frames, cfg.in_channels, cfg.input_size, cfg.input_size)
    frames, channels, height, width = (int(d) for d in input_shape)
    return CostReport(entries=_walk(cfg, frames, channels, height, width),
                      input_shape=(1, frames, channels, height, width))


def count_params(cfg: NetworkConfig) -> CostReport:
    return count_flops(cfg)


def stage_output_shapes(report: CostReport) -> dict:
    """(C, T, H, W) after each stage, keyed res2..res5."""
    shapes = {}
    for entry in report.entries:
        if entry.name.endswith(".relu_out"):
            shapes[entry.name.split(".")[0]] = entry.output_shape
    return shapes


def _human(value: float) -> str:
    for unit, scale in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(value) >= scale:
            return f"{value / scale:.2f}{unit}"
    return str(int(value))


def format_table(report: CostReport, name: str = "") -> str:
    rows = [(e.name, e.kind, f"{e.params:,}", f"{e.madds:,}", f"{e.elementwise:,}",
             "x".join(str(d) for d in e.output_shape)) for e in report.entries]
    header = ("layer", "kind", "params", "madds", "elementwise", "output")
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]

    def line(cells):
        return "  ".join(cell.ljust(widths[i]) if i < 2 else cell.rjust(widths[i]) for i, cell in enumerate(cells))

    out = [f"# {name} input {'x'.join(str(d) for d in report.input_shape)} (N,T,C,H,W)" if name
           else f"# input {'x'.join(str(d) for d in report.input_shape)} (N,T,C,H,W)",
           f"# {report.convention}", line(header), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    out.append(line(["-" * w for w in widths]))
    out.append(f"total  params {_human(report.total_params)} ({report.total_params:,})  "
               f"GFLOPs {report.gflops:.2f} ({report.total_madds:,} madds)  "
               f"ops {_human(report.total_ops)}  elementwise {_human(report.total_elementwise)}")
    return "\n".join(out)


def report_to_json(report: CostReport, name: str = "") -> str:
    payload = {
        "name": name,
        "input_shape": list(report.input_shape),
        "convention": report.convention,
        "total_params": report.total_params,
        "total_madds": report.total_madds,
        "gflops": report.gflops,
        "total_ops": report.total_ops,
        "total_elementwise": report.total_elementwise,
        "layers": [
            {"name": e.name, "kind": e.kind, "params": e.params, "madds": e.madds,
             "elementwise": e.elementwise, "output_shape": list(e.output_shape)}
            for e in report.entries
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=False)
