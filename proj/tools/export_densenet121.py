#!/usr/bin/env python3
"""Export torchvision's pretrained DenseNet-121 into a CTAUDIT1 tensor archive.

Usage: python3 tools/export_densenet121.py <output.ctw>

Requires torch + torchvision.  The 1000-class ImageNet head is dropped
(consumers always initialize their own 2-logit head), as are the batch-norm
`num_batches_tracked` bookkeeping scalars.  Everything else keeps its
torchvision state_dict name, which is also the name the loader expects.

Archive layout (little-endian):
  "CTAUDIT1" | u64 json_len | json | u32 tensor_count |
  per tensor: u32 name_len | name | u32 ndim | u32 dims[] | f64 data[]
"""

import json
import struct
import sys


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    out_path = sys.argv[1]

    try:
        import torchvision
    except ImportError as exc:
        print(f"export_densenet121: torchvision is not installed: {exc}", file=sys.stderr)
        return 1

    try:
        weights = torchvision.models.DenseNet121_Weights.IMAGENET1K_V1
        model = torchvision.models.densenet121(weights=weights)
    except AttributeError:  # pre-0.13 torchvision
        model = torchvision.models.densenet121(pretrained=True)

    tensors = []
    for name, tensor in model.state_dict().items():
        if name.startswith("classifier."):
            continue
        if name.endswith("num_batches_tracked"):
            continue
        tensors.append((name, tensor.detach().cpu().double().numpy()))

    meta = json.dumps(
        {"kind": "pretrained", "arch": "densenet121", "source": "torchvision imagenet"}
    ).encode()

    with open(out_path, "wb") as fh:
        fh.write(b"CTAUDIT1")
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(tensors)))
        for name, array in tensors:
            encoded = name.encode()
            dims = array.shape if array.ndim else (1,)
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", len(dims)))
            for d in dims:
                fh.write(struct.pack("<I", d))
            fh.write(array.astype("<f8").tobytes())

    print(f"wrote {len(tensors)} tensors to {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
